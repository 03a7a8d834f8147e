//! The attacker toolkit: phantom devices forging requests from harvested or
//! guessed identity and legitimacy information.
//!
//! A phantom device is a program, not hardware. It holds only the information
//! the threat model lets it obtain: public fields always, guessable fields
//! via brute-force enumeration, hard-coded fields only when the scenario
//! grants local access (rental, resale, LAN sniffing). Requests it forges are
//! schema-valid and indistinguishable from a real device's at the protocol
//! layer.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::cloud::{Cloud, ErrorCode, ProfileRules};
use crate::identity::{DeviceId, DeviceIdentity, InfoCategory, InfoField, LegitimacyInfo, Mac};
use crate::netlab::Tick;
use crate::wire::{AccountRef, Method, Request, RequestCtx, SystemFields};

/// Information the scenario grants the attacker beyond public data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoGrant {
    /// Hard-coded information (device IDs, serial numbers, tag keys) is
    /// obtainable only with local access to the victim device.
    pub local_access: bool,
}

impl InfoGrant {
    pub fn full() -> Self {
        InfoGrant { local_access: true }
    }

    pub fn remote_only() -> Self {
        InfoGrant {
            local_access: false,
        }
    }

    pub fn allows(&self, category: InfoCategory) -> bool {
        match category {
            InfoCategory::Public | InfoCategory::Guessable => true,
            InfoCategory::HardCoded => self.local_access,
        }
    }
}

/// A forge attempt needed a field the phantom could not obtain.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("insufficient information: {field} is {category}")]
pub struct InsufficientInformation {
    pub field: InfoField,
    pub category: InfoCategory,
}

/// Outcome of probing one device ID with an app-side bind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeOutcome {
    /// Already bound to some account; the binding is untouched.
    Taken,
    /// Was registered and unbound; now occupied by the attacker's account.
    Occupied,
}

/// An attacker-controlled program impersonating a device.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomDevice {
    /// What the phantom claims to be. Only fields it actually obtained are
    /// populated.
    pub claimed_identity: DeviceIdentity,
    pub claimed_legitimacy: LegitimacyInfo,
    pub attacker_account: AccountRef,
    pub login_flood_period: Tick,
    /// Device ID returned by a cloud during registration probes.
    pub learned_uuid: Option<DeviceId>,
    /// Field tagging used to explain what is missing and why.
    pub info_schema: BTreeMap<InfoField, InfoCategory>,
    grant: InfoGrant,
    /// Serial-number scheme of the target population, known only with local
    /// access (leaked manifest).
    sn_template: Option<String>,
    next_request_id: u64,
}

impl PhantomDevice {
    /// Builds a phantom against one victim device, copying exactly the fields
    /// the grant allows.
    pub fn against_victim(
        info_schema: BTreeMap<InfoField, InfoCategory>,
        victim_identity: &DeviceIdentity,
        victim_legitimacy: &LegitimacyInfo,
        attacker_account: AccountRef,
        grant: InfoGrant,
        sn_template: Option<String>,
    ) -> Self {
        let allowed = |field: InfoField| {
            info_schema
                .get(&field)
                .map(|c| grant.allows(*c))
                .unwrap_or(false)
        };
        let mut identity = DeviceIdentity::new(victim_identity.mac, String::new());
        if allowed(InfoField::Model) {
            identity.model = victim_identity.model.clone();
        }
        if allowed(InfoField::Cid) {
            identity.cid = victim_identity.cid.clone();
        }
        if allowed(InfoField::Sn) {
            identity.sn = victim_identity.sn.clone();
        }
        if allowed(InfoField::DeviceId) {
            identity.device_id = victim_identity.device_id.clone();
        }
        let mut legitimacy = LegitimacyInfo::default();
        if allowed(InfoField::Key) {
            legitimacy.key = victim_legitimacy.key.clone();
        }
        if allowed(InfoField::Hwid) {
            legitimacy.hwid = victim_legitimacy.hwid.clone();
        }
        if allowed(InfoField::TagKey) {
            legitimacy.tagkey = victim_legitimacy.tagkey.clone();
        }
        PhantomDevice {
            claimed_identity: identity,
            claimed_legitimacy: legitimacy,
            attacker_account,
            login_flood_period: crate::agents::FLOOD_PERIOD,
            learned_uuid: None,
            info_schema,
            sn_template: if grant.local_access { sn_template } else { None },
            grant,
            next_request_id: 50_000,
        }
    }

    pub fn next_id(&mut self) -> u64 {
        let id = self.next_request_id;
        self.next_request_id += 1;
        id
    }

    /// Revokes one field, as if it had never been obtained. Used by the
    /// information-discipline mutation check.
    pub fn revoke(&mut self, field: InfoField) {
        match field {
            InfoField::Mac => {}
            InfoField::Model => self.claimed_identity.model = String::new(),
            InfoField::Cid => self.claimed_identity.cid = None,
            InfoField::Sn => {
                self.claimed_identity.sn = None;
                self.sn_template = None;
            }
            InfoField::DeviceId => {
                self.claimed_identity.device_id = None;
                self.learned_uuid = None;
            }
            InfoField::Key => self.claimed_legitimacy.key = None,
            InfoField::Hwid => self.claimed_legitimacy.hwid = None,
            InfoField::TagKey => self.claimed_legitimacy.tagkey = None,
        }
    }

    fn category_of(&self, field: InfoField) -> InfoCategory {
        self.info_schema
            .get(&field)
            .copied()
            .unwrap_or(InfoCategory::HardCoded)
    }

    fn require(
        &self,
        field: InfoField,
        present: bool,
    ) -> Result<(), InsufficientInformation> {
        if present {
            Ok(())
        } else {
            Err(InsufficientInformation {
                field,
                category: self.category_of(field),
            })
        }
    }

    /// The device ID the phantom can currently present: learned from a
    /// registration probe, or held hard-coded information.
    pub fn usable_uuid(&self) -> Option<DeviceId> {
        self.learned_uuid
            .clone()
            .or_else(|| self.claimed_identity.device_id.clone())
    }

    /// Forges a schema-valid request of the given kind, or reports the
    /// missing information item and its category.
    pub fn forge(
        &mut self,
        kind: Method,
        rules: &ProfileRules,
        now: Tick,
    ) -> Result<Request, InsufficientInformation> {
        match kind {
            Method::RegisterDevice => self.forge_register(rules, now),
            Method::LoginDevice => self.forge_login(rules),
            Method::BindDevice => self.forge_bind(rules),
            Method::UnbindDevice => self.forge_unbind(),
            Method::OtaUpdate => self.forge_ota(),
            Method::StatusUpload => self.forge_status(),
            _ => Err(InsufficientInformation {
                field: InfoField::DeviceId,
                category: InfoCategory::HardCoded,
            }),
        }
    }

    fn forge_register(
        &mut self,
        rules: &ProfileRules,
        now: Tick,
    ) -> Result<Request, InsufficientInformation> {
        let identity = self.claimed_identity.clone();
        self.forge_register_for(&identity, rules, now)
    }

    /// Registration forge for an arbitrary identity candidate (enumeration
    /// probes). The candidate must be constructible from granted information.
    pub fn forge_register_for(
        &mut self,
        candidate: &DeviceIdentity,
        rules: &ProfileRules,
        now: Tick,
    ) -> Result<Request, InsufficientInformation> {
        let required = rules.register_identity_fields.clone();
        if required.contains(&InfoField::Model) {
            self.require(InfoField::Model, !candidate.model.is_empty())?;
        }
        if required.contains(&InfoField::Cid) {
            self.require(InfoField::Cid, candidate.cid.is_some())?;
        }
        if required.contains(&InfoField::Sn) {
            self.require(InfoField::Sn, candidate.sn.is_some())?;
        }
        if rules.register_signed_key {
            self.require(InfoField::Key, self.claimed_legitimacy.key.is_some())?;
        }
        let mut req = Request::new(Method::RegisterDevice, self.next_id());
        req.params.insert("model".into(), candidate.model.clone().into());
        req.params
            .insert("mac".into(), candidate.mac.to_string().into());
        req.params
            .insert("version".into(), "0.0.0;APP2.0;OTA1.0".into());
        if let Some(sn) = &candidate.sn {
            req.params.insert("sn".into(), sn.clone().into());
        }
        req.request = Some(RequestCtx {
            cid: candidate.cid.clone(),
            uuid: Some(String::new()),
        });
        req.system = Some(SystemFields {
            key: None,
            sign: None,
            time: now.to_string(),
        });
        if let Some(key) = self.claimed_legitimacy.key.clone() {
            crate::wire::sign_request(&mut req, &key);
        }
        Ok(req)
    }

    fn attach_session_legitimacy(
        &self,
        req: &mut Request,
        rules: &ProfileRules,
    ) -> Result<(), InsufficientInformation> {
        if rules.session_legitimacy_fields.contains(&InfoField::Hwid) {
            self.require(InfoField::Hwid, self.claimed_legitimacy.hwid.is_some())?;
            req.params.insert(
                "hwid".into(),
                self.claimed_legitimacy.hwid.clone().unwrap_or_default().into(),
            );
            req.params
                .insert("mac".into(), self.claimed_identity.mac.to_string().into());
        }
        if rules.session_legitimacy_fields.contains(&InfoField::TagKey) {
            self.require(InfoField::TagKey, self.claimed_legitimacy.tagkey.is_some())?;
            req.params.insert(
                "tagkey".into(),
                self.claimed_legitimacy
                    .tagkey
                    .clone()
                    .unwrap_or_default()
                    .into(),
            );
        }
        Ok(())
    }

    fn forge_login(&mut self, rules: &ProfileRules) -> Result<Request, InsufficientInformation> {
        let uuid = self
            .usable_uuid()
            .ok_or(InsufficientInformation {
                field: InfoField::DeviceId,
                category: self.category_of(InfoField::DeviceId),
            })?;
        let mut req = Request::new(Method::LoginDevice, self.next_id());
        req.request = Some(RequestCtx {
            cid: None,
            uuid: Some(uuid.0),
        });
        self.attach_session_legitimacy(&mut req, rules)?;
        Ok(req)
    }

    fn forge_bind(&mut self, rules: &ProfileRules) -> Result<Request, InsufficientInformation> {
        let uuid = self
            .usable_uuid()
            .ok_or(InsufficientInformation {
                field: InfoField::DeviceId,
                category: self.category_of(InfoField::DeviceId),
            })?;
        let mut req = Request::new(Method::BindDevice, self.next_id());
        req.request = Some(RequestCtx {
            cid: None,
            uuid: Some(uuid.0),
        });
        req.account = Some(self.attacker_account.clone());
        self.attach_session_legitimacy(&mut req, rules)?;
        Ok(req)
    }

    /// Device-side unbinding carries no user credentials; that absence is the
    /// whole point.
    fn forge_unbind(&mut self) -> Result<Request, InsufficientInformation> {
        let uuid = self
            .usable_uuid()
            .ok_or(InsufficientInformation {
                field: InfoField::DeviceId,
                category: self.category_of(InfoField::DeviceId),
            })?;
        let mut req = Request::new(Method::UnbindDevice, self.next_id());
        req.request = Some(RequestCtx {
            cid: None,
            uuid: Some(uuid.0),
        });
        Ok(req)
    }

    fn forge_ota(&mut self) -> Result<Request, InsufficientInformation> {
        self.require(InfoField::Model, !self.claimed_identity.model.is_empty())?;
        let mut req = Request::new(Method::OtaUpdate, self.next_id());
        req.params
            .insert("model".into(), self.claimed_identity.model.clone().into());
        Ok(req)
    }

    fn forge_status(&mut self) -> Result<Request, InsufficientInformation> {
        let uuid = self
            .usable_uuid()
            .ok_or(InsufficientInformation {
                field: InfoField::DeviceId,
                category: self.category_of(InfoField::DeviceId),
            })?;
        let mut req = Request::new(Method::StatusUpload, self.next_id());
        req.request = Some(RequestCtx {
            cid: None,
            uuid: Some(uuid.0),
        });
        Ok(req)
    }

    /// Enumerates identity candidates sharing a vendor prefix, mutating the
    /// low address bytes from `low` upward.
    pub fn enumerate_macs(&self, prefix: [u8; 3], low: u32, count: u32) -> Vec<DeviceIdentity> {
        assert!(count <= 1 << 24, "suffix space is 24 bits");
        (0..count)
            .map(|i| {
                let suffix = (low.wrapping_add(i)) & 0x00FF_FFFF;
                let mac = Mac::from_parts(prefix, suffix);
                let mut identity = DeviceIdentity::new(mac, self.claimed_identity.model.clone());
                identity.cid = self.claimed_identity.cid.clone();
                identity.sn = self
                    .sn_template
                    .as_ref()
                    .map(|t| format!("{t}{suffix:08X}"));
                identity
            })
            .collect()
    }

    /// Probes one device ID by attempting an app-side bind with the
    /// attacker's account. Pre-sale, a successful probe *is* illegal device
    /// occupation.
    pub fn bind_probe(
        &mut self,
        device_id: &DeviceId,
        cloud: &mut Cloud,
        now: Tick,
    ) -> Result<ProbeOutcome, ErrorCode> {
        let mut req = Request::new(Method::AppBind, self.next_id());
        req.account = Some(self.attacker_account.clone());
        req.request = Some(RequestCtx {
            cid: None,
            uuid: Some(device_id.0.clone()),
        });
        let (response, _) = cloud.handle(&req, None, now);
        match response.result.code {
            crate::wire::CODE_SUCCESS => Ok(ProbeOutcome::Occupied),
            c if c == ErrorCode::AlreadyBound.code() => Ok(ProbeOutcome::Taken),
            c if c == ErrorCode::UnknownDevice.code() => Err(ErrorCode::UnknownDevice),
            _ => Err(ErrorCode::GuardRejection),
        }
    }

    /// Issues OTA update requests in bulk, one per model; per-model failures
    /// are recorded, not fatal.
    pub fn harvest_firmware(
        &mut self,
        models: &[String],
        cloud: &mut Cloud,
        now: Tick,
    ) -> (BTreeMap<String, String>, Vec<(String, u32)>) {
        let mut images = BTreeMap::new();
        let mut failures = Vec::new();
        for model in models {
            let mut req = Request::new(Method::OtaUpdate, self.next_id());
            req.params.insert("model".into(), model.clone().into());
            let (response, _) = cloud.handle(&req, None, now);
            if response.is_success() {
                if let Some(image) = response.data_str("image") {
                    images.insert(model.clone(), image.to_owned());
                }
            } else {
                failures.push((model.clone(), response.result.code));
            }
        }
        (images, failures)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::ProfileRules;

    fn alink_schema() -> BTreeMap<InfoField, InfoCategory> {
        [
            (InfoField::Mac, InfoCategory::Guessable),
            (InfoField::Cid, InfoCategory::Public),
            (InfoField::Model, InfoCategory::Public),
            (InfoField::Key, InfoCategory::Public),
        ]
        .into_iter()
        .collect()
    }

    fn smartthings_schema() -> BTreeMap<InfoField, InfoCategory> {
        [(InfoField::DeviceId, InfoCategory::HardCoded)]
            .into_iter()
            .collect()
    }

    fn victim_identity() -> DeviceIdentity {
        DeviceIdentity::new(
            "60:01:94:A2:D5:7C".parse::<Mac>().unwrap(),
            "JIKONG_LIVING_OUTLET_00003",
        )
        .with_cid("000000000000000010671484")
    }

    fn trudy() -> AccountRef {
        AccountRef {
            credential: "deadbeef".into(),
            user_id: "trudy".into(),
        }
    }

    #[test]
    fn public_and_guessable_info_sufficient_for_alink_register() {
        let legit = LegitimacyInfo {
            key: Some("5gPFl8G4GyFZ1fPWk20m".into()),
            ..Default::default()
        };
        let mut phantom = PhantomDevice::against_victim(
            alink_schema(),
            &victim_identity(),
            &legit,
            trudy(),
            InfoGrant::remote_only(),
            None,
        );
        let req = phantom
            .forge(Method::RegisterDevice, &ProfileRules::alink(), 0)
            .unwrap();
        assert!(crate::wire::validate_request(&req).is_ok());
        assert_eq!(req.str_param("model"), Some("JIKONG_LIVING_OUTLET_00003"));
        assert!(crate::wire::verify_sign(&req, "5gPFl8G4GyFZ1fPWk20m"));
    }

    #[test]
    fn hard_coded_device_id_needs_local_access() {
        let victim = DeviceIdentity::new(
            "AA:BB:CC:00:00:09".parse::<Mac>().unwrap(),
            "POWERbot-R7040",
        )
        .with_device_id(DeviceId("AB".repeat(16)));
        let mut remote = PhantomDevice::against_victim(
            smartthings_schema(),
            &victim,
            &LegitimacyInfo::default(),
            trudy(),
            InfoGrant::remote_only(),
            None,
        );
        let err = remote
            .forge(Method::LoginDevice, &ProfileRules::smartthings(), 0)
            .unwrap_err();
        assert_eq!(err.field, InfoField::DeviceId);
        assert_eq!(err.category, InfoCategory::HardCoded);

        let mut local = PhantomDevice::against_victim(
            smartthings_schema(),
            &victim,
            &LegitimacyInfo::default(),
            trudy(),
            InfoGrant::full(),
            None,
        );
        assert!(local
            .forge(Method::LoginDevice, &ProfileRules::smartthings(), 0)
            .is_ok());
    }

    #[test]
    fn device_side_unbind_carries_no_account() {
        let victim = victim_identity().with_device_id(DeviceId("CD".repeat(16)));
        let mut phantom = PhantomDevice::against_victim(
            alink_schema(),
            &victim,
            &LegitimacyInfo::default(),
            trudy(),
            InfoGrant::full(),
            None,
        );
        phantom.learned_uuid = Some(DeviceId("CD".repeat(16)));
        let req = phantom.forge(Method::UnbindDevice, &ProfileRules::alink(), 0).unwrap();
        assert!(req.account.is_none());
        assert!(crate::wire::validate_request(&req).is_ok());
    }

    #[test]
    fn enumeration_produces_distinct_consecutive_macs() {
        let phantom = PhantomDevice::against_victim(
            alink_schema(),
            &victim_identity(),
            &LegitimacyInfo::default(),
            trudy(),
            InfoGrant::remote_only(),
            None,
        );
        let candidates = phantom.enumerate_macs([0x3C, 0x2C, 0x94], 0x0B0000, 65_536);
        assert_eq!(candidates.len(), 65_536);
        let macs: std::collections::BTreeSet<_> =
            candidates.iter().map(|c| c.mac).collect();
        assert_eq!(macs.len(), 65_536);
        assert!(candidates.iter().all(|c| c.mac.prefix() == [0x3C, 0x2C, 0x94]));

        let single = phantom.enumerate_macs([0x3C, 0x2C, 0x94], 7, 1);
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].mac.suffix(), 7);
    }

    #[test]
    fn revoking_a_granted_field_breaks_every_forge_that_needs_it() {
        // Information discipline: each (field, kind) dependency must fail
        // after the field is revoked.
        let legit = LegitimacyInfo {
            key: Some("k".into()),
            ..Default::default()
        };
        let rules = ProfileRules::alink();
        let cases = [
            (InfoField::Cid, Method::RegisterDevice),
            (InfoField::Key, Method::RegisterDevice),
            (InfoField::Model, Method::RegisterDevice),
            (InfoField::Model, Method::OtaUpdate),
        ];
        for (field, kind) in cases {
            let mut phantom = PhantomDevice::against_victim(
                alink_schema(),
                &victim_identity(),
                &legit,
                trudy(),
                InfoGrant::full(),
                None,
            );
            assert!(phantom.forge(kind, &rules, 0).is_ok(), "{kind} before revoke");
            phantom.revoke(field);
            let err = phantom.forge(kind, &rules, 0).unwrap_err();
            assert_eq!(err.field, field, "{kind} after revoking {field}");
        }
    }
}
