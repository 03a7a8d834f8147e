//! Device identity and legitimacy information.
//!
//! Identity information determines a device ID (MAC, model, CID, SN);
//! legitimacy information is checked for plausibility but never enters
//! device-ID generation (Key/Sign, hwid, TagKey). Every field a platform
//! profile uses is tagged with how an adversary can obtain it: public,
//! guessable by brute force, or hard-coded (requires local access).

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// A 6-byte hardware address. The first three bytes are the vendor prefix,
/// fixed within one device model's population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Mac(pub [u8; 6]);

impl Mac {
    pub fn prefix(&self) -> [u8; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    /// Low three bytes as an integer, the brute-forceable suffix space.
    pub fn suffix(&self) -> u32 {
        u32::from_be_bytes([0, self.0[3], self.0[4], self.0[5]])
    }

    pub fn from_parts(prefix: [u8; 3], suffix: u32) -> Self {
        let s = suffix.to_be_bytes();
        Mac([prefix[0], prefix[1], prefix[2], s[1], s[2], s[3]])
    }
}

impl fmt::Display for Mac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}",
            self.0[0], self.0[1], self.0[2], self.0[3], self.0[4], self.0[5]
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid MAC address: {0}")]
pub struct MacParseError(String);

impl FromStr for Mac {
    type Err = MacParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(MacParseError(s.to_owned()));
        }
        let mut bytes = [0u8; 6];
        for (i, part) in parts.iter().enumerate() {
            bytes[i] =
                u8::from_str_radix(part, 16).map_err(|_| MacParseError(s.to_owned()))?;
        }
        Ok(Mac(bytes))
    }
}

impl TryFrom<String> for Mac {
    type Error = MacParseError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Mac> for String {
    fn from(mac: Mac) -> String {
        mac.to_string()
    }
}

/// Opaque 32-hex device identifier. Type I clouds derive it from identity
/// information at registration; Type II devices ship with it hard-coded.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeviceId(pub String);

impl DeviceId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The identity-information tuple of one device.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeviceIdentity {
    pub mac: Mac,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sn: Option<String>,
    /// Present from fabrication on Type II; absent on Type I until
    /// registration succeeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<DeviceId>,
}

impl DeviceIdentity {
    pub fn new(mac: Mac, model: impl Into<String>) -> Self {
        Self {
            mac,
            model: model.into(),
            cid: None,
            sn: None,
            device_id: None,
        }
    }

    pub fn with_cid(mut self, cid: impl Into<String>) -> Self {
        self.cid = Some(cid.into());
        self
    }

    pub fn with_sn(mut self, sn: impl Into<String>) -> Self {
        self.sn = Some(sn.into());
        self
    }

    pub fn with_device_id(mut self, id: DeviceId) -> Self {
        self.device_id = Some(id);
        self
    }

    /// Canonical lookup key for the identity tuple (excludes the device ID,
    /// which is derived from it on Type I platforms).
    pub fn key(&self) -> String {
        let mut key = format!("model={}&mac={}", self.model, self.mac);
        if let Some(cid) = &self.cid {
            key.push_str("&cid=");
            key.push_str(cid);
        }
        if let Some(sn) = &self.sn {
            key.push_str("&sn=");
            key.push_str(sn);
        }
        key
    }
}

/// Legitimacy-information tuple; the populated subset matches the platform
/// profile.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LegitimacyInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hwid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tagkey: Option<String>,
}

/// How an adversary obtains an information item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfoCategory {
    /// Freely available or trivially inferred.
    Public,
    /// Brute-forceable, e.g. the low bytes of a MAC address.
    Guessable,
    /// Requires local access to the device; immutable once leaked.
    HardCoded,
}

impl fmt::Display for InfoCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InfoCategory::Public => "public",
            InfoCategory::Guessable => "guessable",
            InfoCategory::HardCoded => "hard-coded",
        })
    }
}

/// The identity/legitimacy fields a profile can tag and a phantom can hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfoField {
    Mac,
    Model,
    Cid,
    Sn,
    DeviceId,
    Key,
    Hwid,
    TagKey,
}

impl InfoField {
    pub fn name(self) -> &'static str {
        match self {
            InfoField::Mac => "mac",
            InfoField::Model => "model",
            InfoField::Cid => "cid",
            InfoField::Sn => "sn",
            InfoField::DeviceId => "device_id",
            InfoField::Key => "key",
            InfoField::Hwid => "hwid",
            InfoField::TagKey => "tagkey",
        }
    }
}

impl fmt::Display for InfoField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_round_trips_through_display() {
        let mac: Mac = "3C:2C:94:0B:56:69".parse().unwrap();
        assert_eq!(mac.to_string(), "3C:2C:94:0B:56:69");
        assert_eq!(mac.prefix(), [0x3C, 0x2C, 0x94]);
        assert_eq!(mac.suffix(), 0x0B5669);
        assert_eq!(Mac::from_parts(mac.prefix(), mac.suffix()), mac);
    }

    #[test]
    fn mac_rejects_garbage() {
        assert!("3C:2C:94:0B:56".parse::<Mac>().is_err());
        assert!("3C:2C:94:0B:56:GG".parse::<Mac>().is_err());
    }

    #[test]
    fn identity_key_is_order_stable() {
        let identity = DeviceIdentity::new("60:01:94:A2:D5:7C".parse().unwrap(), "OUTLET")
            .with_cid("0001");
        assert_eq!(identity.key(), "model=OUTLET&mac=60:01:94:A2:D5:7C&cid=0001");
    }
}
