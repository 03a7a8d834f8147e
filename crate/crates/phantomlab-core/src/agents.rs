//! Legitimate device and mobile-app agents.
//!
//! Agents are event-driven: the simulation runtime invokes their request
//! builders and reaction handlers serially; they do no scheduling of their
//! own. A device that loses its connection schedules a re-login after its
//! backoff, indefinitely — failures become retries.

use serde::{Deserialize, Serialize};

use crate::cloud::CloseNotice;
use crate::identity::{DeviceId, DeviceIdentity, LegitimacyInfo};
use crate::netlab::Tick;
use crate::states::{AppState, DeviceState, PlatformType};
use crate::wire::{AccountRef, Method, Request, RequestCtx, SystemFields, Value};

/// Default cloud heartbeat period, in ticks.
pub const HEARTBEAT_PERIOD: Tick = 10;
/// Default re-login backoff of a legitimate device, in ticks.
pub const RELOGIN_BACKOFF: Tick = 10;
/// Login-flood period of a phantom device, in ticks.
pub const FLOOD_PERIOD: Tick = 1;

/// A legitimate device.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceAgent {
    pub platform: PlatformType,
    pub identity: DeviceIdentity,
    pub legitimacy: LegitimacyInfo,
    pub state: DeviceState,
    /// Learned at registration (Type I) or hard-coded (Type II).
    pub device_id: Option<DeviceId>,
    /// Issued by the cloud at registration / fabrication under M1.
    pub device_secret: Option<String>,
    /// Owner account held after provisioning / account transfer. Presented on
    /// login so that credential-checking clouds can verify it; ignored by
    /// clouds that do not check.
    pub owner_account: Option<AccountRef>,
    /// Locally stored binding (Type II).
    pub local_binding: Option<String>,
    /// Hardware-backed reset proof (Type II under M2); only the real device
    /// can emit it.
    pub reset_credential: Option<String>,
    pub heartbeat_period: Tick,
    pub relogin_backoff: Tick,
    next_request_id: u64,
}

impl DeviceAgent {
    pub fn new(platform: PlatformType, identity: DeviceIdentity, legitimacy: LegitimacyInfo) -> Self {
        let device_id = identity.device_id.clone();
        DeviceAgent {
            platform,
            identity,
            legitimacy,
            state: DeviceState::S1,
            device_id,
            device_secret: None,
            owner_account: None,
            local_binding: None,
            reset_credential: None,
            heartbeat_period: HEARTBEAT_PERIOD,
            relogin_backoff: RELOGIN_BACKOFF,
            next_request_id: 1,
        }
    }

    pub fn next_id(&mut self) -> u64 {
        let id = self.next_request_id;
        self.next_request_id += 1;
        id
    }

    /// Discovery reply payload: basic information reported to the app over
    /// the LAN. A Type II device's hard-coded ID travels with it — this is
    /// what local access leaks.
    pub fn discovery_info(&self) -> (String, String, Option<DeviceId>) {
        (
            self.identity.mac.to_string(),
            self.identity.model.clone(),
            match self.platform {
                PlatformType::TypeII => self.device_id.clone(),
                PlatformType::TypeI => None,
            },
        )
    }

    pub fn on_provisioned(&mut self, owner: Option<AccountRef>) {
        if self.state == DeviceState::S1 {
            self.state = DeviceState::S2;
        }
        if owner.is_some() {
            self.owner_account = owner;
        }
    }

    /// Registration request (Type I), shaped like the observed wire messages.
    pub fn register_request(&mut self, legitimacy_key: Option<&str>, now: Tick) -> Request {
        let mut req = Request::new(Method::RegisterDevice, self.next_id());
        req.params
            .insert("model".into(), self.identity.model.clone().into());
        req.params
            .insert("mac".into(), self.identity.mac.to_string().into());
        req.params
            .insert("version".into(), "0.0.0;APP2.0;OTA1.0".into());
        if let Some(sn) = &self.identity.sn {
            req.params.insert("sn".into(), sn.clone().into());
        }
        req.request = Some(RequestCtx {
            cid: self.identity.cid.clone(),
            uuid: Some(String::new()),
        });
        req.system = Some(SystemFields {
            key: None,
            sign: None,
            time: now.to_string(),
        });
        if let Some(secret) = &self.device_secret {
            req.params.insert("secret".into(), secret.clone().into());
        }
        if let Some(key) = legitimacy_key {
            crate::wire::sign_request(&mut req, key);
        }
        req
    }

    pub fn on_registered(&mut self, device_id: DeviceId, secret: Option<String>) {
        self.identity.device_id = Some(device_id.clone());
        self.device_id = Some(device_id);
        if secret.is_some() {
            self.device_secret = secret;
        }
        if self.state == DeviceState::S2 {
            self.state = DeviceState::S3;
        }
    }

    /// Account transfer (Type II): the app hands the owner account to the
    /// device, which stores the local binding and then binds with the cloud.
    pub fn on_account_transfer(&mut self, account: AccountRef) {
        self.local_binding = Some(account.user_id.clone());
        self.owner_account = Some(account);
    }

    fn attach_session_legitimacy(&self, req: &mut Request) {
        if let Some(hwid) = &self.legitimacy.hwid {
            req.params.insert("hwid".into(), hwid.clone().into());
            req.params
                .insert("mac".into(), self.identity.mac.to_string().into());
        }
        if let Some(tagkey) = &self.legitimacy.tagkey {
            req.params.insert("tagkey".into(), tagkey.clone().into());
        }
    }

    /// Device-side binding request (Type II).
    pub fn bind_request(&mut self) -> Option<Request> {
        let device_id = self.device_id.clone()?;
        let account = self.owner_account.clone()?;
        let mut req = Request::new(Method::BindDevice, self.next_id());
        req.request = Some(RequestCtx {
            cid: None,
            uuid: Some(device_id.0),
        });
        req.account = Some(account);
        self.attach_session_legitimacy(&mut req);
        if let Some(secret) = &self.device_secret {
            req.params.insert("secret".into(), secret.clone().into());
        }
        if let Some(nonce) = &self.reset_credential {
            req.params.insert("reset_nonce".into(), nonce.clone().into());
        }
        Some(req)
    }

    pub fn on_bound(&mut self) {
        if self.state == DeviceState::S2 {
            self.state = DeviceState::S3;
        }
    }

    pub fn login_request(&mut self) -> Option<Request> {
        let device_id = self.device_id.clone()?;
        let mut req = Request::new(Method::LoginDevice, self.next_id());
        req.request = Some(RequestCtx {
            cid: None,
            uuid: Some(device_id.0),
        });
        if let Some(secret) = &self.device_secret {
            req.params.insert("secret".into(), secret.clone().into());
        }
        if let Some(account) = &self.owner_account {
            req.account = Some(account.clone());
        }
        self.attach_session_legitimacy(&mut req);
        Some(req)
    }

    pub fn on_logged_in(&mut self) {
        if self.state == DeviceState::S3 {
            self.state = DeviceState::S4;
        }
    }

    pub fn status_request(&mut self, status: Value) -> Option<Request> {
        let device_id = self.device_id.clone()?;
        let mut req = Request::new(Method::StatusUpload, self.next_id());
        req.request = Some(RequestCtx {
            cid: None,
            uuid: Some(device_id.0),
        });
        req.params.insert("status".into(), status);
        Some(req)
    }

    /// Reaction to the cloud closing this device's connection.
    /// Returns true when the device should schedule a re-login.
    pub fn on_connection_closed(&mut self, notice: CloseNotice) -> bool {
        match notice {
            CloseNotice::Evicted | CloseNotice::Disconnected => self.state == DeviceState::S4,
            CloseNotice::EraseBinding => {
                self.local_binding = None;
                self.owner_account = None;
                if self.platform == PlatformType::TypeII {
                    self.state = DeviceState::S2;
                }
                false
            }
            CloseNotice::ResetToFactory => {
                self.reset();
                false
            }
        }
    }

    /// Physical reset: back to factory state. A Type II device keeps its
    /// hard-coded ID; a Type I device forgets the cloud-issued one. Emits the
    /// hardware-backed reset nonce, if any.
    pub fn reset(&mut self) -> Option<String> {
        self.state = DeviceState::S1;
        self.local_binding = None;
        self.owner_account = None;
        if self.platform == PlatformType::TypeI {
            self.device_id = None;
            self.identity.device_id = None;
            self.device_secret = None;
        }
        self.reset_credential.clone()
    }
}

/// The owner's (or attacker's) mobile app.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppAgent {
    pub account: AccountRef,
    pub state: AppState,
    pub known_devices: Vec<DeviceId>,
    next_request_id: u64,
}

impl AppAgent {
    pub fn new(account: AccountRef) -> Self {
        AppAgent {
            account,
            state: AppState::S1,
            known_devices: Vec::new(),
            next_request_id: 1000,
        }
    }

    pub fn next_id(&mut self) -> u64 {
        let id = self.next_request_id;
        self.next_request_id += 1;
        id
    }

    pub fn knows(&self, device_id: &DeviceId) -> bool {
        self.known_devices.contains(device_id)
    }

    pub fn learn_device(&mut self, device_id: DeviceId) {
        if !self.known_devices.contains(&device_id) {
            self.known_devices.push(device_id);
        }
    }

    pub fn forget_device(&mut self, device_id: &DeviceId) {
        self.known_devices.retain(|d| d != device_id);
    }

    pub fn discover_request(&mut self) -> Request {
        Request::new(Method::Discover, self.next_id())
    }

    pub fn provision_request(&mut self, ssid: &str) -> Request {
        let mut req = Request::new(Method::Provision, self.next_id());
        req.params.insert("ssid".into(), ssid.into());
        // The owner credential rides along so the device can present it to
        // credential-checking clouds.
        req.account = Some(self.account.clone());
        req
    }

    /// App-side bind (Type I target: cloud) or account transfer (Type II
    /// target: device).
    pub fn bind_request(&mut self, device_id: Option<&DeviceId>) -> Request {
        let mut req = Request::new(Method::AppBind, self.next_id());
        req.account = Some(self.account.clone());
        if let Some(device_id) = device_id {
            req.request = Some(RequestCtx {
                cid: None,
                uuid: Some(device_id.0.clone()),
            });
        }
        req
    }

    pub fn control_request(&mut self, device_id: &DeviceId, command: &str) -> Option<Request> {
        if !self.knows(device_id) {
            return None;
        }
        let mut req = Request::new(Method::AppControl, self.next_id());
        req.account = Some(self.account.clone());
        req.params.insert("command".into(), command.into());
        req.request = Some(RequestCtx {
            cid: None,
            uuid: Some(device_id.0.clone()),
        });
        Some(req)
    }

    pub fn unbind_request(&mut self, device_id: &DeviceId) -> Option<Request> {
        if !self.knows(device_id) {
            return None;
        }
        let mut req = Request::new(Method::AppUnbind, self.next_id());
        req.account = Some(self.account.clone());
        req.request = Some(RequestCtx {
            cid: None,
            uuid: Some(device_id.0.clone()),
        });
        Some(req)
    }
}
