//! One simulated world: a cloud, a victim device and app, an attacker app,
//! and a phantom device, wired through the deterministic scheduler.
//!
//! Every interaction is one atomic step: the request travels through the
//! canonical wire codec, the cloud handler runs, effects (connection
//! closures, forwarded commands) are applied, and the entities involved
//! commit their state transitions together. The trace is stamped with the
//! resulting state combination after each record, so the legality of every
//! step is visible.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{AppAgent, DeviceAgent};
use crate::cloud::{
    Cloud, CloseNotice, CloudEffect, ConnMeta, ErrorCode, Principal, ProfileRules,
};
use crate::identity::{DeviceId, DeviceIdentity, InfoCategory, InfoField, LegitimacyInfo};
use crate::netlab::{
    routing_allowed, ConnectionId, ConnectionTable, Event, NodeId, RecordKind, Scheduler, Tick,
    TenureLog, Trace,
};
use crate::phantom::{InfoGrant, PhantomDevice};
use crate::policy::PolicyConfig;
use crate::states::{AppState, CloudState, DeviceState, PlatformType, StateCombination};
use crate::wire::{self, AccountRef, Method, Request, RequestCtx, Response, Value};

/// Everything needed to assemble a world.
#[derive(Debug, Clone)]
pub struct WorldSetup {
    pub policy: PolicyConfig,
    pub rules: ProfileRules,
    pub info_schema: BTreeMap<InfoField, InfoCategory>,
    pub victim_identity: DeviceIdentity,
    pub victim_legitimacy: LegitimacyInfo,
    /// Per-model legitimacy key provisioned at the cloud (signed
    /// registrations).
    pub model_key: Option<String>,
    /// Serial-number scheme of the device population, leaked to the attacker
    /// only with local access.
    pub sn_template: Option<String>,
    pub grant: InfoGrant,
    pub seed: u64,
}

/// One scripted step the world can execute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Interaction {
    AppDiscover,
    AppProvision,
    DeviceRegister,
    AliceBind,
    AccountTransferAlice,
    DeviceBind,
    DeviceLogin,
    DeviceStatusUpload(Value),
    AliceControl(String),
    AliceUnbind,
    DeviceReset,
    AccountTransferTrudy,
    PhantomRegister,
    PhantomLogin,
    PhantomBind,
    PhantomDeviceUnbind,
    PhantomDisconnect,
    PhantomStatusUpload(Value),
    TrudyBind,
    TrudyControl(String),
}

impl Interaction {
    fn label(&self) -> &'static str {
        match self {
            Interaction::AppDiscover => "discover",
            Interaction::AppProvision => "provision",
            Interaction::DeviceRegister => "registerDevice",
            Interaction::AliceBind => "appBind",
            Interaction::AccountTransferAlice => "appBind",
            Interaction::DeviceBind => "bindDevice",
            Interaction::DeviceLogin => "loginDevice",
            Interaction::DeviceStatusUpload(_) => "statusUpload",
            Interaction::AliceControl(_) => "appControl",
            Interaction::AliceUnbind => "appUnbind",
            Interaction::DeviceReset => "reset",
            Interaction::AccountTransferTrudy => "appBind",
            Interaction::PhantomRegister => "registerDevice",
            Interaction::PhantomLogin => "loginDevice",
            Interaction::PhantomBind => "bindDevice",
            Interaction::PhantomDeviceUnbind => "unbindDevice",
            Interaction::PhantomDisconnect => "disconnect",
            Interaction::PhantomStatusUpload(_) => "statusUpload",
            Interaction::TrudyBind => "appBind",
            Interaction::TrudyControl(_) => "appControl",
        }
    }
}

/// What one interaction produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionOutcome {
    /// Cloud response code, when the interaction reached the cloud.
    pub code: Option<u32>,
    pub ok: bool,
}

impl InteractionOutcome {
    fn local_ok() -> Self {
        InteractionOutcome {
            code: None,
            ok: true,
        }
    }

    fn failed() -> Self {
        InteractionOutcome {
            code: None,
            ok: false,
        }
    }

    fn from_response(response: &Response) -> Self {
        // Code 0 is the in-transit-loss sentinel: no response ever existed.
        InteractionOutcome {
            code: (response.result.code != 0).then_some(response.result.code),
            ok: response.is_success(),
        }
    }
}

/// Ground-truth observations, usable by predicates but invisible to guards.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    /// Every control command the cloud forwarded, with the node that received
    /// it.
    pub control_deliveries: Vec<(Tick, NodeId, String)>,
    /// Messages dispatched, counted at the send sites; conservation demands
    /// exactly one trace record per message.
    pub messages_sent: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("life-cycle failed at phase {phase}: code {code:?}")]
pub struct LifecycleFailure {
    pub phase: &'static str,
    pub code: Option<u32>,
}

#[derive(Debug, Clone)]
struct PendingRecord {
    kind: RecordKind,
    src: NodeId,
    dst: NodeId,
    method: String,
    code: Option<u32>,
}

/// The simulated world.
#[derive(Debug, Clone)]
pub struct World {
    pub cloud: Cloud,
    pub device: DeviceAgent,
    pub alice: AppAgent,
    pub trudy: AppAgent,
    pub phantom: PhantomDevice,
    pub connections: ConnectionTable,
    pub trace: Trace,
    pub tenure: TenureLog,
    pub ground: GroundTruth,
    scheduler: Scheduler<Interaction>,
    device_conn: Option<ConnectionId>,
    phantom_conn: Option<ConnectionId>,
    victim_uuid: Option<DeviceId>,
    relogin_pending: bool,
    flood_active: bool,
    alice_account: AccountRef,
    trudy_account: AccountRef,
    pending_records: Vec<PendingRecord>,
    /// Per-message loss probability in percent; 0 by default (the modeled
    /// attacks need no lossy network).
    loss_percent: u8,
    loss_rng: ChaCha8Rng,
}

impl World {
    pub fn new(setup: WorldSetup) -> Self {
        let WorldSetup {
            policy,
            rules,
            info_schema,
            victim_identity,
            victim_legitimacy,
            model_key,
            sn_template,
            grant,
            seed,
        } = setup;
        let mut cloud = Cloud::new(policy, rules.clone(), seed);
        let alice_account = AccountRef {
            credential: cloud.create_account("alice"),
            user_id: "alice".to_owned(),
        };
        let trudy_account = AccountRef {
            credential: cloud.create_account("trudy"),
            user_id: "trudy".to_owned(),
        };
        if let Some(key) = &model_key {
            cloud.provision_model_key(&victim_identity.model, key);
        }

        let mut device = DeviceAgent::new(
            rules.platform,
            victim_identity.clone(),
            victim_legitimacy.clone(),
        );
        if rules.register_signed_key {
            device.legitimacy.key = model_key.clone();
        }

        // Type II devices exist in the cloud's manifest from fabrication.
        let victim_uuid = if rules.platform == PlatformType::TypeII {
            let (uuid, secret, reset_credential) = cloud.seed_registry(
                victim_identity.clone(),
                victim_legitimacy.clone(),
                CloudState::S2,
            );
            device.device_secret = secret;
            device.reset_credential = reset_credential;
            Some(uuid)
        } else {
            None
        };

        let phantom = PhantomDevice::against_victim(
            info_schema,
            &victim_identity,
            &victim_legitimacy,
            trudy_account.clone(),
            grant,
            sn_template,
        );

        World {
            cloud,
            device,
            alice: AppAgent::new(alice_account.clone()),
            trudy: AppAgent::new(trudy_account.clone()),
            phantom,
            connections: ConnectionTable::default(),
            trace: Trace::default(),
            tenure: TenureLog::default(),
            ground: GroundTruth::default(),
            scheduler: Scheduler::default(),
            device_conn: None,
            phantom_conn: None,
            victim_uuid,
            relogin_pending: false,
            flood_active: false,
            alice_account,
            trudy_account,
            pending_records: Vec::new(),
            loss_percent: 0,
            loss_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x1055),
        }
    }

    pub fn clock(&self) -> Tick {
        self.scheduler.clock
    }

    pub fn victim_uuid(&self) -> Option<&DeviceId> {
        self.victim_uuid.as_ref()
    }

    pub fn alice_account(&self) -> &AccountRef {
        &self.alice_account
    }

    pub fn trudy_account(&self) -> &AccountRef {
        &self.trudy_account
    }

    /// Current state combination of the victim triple.
    pub fn combo(&self) -> StateCombination {
        let cloud_state = match &self.victim_uuid {
            Some(uuid) => self.cloud.state_of(uuid),
            None => match self.cloud.rules.platform {
                PlatformType::TypeI => CloudState::S1,
                PlatformType::TypeII => CloudState::S2,
            },
        };
        StateCombination::new(cloud_state, self.device.state, self.alice.state)
    }

    /// Who holds the victim device's live session, per ground truth.
    pub fn session_principal(&self) -> Option<Principal> {
        let uuid = self.victim_uuid.as_ref()?;
        self.cloud.session(uuid).map(|s| s.principal)
    }

    pub fn victim_owner(&self) -> Option<String> {
        let uuid = self.victim_uuid.as_ref()?;
        self.cloud.binding(uuid).map(|b| b.account.clone())
    }

    /// Status value the owner's app currently sees.
    pub fn app_status_view(&self) -> Option<Value> {
        let uuid = self.victim_uuid.as_ref()?;
        self.cloud.latest_status(uuid).cloned()
    }

    pub fn set_principal_flip(&mut self, flip: bool) {
        self.cloud.set_principal_flip(flip);
    }

    /// Seeded message loss for robustness runs; lost messages are traced as
    /// dropped, never silently discarded.
    pub fn set_loss_percent(&mut self, percent: u8) {
        self.loss_percent = percent.min(100);
    }

    /// Schedules a scripted interaction for a future tick; `run_until` flags
    /// the trace when scheduled work is still pending at its horizon.
    pub fn schedule_interaction(&mut self, at: Tick, interaction: Interaction) {
        self.scheduler.schedule(at, Event::Action(interaction));
    }

    pub fn device_connected(&self) -> bool {
        self.device_conn
            .map(|c| self.connections.is_open(c))
            .unwrap_or(false)
    }

    pub fn phantom_connected(&self) -> bool {
        self.phantom_conn
            .map(|c| self.connections.is_open(c))
            .unwrap_or(false)
    }

    /// Seeds the OTA repository with `count` models and returns their names.
    pub fn seed_firmware(&mut self, count: u32) -> Vec<String> {
        let mut models = Vec::new();
        for i in 0..count {
            let model = format!("MODEL-{i:03}");
            let image = hex::encode(format!("fw:{model}:1.0"));
            self.cloud.firmware.insert(&model, "1.0", &image);
            models.push(model);
        }
        models
    }

    /// Bulk OTA harvesting by the phantom; returns collected images per model.
    pub fn harvest(&mut self, models: &[String]) -> BTreeMap<String, String> {
        let now = self.scheduler.clock;
        self.ground.messages_sent += models.len() as u64;
        let (images, failures) = self
            .phantom
            .harvest_firmware(models, &mut self.cloud, now);
        let failure_codes: BTreeMap<&str, u32> = failures
            .iter()
            .map(|(model, code)| (model.as_str(), *code))
            .collect();
        for model in models {
            let code = failure_codes
                .get(model.as_str())
                .copied()
                .unwrap_or(wire::CODE_SUCCESS);
            self.record_exchange(
                NodeId::Phantom,
                NodeId::Cloud,
                "otaUpdate",
                Some(code),
                RecordKind::Delivered,
            );
        }
        self.flush_records();
        images
    }

    // ------------------------------------------------------------------
    // Time and machinery
    // ------------------------------------------------------------------

    /// Runs scheduled machinery (heartbeats, re-logins, flood pulses) tick by
    /// tick up to and including `horizon`, sampling session tenure each tick.
    pub fn run_until(&mut self, horizon: Tick) {
        while self.scheduler.clock < horizon {
            let t = self.scheduler.clock + 1;
            self.advance_tick(t);
        }
        if self.scheduler.pending_actions() > 0 {
            self.trace.horizon_exceeded = true;
        }
    }

    fn advance_tick(&mut self, t: Tick) {
        while let Some((_, event)) = self.scheduler.pop(t) {
            self.handle_event(event);
        }
        self.scheduler.clock = t;
        let holder = self.session_principal();
        self.tenure.sample(t, holder);
    }

    /// Advances one tick (running due machinery first) and then executes the
    /// scripted interaction.
    pub fn step(&mut self, interaction: Interaction) -> InteractionOutcome {
        let t = self.scheduler.clock + 1;
        self.advance_tick(t);
        self.apply(interaction)
    }

    pub fn start_flood(&mut self) {
        if !self.flood_active {
            self.flood_active = true;
            let period = self.phantom.login_flood_period;
            self.scheduler.schedule_after(period, Event::FloodPulse);
        }
    }

    pub fn stop_flood(&mut self) {
        self.flood_active = false;
    }

    fn schedule_relogin(&mut self) {
        if !self.relogin_pending {
            self.relogin_pending = true;
            let backoff = self.device.relogin_backoff;
            self.scheduler.schedule_after(backoff, Event::Relogin);
        }
    }

    fn handle_event(&mut self, event: Event<Interaction>) {
        match event {
            Event::Action(interaction) => {
                self.apply(interaction);
            }
            Event::Heartbeat => self.heartbeat(),
            Event::Relogin => {
                self.relogin_pending = false;
                let connected = self
                    .device_conn
                    .map(|c| self.connections.is_open(c))
                    .unwrap_or(false);
                if connected {
                    return;
                }
                if self.device.state == DeviceState::S4 && self.device.device_id.is_some() {
                    let outcome = self.apply(Interaction::DeviceLogin);
                    if !outcome.ok {
                        self.schedule_relogin();
                    }
                }
            }
            Event::FloodPulse => {
                if self.flood_active {
                    self.apply(Interaction::PhantomLogin);
                    let period = self.phantom.login_flood_period;
                    self.scheduler.schedule_after(period, Event::FloodPulse);
                }
            }
        }
    }

    fn heartbeat(&mut self) {
        let Some(conn) = self.device_conn else { return };
        if !self.connections.is_open(conn) {
            self.device_conn = None;
            return;
        }
        if self.device.state != DeviceState::S4 {
            return;
        }
        let now = self.scheduler.clock;
        if let Some(uuid) = self.device.device_id.clone() {
            self.ground.messages_sent += 1;
            self.cloud.touch_session(&uuid, conn, now);
            let combo = self.combo();
            let legal = crate::states::legal_combination(self.cloud.rules.platform, combo);
            self.trace.record(
                now,
                RecordKind::Delivered,
                NodeId::Device,
                NodeId::Cloud,
                Some("heartbeat".to_owned()),
                None,
                combo,
                legal,
            );
        }
        let period = self.device.heartbeat_period;
        self.scheduler.schedule_after(period, Event::Heartbeat);
    }

    // ------------------------------------------------------------------
    // Interaction execution
    // ------------------------------------------------------------------

    /// Queues a record; all records of one interaction are stamped with the
    /// state combination the interaction commits to, since an interaction
    /// moves the entities as a whole.
    fn record_exchange(
        &mut self,
        src: NodeId,
        dst: NodeId,
        method: &str,
        code: Option<u32>,
        kind: RecordKind,
    ) {
        self.pending_records.push(PendingRecord {
            kind,
            src,
            dst,
            method: method.to_owned(),
            code,
        });
    }

    fn flush_records(&mut self) {
        if self.pending_records.is_empty() {
            return;
        }
        let combo = self.combo();
        let legal = crate::states::legal_combination(self.cloud.rules.platform, combo);
        let pending = std::mem::take(&mut self.pending_records);
        for record in pending {
            self.trace.record(
                self.scheduler.clock,
                record.kind,
                record.src,
                record.dst,
                Some(record.method),
                record.code,
                combo,
                legal,
            );
        }
    }

    fn record_transitions(
        &mut self,
        before: StateCombination,
        label: &str,
    ) {
        let after = self.combo();
        if before == after {
            return;
        }
        let legal = crate::states::legal_combination(self.cloud.rules.platform, after);
        for (node, changed) in [
            (NodeId::Cloud, before.cloud != after.cloud),
            (NodeId::Device, before.device != after.device),
            (NodeId::VictimApp, before.app != after.app),
        ] {
            if changed {
                self.trace.record(
                    self.scheduler.clock,
                    RecordKind::Transition,
                    node,
                    node,
                    Some(label.to_owned()),
                    None,
                    after,
                    legal,
                );
            }
        }
    }

    /// Sends a request to the cloud through the canonical codec and applies
    /// the returned effects.
    fn cloud_exchange(
        &mut self,
        src: NodeId,
        request: &Request,
        conn: Option<ConnMeta>,
    ) -> Response {
        self.ground.messages_sent += 1;
        if self.loss_percent > 0 && self.loss_rng.gen_range(0..100) < self.loss_percent {
            self.record_exchange(
                src,
                NodeId::Cloud,
                request.method.name(),
                None,
                RecordKind::Dropped,
            );
            return Response::error(request.id, 0, "lost in transit");
        }
        let bytes = wire::encode_request(request);
        let decoded = wire::decode_request(&bytes).expect("agent-built requests decode");
        let now = self.scheduler.clock;
        let (response, effects) = self.cloud.handle(&decoded, conn, now);
        self.record_exchange(
            src,
            NodeId::Cloud,
            decoded.method.name(),
            Some(response.result.code),
            RecordKind::Delivered,
        );
        self.apply_effects(effects);
        response
    }

    fn apply_effects(&mut self, effects: Vec<CloudEffect>) {
        for effect in effects {
            match effect {
                CloudEffect::CloseConnection { connection, notice } => {
                    self.close_connection_from_cloud(connection, notice);
                }
                CloudEffect::Forward {
                    connection,
                    request,
                } => {
                    self.deliver_forward(connection, &request);
                }
            }
        }
    }

    fn close_connection_from_cloud(&mut self, connection: ConnectionId, notice: CloseNotice) {
        let endpoint = self.connections.endpoint(connection);
        self.connections.close(connection, self.scheduler.clock);
        let Some(endpoint) = endpoint else { return };
        self.ground.messages_sent += 1;
        let label = match notice {
            CloseNotice::Evicted => "connClose:evicted",
            CloseNotice::Disconnected => "connClose:disconnected",
            CloseNotice::EraseBinding => "connClose:eraseBinding",
            CloseNotice::ResetToFactory => "connClose:resetToFactory",
        };
        match endpoint {
            NodeId::Device => {
                if self.device_conn == Some(connection) {
                    self.device_conn = None;
                }
                let wants_relogin = self.device.on_connection_closed(notice);
                if wants_relogin {
                    self.schedule_relogin();
                }
            }
            NodeId::Phantom if self.phantom_conn == Some(connection) => {
                self.phantom_conn = None;
            }
            _ => {}
        }
        self.record_exchange(NodeId::Cloud, endpoint, label, None, RecordKind::Delivered);
    }

    fn deliver_forward(&mut self, connection: ConnectionId, request: &Request) {
        let endpoint = self.connections.endpoint(connection);
        let Some(endpoint) = endpoint else { return };
        self.ground.messages_sent += 1;
        if !self.connections.is_open(connection) {
            self.record_exchange(
                NodeId::Cloud,
                endpoint,
                request.method.name(),
                None,
                RecordKind::Dropped,
            );
            return;
        }
        if request.method == Method::ControlCommand {
            let command = request.str_param("command").unwrap_or_default().to_owned();
            self.ground
                .control_deliveries
                .push((self.scheduler.clock, endpoint, command));
        }
        self.record_exchange(
            NodeId::Cloud,
            endpoint,
            request.method.name(),
            None,
            RecordKind::Delivered,
        );
    }

    /// Executes one interaction at the current tick.
    pub fn apply(&mut self, interaction: Interaction) -> InteractionOutcome {
        let before = self.combo();
        let label = interaction.label();
        let outcome = match interaction.clone() {
            Interaction::AppDiscover => self.do_discover(),
            Interaction::AppProvision => self.do_provision(),
            Interaction::DeviceRegister => self.do_device_register(),
            Interaction::AliceBind => self.do_alice_bind(),
            Interaction::AccountTransferAlice => self.do_account_transfer_alice(),
            Interaction::DeviceBind => self.do_device_bind(),
            Interaction::DeviceLogin => self.do_device_login(),
            Interaction::DeviceStatusUpload(value) => self.do_device_status(value),
            Interaction::AliceControl(command) => self.do_app_control(false, &command),
            Interaction::AliceUnbind => self.do_alice_unbind(),
            Interaction::DeviceReset => self.do_device_reset(),
            Interaction::AccountTransferTrudy => self.do_account_transfer_trudy(),
            Interaction::PhantomRegister => self.do_phantom_register(),
            Interaction::PhantomLogin => self.do_phantom_login(),
            Interaction::PhantomBind => self.do_phantom_bind(),
            Interaction::PhantomDeviceUnbind => self.do_phantom_device_unbind(),
            Interaction::PhantomDisconnect => self.do_phantom_disconnect(),
            Interaction::PhantomStatusUpload(value) => self.do_phantom_status(value),
            Interaction::TrudyBind => self.do_trudy_bind(),
            Interaction::TrudyControl(command) => self.do_app_control(true, &command),
        };
        self.flush_records();
        self.record_transitions(before, label);
        outcome
    }

    fn do_discover(&mut self) -> InteractionOutcome {
        self.ground.messages_sent += 1;
        if !routing_allowed(NodeId::VictimApp, NodeId::Device) {
            self.record_exchange(
                NodeId::VictimApp,
                NodeId::Device,
                "discover",
                None,
                RecordKind::Denied,
            );
            return InteractionOutcome::failed();
        }
        let _req = self.alice.discover_request();
        let (_mac, _model, uuid) = self.device.discovery_info();
        if self.alice.state == AppState::S1 {
            self.alice.state = AppState::S2;
        }
        if let Some(uuid) = uuid {
            self.alice.learn_device(uuid);
        }
        self.record_exchange(
            NodeId::VictimApp,
            NodeId::Device,
            "discover",
            None,
            RecordKind::Delivered,
        );
        InteractionOutcome::local_ok()
    }

    fn do_provision(&mut self) -> InteractionOutcome {
        self.ground.messages_sent += 1;
        let req = self.alice.provision_request("home-wifi");
        let owner = req.account.clone();
        self.device.on_provisioned(owner);
        self.record_exchange(
            NodeId::VictimApp,
            NodeId::Device,
            "provision",
            None,
            RecordKind::Delivered,
        );
        InteractionOutcome::local_ok()
    }

    fn do_device_register(&mut self) -> InteractionOutcome {
        let key = self.device.legitimacy.key.clone();
        let now = self.scheduler.clock;
        let req = self.device.register_request(key.as_deref(), now);
        let response = self.cloud_exchange(NodeId::Device, &req, None);
        if response.is_success() {
            let uuid = response
                .data_str("uuid")
                .map(|u| DeviceId(u.to_owned()))
                .expect("successful registration returns a uuid");
            let secret = response.data_str("secret").map(str::to_owned);
            self.device.on_registered(uuid.clone(), secret);
            self.victim_uuid = Some(uuid.clone());
            // The device shares its new ID with the app over the LAN during
            // setup.
            self.alice.learn_device(uuid);
        }
        InteractionOutcome::from_response(&response)
    }

    fn do_alice_bind(&mut self) -> InteractionOutcome {
        let Some(uuid) = self.victim_uuid.clone() else {
            return InteractionOutcome::failed();
        };
        let req = self.alice.bind_request(Some(&uuid));
        let response = self.cloud_exchange(NodeId::VictimApp, &req, None);
        if response.is_success() {
            if self.alice.state == AppState::S2 {
                self.alice.state = AppState::S3;
            }
            self.device.on_bound();
        }
        InteractionOutcome::from_response(&response)
    }

    fn do_account_transfer_alice(&mut self) -> InteractionOutcome {
        self.ground.messages_sent += 1;
        self.device.on_account_transfer(self.alice_account.clone());
        self.record_exchange(
            NodeId::VictimApp,
            NodeId::Device,
            "appBind",
            None,
            RecordKind::Delivered,
        );
        InteractionOutcome::local_ok()
    }

    fn do_device_bind(&mut self) -> InteractionOutcome {
        let Some(req) = self.device.bind_request() else {
            return InteractionOutcome::failed();
        };
        let response = self.cloud_exchange(NodeId::Device, &req, None);
        if response.is_success() {
            self.device.on_bound();
            if self.alice.state == AppState::S2 {
                self.alice.state = AppState::S3;
            }
            if let Some(uuid) = self.device.device_id.clone() {
                self.alice.learn_device(uuid);
            }
        }
        InteractionOutcome::from_response(&response)
    }

    fn do_device_login(&mut self) -> InteractionOutcome {
        let Some(req) = self.device.login_request() else {
            return InteractionOutcome::failed();
        };
        let now = self.scheduler.clock;
        let conn = self.connections.open(NodeId::Device, now);
        let meta = ConnMeta {
            id: conn,
            principal: Principal::RealDevice,
        };
        let response = self.cloud_exchange(NodeId::Device, &req, Some(meta));
        if response.is_success() {
            self.device_conn = Some(conn);
            self.device.on_logged_in();
            if self.alice.state == AppState::S3 {
                self.alice.state = AppState::S4;
            }
            let period = self.device.heartbeat_period;
            self.scheduler.schedule_after(period, Event::Heartbeat);
        } else {
            self.connections.close(conn, now);
        }
        InteractionOutcome::from_response(&response)
    }

    fn do_device_status(&mut self, value: Value) -> InteractionOutcome {
        let Some(req) = self.device.status_request(value) else {
            return InteractionOutcome::failed();
        };
        let meta = self.device_conn.map(|id| ConnMeta {
            id,
            principal: Principal::RealDevice,
        });
        let response = self.cloud_exchange(NodeId::Device, &req, meta);
        InteractionOutcome::from_response(&response)
    }

    fn do_app_control(&mut self, trudy: bool, command: &str) -> InteractionOutcome {
        let Some(uuid) = self.victim_uuid.clone() else {
            return InteractionOutcome::failed();
        };
        let (app, node) = if trudy {
            (&mut self.trudy, NodeId::AttackerApp)
        } else {
            (&mut self.alice, NodeId::VictimApp)
        };
        let Some(req) = app.control_request(&uuid, command) else {
            return InteractionOutcome::failed();
        };
        let response = self.cloud_exchange(node, &req, None);
        InteractionOutcome::from_response(&response)
    }

    fn do_alice_unbind(&mut self) -> InteractionOutcome {
        let Some(uuid) = self.victim_uuid.clone() else {
            return InteractionOutcome::failed();
        };
        let Some(req) = self.alice.unbind_request(&uuid) else {
            return InteractionOutcome::failed();
        };
        let response = self.cloud_exchange(NodeId::VictimApp, &req, None);
        if response.is_success() {
            self.alice.state = AppState::S1;
            self.alice.forget_device(&uuid);
        }
        InteractionOutcome::from_response(&response)
    }

    fn do_device_reset(&mut self) -> InteractionOutcome {
        let had_binding = self
            .victim_uuid
            .as_ref()
            .and_then(|u| self.cloud.binding(u))
            .is_some();
        self.device.reset();
        if let Some(conn) = self.device_conn.take() {
            self.connections.close(conn, self.scheduler.clock);
            self.cloud.connection_closed(conn, true);
        }
        // Under synchronized state enforcement the reset announces itself to
        // the cloud, which rolls the registration back and tells the owner's
        // app; without it the cloud is left behind.
        if self
            .cloud
            .policy
            .has_mitigation(crate::policy::Mitigation::M3StateGuard)
        {
            if let Some(uuid) = self.victim_uuid.clone() {
                self.cloud.rollback_device(&uuid);
                if had_binding {
                    self.alice.state = AppState::S1;
                    self.alice.forget_device(&uuid);
                }
            }
        }
        self.ground.messages_sent += 1;
        self.record_exchange(
            NodeId::Device,
            NodeId::Device,
            "reset",
            None,
            RecordKind::Delivered,
        );
        InteractionOutcome::local_ok()
    }

    fn do_account_transfer_trudy(&mut self) -> InteractionOutcome {
        self.ground.messages_sent += 1;
        if !routing_allowed(NodeId::AttackerApp, NodeId::Phantom) {
            self.record_exchange(
                NodeId::AttackerApp,
                NodeId::Phantom,
                "appBind",
                None,
                RecordKind::Denied,
            );
            return InteractionOutcome::failed();
        }
        self.phantom.attacker_account = self.trudy_account.clone();
        self.record_exchange(
            NodeId::AttackerApp,
            NodeId::Phantom,
            "appBind",
            None,
            RecordKind::Delivered,
        );
        InteractionOutcome::local_ok()
    }

    fn do_phantom_register(&mut self) -> InteractionOutcome {
        let rules = self.cloud.rules.clone();
        let now = self.scheduler.clock;
        let req = match self.phantom.forge(Method::RegisterDevice, &rules, now) {
            Ok(req) => req,
            Err(_) => return InteractionOutcome::failed(),
        };
        let response = self.cloud_exchange(NodeId::Phantom, &req, None);
        if response.is_success() {
            if let Some(uuid) = response.data_str("uuid") {
                self.phantom.learned_uuid = Some(DeviceId(uuid.to_owned()));
            }
        }
        InteractionOutcome::from_response(&response)
    }

    fn do_phantom_login(&mut self) -> InteractionOutcome {
        let rules = self.cloud.rules.clone();
        let now = self.scheduler.clock;
        let req = match self.phantom.forge(Method::LoginDevice, &rules, now) {
            Ok(req) => req,
            Err(_) => return InteractionOutcome::failed(),
        };
        let conn = self.connections.open(NodeId::Phantom, now);
        let meta = ConnMeta {
            id: conn,
            principal: Principal::Phantom,
        };
        let response = self.cloud_exchange(NodeId::Phantom, &req, Some(meta));
        if response.is_success() {
            self.phantom_conn = Some(conn);
        } else {
            self.connections.close(conn, now);
        }
        InteractionOutcome::from_response(&response)
    }

    fn do_phantom_bind(&mut self) -> InteractionOutcome {
        let rules = self.cloud.rules.clone();
        let now = self.scheduler.clock;
        let req = match self.phantom.forge(Method::BindDevice, &rules, now) {
            Ok(req) => req,
            Err(_) => return InteractionOutcome::failed(),
        };
        let response = self.cloud_exchange(NodeId::Phantom, &req, None);
        if response.is_success() {
            if let Some(uuid) = self.phantom.usable_uuid() {
                self.trudy.learn_device(uuid);
            }
        }
        InteractionOutcome::from_response(&response)
    }

    fn do_phantom_device_unbind(&mut self) -> InteractionOutcome {
        let rules = self.cloud.rules.clone();
        let now = self.scheduler.clock;
        let req = match self.phantom.forge(Method::UnbindDevice, &rules, now) {
            Ok(req) => req,
            Err(_) => return InteractionOutcome::failed(),
        };
        let meta = self.phantom_conn.map(|id| ConnMeta {
            id,
            principal: Principal::Phantom,
        });
        let response = self.cloud_exchange(NodeId::Phantom, &req, meta);
        InteractionOutcome::from_response(&response)
    }

    fn do_phantom_disconnect(&mut self) -> InteractionOutcome {
        let Some(conn) = self.phantom_conn.take() else {
            return InteractionOutcome::local_ok();
        };
        self.connections.close(conn, self.scheduler.clock);
        self.cloud.connection_closed(conn, false);
        self.ground.messages_sent += 1;
        self.record_exchange(
            NodeId::Phantom,
            NodeId::Cloud,
            "disconnect",
            None,
            RecordKind::Delivered,
        );
        InteractionOutcome::local_ok()
    }

    fn do_phantom_status(&mut self, value: Value) -> InteractionOutcome {
        let rules = self.cloud.rules.clone();
        let now = self.scheduler.clock;
        let mut req = match self.phantom.forge(Method::StatusUpload, &rules, now) {
            Ok(req) => req,
            Err(_) => return InteractionOutcome::failed(),
        };
        req.params.insert("status".into(), value);
        let meta = self.phantom_conn.map(|id| ConnMeta {
            id,
            principal: Principal::Phantom,
        });
        let response = self.cloud_exchange(NodeId::Phantom, &req, meta);
        InteractionOutcome::from_response(&response)
    }

    fn do_trudy_bind(&mut self) -> InteractionOutcome {
        let Some(uuid) = self.phantom.usable_uuid() else {
            return InteractionOutcome::failed();
        };
        let req = self.trudy.bind_request(Some(&uuid));
        let response = self.cloud_exchange(NodeId::AttackerApp, &req, None);
        if response.is_success() {
            self.trudy.learn_device(uuid);
        }
        InteractionOutcome::from_response(&response)
    }

    // ------------------------------------------------------------------
    // Scripted flows
    // ------------------------------------------------------------------

    /// Runs the baseline life-cycle: discovery, provisioning, registration
    /// (Type I), binding, login, one status upload, one app control. Ends at
    /// (S4, S4, S4) when every phase is accepted.
    pub fn run_baseline_lifecycle(&mut self) -> Result<(), LifecycleFailure> {
        let phases: Vec<(&'static str, Interaction)> = match self.cloud.rules.platform {
            PlatformType::TypeI => vec![
                ("discovery", Interaction::AppDiscover),
                ("provisioning", Interaction::AppProvision),
                ("registration", Interaction::DeviceRegister),
                ("binding", Interaction::AliceBind),
                ("login", Interaction::DeviceLogin),
                (
                    "status-upload",
                    Interaction::DeviceStatusUpload(Value::Int(21)),
                ),
                ("control", Interaction::AliceControl("toggle".to_owned())),
            ],
            PlatformType::TypeII => vec![
                ("discovery", Interaction::AppDiscover),
                ("provisioning", Interaction::AppProvision),
                ("account-transfer", Interaction::AccountTransferAlice),
                ("binding", Interaction::DeviceBind),
                ("login", Interaction::DeviceLogin),
                (
                    "status-upload",
                    Interaction::DeviceStatusUpload(Value::Int(21)),
                ),
                ("control", Interaction::AliceControl("toggle".to_owned())),
            ],
        };
        for (phase, interaction) in phases {
            let outcome = self.step(interaction);
            if !outcome.ok {
                return Err(LifecycleFailure {
                    phase,
                    code: outcome.code,
                });
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Direct probing (attacker operations against the cloud API)
    // ------------------------------------------------------------------

    /// Registers one enumerated identity and returns the device ID the cloud
    /// answered with, if any.
    pub fn probe_register(&mut self, identity: &DeviceIdentity) -> Option<DeviceId> {
        let rules = self.cloud.rules.clone();
        let now = self.scheduler.clock;
        let req = self
            .phantom
            .forge_register_for(identity, &rules, now)
            .ok()?;
        self.ground.messages_sent += 1;
        let (response, effects) = self.cloud.handle(&req, None, now);
        self.record_exchange(
            NodeId::Phantom,
            NodeId::Cloud,
            "registerDevice",
            Some(response.result.code),
            RecordKind::Delivered,
        );
        self.apply_effects(effects);
        self.flush_records();
        response.data_str("uuid").map(|u| DeviceId(u.to_owned()))
    }

    /// App-side bind probe of one device ID with the attacker's account.
    pub fn probe_bind(
        &mut self,
        device_id: &DeviceId,
    ) -> Result<crate::phantom::ProbeOutcome, ErrorCode> {
        let now = self.scheduler.clock;
        self.ground.messages_sent += 1;
        let result = self.phantom.bind_probe(device_id, &mut self.cloud, now);
        let code = match &result {
            Ok(crate::phantom::ProbeOutcome::Occupied) => wire::CODE_SUCCESS,
            Ok(crate::phantom::ProbeOutcome::Taken) => ErrorCode::AlreadyBound.code(),
            Err(code) => code.code(),
        };
        self.record_exchange(
            NodeId::AttackerApp,
            NodeId::Cloud,
            "appBind",
            Some(code),
            RecordKind::Delivered,
        );
        self.flush_records();
        result
    }

    /// A later legitimate bind attempt by the victim's owner account.
    pub fn alice_bind_attempt(&mut self, device_id: &DeviceId) -> u32 {
        let mut req = Request::new(Method::AppBind, self.alice.next_id());
        req.account = Some(self.alice_account.clone());
        req.request = Some(RequestCtx {
            cid: None,
            uuid: Some(device_id.0.clone()),
        });
        let now = self.scheduler.clock;
        self.ground.messages_sent += 1;
        let (response, effects) = self.cloud.handle(&req, None, now);
        self.record_exchange(
            NodeId::VictimApp,
            NodeId::Cloud,
            "appBind",
            Some(response.result.code),
            RecordKind::Delivered,
        );
        self.apply_effects(effects);
        self.flush_records();
        response.result.code
    }
}
