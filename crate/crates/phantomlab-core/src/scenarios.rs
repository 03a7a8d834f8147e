//! Attack and baseline scenario orchestration: per-platform profiles, attack
//! scripts mirroring the documented workflows, success predicates, the
//! platform-by-attack applicability matrix, and a bounded reachability
//! explorer over state combinations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use crate::cloud::{ErrorCode, Principal, ProfileRules};
use crate::identity::{DeviceIdentity, InfoCategory, InfoField, LegitimacyInfo, Mac};
use crate::netlab::{NodeId, Tick, Trace};
use crate::phantom::{InfoGrant, ProbeOutcome};
use crate::policy::{ConfigError, Flaw, Mitigation, PolicyConfig};
use crate::states::{legal_combination, PlatformType, StateCombination};
use crate::wire::Value;
use crate::world::{Interaction, LifecycleFailure, World, WorldSetup};

/// The five modeled platform profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    Alink,
    Joylink,
    Kasa,
    Mijia,
    SmartThings,
}

impl ProfileName {
    pub const ALL: [ProfileName; 5] = [
        ProfileName::Alink,
        ProfileName::Joylink,
        ProfileName::Kasa,
        ProfileName::Mijia,
        ProfileName::SmartThings,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProfileName::Alink => "alink",
            ProfileName::Joylink => "joylink",
            ProfileName::Kasa => "kasa",
            ProfileName::Mijia => "mijia",
            ProfileName::SmartThings => "smartthings",
        }
    }
}

impl fmt::Display for ProfileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProfileName {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "alink" => Ok(ProfileName::Alink),
            "joylink" => Ok(ProfileName::Joylink),
            "kasa" => Ok(ProfileName::Kasa),
            "mijia" => Ok(ProfileName::Mijia),
            "smartthings" => Ok(ProfileName::SmartThings),
            _ => Err(ConfigError::Unparsable(format!("unknown profile: {s}"))),
        }
    }
}

/// Platform-specific behavioral quirks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quirk {
    /// No device-side unbinding request exists.
    NoDeviceSideUnbind,
    /// The cloud checks account credentials on every device login.
    LoginCredentialCheck,
}

/// One platform profile: type, identified flaws, information schema, quirks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlatformProfile {
    pub name: ProfileName,
    pub platform: PlatformType,
    pub identified_flaws: BTreeSet<Flaw>,
    pub info_schema: BTreeMap<InfoField, InfoCategory>,
    pub quirks: BTreeSet<Quirk>,
}

impl PlatformProfile {
    pub fn of(name: ProfileName) -> Self {
        use InfoCategory::{Guessable, HardCoded, Public};
        use InfoField::*;
        type Fixture = (
            PlatformType,
            Vec<Flaw>,
            Vec<(InfoField, InfoCategory)>,
            Vec<Quirk>,
        );
        let (platform, identified_flaws, info_schema, quirks): Fixture = match name {
            ProfileName::Alink => (
                PlatformType::TypeI,
                vec![Flaw::F1_1, Flaw::F1_3, Flaw::F2, Flaw::F3, Flaw::F4],
                vec![
                    (Mac, Guessable),
                    (Cid, Public),
                    (Model, Public),
                    (Key, Public),
                ],
                vec![],
            ),
            ProfileName::Joylink => (
                PlatformType::TypeI,
                vec![Flaw::F1_1, Flaw::F1_3, Flaw::F2, Flaw::F3],
                vec![(Mac, Guessable), (Sn, HardCoded), (Model, Public)],
                vec![Quirk::NoDeviceSideUnbind],
            ),
            ProfileName::Kasa => (
                PlatformType::TypeII,
                vec![Flaw::F1_2, Flaw::F1_3, Flaw::F3],
                vec![
                    (DeviceId, HardCoded),
                    (Mac, Guessable),
                    (Hwid, Public),
                    (Model, Public),
                ],
                vec![],
            ),
            ProfileName::Mijia => (
                PlatformType::TypeII,
                vec![Flaw::F1_2, Flaw::F1_3, Flaw::F3],
                vec![
                    (DeviceId, HardCoded),
                    (TagKey, HardCoded),
                    (Model, Public),
                ],
                vec![],
            ),
            ProfileName::SmartThings => (
                PlatformType::TypeII,
                vec![Flaw::F1_2, Flaw::F1_3],
                vec![(DeviceId, HardCoded), (Model, Public)],
                vec![Quirk::LoginCredentialCheck],
            ),
        };
        PlatformProfile {
            name,
            platform,
            identified_flaws: identified_flaws.into_iter().collect(),
            info_schema: info_schema.into_iter().collect(),
            quirks: quirks.into_iter().collect(),
        }
    }

    pub fn all() -> Vec<PlatformProfile> {
        ProfileName::ALL.iter().map(|n| Self::of(*n)).collect()
    }

    pub fn rules(&self) -> ProfileRules {
        match self.name {
            ProfileName::Alink => ProfileRules::alink(),
            ProfileName::Joylink => ProfileRules::joylink(),
            ProfileName::Kasa => ProfileRules::kasa(),
            ProfileName::Mijia => ProfileRules::mijia(),
            ProfileName::SmartThings => ProfileRules::smartthings(),
        }
    }

    /// Per-model legitimacy key for signed registrations.
    pub fn model_key(&self) -> Option<String> {
        match self.name {
            ProfileName::Alink => Some("5gPFl8G4GyFZ1fPWk20m".to_owned()),
            _ => None,
        }
    }

    pub fn victim_mac(&self) -> Mac {
        let text = match self.name {
            ProfileName::Alink => "3C:2C:94:0B:AB:25",
            ProfileName::Joylink => "A0:B1:C2:00:12:34",
            ProfileName::Kasa => "50:C7:BF:11:22:33",
            ProfileName::Mijia => "7C:49:EB:44:55:66",
            ProfileName::SmartThings => "28:6D:97:77:88:99",
        };
        text.parse().expect("fixture MACs parse")
    }

    pub fn device_model(&self) -> &'static str {
        match self.name {
            ProfileName::Alink => "SPS9011A",
            ProfileName::Joylink => "GN-Y2011",
            ProfileName::Kasa => "HS100",
            ProfileName::Mijia => "FIRE-ALARM-DETECTOR",
            ProfileName::SmartThings => "POWERBOT-R7040",
        }
    }

    /// Serial-number scheme of this profile's population, when serial numbers
    /// are part of identity.
    pub fn sn_template(&self) -> Option<String> {
        self.info_schema
            .contains_key(&InfoField::Sn)
            .then(|| "SN-".to_owned())
    }

    /// Identity and legitimacy information of one population member.
    pub fn population_identity(&self, mac: Mac) -> (DeviceIdentity, LegitimacyInfo) {
        let mut identity = DeviceIdentity::new(mac, self.device_model());
        if self.info_schema.contains_key(&InfoField::Cid) {
            identity.cid = Some("000000000000000010671484".to_owned());
        }
        if let Some(template) = self.sn_template() {
            identity.sn = Some(format!("{template}{:08X}", mac.suffix()));
        }
        if self.platform == PlatformType::TypeII {
            // Hard-coded from fabrication; opaque to the protocol.
            identity.device_id = Some(crate::cloud::device_id_gen(&identity, None));
        }
        let mut legitimacy = LegitimacyInfo::default();
        if self.info_schema.contains_key(&InfoField::Key) {
            legitimacy.key = self.model_key();
        }
        if self.info_schema.contains_key(&InfoField::Hwid) {
            legitimacy.hwid = Some(crate::cloud::hwid_of(self.device_model()));
        }
        if self.info_schema.contains_key(&InfoField::TagKey) {
            legitimacy.tagkey = Some(format!("TK-{:012X}", mac.suffix()));
        }
        (identity, legitimacy)
    }

    pub fn victim_identity(&self) -> (DeviceIdentity, LegitimacyInfo) {
        self.population_identity(self.victim_mac())
    }
}

/// The five attack outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Substitution,
    Hijacking,
    DoS,
    Occupation,
    FirmwareTheft,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Substitution,
        AttackKind::Hijacking,
        AttackKind::DoS,
        AttackKind::Occupation,
        AttackKind::FirmwareTheft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Substitution => "substitution",
            AttackKind::Hijacking => "hijacking",
            AttackKind::DoS => "dos",
            AttackKind::Occupation => "occupation",
            AttackKind::FirmwareTheft => "firmware-theft",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "substitution" => Ok(AttackKind::Substitution),
            "hijacking" => Ok(AttackKind::Hijacking),
            "dos" => Ok(AttackKind::DoS),
            "occupation" => Ok(AttackKind::Occupation),
            "firmware-theft" | "firmware_theft" | "firmwaretheft" => Ok(AttackKind::FirmwareTheft),
            _ => Err(ConfigError::Unparsable(format!("unknown attack: {s}"))),
        }
    }
}

/// Flaws each applicable attack exploits, per profile.
///
/// `None` means the attack is not applicable to the profile at all.
pub fn exploited_flaws(name: ProfileName, attack: AttackKind) -> Option<BTreeSet<Flaw>> {
    use AttackKind::*;
    use Flaw::*;
    let flaws: Option<Vec<Flaw>> = match (name, attack) {
        (ProfileName::Alink, Hijacking) => Some(vec![F1_1, F1_3, F2, F3, F4]),
        (ProfileName::Alink, Substitution) => Some(vec![F1_1, F1_3, F3]),
        (ProfileName::Alink, DoS) => Some(vec![F1_1, F1_3, F3, F4]),
        (ProfileName::Alink, Occupation) => Some(vec![F1_1]),
        (ProfileName::Joylink, Substitution) => Some(vec![F1_1, F1_3, F3]),
        (ProfileName::Joylink, Occupation) => Some(vec![F1_1]),
        (ProfileName::Joylink, Hijacking | DoS) => None,
        (ProfileName::Kasa | ProfileName::Mijia, Hijacking) => Some(vec![F1_2, F3]),
        (ProfileName::Kasa | ProfileName::Mijia, Substitution) => Some(vec![F1_3, F3]),
        (ProfileName::Kasa | ProfileName::Mijia, DoS) => Some(vec![F1_2]),
        (ProfileName::SmartThings, DoS) => Some(vec![F1_2]),
        (ProfileName::SmartThings, Substitution | Hijacking) => Some(vec![]),
        (_, Occupation) => None,
        (_, FirmwareTheft) => Some(vec![]),
    };
    flaws.map(|v| v.into_iter().collect())
}

/// Outcome class of one (profile, attack) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellOutcome {
    Success,
    Failure,
    NotApplicable,
}

impl fmt::Display for CellOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellOutcome::Success => "success",
            CellOutcome::Failure => "failure",
            CellOutcome::NotApplicable => "n/a",
        })
    }
}

/// Full result of one scenario run.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub profile: ProfileName,
    pub attack: AttackKind,
    pub status: CellOutcome,
    pub not_applicable_reason: Option<String>,
    /// Per-clause truth values of the success predicate.
    pub predicate_report: Vec<(String, bool)>,
    /// Flaws the attack exploits when it succeeds.
    pub exploited_flaws: BTreeSet<Flaw>,
    pub final_combo: StateCombination,
    pub trace: Trace,
}

impl ScenarioOutcome {
    pub fn success(&self) -> bool {
        self.status == CellOutcome::Success
    }
}

/// Per-run sizing knobs. `matrix()` keeps cells fast; `desk()` is the
/// full-scale experiment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackScale {
    pub occupation_range: u32,
    pub occupation_planted: u32,
    pub firmware_models: u32,
    pub substitution_window: Tick,
}

impl AttackScale {
    pub fn matrix() -> Self {
        AttackScale {
            occupation_range: 512,
            occupation_planted: 8,
            firmware_models: 20,
            substitution_window: 150,
        }
    }

    pub fn desk() -> Self {
        AttackScale {
            occupation_range: 65_536,
            occupation_planted: 256,
            firmware_models: 100,
            substitution_window: 1000,
        }
    }
}

/// Scenario request: profile, attack, optional flaw override, mitigations,
/// grants and seed. Loadable from structured text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub profile: ProfileName,
    pub attack: AttackKind,
    #[serde(default)]
    pub flaws: Option<BTreeSet<Flaw>>,
    #[serde(default)]
    pub mitigations: BTreeSet<Mitigation>,
    #[serde(default = "default_grants")]
    pub grants: GrantSpec,
    #[serde(default)]
    pub seed: u64,
}

fn default_grants() -> GrantSpec {
    GrantSpec::Full
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrantSpec {
    /// Local access granted: hard-coded information is available.
    Full,
    /// Remote attacker only: public and guessable information.
    RemoteOnly,
}

impl GrantSpec {
    pub fn to_grant(self) -> InfoGrant {
        match self {
            GrantSpec::Full => InfoGrant::full(),
            GrantSpec::RemoteOnly => InfoGrant::remote_only(),
        }
    }
}

impl FromStr for GrantSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(GrantSpec::Full),
            "remote-only" | "remote_only" | "remote" => Ok(GrantSpec::RemoteOnly),
            _ => Err(ConfigError::Unparsable(format!("unknown grants: {s}"))),
        }
    }
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Unparsable(e.to_string()))
    }
}

fn world_setup(
    profile: &PlatformProfile,
    flaws: BTreeSet<Flaw>,
    mitigations: BTreeSet<Mitigation>,
    grant: InfoGrant,
    seed: u64,
) -> Result<WorldSetup, ConfigError> {
    let policy = PolicyConfig::new(profile.platform, flaws, mitigations)?;
    let (victim_identity, victim_legitimacy) = profile.victim_identity();
    Ok(WorldSetup {
        policy,
        rules: profile.rules(),
        info_schema: profile.info_schema.clone(),
        victim_identity,
        victim_legitimacy,
        model_key: profile.model_key(),
        sn_template: profile.sn_template(),
        grant,
        seed,
    })
}

/// Builds a world for a profile under an explicit policy.
pub fn build_world(
    profile: &PlatformProfile,
    flaws: Option<BTreeSet<Flaw>>,
    mitigations: BTreeSet<Mitigation>,
    grant: InfoGrant,
    seed: u64,
) -> Result<World, ConfigError> {
    let flaws = flaws.unwrap_or_else(|| profile.identified_flaws.clone());
    Ok(World::new(world_setup(
        profile,
        flaws,
        mitigations,
        grant,
        seed,
    )?))
}

/// Runs the legitimate life-cycle alone and returns the world with its trace.
pub fn run_baseline(
    profile: &PlatformProfile,
    mitigations: BTreeSet<Mitigation>,
    seed: u64,
) -> (Result<(), LifecycleFailure>, World) {
    let mut world = build_world(profile, None, mitigations, InfoGrant::full(), seed)
        .expect("profile flaw sets are platform-consistent");
    let result = world.run_baseline_lifecycle();
    (result, world)
}

fn not_applicable(
    profile: &PlatformProfile,
    attack: AttackKind,
    reason: String,
) -> ScenarioOutcome {
    let initial = match profile.platform {
        PlatformType::TypeI => StateCombination::new(
            crate::states::CloudState::S1,
            crate::states::DeviceState::S1,
            crate::states::AppState::S1,
        ),
        PlatformType::TypeII => StateCombination::new(
            crate::states::CloudState::S2,
            crate::states::DeviceState::S1,
            crate::states::AppState::S1,
        ),
    };
    ScenarioOutcome {
        profile: profile.name,
        attack,
        status: CellOutcome::NotApplicable,
        not_applicable_reason: Some(reason),
        predicate_report: Vec::new(),
        exploited_flaws: BTreeSet::new(),
        final_combo: initial,
        trace: Trace::default(),
    }
}

/// Pre-flight: is each step of the attack even executable with the
/// information the phantom holds and the platform's protocol surface?
fn applicability(
    profile: &PlatformProfile,
    attack: AttackKind,
    world: &World,
) -> Result<(), String> {
    use crate::wire::Method;
    let rules = world.cloud.rules.clone();
    let mut dry = world.phantom.clone();
    let mut need = Vec::new();
    match (profile.platform, attack) {
        (PlatformType::TypeI, AttackKind::Substitution) => need.push(Method::RegisterDevice),
        (PlatformType::TypeI, AttackKind::Hijacking | AttackKind::DoS) => {
            if profile.quirks.contains(&Quirk::NoDeviceSideUnbind) || !rules.device_side_unbind {
                return Err("no device-side unbinding request on this platform".to_owned());
            }
            need.push(Method::RegisterDevice);
        }
        (PlatformType::TypeI, AttackKind::Occupation) => {
            // Probe forging must work for enumerated identities.
            let candidate = dry.enumerate_macs(profile.victim_mac().prefix(), 0, 1);
            return dry
                .forge_register_for(&candidate[0], &rules, 0)
                .map(|_| ())
                .map_err(|e| e.to_string());
        }
        (PlatformType::TypeII, AttackKind::Substitution) => need.push(Method::LoginDevice),
        (PlatformType::TypeII, AttackKind::Hijacking | AttackKind::DoS) => {
            need.push(Method::BindDevice)
        }
        (PlatformType::TypeII, AttackKind::Occupation) => {
            return Err(
                "device IDs are hard-coded; unsold identities cannot be predicted".to_owned(),
            );
        }
        (_, AttackKind::FirmwareTheft) => need.push(Method::OtaUpdate),
    }
    for kind in need {
        if let Err(e) = dry.forge(kind, &rules, 0) {
            return Err(e.to_string());
        }
    }
    Ok(())
}

/// Everything a scenario run can vary.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub flaws: Option<BTreeSet<Flaw>>,
    pub mitigations: BTreeSet<Mitigation>,
    pub grants: GrantSpec,
    pub seed: u64,
    pub scale: AttackScale,
    /// Ground-truth mutation hook: store flipped principal labels on every
    /// session. Guards must be blind to it, so no response may change.
    pub principal_flip: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            flaws: None,
            mitigations: BTreeSet::new(),
            grants: GrantSpec::Full,
            seed: 0,
            scale: AttackScale::matrix(),
            principal_flip: false,
        }
    }
}

/// Runs one attack scenario end to end.
pub fn run_attack(
    profile: &PlatformProfile,
    attack: AttackKind,
    mitigations: BTreeSet<Mitigation>,
    grants: GrantSpec,
    seed: u64,
) -> ScenarioOutcome {
    run_attack_opts(
        profile,
        attack,
        RunOptions {
            mitigations,
            grants,
            seed,
            ..RunOptions::default()
        },
    )
}

/// Variant with explicit flaw override and scale.
pub fn run_attack_with(
    profile: &PlatformProfile,
    attack: AttackKind,
    flaws: Option<BTreeSet<Flaw>>,
    mitigations: BTreeSet<Mitigation>,
    grants: GrantSpec,
    seed: u64,
    scale: AttackScale,
) -> ScenarioOutcome {
    run_attack_opts(
        profile,
        attack,
        RunOptions {
            flaws,
            mitigations,
            grants,
            seed,
            scale,
            principal_flip: false,
        },
    )
}

pub fn run_attack_opts(
    profile: &PlatformProfile,
    attack: AttackKind,
    options: RunOptions,
) -> ScenarioOutcome {
    let RunOptions {
        flaws,
        mitigations,
        grants,
        seed,
        scale,
        principal_flip,
    } = options;
    let grant = grants.to_grant();
    let mut world = match build_world(profile, flaws, mitigations, grant, seed) {
        Ok(world) => world,
        Err(e) => return not_applicable(profile, attack, format!("config error: {e}")),
    };
    world.set_principal_flip(principal_flip);
    if let Err(reason) = applicability(profile, attack, &world) {
        return not_applicable(profile, attack, reason);
    }

    let needs_victim = !matches!(attack, AttackKind::Occupation | AttackKind::FirmwareTheft);
    if needs_victim {
        if let Err(failure) = world.run_baseline_lifecycle() {
            return ScenarioOutcome {
                profile: profile.name,
                attack,
                status: CellOutcome::Failure,
                not_applicable_reason: Some(format!("victim life-cycle failed: {failure}")),
                predicate_report: vec![("victim life-cycle completes".to_owned(), false)],
                exploited_flaws: BTreeSet::new(),
                final_combo: world.combo(),
                trace: world.trace.clone(),
            };
        }
    }

    let predicate_report = match attack {
        AttackKind::Substitution => substitution_script(&mut world, profile, scale),
        AttackKind::Hijacking => hijacking_script(&mut world, profile),
        AttackKind::DoS => dos_script(&mut world, profile),
        AttackKind::Occupation => occupation_script(&mut world, profile, scale, seed),
        AttackKind::FirmwareTheft => firmware_theft_script(&mut world, scale),
    };
    let success = predicate_report.iter().all(|(_, ok)| *ok);
    ScenarioOutcome {
        profile: profile.name,
        attack,
        status: if success {
            CellOutcome::Success
        } else {
            CellOutcome::Failure
        },
        not_applicable_reason: None,
        predicate_report,
        exploited_flaws: if success {
            exploited_flaws(profile.name, attack).unwrap_or_default()
        } else {
            BTreeSet::new()
        },
        final_combo: world.combo(),
        trace: world.trace.clone(),
    }
}

fn last_control_target(world: &World) -> Option<NodeId> {
    world.ground.control_deliveries.last().map(|(_, node, _)| *node)
}

/// Remote device substitution: take over the victim's live session with a
/// phantom and keep it through a login flood.
fn substitution_script(
    world: &mut World,
    profile: &PlatformProfile,
    scale: AttackScale,
) -> Vec<(String, bool)> {
    if profile.platform == PlatformType::TypeI {
        world.step(Interaction::PhantomRegister);
    }
    world.step(Interaction::PhantomLogin);
    let flood_start = world.clock();
    world.start_flood();
    world.run_until(flood_start + scale.substitution_window);
    // Falsified sensor reading while holding the session.
    world.step(Interaction::PhantomStatusUpload(Value::Str(
        "thick-smoke".to_owned(),
    )));
    world.step(Interaction::AliceControl("peek".to_owned()));
    world.stop_flood();

    let tenure =
        world
            .tenure
            .tenure_fraction(flood_start + 1, scale.substitution_window, Principal::Phantom);
    vec![
        (
            "phantom holds the session for >= 90% of ticks".to_owned(),
            tenure >= 0.9,
        ),
        (
            "victim's control command is delivered to the phantom".to_owned(),
            last_control_target(world) == Some(NodeId::Phantom),
        ),
        (
            "victim's binding is untouched".to_owned(),
            world.victim_owner().as_deref() == Some("alice"),
        ),
    ]
}

/// Remote device hijacking: end with the attacker owning the binding while
/// the real device serves the attacker's commands.
fn hijacking_script(world: &mut World, profile: &PlatformProfile) -> Vec<(String, bool)> {
    match profile.platform {
        PlatformType::TypeI => {
            world.step(Interaction::PhantomRegister);
            world.step(Interaction::PhantomLogin);
            world.step(Interaction::PhantomDeviceUnbind);
            world.step(Interaction::PhantomDisconnect);
            world.step(Interaction::TrudyBind);
        }
        PlatformType::TypeII => {
            world.step(Interaction::AccountTransferTrudy);
            world.step(Interaction::PhantomBind);
        }
    }
    // Give the real device time to re-login under the new ownership.
    let now = world.clock();
    world.run_until(now + 25);
    world.step(Interaction::TrudyControl("open-lock".to_owned()));
    let trudy_control_target = last_control_target(world);
    world.step(Interaction::AliceControl("peek".to_owned()));

    vec![
        (
            "attacker account is bound to the device".to_owned(),
            world.victim_owner().as_deref() == Some("trudy"),
        ),
        (
            "the real device holds the live session".to_owned(),
            world.session_principal() == Some(Principal::RealDevice),
        ),
        (
            "attacker's control command reaches the real device".to_owned(),
            trudy_control_target == Some(NodeId::Device),
        ),
    ]
}

/// Remote device DoS: revoke the victim's binding.
fn dos_script(world: &mut World, profile: &PlatformProfile) -> Vec<(String, bool)> {
    match profile.platform {
        PlatformType::TypeI => {
            world.step(Interaction::PhantomRegister);
            world.step(Interaction::PhantomLogin);
            world.step(Interaction::PhantomDeviceUnbind);
        }
        PlatformType::TypeII => {
            world.step(Interaction::AccountTransferTrudy);
            world.step(Interaction::PhantomBind);
        }
    }
    let control = world.step(Interaction::AliceControl("peek".to_owned()));
    vec![
        (
            "victim account is no longer bound".to_owned(),
            world.victim_owner().as_deref() != Some("alice"),
        ),
        (
            "victim's control is rejected as not bound".to_owned(),
            control.code == Some(ErrorCode::NotBound.code()),
        ),
    ]
}

/// Illegal device occupation: enumerate a MAC range, register every identity,
/// and bind whatever is free. Success is measured against the planted
/// population of registered-unbound stock.
fn occupation_script(
    world: &mut World,
    profile: &PlatformProfile,
    scale: AttackScale,
    seed: u64,
) -> Vec<(String, bool)> {
    let prefix = profile.victim_mac().prefix();
    let low: u32 = 0x0B_0000;

    // Plant registered-unbound stock at distinct suffixes in the range.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0CC0);
    let mut suffixes = BTreeSet::new();
    while (suffixes.len() as u32) < scale.occupation_planted {
        suffixes.insert(low + rng.gen_range(0..scale.occupation_range));
    }
    let mut planted = BTreeSet::new();
    for suffix in &suffixes {
        let mac = Mac::from_parts(prefix, *suffix);
        let (identity, legitimacy) = profile.population_identity(mac);
        let (uuid, _, _) =
            world
                .cloud
                .seed_registry(identity, legitimacy, crate::states::CloudState::S2);
        planted.insert(uuid);
    }

    // Enumerate, register, probe.
    let candidates = world
        .phantom
        .enumerate_macs(prefix, low, scale.occupation_range);
    let mut occupied = BTreeSet::new();
    for identity in &candidates {
        if let Some(uuid) = world.probe_register(identity) {
            if let Ok(ProbeOutcome::Occupied) = world.probe_bind(&uuid) {
                occupied.insert(uuid);
            }
        }
    }

    let occupied_planted: BTreeSet<_> = occupied.intersection(&planted).cloned().collect();
    let all_recovered = occupied_planted.len() as u32 == scale.occupation_planted
        && occupied_planted == planted;

    // A later legitimate bind must fail for every occupied planted device.
    let mut rebinds_fail = true;
    for uuid in &planted {
        let code = world.alice_bind_attempt(uuid);
        if code != ErrorCode::AlreadyBound.code() {
            rebinds_fail = false;
        }
    }

    vec![
        (
            format!(
                "exactly the {} planted registered-unbound identities are occupied",
                scale.occupation_planted
            ),
            all_recovered,
        ),
        (
            "legitimate binds fail for every occupied device".to_owned(),
            rebinds_fail && !planted.is_empty(),
        ),
    ]
}

/// Firmware theft: bulk OTA harvesting, one request per known model.
fn firmware_theft_script(world: &mut World, scale: AttackScale) -> Vec<(String, bool)> {
    let models = world.seed_firmware(scale.firmware_models);
    let images = world.harvest(&models);
    vec![(
        format!(
            "harvested image count equals the {} seeded models",
            scale.firmware_models
        ),
        images.len() as u32 == scale.firmware_models,
    )]
}

// ----------------------------------------------------------------------
// Matrix
// ----------------------------------------------------------------------

/// The full profile-by-attack matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Matrix {
    pub cells: BTreeMap<ProfileName, BTreeMap<AttackKind, CellOutcome>>,
}

impl Matrix {
    pub fn cell(&self, profile: ProfileName, attack: AttackKind) -> Option<CellOutcome> {
        self.cells.get(&profile).and_then(|row| row.get(&attack)).copied()
    }

    /// Success cells per profile, for fixture comparison.
    pub fn success_sets(&self) -> BTreeMap<ProfileName, BTreeSet<AttackKind>> {
        self.cells
            .iter()
            .map(|(profile, row)| {
                let set = row
                    .iter()
                    .filter(|(_, outcome)| **outcome == CellOutcome::Success)
                    .map(|(attack, _)| *attack)
                    .collect();
                (*profile, set)
            })
            .collect()
    }

    /// Renders an aligned table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<13}", "profile"));
        for attack in AttackKind::ALL {
            out.push_str(&format!("{:<16}", attack.name()));
        }
        out.push('\n');
        for (profile, row) in &self.cells {
            out.push_str(&format!("{:<13}", profile.name()));
            for attack in AttackKind::ALL {
                let cell = row
                    .get(&attack)
                    .map(|c| c.to_string())
                    .unwrap_or_else(|| "-".to_owned());
                out.push_str(&format!("{cell:<16}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every profile against every attack under the given mitigations.
pub fn attack_matrix(mitigations: BTreeSet<Mitigation>, seed: u64) -> Matrix {
    let mut cells = BTreeMap::new();
    for profile in PlatformProfile::all() {
        let mut row = BTreeMap::new();
        for attack in AttackKind::ALL {
            let outcome = run_attack(&profile, attack, mitigations.clone(), GrantSpec::Full, seed);
            row.insert(attack, outcome.status);
        }
        cells.insert(profile.name, row);
    }
    Matrix { cells }
}

/// The expected baseline matrix, cell for cell.
pub fn table3_fixture() -> Matrix {
    use AttackKind::*;
    use CellOutcome::*;
    let rows: Vec<(ProfileName, Vec<(AttackKind, CellOutcome)>)> = vec![
        (
            ProfileName::Alink,
            vec![
                (Substitution, Success),
                (Hijacking, Success),
                (DoS, Success),
                (Occupation, Success),
                (FirmwareTheft, Success),
            ],
        ),
        (
            ProfileName::Joylink,
            vec![
                (Substitution, Success),
                (Hijacking, NotApplicable),
                (DoS, NotApplicable),
                (Occupation, Success),
                (FirmwareTheft, Success),
            ],
        ),
        (
            ProfileName::Kasa,
            vec![
                (Substitution, Success),
                (Hijacking, Success),
                (DoS, Success),
                (Occupation, NotApplicable),
                (FirmwareTheft, Success),
            ],
        ),
        (
            ProfileName::Mijia,
            vec![
                (Substitution, Success),
                (Hijacking, Success),
                (DoS, Success),
                (Occupation, NotApplicable),
                (FirmwareTheft, Success),
            ],
        ),
        (
            ProfileName::SmartThings,
            vec![
                (Substitution, Failure),
                (Hijacking, Failure),
                (DoS, Success),
                (Occupation, NotApplicable),
                (FirmwareTheft, Success),
            ],
        ),
    ];
    Matrix {
        cells: rows
            .into_iter()
            .map(|(p, row)| (p, row.into_iter().collect()))
            .collect(),
    }
}

pub fn matrix_matches_table3(matrix: &Matrix) -> bool {
    matrix.cells == table3_fixture().cells
}

// ----------------------------------------------------------------------
// Reachability explorer
// ----------------------------------------------------------------------

/// Result of a bounded breadth-first exploration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExploreReport {
    pub reached: BTreeSet<StateCombination>,
    pub illegal: BTreeSet<StateCombination>,
    pub states_visited: usize,
    pub depth: u32,
}

type WorldDigest = (
    [u8; 3],           // state combination
    bool,              // victim registered
    Option<u8>,        // registry entry state
    Option<String>,    // binding owner
    Option<u8>,        // session connection endpoint
    (bool, bool, bool),// device: has uuid / has owner account / local binding
    (bool, u8),        // alice: knows device / state
    (bool, bool),      // phantom: has uuid / connected
);

fn digest(world: &World) -> WorldDigest {
    let combo = world.combo();
    let uuid = world.victim_uuid().cloned();
    let entry_state = uuid
        .as_ref()
        .and_then(|u| world.cloud.entry(u))
        .map(|e| e.cloud_state.index());
    let registered = entry_state.is_some();
    let owner = world.victim_owner();
    let session_endpoint = uuid.as_ref().and_then(|u| {
        world
            .cloud
            .session(u)
            .and_then(|s| world.connections.endpoint(s.connection))
            .map(|n| match n {
                NodeId::Device => 0u8,
                NodeId::Phantom => 1,
                _ => 2,
            })
    });
    let alice_knows = uuid
        .as_ref()
        .map(|u| world.alice.knows(u))
        .unwrap_or(false);
    (
        combo.indices(),
        registered,
        entry_state,
        owner,
        session_endpoint,
        (
            world.device.device_id.is_some(),
            world.device.owner_account.is_some(),
            world.device.local_binding.is_some(),
        ),
        (alice_knows, world.alice.state.index()),
        (
            world.phantom.usable_uuid().is_some(),
            world.phantom_connected(),
        ),
    )
}

fn enabled_actions(world: &World) -> Vec<Interaction> {
    use crate::states::{AppState as A, DeviceState as D};
    let platform = world.cloud.rules.platform;
    let rules = &world.cloud.rules;
    let mut actions = Vec::new();

    if world.alice.state == A::S1 {
        actions.push(Interaction::AppDiscover);
    }
    if world.alice.state == A::S2 && world.device.state == D::S1 {
        actions.push(Interaction::AppProvision);
    }
    if platform == PlatformType::TypeI && world.device.state == D::S2 {
        actions.push(Interaction::DeviceRegister);
    }
    if platform == PlatformType::TypeI
        && world.alice.state == A::S2
        && world.device.state == D::S3
        && world.victim_uuid().is_some()
    {
        actions.push(Interaction::AliceBind);
    }
    if platform == PlatformType::TypeII
        && world.alice.state == A::S2
        && world.device.state == D::S2
        && world.device.owner_account.is_none()
    {
        actions.push(Interaction::AccountTransferAlice);
    }
    if platform == PlatformType::TypeII
        && world.device.state == D::S2
        && world.device.owner_account.is_some()
    {
        actions.push(Interaction::DeviceBind);
    }
    if world.device.device_id.is_some()
        && (world.device.state == D::S3
            || (world.device.state == D::S4 && !world.device_connected()))
    {
        actions.push(Interaction::DeviceLogin);
    }
    if world.device.state == D::S4 && world.device_connected() {
        actions.push(Interaction::DeviceStatusUpload(Value::Int(1)));
    }
    if world.alice.state == A::S4 {
        actions.push(Interaction::AliceControl("t".to_owned()));
    }
    if matches!(world.alice.state, A::S3 | A::S4) {
        actions.push(Interaction::AliceUnbind);
    }
    if world.device.state != D::S1 {
        actions.push(Interaction::DeviceReset);
    }

    // Attacker moves, bounded by the protocol surface.
    if platform == PlatformType::TypeI {
        actions.push(Interaction::PhantomRegister);
    }
    if world.phantom.usable_uuid().is_some() {
        actions.push(Interaction::PhantomLogin);
    }
    if platform == PlatformType::TypeII && world.phantom.usable_uuid().is_some() {
        actions.push(Interaction::PhantomBind);
    }
    if platform == PlatformType::TypeI
        && rules.device_side_unbind
        && world.phantom_connected()
    {
        actions.push(Interaction::PhantomDeviceUnbind);
    }
    if world.phantom_connected() {
        actions.push(Interaction::PhantomDisconnect);
    }
    if platform == PlatformType::TypeI && world.phantom.learned_uuid.is_some() {
        actions.push(Interaction::TrudyBind);
    }
    actions
}

/// Breadth-first enumeration of reachable state combinations over all enabled
/// entity and attacker interleavings, up to `depth` interactions.
pub fn explore_reachable(
    profile: &PlatformProfile,
    policy: &PolicyConfig,
    depth: u32,
    seed: u64,
) -> ExploreReport {
    let setup = world_setup(
        profile,
        policy.flaws.clone(),
        policy.mitigations.clone(),
        InfoGrant::full(),
        seed,
    )
    .expect("explorer policies are validated by the caller");
    let mut initial = World::new(setup);
    initial.trace.records.clear();

    let mut reached = BTreeSet::new();
    let mut illegal = BTreeSet::new();
    let mut visited = BTreeSet::new();
    let mut queue: VecDeque<(World, u32)> = VecDeque::new();

    let d0 = digest(&initial);
    visited.insert(d0);
    let combo = initial.combo();
    reached.insert(combo);
    if !legal_combination(profile.platform, combo) {
        illegal.insert(combo);
    }
    queue.push_back((initial, 0));

    while let Some((world, d)) = queue.pop_front() {
        if d >= depth {
            continue;
        }
        for action in enabled_actions(&world) {
            let mut next = world.clone();
            next.trace.records.clear();
            next.apply(action);
            let key = digest(&next);
            let combo = next.combo();
            reached.insert(combo);
            if !legal_combination(profile.platform, combo) {
                illegal.insert(combo);
            }
            if visited.insert(key) {
                queue.push_back((next, d + 1));
            }
        }
    }

    ExploreReport {
        reached,
        illegal,
        states_visited: visited.len(),
        depth,
    }
}
