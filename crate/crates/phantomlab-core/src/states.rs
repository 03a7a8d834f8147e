//! Entity state machines and the legal 3-tuple state-combination table.
//!
//! Each of the three entities (IoT cloud, device, mobile app) occupies exactly
//! one of four numbered states. The state names below are this simulator's own
//! annotations for the numbered states; they are chosen as the unique
//! assignment consistent with the per-platform table of legitimate
//! combinations and the life-cycle phase ordering:
//!
//! | state | cloud        | device                  | app         |
//! |-------|--------------|-------------------------|-------------|
//! | S1    | unregistered | factory / reset         | idle        |
//! | S2    | registered   | provisioned             | setup       |
//! | S3    | bound        | registered/locally bound| bound       |
//! | S4    | running      | operational             | controlling |
//!
//! On Type II platforms device IDs are pre-provisioned, registration is
//! skipped, and the cloud never occupies S1.

use serde::{Deserialize, Serialize};

use crate::policy::Flaw;
use std::collections::BTreeSet;
use std::fmt;

/// Platform classification by device-ID provisioning.
///
/// Type I clouds generate device IDs at registration and perform binding
/// authorization themselves; Type II devices ship with hard-coded IDs and the
/// device performs binding authorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlatformType {
    TypeI,
    TypeII,
}

macro_rules! entity_state {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        pub enum $name {
            S1,
            S2,
            S3,
            S4,
        }

        impl $name {
            pub fn index(self) -> u8 {
                match self {
                    Self::S1 => 1,
                    Self::S2 => 2,
                    Self::S3 => 3,
                    Self::S4 => 4,
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "S{}", self.index())
            }
        }
    };
}

entity_state!(
    /// Per-device state of the IoT cloud.
    CloudState
);
entity_state!(
    /// State of a (real) device.
    DeviceState
);
entity_state!(
    /// State of the owner's mobile app.
    AppState
);

/// The 3-tuple of current entity states, the unit of legality checking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateCombination {
    pub cloud: CloudState,
    pub device: DeviceState,
    pub app: AppState,
}

impl StateCombination {
    pub fn new(cloud: CloudState, device: DeviceState, app: AppState) -> Self {
        Self { cloud, device, app }
    }

    /// Combination as `[cloud, device, app]` state indices, the trace encoding.
    pub fn indices(self) -> [u8; 3] {
        [self.cloud.index(), self.device.index(), self.app.index()]
    }
}

impl fmt::Display for StateCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.cloud, self.device, self.app)
    }
}

/// Returns true iff `combo` is in the platform's legal set.
///
/// Type I: (S1, S1|S2, S1|S2), (S2, S3, S2), (S3, S3, S3), (S4, S4, S4).
/// Type II: (S2, S1|S2, S1|S2), (S3, S3, S3), (S4, S4, S4).
pub fn legal_combination(platform: PlatformType, combo: StateCombination) -> bool {
    use AppState as A;
    use CloudState as C;
    use DeviceState as D;
    let StateCombination { cloud, device, app } = combo;
    let early = |device: DeviceState, app: AppState| {
        matches!(device, D::S1 | D::S2) && matches!(app, A::S1 | A::S2)
    };
    match platform {
        PlatformType::TypeI => match cloud {
            C::S1 => early(device, app),
            C::S2 => device == D::S3 && app == A::S2,
            C::S3 => device == D::S3 && app == A::S3,
            C::S4 => device == D::S4 && app == A::S4,
        },
        PlatformType::TypeII => match cloud {
            C::S1 => false,
            C::S2 => early(device, app),
            C::S3 => device == D::S3 && app == A::S3,
            C::S4 => device == D::S4 && app == A::S4,
        },
    }
}

/// The closed set of interaction events that can drive a state transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionEvent {
    Register,
    Bind,
    Login,
    Unbind,
    Reset,
    StatusUpload,
    Control,
    Provision,
    Discover,
}

impl TransitionEvent {
    pub const ALL: [TransitionEvent; 9] = [
        TransitionEvent::Register,
        TransitionEvent::Bind,
        TransitionEvent::Login,
        TransitionEvent::Unbind,
        TransitionEvent::Reset,
        TransitionEvent::StatusUpload,
        TransitionEvent::Control,
        TransitionEvent::Provision,
        TransitionEvent::Discover,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransitionEvent::Register => "register",
            TransitionEvent::Bind => "bind",
            TransitionEvent::Login => "login",
            TransitionEvent::Unbind => "unbind",
            TransitionEvent::Reset => "reset",
            TransitionEvent::StatusUpload => "status-upload",
            TransitionEvent::Control => "control",
            TransitionEvent::Provision => "provision",
            TransitionEvent::Discover => "discover",
        }
    }
}

impl fmt::Display for TransitionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One entity's current state, for the generic stepping interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityState {
    Cloud(CloudState),
    Device(DeviceState),
    App(AppState),
}

impl EntityState {
    pub fn entity_name(self) -> &'static str {
        match self {
            EntityState::Cloud(_) => "cloud",
            EntityState::Device(_) => "device",
            EntityState::App(_) => "app",
        }
    }

    pub fn index(self) -> u8 {
        match self {
            EntityState::Cloud(s) => s.index(),
            EntityState::Device(s) => s.index(),
            EntityState::App(s) => s.index(),
        }
    }
}

/// Guard discipline for [`entity_step`].
///
/// `Strict` fires only the reconstructed legitimate edges. `Permissive`
/// additionally fires the edges a given flaw set enables (for the cloud,
/// the F1.x family).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GuardMode {
    Strict,
    Permissive(BTreeSet<Flaw>),
}

/// A `(state, event)` pair the guard refused to fire.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{entity} in S{state} does not accept {event}")]
pub struct GuardRejection {
    pub entity: &'static str,
    pub state: u8,
    pub event: TransitionEvent,
}

/// Steps one entity's state machine by one event.
///
/// Every `(entity, state, event)` pair yields either a defined new state or a
/// [`GuardRejection`]; there is no undefined behavior. Events that an entity
/// legitimately observes without changing state (a running cloud accepting a
/// status upload, a factory device answering discovery) are explicit
/// self-loops.
pub fn entity_step(
    platform: PlatformType,
    entity: EntityState,
    event: TransitionEvent,
    guard: &GuardMode,
) -> Result<EntityState, GuardRejection> {
    let stepped = match entity {
        EntityState::Cloud(s) => cloud_step(platform, s, event, guard).map(EntityState::Cloud),
        EntityState::Device(s) => device_step(platform, s, event).map(EntityState::Device),
        EntityState::App(s) => app_step(s, event).map(EntityState::App),
    };
    stepped.ok_or(GuardRejection {
        entity: entity.entity_name(),
        state: entity.index(),
        event,
    })
}

fn flaw_active(guard: &GuardMode, flaw: Flaw) -> bool {
    match guard {
        GuardMode::Strict => false,
        GuardMode::Permissive(flaws) => flaws.contains(&flaw),
    }
}

fn cloud_step(
    platform: PlatformType,
    state: CloudState,
    event: TransitionEvent,
    guard: &GuardMode,
) -> Option<CloudState> {
    use CloudState::*;
    use TransitionEvent::*;
    match platform {
        PlatformType::TypeI => match (state, event) {
            (S1, Register) => Some(S2),
            (S2, Bind) => Some(S3),
            (S3, Login) => Some(S4),
            (S4, StatusUpload) | (S4, Control) => Some(S4),
            (S4, Unbind) => Some(S1),
            // Re-registration of a known identity: accepted out of S1 only
            // under flaw F1.1; the cloud answers with the existing device ID
            // and otherwise stays put.
            (S2 | S3 | S4, Register) if flaw_active(guard, Flaw::F1_1) => Some(state),
            // Login while already running evicts the old connection (F1.3).
            (S4, Login) if flaw_active(guard, Flaw::F1_3) => Some(S4),
            _ => None,
        },
        PlatformType::TypeII => match (state, event) {
            (S2, Bind) => Some(S3),
            (S3, Login) => Some(S4),
            (S4, StatusUpload) | (S4, Control) => Some(S4),
            (S4, Unbind) => Some(S2),
            // Device-side rebinding overwrites ownership while running (F1.2)
            // and drops the running connection, leaving the cloud bound but
            // not connected.
            (S4, Bind) if flaw_active(guard, Flaw::F1_2) => Some(S3),
            (S4, Login) if flaw_active(guard, Flaw::F1_3) => Some(S4),
            _ => None,
        },
    }
}

fn device_step(
    platform: PlatformType,
    state: DeviceState,
    event: TransitionEvent,
) -> Option<DeviceState> {
    use DeviceState::*;
    use TransitionEvent::*;
    match (state, event) {
        (_, Reset) => Some(S1),
        (S1, Discover) => Some(S1),
        (S1, Provision) => Some(S2),
        (S2, Register) if platform == PlatformType::TypeI => Some(S3),
        (S2, Bind) if platform == PlatformType::TypeII => Some(S3),
        (S3, Login) => Some(S4),
        (S4, StatusUpload) | (S4, Control) => Some(S4),
        // A synchronized unbind rolls a Type I device back to factory state;
        // a Type II device erases its local binding and stays provisioned.
        (S3 | S4, Unbind) => Some(match platform {
            PlatformType::TypeI => S1,
            PlatformType::TypeII => S2,
        }),
        _ => None,
    }
}

fn app_step(state: AppState, event: TransitionEvent) -> Option<AppState> {
    use AppState::*;
    use TransitionEvent::*;
    match (state, event) {
        (S1, Discover) => Some(S2),
        (S2, Provision) => Some(S2),
        (S2, Bind) => Some(S3),
        (S3, Login) => Some(S4),
        (S4, Control) | (S4, StatusUpload) => Some(S4),
        (S3 | S4, Unbind) => Some(S1),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn combo(c: CloudState, d: DeviceState, a: AppState) -> StateCombination {
        StateCombination::new(c, d, a)
    }

    #[test]
    fn legal_set_type_i() {
        use AppState as A;
        use CloudState as C;
        use DeviceState as D;
        // Row 1: cloud S1 with device/app anywhere in {S1, S2}.
        assert!(legal_combination(
            PlatformType::TypeI,
            combo(C::S1, D::S2, A::S2)
        ));
        assert!(legal_combination(
            PlatformType::TypeI,
            combo(C::S1, D::S1, A::S2)
        ));
        // A dangling device: binding revoked while the device stays running.
        assert!(!legal_combination(
            PlatformType::TypeI,
            combo(C::S1, D::S4, A::S1)
        ));
        assert!(legal_combination(
            PlatformType::TypeI,
            combo(C::S2, D::S3, A::S2)
        ));
        assert!(legal_combination(
            PlatformType::TypeI,
            combo(C::S3, D::S3, A::S3)
        ));
        assert!(legal_combination(
            PlatformType::TypeI,
            combo(C::S4, D::S4, A::S4)
        ));
        // In-flight lag between cloud and device is not a legal resting point.
        assert!(!legal_combination(
            PlatformType::TypeI,
            combo(C::S2, D::S2, A::S2)
        ));
    }

    #[test]
    fn legal_set_type_ii_excludes_cloud_s1() {
        use AppState as A;
        use CloudState as C;
        use DeviceState as D;
        assert!(!legal_combination(
            PlatformType::TypeII,
            combo(C::S1, D::S1, A::S1)
        ));
        assert!(legal_combination(
            PlatformType::TypeII,
            combo(C::S2, D::S1, A::S1)
        ));
        assert!(legal_combination(
            PlatformType::TypeII,
            combo(C::S2, D::S2, A::S2)
        ));
        assert!(legal_combination(
            PlatformType::TypeII,
            combo(C::S3, D::S3, A::S3)
        ));
        assert!(legal_combination(
            PlatformType::TypeII,
            combo(C::S4, D::S4, A::S4)
        ));
    }

    #[test]
    fn legal_combination_is_pure() {
        for platform in [PlatformType::TypeI, PlatformType::TypeII] {
            for combo in all_combinations() {
                assert_eq!(
                    legal_combination(platform, combo),
                    legal_combination(platform, combo)
                );
            }
        }
    }

    #[test]
    fn running_cloud_rejects_registration_but_accepts_status_upload() {
        let strict = GuardMode::Strict;
        let rej = entity_step(
            PlatformType::TypeI,
            EntityState::Cloud(CloudState::S4),
            TransitionEvent::Register,
            &strict,
        )
        .unwrap_err();
        assert_eq!(rej.state, 4);
        assert_eq!(rej.event, TransitionEvent::Register);

        assert_eq!(
            entity_step(
                PlatformType::TypeI,
                EntityState::Cloud(CloudState::S4),
                TransitionEvent::StatusUpload,
                &strict,
            ),
            Ok(EntityState::Cloud(CloudState::S4))
        );
    }

    #[test]
    fn factory_device_provisions() {
        assert_eq!(
            entity_step(
                PlatformType::TypeI,
                EntityState::Device(DeviceState::S1),
                TransitionEvent::Provision,
                &GuardMode::Strict,
            ),
            Ok(EntityState::Device(DeviceState::S2))
        );
    }

    #[test]
    fn flawed_edges_fire_only_under_permissive_guard() {
        let f13 = GuardMode::Permissive([Flaw::F1_3].into_iter().collect());
        assert_eq!(
            entity_step(
                PlatformType::TypeI,
                EntityState::Cloud(CloudState::S4),
                TransitionEvent::Login,
                &f13,
            ),
            Ok(EntityState::Cloud(CloudState::S4))
        );
        assert!(entity_step(
            PlatformType::TypeI,
            EntityState::Cloud(CloudState::S4),
            TransitionEvent::Login,
            &GuardMode::Strict,
        )
        .is_err());
        // The F1.3 edge does not smuggle in the F1.1 edge.
        assert!(entity_step(
            PlatformType::TypeI,
            EntityState::Cloud(CloudState::S4),
            TransitionEvent::Register,
            &f13,
        )
        .is_err());
    }

    fn all_states() -> Vec<EntityState> {
        let mut out = Vec::new();
        for s in [
            CloudState::S1,
            CloudState::S2,
            CloudState::S3,
            CloudState::S4,
        ] {
            out.push(EntityState::Cloud(s));
        }
        for s in [
            DeviceState::S1,
            DeviceState::S2,
            DeviceState::S3,
            DeviceState::S4,
        ] {
            out.push(EntityState::Device(s));
        }
        for s in [AppState::S1, AppState::S2, AppState::S3, AppState::S4] {
            out.push(EntityState::App(s));
        }
        out
    }

    fn all_combinations() -> Vec<StateCombination> {
        let mut out = Vec::new();
        for c in [
            CloudState::S1,
            CloudState::S2,
            CloudState::S3,
            CloudState::S4,
        ] {
            for d in [
                DeviceState::S1,
                DeviceState::S2,
                DeviceState::S3,
                DeviceState::S4,
            ] {
                for a in [AppState::S1, AppState::S2, AppState::S3, AppState::S4] {
                    out.push(StateCombination::new(c, d, a));
                }
            }
        }
        out
    }

    #[test]
    fn stepping_is_total_over_the_closed_event_set() {
        // Exhaustive: 24 entity-states x 9 events x 2 platforms x 2 guards.
        let guards = [
            GuardMode::Strict,
            GuardMode::Permissive(
                [Flaw::F1_1, Flaw::F1_2, Flaw::F1_3, Flaw::F2, Flaw::F3, Flaw::F4]
                    .into_iter()
                    .collect(),
            ),
        ];
        for platform in [PlatformType::TypeI, PlatformType::TypeII] {
            for entity in all_states() {
                for event in TransitionEvent::ALL {
                    for guard in &guards {
                        // Either branch is fine; the call must not panic and a
                        // rejection must name the offending pair.
                        match entity_step(platform, entity, event, guard) {
                            Ok(_) => {}
                            Err(rej) => {
                                assert_eq!(rej.entity, entity.entity_name());
                                assert_eq!(rej.state, entity.index());
                                assert_eq!(rej.event, event);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn type_ii_cloud_never_steps_into_s1() {
        let guards = [
            GuardMode::Strict,
            GuardMode::Permissive(
                [Flaw::F1_2, Flaw::F1_3, Flaw::F2, Flaw::F3].into_iter().collect(),
            ),
        ];
        for s in [
            CloudState::S1,
            CloudState::S2,
            CloudState::S3,
            CloudState::S4,
        ] {
            for event in TransitionEvent::ALL {
                for guard in &guards {
                    if let Ok(EntityState::Cloud(next)) =
                        entity_step(PlatformType::TypeII, EntityState::Cloud(s), event, guard)
                    {
                        assert_ne!(next, CloudState::S1);
                    }
                }
            }
        }
    }
}
