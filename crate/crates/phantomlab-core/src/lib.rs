//! Deterministic simulator and security testbed for cloud-based smart-home
//! platforms.
//!
//! A simulated world contains three kinds of entities — an IoT cloud, a real
//! device, and the owner's mobile app — plus an attacker-controlled *phantom
//! device* that speaks the same wire protocol. Each entity runs a four-state
//! life-cycle machine, and the triple of current states is checked against a
//! per-platform table of legitimate combinations after every interaction.
//!
//! The cloud's guard behavior is fully determined by a [`policy::PolicyConfig`]:
//! a set of design-flaw toggles (F1.1–F4) and mitigation toggles (M1–M3).
//! Attack scenarios ([`scenarios`]) script a phantom device against a victim
//! life-cycle and evaluate success predicates over the resulting event trace,
//! reproducing a platform-by-attack applicability matrix. A bounded
//! breadth-first explorer enumerates reachable state combinations and reports
//! the illegal ones.
//!
//! Everything is deterministic: simulation time is integer ticks, all
//! randomness flows from a scenario seed, and equal (seed, scenario, policy)
//! inputs produce byte-identical traces.

pub mod agents;
pub mod cloud;
pub mod identity;
pub mod netlab;
pub mod phantom;
pub mod policy;
pub mod scenarios;
pub mod states;
pub mod wire;
pub mod world;

pub use cloud::{Cloud, ErrorCode};
pub use identity::{DeviceId, DeviceIdentity, InfoCategory, LegitimacyInfo, Mac};
pub use netlab::{NodeId, Tick, Trace, TraceRecord};
pub use policy::{Flaw, Mitigation, PolicyConfig};
pub use scenarios::{AttackKind, PlatformProfile, ProfileName, ScenarioOutcome};
pub use states::{
    legal_combination, AppState, CloudState, DeviceState, PlatformType, StateCombination,
};
pub use wire::{Method, Request, Response};
pub use world::World;
