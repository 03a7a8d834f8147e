//! Baseline life-cycle behavior: the seven phases, reconnection timing, and
//! reset semantics.

use phantomlab_core::agents::{HEARTBEAT_PERIOD, RELOGIN_BACKOFF};
use phantomlab_core::phantom::InfoGrant;
use phantomlab_core::policy::Mitigation;
use phantomlab_core::scenarios::{build_world, run_baseline, PlatformProfile, ProfileName};
use phantomlab_core::states::{AppState, CloudState, DeviceState, StateCombination};
use phantomlab_core::world::Interaction;
use phantomlab_core::Mitigation::{M1DeviceAuth, M2AuthzChecks, M3StateGuard};
use std::collections::BTreeSet;

fn combo(c: CloudState, d: DeviceState, a: AppState) -> StateCombination {
    StateCombination::new(c, d, a)
}

#[test]
fn type_i_baseline_reaches_running_with_every_step_legal() {
    let profile = PlatformProfile::of(ProfileName::Alink);
    let (result, world) = run_baseline(&profile, BTreeSet::new(), 1);
    assert!(result.is_ok());
    assert_eq!(
        world.combo(),
        combo(CloudState::S4, DeviceState::S4, AppState::S4)
    );
    assert!(world.trace.all_legal(), "{:?}", world.trace.illegal_records());
}

#[test]
fn type_ii_baseline_starts_with_cloud_registered() {
    let profile = PlatformProfile::of(ProfileName::Kasa);
    let mut world = build_world(&profile, None, BTreeSet::new(), InfoGrant::full(), 1).unwrap();
    assert_eq!(
        world.combo(),
        combo(CloudState::S2, DeviceState::S1, AppState::S1)
    );
    world.run_baseline_lifecycle().unwrap();
    assert_eq!(
        world.combo(),
        combo(CloudState::S4, DeviceState::S4, AppState::S4)
    );
    assert!(world.trace.all_legal());
}

#[test]
fn mitigations_do_not_break_legitimate_use() {
    for name in ProfileName::ALL {
        let profile = PlatformProfile::of(name);
        let (result, world) = run_baseline(
            &profile,
            [M1DeviceAuth, M2AuthzChecks, M3StateGuard].into_iter().collect(),
            1,
        );
        assert!(result.is_ok(), "{name}: {result:?}");
        assert_eq!(world.combo().indices(), [4, 4, 4], "{name}");
        assert!(world.trace.all_legal(), "{name}");
    }
}

/// Phases 1-7 under strict state enforcement: the full cycle including
/// unbinding and reset keeps every combination legal and ends at the initial
/// states.
#[test]
fn strict_full_cycle_stays_legal_both_platform_types() {
    for (name, initial_cloud) in [
        (ProfileName::Alink, CloudState::S1),
        (ProfileName::Kasa, CloudState::S2),
    ] {
        let profile = PlatformProfile::of(name);
        let mitigations: BTreeSet<Mitigation> = [M3StateGuard].into_iter().collect();
        let mut world =
            build_world(&profile, None, mitigations, InfoGrant::full(), 3).unwrap();
        world.run_baseline_lifecycle().unwrap();

        let unbind = world.step(Interaction::AliceUnbind);
        assert!(unbind.ok, "{name}: unbind rejected: {unbind:?}");
        let reset = world.step(Interaction::DeviceReset);
        assert!(reset.ok);

        assert!(
            world.trace.all_legal(),
            "{name}: {:?}",
            world.trace.illegal_records()
        );
        assert_eq!(
            world.combo(),
            combo(initial_cloud, DeviceState::S1, AppState::S1),
            "{name}"
        );
    }
}

#[test]
fn unbind_without_reset_leaves_a_dangling_device() {
    let profile = PlatformProfile::of(ProfileName::Alink);
    let mut world = build_world(&profile, None, BTreeSet::new(), InfoGrant::full(), 3).unwrap();
    world.run_baseline_lifecycle().unwrap();

    let unbind = world.step(Interaction::AliceUnbind);
    assert!(unbind.ok);
    // Binding revoked, app idle, but the device still runs on its retained
    // connection: the illegal (S1, S4, S1) combination.
    assert_eq!(
        world.combo(),
        combo(CloudState::S1, DeviceState::S4, AppState::S1)
    );
    assert!(!world.trace.all_legal());
    assert!(world.device_connected());
}

#[test]
fn reset_then_unbind_returns_type_ii_world_to_initial_states() {
    let profile = PlatformProfile::of(ProfileName::Kasa);
    let mut world = build_world(&profile, None, BTreeSet::new(), InfoGrant::full(), 3).unwrap();
    world.run_baseline_lifecycle().unwrap();

    world.step(Interaction::DeviceReset);
    let unbind = world.step(Interaction::AliceUnbind);
    assert!(unbind.ok);
    assert_eq!(
        world.combo(),
        combo(CloudState::S2, DeviceState::S1, AppState::S1)
    );
    assert!(world.device.local_binding.is_none());
}

#[test]
fn evicted_device_relogs_in_after_exactly_its_backoff() {
    let profile = PlatformProfile::of(ProfileName::Alink);
    let mut world = build_world(&profile, None, BTreeSet::new(), InfoGrant::full(), 3).unwrap();
    world.run_baseline_lifecycle().unwrap();

    world.step(Interaction::PhantomRegister);
    let login = world.step(Interaction::PhantomLogin);
    assert!(login.ok);
    let evicted_at = world.clock();
    assert!(!world.device_connected());

    world.run_until(evicted_at + RELOGIN_BACKOFF + 5);
    let relogin = world
        .trace
        .records
        .iter()
        .find(|r| {
            r.tick > evicted_at && r.src == "device" && r.method.as_deref() == Some("loginDevice")
        })
        .expect("the real device retries its login");
    assert_eq!(relogin.tick, evicted_at + RELOGIN_BACKOFF);
    assert_eq!(relogin.code, Some(1000));
    assert!(world.device_connected());
}

#[test]
fn connected_device_with_timely_heartbeats_never_relogs_in() {
    let profile = PlatformProfile::of(ProfileName::Alink);
    let mut world = build_world(&profile, None, BTreeSet::new(), InfoGrant::full(), 3).unwrap();
    world.run_baseline_lifecycle().unwrap();
    let logged_in_at = world.clock();

    world.run_until(logged_in_at + 10 * HEARTBEAT_PERIOD);
    let relogins = world
        .trace
        .records
        .iter()
        .filter(|r| {
            r.tick > logged_in_at
                && r.src == "device"
                && r.method.as_deref() == Some("loginDevice")
        })
        .count();
    assert_eq!(relogins, 0);
    let heartbeats = world
        .trace
        .records
        .iter()
        .filter(|r| r.method.as_deref() == Some("heartbeat"))
        .count();
    assert!(heartbeats >= 9);
}

#[test]
fn liveness_single_eviction_recovers_within_heartbeat_plus_backoff() {
    let profile = PlatformProfile::of(ProfileName::Kasa);
    let mut world = build_world(&profile, None, BTreeSet::new(), InfoGrant::full(), 5).unwrap();
    world.run_baseline_lifecycle().unwrap();

    let login = world.step(Interaction::PhantomLogin);
    assert!(login.ok, "{login:?}");
    let evicted_at = world.clock();
    world.run_until(evicted_at + HEARTBEAT_PERIOD + RELOGIN_BACKOFF);
    assert!(world.device_connected());
    assert_eq!(
        world.session_principal(),
        Some(phantomlab_core::cloud::Principal::RealDevice)
    );
}

#[test]
fn reconnection_rides_out_a_lossy_network() {
    let profile = PlatformProfile::of(ProfileName::Kasa);
    let mut world = build_world(&profile, None, BTreeSet::new(), InfoGrant::full(), 21).unwrap();
    world.run_baseline_lifecycle().unwrap();

    // From now on a third of all messages vanish in transit. Evict the
    // device; its retry loop must still win the session back.
    world.set_loss_percent(33);
    let login = world.step(Interaction::PhantomLogin);
    if login.ok {
        let evicted_at = world.clock();
        world.run_until(evicted_at + 30 * RELOGIN_BACKOFF);
    }
    assert!(world.device_connected());
    let drops = world
        .trace
        .records
        .iter()
        .filter(|r| r.kind == phantomlab_core::netlab::RecordKind::Dropped)
        .count();
    assert!(drops > 0, "the lossy run should have traced dropped messages");
}

#[test]
fn unfinished_scheduled_work_sets_the_horizon_flag() {
    let profile = PlatformProfile::of(ProfileName::Alink);
    let mut world = build_world(&profile, None, BTreeSet::new(), InfoGrant::full(), 3).unwrap();
    world.schedule_interaction(100, Interaction::AppDiscover);
    world.run_until(50);
    assert!(world.trace.horizon_exceeded);

    let mut world = build_world(&profile, None, BTreeSet::new(), InfoGrant::full(), 3).unwrap();
    world.schedule_interaction(10, Interaction::AppDiscover);
    world.run_until(50);
    assert!(!world.trace.horizon_exceeded);
    assert!(!world.trace.records.is_empty());
}
