//! Property tests: codec round-trips, world invariants under random
//! interaction sequences, trace conservation, and explorer soundness.

use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet};

use phantomlab_core::phantom::InfoGrant;
use phantomlab_core::policy::{Mitigation, PolicyConfig};
use phantomlab_core::scenarios::{
    build_world, explore_reachable, run_attack, AttackKind, GrantSpec, PlatformProfile,
    ProfileName,
};
use phantomlab_core::states::{legal_combination, StateCombination};
use phantomlab_core::wire::{
    self, AccountRef, Message, Method, Request, RequestCtx, Response, SystemFields, Value,
};
use phantomlab_core::world::Interaction;

// ---------------------------------------------------------------------
// Codec round-trip
// ---------------------------------------------------------------------

fn value_strategy() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<i64>().prop_map(Value::Int),
        "[a-zA-Z0-9:;._-]{0,24}".prop_map(Value::Str),
    ]
}

/// Schema-valid params for a method: every required key, a subset of the
/// optional ones.
fn params_strategy(method: Method) -> impl Strategy<Value = BTreeMap<String, Value>> {
    let (required, optional): (&[&str], &[&str]) = match method {
        Method::RegisterDevice => (&["mac", "model"], &["sn", "version"]),
        Method::BindDevice => (&[], &["hwid", "mac", "reset_nonce", "secret", "tagkey"]),
        Method::UnbindDevice => (&[], &[]),
        Method::LoginDevice => (&[], &["hwid", "mac", "secret", "tagkey"]),
        Method::StatusUpload => (&[], &["status"]),
        Method::ControlCommand => (&["command"], &[]),
        Method::OtaUpdate => (&["model"], &["secret", "version"]),
        Method::Discover => (&[], &[]),
        Method::Provision => (&["ssid"], &[]),
        Method::AppBind | Method::AppUnbind => (&[], &[]),
        Method::AppControl => (&["command"], &[]),
    };
    let required: Vec<String> = required.iter().map(|s| s.to_string()).collect();
    let optional: Vec<String> = optional.iter().map(|s| s.to_string()).collect();
    let opt_len = optional.len();
    (
        proptest::collection::vec(value_strategy(), required.len()),
        proptest::collection::vec(proptest::bool::ANY, opt_len),
        proptest::collection::vec(value_strategy(), opt_len),
    )
        .prop_map(move |(req_vals, mask, opt_vals)| {
            let mut params = BTreeMap::new();
            for (key, value) in required.iter().zip(req_vals) {
                params.insert(key.clone(), value);
            }
            for ((key, keep), value) in optional.iter().zip(mask).zip(opt_vals) {
                if keep {
                    params.insert(key.clone(), value);
                }
            }
            params
        })
}

fn method_strategy() -> impl Strategy<Value = Method> {
    prop_oneof![
        Just(Method::RegisterDevice),
        Just(Method::BindDevice),
        Just(Method::UnbindDevice),
        Just(Method::LoginDevice),
        Just(Method::StatusUpload),
        Just(Method::ControlCommand),
        Just(Method::OtaUpdate),
        Just(Method::Discover),
        Just(Method::Provision),
        Just(Method::AppBind),
        Just(Method::AppUnbind),
        Just(Method::AppControl),
    ]
}

prop_compose! {
    fn request_strategy()(
        method in method_strategy(),
    )(
        method in Just(method),
        params in params_strategy(method),
        id in any::<u64>(),
        account in proptest::option::of(("[a-z]{1,8}", "[0-9a-f]{32}")),
        ctx in proptest::option::of((
            proptest::option::of("[0-9]{1,24}"),
            proptest::option::of("[0-9A-F]{32}"),
        )),
        system in proptest::option::of((
            proptest::option::of("[a-zA-Z0-9]{1,20}"),
            proptest::option::of("[0-9a-f]{32}"),
            "[0-9]{1,6}",
        )),
    ) -> Request {
        let mut req = Request::new(method, id);
        req.params = params;
        req.account = account.map(|(user_id, credential)| AccountRef { credential, user_id });
        req.request = ctx.map(|(cid, uuid)| RequestCtx { cid, uuid });
        req.system = system.map(|(key, sign, time)| SystemFields { key, sign, time });
        req
    }
}

prop_compose! {
    fn response_strategy()(
        id in any::<u64>(),
        code in prop_oneof![Just(1000u32), 4001u32..4012],
        msg in "[a-z ]{0,20}",
        data in proptest::collection::btree_map("[a-z]{1,8}", value_strategy(), 0..4),
    ) -> Response {
        Response { id, result: wire::ResponseResult { code, data, msg } }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    /// decode(encode(m)) == m, and encoding is canonical (re-encoding the
    /// decoded message is byte-identical).
    #[test]
    fn codec_round_trips_requests(req in request_strategy()) {
        let msg = Message::Request(req);
        let bytes = wire::encode(&msg);
        let decoded = wire::decode(&bytes).expect("round trip");
        prop_assert_eq!(&decoded, &msg);
        prop_assert_eq!(wire::encode(&decoded), bytes);
    }

    #[test]
    fn codec_round_trips_responses(resp in response_strategy()) {
        let msg = Message::Response(resp);
        let bytes = wire::encode(&msg);
        let decoded = wire::decode(&bytes).expect("round trip");
        prop_assert_eq!(&decoded, &msg);
        prop_assert_eq!(wire::encode(&decoded), bytes);
    }
}

// ---------------------------------------------------------------------
// World invariants under random interaction sequences
// ---------------------------------------------------------------------

fn any_interaction() -> impl Strategy<Value = Interaction> {
    prop_oneof![
        Just(Interaction::AppDiscover),
        Just(Interaction::AppProvision),
        Just(Interaction::DeviceRegister),
        Just(Interaction::AliceBind),
        Just(Interaction::AccountTransferAlice),
        Just(Interaction::DeviceBind),
        Just(Interaction::DeviceLogin),
        Just(Interaction::DeviceStatusUpload(Value::Int(1))),
        Just(Interaction::AliceControl("c".to_owned())),
        Just(Interaction::AliceUnbind),
        Just(Interaction::DeviceReset),
        Just(Interaction::AccountTransferTrudy),
        Just(Interaction::PhantomRegister),
        Just(Interaction::PhantomLogin),
        Just(Interaction::PhantomBind),
        Just(Interaction::PhantomDeviceUnbind),
        Just(Interaction::PhantomDisconnect),
        Just(Interaction::PhantomStatusUpload(Value::Int(9))),
        Just(Interaction::TrudyBind),
        Just(Interaction::TrudyControl("t".to_owned())),
    ]
}

fn profile_strategy() -> impl Strategy<Value = ProfileName> {
    prop_oneof![
        Just(ProfileName::Alink),
        Just(ProfileName::Joylink),
        Just(ProfileName::Kasa),
        Just(ProfileName::Mijia),
        Just(ProfileName::SmartThings),
    ]
}

fn mitigation_set() -> impl Strategy<Value = BTreeSet<Mitigation>> {
    proptest::collection::btree_set(
        prop_oneof![
            Just(Mitigation::M1DeviceAuth),
            Just(Mitigation::M2AuthzChecks),
            Just(Mitigation::M3StateGuard),
        ],
        0..=3,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    /// Under every policy and any interleaving: one binding and one session
    /// per device at most, a Type II cloud never in S1, trace clock
    /// monotone, and each record's legality stamp consistent.
    #[test]
    fn world_invariants_hold_under_random_sequences(
        name in profile_strategy(),
        mitigations in mitigation_set(),
        seed in 0u64..1000,
        steps in proptest::collection::vec(any_interaction(), 1..40),
    ) {
        let profile = PlatformProfile::of(name);
        let mut world =
            build_world(&profile, None, mitigations, InfoGrant::full(), seed).unwrap();
        for step in steps {
            world.step(step);

            if let Some(uuid) = world.victim_uuid().cloned() {
                // Sessions are keyed per device; assert the live one refers
                // to an open connection.
                if let Some(session) = world.cloud.session(&uuid) {
                    prop_assert!(world.connections.is_open(session.connection));
                }
            }
            if profile.platform == phantomlab_core::states::PlatformType::TypeII {
                prop_assert_ne!(
                    world.combo().cloud,
                    phantomlab_core::states::CloudState::S1
                );
            }
        }
        let mut last_tick = 0;
        for record in &world.trace.records {
            prop_assert!(record.tick >= last_tick, "clock went backwards");
            last_tick = record.tick;
            let combo = record.combo;
            let reconstructed = combo_from_indices(combo);
            prop_assert_eq!(
                record.legal,
                legal_combination(profile.platform, reconstructed)
            );
        }
        // Conservation: every dispatched message appears in the trace exactly
        // once (as delivered, dropped, or denied).
        let message_records = world
            .trace
            .records
            .iter()
            .filter(|r| r.kind != phantomlab_core::netlab::RecordKind::Transition)
            .count() as u64;
        prop_assert_eq!(world.ground.messages_sent, message_records);
    }

    /// Ground-truth isolation as a property: the same interaction sequence
    /// with flipped principal labels yields a byte-identical trace.
    #[test]
    fn flipping_principal_labels_never_changes_traces(
        name in profile_strategy(),
        seed in 0u64..1000,
        steps in proptest::collection::vec(any_interaction(), 1..30),
    ) {
        let profile = PlatformProfile::of(name);
        let mut normal =
            build_world(&profile, None, BTreeSet::new(), InfoGrant::full(), seed).unwrap();
        let mut flipped =
            build_world(&profile, None, BTreeSet::new(), InfoGrant::full(), seed).unwrap();
        flipped.set_principal_flip(true);
        for step in steps {
            normal.step(step.clone());
            flipped.step(step);
        }
        prop_assert_eq!(normal.trace.to_jsonl(), flipped.trace.to_jsonl());
    }
}

fn combo_from_indices(indices: [u8; 3]) -> StateCombination {
    use phantomlab_core::states::{AppState, CloudState, DeviceState};
    let cloud = match indices[0] {
        1 => CloudState::S1,
        2 => CloudState::S2,
        3 => CloudState::S3,
        _ => CloudState::S4,
    };
    let device = match indices[1] {
        1 => DeviceState::S1,
        2 => DeviceState::S2,
        3 => DeviceState::S3,
        _ => DeviceState::S4,
    };
    let app = match indices[2] {
        1 => AppState::S1,
        2 => AppState::S2,
        3 => AppState::S3,
        _ => AppState::S4,
    };
    StateCombination::new(cloud, device, app)
}

// ---------------------------------------------------------------------
// Explorer soundness
// ---------------------------------------------------------------------

/// Every state combination observed in a concrete attack trace is contained
/// in the explorer's reachable set at sufficient depth.
#[test]
fn explorer_covers_every_concretely_observed_combination() {
    for profile in PlatformProfile::all() {
        let policy = PolicyConfig::new(
            profile.platform,
            profile.identified_flaws.clone(),
            BTreeSet::new(),
        )
        .unwrap();
        let report = explore_reachable(&profile, &policy, 16, 7);
        for attack in AttackKind::ALL {
            let outcome = run_attack(&profile, attack, BTreeSet::new(), GrantSpec::Full, 7);
            let observed: BTreeSet<StateCombination> = outcome
                .trace
                .records
                .iter()
                .map(|r| combo_from_indices(r.combo))
                .collect();
            for combo in observed {
                assert!(
                    report.reached.contains(&combo),
                    "{} {}: {combo} observed concretely but not explored",
                    profile.name,
                    attack
                );
            }
        }
    }
}
