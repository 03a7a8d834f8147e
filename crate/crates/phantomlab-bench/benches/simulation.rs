//! Core benchmarks: codec throughput, device-ID generation, a full baseline
//! life-cycle, one attack scenario, the matrix, and the explorer.

use criterion::{criterion_group, criterion_main, Criterion};
use std::collections::BTreeSet;
use std::hint::black_box;

use phantomlab_core::cloud::device_id_gen;
use phantomlab_core::identity::DeviceIdentity;
use phantomlab_core::phantom::InfoGrant;
use phantomlab_core::policy::PolicyConfig;
use phantomlab_core::scenarios::{
    attack_matrix, build_world, explore_reachable, run_attack, AttackKind, GrantSpec,
    PlatformProfile, ProfileName,
};
use phantomlab_core::wire::{self, Method, Request, RequestCtx};

fn bench_codec(c: &mut Criterion) {
    let mut req = Request::new(Method::RegisterDevice, 100);
    req.params
        .insert("model".into(), "JIKONG_LIVING_OUTLET_00003".into());
    req.params.insert("mac".into(), "60:01:94:A2:D5:7C".into());
    req.params
        .insert("version".into(), "0.0.0;APP2.0;OTA1.0".into());
    req.request = Some(RequestCtx {
        cid: Some("000000000000000010671484".to_owned()),
        uuid: Some(String::new()),
    });
    wire::sign_request(&mut req, "5gPFl8G4GyFZ1fPWk20m");
    let bytes = wire::encode_request(&req);

    c.bench_function("wire/encode_register", |b| {
        b.iter(|| wire::encode_request(black_box(&req)))
    });
    c.bench_function("wire/decode_register", |b| {
        b.iter(|| wire::decode_request(black_box(&bytes)).unwrap())
    });
}

fn bench_device_id(c: &mut Criterion) {
    let identity = DeviceIdentity::new(
        "60:01:94:A2:D5:7C".parse().unwrap(),
        "JIKONG_LIVING_OUTLET_00003",
    )
    .with_cid("000000000000000010671484");
    c.bench_function("cloud/device_id_gen", |b| {
        b.iter(|| device_id_gen(black_box(&identity), None))
    });
}

fn bench_lifecycle(c: &mut Criterion) {
    let profile = PlatformProfile::of(ProfileName::Alink);
    c.bench_function("world/baseline_lifecycle", |b| {
        b.iter(|| {
            let mut world =
                build_world(&profile, None, BTreeSet::new(), InfoGrant::full(), 7).unwrap();
            world.run_baseline_lifecycle().unwrap();
            black_box(world.trace.records.len())
        })
    });
}

fn bench_attack(c: &mut Criterion) {
    let profile = PlatformProfile::of(ProfileName::Alink);
    c.bench_function("scenarios/alink_hijacking", |b| {
        b.iter(|| {
            black_box(run_attack(
                &profile,
                AttackKind::Hijacking,
                BTreeSet::new(),
                GrantSpec::Full,
                7,
            ))
        })
    });
}

fn bench_matrix(c: &mut Criterion) {
    let mut group = c.benchmark_group("scenarios");
    group.sample_size(10);
    group.bench_function("attack_matrix", |b| {
        b.iter(|| black_box(attack_matrix(BTreeSet::new(), 7)))
    });
    group.finish();
}

fn bench_explorer(c: &mut Criterion) {
    let profile = PlatformProfile::of(ProfileName::Alink);
    let policy = PolicyConfig::new(
        profile.platform,
        profile.identified_flaws.clone(),
        BTreeSet::new(),
    )
    .unwrap();
    let mut group = c.benchmark_group("scenarios");
    group.sample_size(10);
    group.bench_function("explore_depth_12", |b| {
        b.iter(|| black_box(explore_reachable(&profile, &policy, 12, 7)))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_codec,
    bench_device_id,
    bench_lifecycle,
    bench_attack,
    bench_matrix,
    bench_explorer
);
criterion_main!(benches);
