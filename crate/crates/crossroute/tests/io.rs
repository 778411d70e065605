//! Checkpoint container and benchmark-file behavior through the public API.

use std::collections::BTreeMap;

use crossroute::adapters::AdapterMode;
use crossroute::io::{
    load_model, parse_cvrplib, save_checkpoint, Checkpoint,
};
use crossroute::nn::ParamGroup;
use crossroute::policy::{
    assemble_fresh, assemble_from_backbone, construct, BackboneConfig, DecodeMode, PolicyModel,
    Profile,
};
use crossroute::vrp::{generate_instances, Distribution, Problem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn desk(problem: Problem, seed: u64) -> PolicyModel {
    assemble_fresh(problem, Profile::Am, BackboneConfig::desk(16, 1), AdapterMode::None, seed).unwrap()
}

#[test]
fn full_checkpoint_roundtrip_is_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let model = desk(Problem::Pctsp, 1);
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    save_checkpoint(&model, &p1, &ParamGroup::ALL, BTreeMap::new()).unwrap();
    let loaded = load_model(&p1, None).unwrap();
    save_checkpoint(&loaded, &p2, &ParamGroup::ALL, BTreeMap::new()).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn group_subset_roundtrips_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    // adapter-mode model so heads+adapters checkpoints carry provenance
    let tsp = desk(Problem::Tsp, 2);
    let bpath = dir.path().join("tsp.ckpt");
    save_checkpoint(&tsp, &bpath, &ParamGroup::ALL, BTreeMap::new()).unwrap();
    let op = assemble_from_backbone(Problem::Op, &bpath, AdapterMode::Inside, 3).unwrap();

    for groups in [
        vec![ParamGroup::Heads],
        vec![ParamGroup::Heads, ParamGroup::Adapters],
        vec![ParamGroup::Backbone, ParamGroup::Heads, ParamGroup::Adapters],
    ] {
        let p1 = dir.path().join("g1.ckpt");
        let p2 = dir.path().join("g2.ckpt");
        save_checkpoint(&op, &p1, &groups, BTreeMap::new()).unwrap();
        // reload into a structurally identical model, then save again
        let fresh = assemble_from_backbone(Problem::Op, &bpath, AdapterMode::Inside, 99).unwrap();
        let ckpt = Checkpoint::read(&p1).unwrap();
        crossroute::io::load_into(&fresh, &ckpt, &groups).unwrap();
        save_checkpoint(&fresh, &p2, &groups, BTreeMap::new()).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap(), "{groups:?}");
    }
}

#[test]
fn loaded_model_reproduces_greedy_tours() {
    let dir = tempfile::tempdir().unwrap();
    let model = desk(Problem::Cvrp, 5);
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&model, &path, &ParamGroup::ALL, BTreeMap::new()).unwrap();
    let loaded = load_model(&path, None).unwrap();
    let instances = generate_instances(Problem::Cvrp, 8, 100, Distribution::Uniform, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for inst in &instances {
        let (a, _) = construct(&model, inst, DecodeMode::Greedy, &mut rng).unwrap();
        let (b, _) = construct(&loaded, inst, DecodeMode::Greedy, &mut rng).unwrap();
        assert_eq!(a.nodes, b.nodes);
    }
}

#[test]
fn tampered_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = desk(Problem::Tsp, 7);
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&model, &path, &ParamGroup::ALL, BTreeMap::new()).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x01;
    std::fs::write(&path, &bytes).unwrap();
    match Checkpoint::read(&path) {
        Err(crossroute::Error::CorruptCheckpoint(msg)) => assert!(msg.contains("hash"), "{msg}"),
        other => panic!("expected corrupt-checkpoint, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn partial_checkpoint_requires_matching_backbone() {
    let dir = tempfile::tempdir().unwrap();
    let tsp = desk(Problem::Tsp, 8);
    let bpath = dir.path().join("tsp.ckpt");
    save_checkpoint(&tsp, &bpath, &ParamGroup::ALL, BTreeMap::new()).unwrap();
    let op = assemble_from_backbone(Problem::Op, &bpath, AdapterMode::Inside, 9).unwrap();
    let hpath = dir.path().join("op-heads.ckpt");
    save_checkpoint(&op, &hpath, &[ParamGroup::Heads, ParamGroup::Adapters], BTreeMap::new()).unwrap();

    // without the backbone: incompatible
    assert!(matches!(
        load_model(&hpath, None),
        Err(crossroute::Error::CheckpointIncompatible(_))
    ));
    // with the right backbone: greedy tours match the trained-in-memory model
    let restored = load_model(&hpath, Some(&bpath)).unwrap();
    let instances = generate_instances(Problem::Op, 6, 20, Distribution::Uniform, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for inst in &instances {
        let (a, _) = construct(&op, inst, DecodeMode::Greedy, &mut rng).unwrap();
        let (b, _) = construct(&restored, inst, DecodeMode::Greedy, &mut rng).unwrap();
        assert_eq!(a.nodes, b.nodes);
    }
    // with a different backbone: pairing hash mismatch
    let other = desk(Problem::Tsp, 1234);
    let wrong = dir.path().join("other.ckpt");
    save_checkpoint(&other, &wrong, &ParamGroup::ALL, BTreeMap::new()).unwrap();
    assert!(matches!(
        load_model(&hpath, Some(&wrong)),
        Err(crossroute::Error::CheckpointIncompatible(_))
    ));
}

#[test]
fn adapter_checkpoints_are_much_smaller_than_full_ones() {
    let dir = tempfile::tempdir().unwrap();
    // full-size profile so the published ratio applies
    let tsp = assemble_fresh(Problem::Tsp, Profile::Am, BackboneConfig::for_profile(Profile::Am), AdapterMode::None, 11).unwrap();
    let bpath = dir.path().join("tsp.ckpt");
    save_checkpoint(&tsp, &bpath, &ParamGroup::ALL, BTreeMap::new()).unwrap();
    let op = assemble_from_backbone(Problem::Op, &bpath, AdapterMode::Inside, 12).unwrap();
    let partial = dir.path().join("partial.ckpt");
    save_checkpoint(&op, &partial, &[ParamGroup::Heads, ParamGroup::Adapters], BTreeMap::new()).unwrap();
    // a fully fine-tuned model would have to store all ~694K parameters
    let op_full = assemble_from_backbone(Problem::Op, &bpath, AdapterMode::None, 12).unwrap();
    let full = dir.path().join("full.ckpt");
    save_checkpoint(&op_full, &full, &ParamGroup::ALL, BTreeMap::new()).unwrap();
    let full_len = std::fs::metadata(&full).unwrap().len() as f64;
    let partial_len = std::fs::metadata(&partial).unwrap().len() as f64;
    // stored bytes track the trainable/total parameter ratio (~198K/694K)
    let ratio = partial_len / full_len;
    let expected = 198_656.0 / 692_864.0;
    assert!((ratio - expected).abs() < 0.02, "ratio {ratio:.3} vs {expected:.3}");
}

#[test]
fn benchmark_fixture_parses_and_costs_match_hand_arithmetic() {
    let text = std::fs::read_to_string("tests/data/toy4.vrp").unwrap();
    let bench = parse_cvrplib(&text).unwrap();
    assert_eq!(bench.dimension, 4);
    assert_eq!(bench.demands[0], 0.0);
    // 3-4-5 legs all around
    assert_eq!(bench.tour_cost_original(&[0, 1, 2, 3, 0]).unwrap(), 20.0);
    // two-route split: 0-1-0 (10) + 0-2-3-0 (16): legs 5+5, 6+5+5
    assert_eq!(bench.tour_cost_original(&[0, 1, 0, 2, 3, 0]).unwrap(), 26.0);
}

#[test]
fn synthetic_x_instance_has_the_benchmark_shape() {
    let text = std::fs::read_to_string("tests/data/X-n101-k25.vrp").unwrap();
    let bench = parse_cvrplib(&text).unwrap();
    assert_eq!(bench.name, "X-n101-k25");
    assert_eq!(bench.dimension, 101);
    assert_eq!(bench.capacity, 206.0);
    let inst = bench.to_instance().unwrap();
    assert_eq!(inst.n_customers(), 100);
    // normalized coordinates live in the unit square, scale restores units
    for c in &inst.coords {
        assert!(c[0] >= 0.0 && c[0] <= 1.0 && c[1] >= 0.0 && c[1] <= 1.0);
    }
    let d_norm = inst.distance(0, 1) * bench.scale;
    let dx = bench.coords[0][0] - bench.coords[1][0];
    let dy = bench.coords[0][1] - bench.coords[1][1];
    assert!((d_norm - (dx * dx + dy * dy).sqrt()).abs() < 1e-9);
}
