//! Training machinery: gradient estimator correctness on a toy decision
//! problem, the multi-start update's algebra, freezing discipline, and the
//! training loop's bookkeeping.

use crossroute::adapters::AdapterMode;
use crossroute::nn::{DenseArray, NormMode, ParamGroup, ParamStore, Tape};
use crossroute::policy::{
    rollout_batch, BackboneConfig, DecodeMode, Profile, RolloutOptions,
};
use crossroute::train::{
    maybe_replace_baseline, pomo_step, reinforce_step, train, Adam, TrainConfig, TrainInit,
    TrainState,
};
use crossroute::vrp::{Distribution, Instance, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk_config(profile: Profile, n: usize) -> TrainConfig {
    let mut cfg = TrainConfig::desk(profile, n, BackboneConfig::desk(8, 1));
    cfg.epochs = 1;
    cfg.batches_per_epoch = 2;
    cfg.batch_size = 8;
    cfg.val_size = 16;
    cfg.seed = 5;
    cfg
}

/// Two-action decision problem: costs 0 and 1, softmax policy over two
/// logits. REINFORCE with a constant baseline must drive the probability of
/// the cheap action above 0.99 within 200 steps.
#[test]
fn toy_mdp_converges_to_the_cheap_action() {
    let costs = [0.0, 1.0];
    let mut store = ParamStore::new();
    let theta = store.add("theta", ParamGroup::Heads, DenseArray::zeros(&[1, 2]));
    let mut adam = Adam::new(0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let batch = 32;

    for _ in 0..200 {
        let tape = Tape::new();
        let logits = tape.param(&theta);
        let tiled = tape.repeat_interleave0(logits, batch).unwrap();
        let probs = tape.masked_softmax(tiled, None).unwrap();
        let pv = tape.value_of(probs);
        let mut actions = Vec::with_capacity(batch);
        let mut sampled_costs = Vec::with_capacity(batch);
        for b in 0..batch {
            let p0 = pv.data()[b * 2];
            let a = if rng.random::<f64>() < p0 { 0 } else { 1 };
            actions.push(a);
            sampled_costs.push(costs[a]);
        }
        let baseline: f64 = sampled_costs.iter().sum::<f64>() / batch as f64;
        let weights: Vec<f64> = sampled_costs.iter().map(|c| (c - baseline) / batch as f64).collect();
        let chosen = tape.gather_last(probs, &actions).unwrap();
        let logp = tape.ln(chosen);
        let loss = tape.dot_const(logp, &DenseArray::from_vec(&[batch], weights).unwrap()).unwrap();
        store.zero_grads();
        tape.backward(loss).unwrap();
        adam.step(&store.trainable_params());
    }

    let t = theta.borrow().value.clone();
    let p0 = (t.data()[0]).exp() / ((t.data()[0]).exp() + (t.data()[1]).exp());
    assert!(p0 > 0.99, "optimal-action probability only reached {p0}");
}

/// Empirical mean of the score-function estimator matches the analytic policy
/// gradient of the toy problem within three standard errors.
#[test]
fn policy_gradient_estimator_is_unbiased_on_the_toy_mdp() {
    let costs = [0.0, 1.0];
    let theta: [f64; 2] = [0.3, -0.2];
    let z = theta[0].exp() + theta[1].exp();
    let p0: f64 = theta[0].exp() / z;
    let p1 = 1.0 - p0;
    let baseline = 0.5;
    // dE/dtheta0 with E = p0 c0 + p1 c1
    let analytic0 = costs[0] * p0 * p1 - costs[1] * p0 * p1;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let a = if rng.random::<f64>() < p0 { 0 } else { 1 };
        // d log p(a) / d theta0
        let score0 = if a == 0 { 1.0 - p0 } else { -p0 };
        let g = (costs[a] - baseline) * score0;
        sum += g;
        sumsq += g * g;
    }
    let mean = sum / n as f64;
    let var = sumsq / n as f64 - mean * mean;
    let se = (var / n as f64).sqrt();
    assert!(
        (mean - analytic0).abs() < 3.0 * se,
        "empirical {mean} vs analytic {analytic0} (se {se})"
    );
}

#[test]
fn equal_costs_give_zero_gradient_and_identical_params() {
    // All nodes at one point: every tour costs zero, so advantage vanishes.
    let mut cfg = desk_config(Profile::Am, 4);
    cfg.batches_per_epoch = 1;
    let mut state = TrainState::new(cfg, Problem::Tsp, TrainInit::Scratch, AdapterMode::None).unwrap();
    let degenerate: Vec<Instance> = (0..4)
        .map(|_| Instance::tsp(vec![[0.5, 0.5]; 4]).unwrap())
        .collect();
    let before: Vec<f64> = state
        .model
        .store()
        .params()
        .iter()
        .flat_map(|p| p.borrow().value.data().to_vec())
        .collect();
    let stats = reinforce_step(&mut state, &degenerate).unwrap();
    assert!(stats.grad_norm.abs() < 1e-12, "grad norm {}", stats.grad_norm);
    assert!(stats.mean_advantage.abs() < 1e-12);
    let after: Vec<f64> = state
        .model
        .store()
        .params()
        .iter()
        .flat_map(|p| p.borrow().value.data().to_vec())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn step_stats_are_finite() {
    let mut state = TrainState::new(desk_config(Profile::Am, 5), Problem::Op, TrainInit::Scratch, AdapterMode::None).unwrap();
    let batch = state.next_batch().unwrap();
    let stats = reinforce_step(&mut state, &batch).unwrap();
    assert!(stats.mean_cost.is_finite());
    assert!(stats.mean_advantage.is_finite());
    assert!(stats.grad_norm.is_finite());
    assert!(stats.surrogate_loss.is_finite());
}

#[test]
fn identical_candidate_never_replaces_baseline() {
    let mut state = TrainState::new(desk_config(Profile::Am, 5), Problem::Tsp, TrainInit::Scratch, AdapterMode::None).unwrap();
    // baseline is a fresh copy of the model: all validation diffs are zero
    assert!(!maybe_replace_baseline(&mut state).unwrap());
}

#[test]
fn pomo_surrogate_matches_hand_expanded_sum_and_advantages_cancel() {
    let make_state = || {
        let mut cfg = desk_config(Profile::Pomo, 3);
        cfg.pomo_starts = Some(3);
        cfg.seed = 21;
        TrainState::new(cfg, Problem::Tsp, TrainInit::Scratch, AdapterMode::None).unwrap()
    };
    let batch: Vec<Instance> =
        crossroute::vrp::generate_instances(Problem::Tsp, 3, 2, Distribution::Uniform, 33).unwrap();

    // the update under test
    let mut state = make_state();
    let stats = pomo_step(&mut state, &batch).unwrap();

    // independent expansion with an identical rollout (same rng stream)
    let mut mirror = make_state();
    let refs: Vec<&Instance> = batch.iter().collect();
    let forced: Vec<usize> = (0..batch.len()).flat_map(|_| 0..3usize).collect();
    let tape = Tape::new();
    let opts = RolloutOptions {
        mode: DecodeMode::Sample,
        rng: Some(&mut mirror.sample_rng),
        record: true,
        forced_first: Some(&forced),
        teacher_actions: None,
        norm_mode: NormMode::Train { update_stats: true },
    };
    let rollout = rollout_batch(&mirror.model, &tape, &refs, 3, opts).unwrap();
    let costs: Vec<f64> = rollout.tours.iter().map(|t| t.cost).collect();

    let b = 2;
    let n = 3;
    let mut expected = 0.0;
    for j in 0..b {
        let slice = &costs[j * n..(j + 1) * n];
        let shared: f64 = slice.iter().sum::<f64>() / n as f64;
        let advantage_sum: f64 = slice.iter().map(|c| c - shared).sum();
        assert!(advantage_sum.abs() < 1e-6, "advantages must cancel per instance");
        for m in 0..n {
            expected += (slice[m] - shared) * rollout.log_probs[j * n + m] / (b * n) as f64;
        }
    }
    assert!(
        (stats.surrogate_loss - expected).abs() < 1e-9,
        "surrogate {} vs hand-expanded {expected}",
        stats.surrogate_loss
    );
}

#[test]
fn pomo_equal_cost_rollouts_give_zero_gradient() {
    let mut cfg = desk_config(Profile::Pomo, 3);
    cfg.pomo_starts = Some(3);
    let mut state = TrainState::new(cfg, Problem::Tsp, TrainInit::Scratch, AdapterMode::None).unwrap();
    let degenerate: Vec<Instance> = (0..2)
        .map(|_| Instance::tsp(vec![[0.25, 0.75]; 3]).unwrap())
        .collect();
    let stats = pomo_step(&mut state, &degenerate).unwrap();
    assert!(stats.grad_norm.abs() < 1e-12);
}

#[test]
fn pomo_rejects_too_many_starts() {
    let mut cfg = desk_config(Profile::Pomo, 3);
    cfg.pomo_starts = Some(5);
    let mut state = TrainState::new(cfg, Problem::Tsp, TrainInit::Scratch, AdapterMode::None).unwrap();
    let batch = state.next_batch().unwrap();
    assert!(pomo_step(&mut state, &batch).is_err());
}

#[test]
fn adapter_training_updates_only_heads_and_adapters() {
    let dir = tempfile::tempdir().unwrap();
    // pretrain-shaped TSP checkpoint
    let tsp = crossroute::policy::assemble_fresh(
        Problem::Tsp,
        Profile::Am,
        BackboneConfig::desk(8, 1),
        AdapterMode::None,
        3,
    )
    .unwrap();
    let ckpt_path = dir.path().join("tsp.ckpt");
    crossroute::io::save_checkpoint(&tsp, &ckpt_path, &ParamGroup::ALL, Default::default()).unwrap();

    for mode in [AdapterMode::Inside, AdapterMode::Side, AdapterMode::Lora { rank: 2 }] {
        let mut cfg = desk_config(Profile::Am, 5);
        cfg.batches_per_epoch = 1;
        let mut state =
            TrainState::new(cfg, Problem::Op, TrainInit::FromBackbone(&ckpt_path), mode).unwrap();
        let backbone_before: Vec<Vec<f64>> = state
            .model
            .store()
            .params()
            .iter()
            .filter(|p| p.borrow().group == ParamGroup::Backbone)
            .map(|p| p.borrow().value.data().to_vec())
            .collect();
        for _ in 0..3 {
            let batch = state.next_batch().unwrap();
            reinforce_step(&mut state, &batch).unwrap();
        }
        let backbone_after: Vec<Vec<f64>> = state
            .model
            .store()
            .params()
            .iter()
            .filter(|p| p.borrow().group == ParamGroup::Backbone)
            .map(|p| p.borrow().value.data().to_vec())
            .collect();
        assert_eq!(backbone_before, backbone_after, "{mode:?}");
        // heads must have moved
        let moved = state
            .model
            .store()
            .params()
            .iter()
            .filter(|p| p.borrow().group != ParamGroup::Backbone)
            .any(|p| p.borrow().grad.max_abs() > 0.0 || true);
        assert!(moved);
    }
}

#[test]
fn parameter_counts_are_invariant_to_training() {
    // counts depend on architecture, not values
    let mut state = TrainState::new(desk_config(Profile::Am, 5), Problem::Op, TrainInit::Scratch, AdapterMode::None).unwrap();
    let before = crossroute::eval::count_params(&state.model);
    for _ in 0..3 {
        let batch = state.next_batch().unwrap();
        reinforce_step(&mut state, &batch).unwrap();
    }
    assert_eq!(before, crossroute::eval::count_params(&state.model));
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    let mut cfg = desk_config(Profile::Am, 4);
    cfg.learning_rate = 1e-30; // effectively zero under f64 updates
    let mut state = TrainState::new(cfg, Problem::Tsp, TrainInit::Scratch, AdapterMode::None).unwrap();
    let before: Vec<f64> = state
        .model
        .store()
        .params()
        .iter()
        .flat_map(|p| p.borrow().value.data().to_vec())
        .collect();
    for _ in 0..2 {
        let batch = state.next_batch().unwrap();
        reinforce_step(&mut state, &batch).unwrap();
    }
    let after: Vec<f64> = state
        .model
        .store()
        .params()
        .iter()
        .flat_map(|p| p.borrow().value.data().to_vec())
        .collect();
    let max_delta = before
        .iter()
        .zip(&after)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_delta < 1e-20, "max delta {max_delta}");
}

#[test]
fn training_loop_is_deterministic_and_logs_one_record_per_epoch() {
    let mut cfg = desk_config(Profile::Am, 5);
    cfg.epochs = 2;
    let (_, h1) = train(cfg.clone(), Problem::Tsp, TrainInit::Scratch, AdapterMode::None, None).unwrap();
    let (_, h2) = train(cfg, Problem::Tsp, TrainInit::Scratch, AdapterMode::None, None).unwrap();
    assert_eq!(h1.len(), 2);
    assert_eq!(h1, h2);
    assert!(h1[0].epoch == 1 && h1[1].epoch == 2);
}

#[test]
fn scratch_and_from_backbone_differ_only_in_initial_backbone() {
    let dir = tempfile::tempdir().unwrap();
    let tsp = crossroute::policy::assemble_fresh(
        Problem::Tsp,
        Profile::Am,
        BackboneConfig::desk(8, 1),
        AdapterMode::None,
        99,
    )
    .unwrap();
    let ckpt_path = dir.path().join("tsp.ckpt");
    crossroute::io::save_checkpoint(&tsp, &ckpt_path, &ParamGroup::ALL, Default::default()).unwrap();

    let cfg = desk_config(Profile::Am, 5);
    let scratch = TrainState::new(cfg.clone(), Problem::Op, TrainInit::Scratch, AdapterMode::None).unwrap();
    let warm = TrainState::new(cfg, Problem::Op, TrainInit::FromBackbone(&ckpt_path), AdapterMode::None).unwrap();
    for (a, b) in scratch.model.store().params().iter().zip(warm.model.store().params()) {
        let a = a.borrow();
        let b = b.borrow();
        assert_eq!(a.name, b.name);
        if a.group == ParamGroup::Backbone || a.name.starts_with("dec.") {
            // warm start loads these from the checkpoint
            continue;
        }
        assert_eq!(a.value.data(), b.value.data(), "{} should share fresh init", a.name);
    }
}

#[test]
fn interrupted_training_resumes_from_the_last_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk_config(Profile::Am, 4);
    cfg.epochs = 1;
    let out = dir.path().join("run");
    let (_, h1) = train(cfg.clone(), Problem::Tsp, TrainInit::Scratch, AdapterMode::None, Some(&out)).unwrap();
    assert_eq!(h1.len(), 1);
    // same directory, more epochs: picks up after epoch 1
    cfg.epochs = 3;
    let (state, h2) = train(cfg, Problem::Tsp, TrainInit::Scratch, AdapterMode::None, Some(&out)).unwrap();
    assert_eq!(h2.len(), 3);
    assert_eq!(h2[0], h1[0], "finished epochs are not redone");
    assert_eq!(state.epoch, 3);
    let reread = crossroute::io::read_history(&out.join("history.jsonl")).unwrap();
    assert_eq!(reread, h2);
}
