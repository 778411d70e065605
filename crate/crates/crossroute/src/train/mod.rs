//! Policy-gradient training.
//!
//! The AM profile trains with REINFORCE against a frozen greedy-rollout
//! baseline that is replaced after a significant one-sided paired t-test at
//! the end of an epoch. The POMO profile rolls every instance out from
//! multiple forced starting nodes and baselines each rollout against the
//! instance's mean cost.

mod adam;
mod augment;
mod ttest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, GRAD_CLIP_NORM};
pub use augment::{augment_instance, SYMMETRY_TRANSFORMS};
pub use ttest::{paired_t_pvalue, student_t_cdf};

use crate::adapters::AdapterMode;
use crate::io::EpochRecord;
use crate::nn::{DenseArray, NormMode, ParamGroup, Tape};
use crate::policy::{
    rollout_batch, BackboneConfig, DecodeMode, PolicyModel, Profile, RolloutOptions,
};
use crate::vrp::{generate_with_rng, Distribution, Instance, Problem};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Optional per-group overrides; equal rates by default.
    pub lr_heads: Option<f64>,
    pub lr_adapters: Option<f64>,
    /// Significance level of the baseline-replacement t-test.
    pub significance: f64,
    pub val_size: usize,
    pub seed: u64,
    pub profile: Profile,
    pub backbone: BackboneConfig,
    pub n_customers: usize,
    pub distribution: Distribution,
    /// Forced starts per instance in POMO training; defaults to every
    /// customer.
    pub pomo_starts: Option<usize>,
}

impl TrainConfig {
    /// CPU-scale defaults: 200 batches of 64 with a 1k validation set. The
    /// published large-scale settings (2500 x 512, 10k validation, lr 1e-4)
    /// live in the preset config files.
    pub fn desk(profile: Profile, n_customers: usize, backbone: BackboneConfig) -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batches_per_epoch: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_heads: None,
            lr_adapters: None,
            significance: 0.05,
            val_size: 1000,
            seed: 0,
            profile,
            backbone,
            n_customers,
            distribution: Distribution::Uniform,
            pomo_starts: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batches_per_epoch == 0 || self.batch_size == 0 || self.val_size == 0 {
            return Err(Error::invalid_argument("training sizes must be positive"));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(Error::invalid_argument("significance must lie in (0, 1)"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid_argument("learning rate must be positive"));
        }
        self.backbone.validate()
    }
}

/// Mutable training state: the policy, its frozen baseline snapshot (AM
/// profile), optimizer state, counters and the deterministic rng streams.
pub struct TrainState {
    pub model: PolicyModel,
    pub baseline: Option<PolicyModel>,
    pub optimizer: Adam,
    pub epoch: usize,
    pub config: TrainConfig,
    pub problem: Problem,
    pub gen_rng: ChaCha8Rng,
    pub sample_rng: ChaCha8Rng,
    pub val_set: Vec<Instance>,
}

/// Statistics of one gradient step.
#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub mean_cost: f64,
    pub mean_advantage: f64,
    pub grad_norm: f64,
    pub surrogate_loss: f64,
    /// Largest per-instance advantage sum of a multi-start step; the shared
    /// mean baseline makes it vanish identically.
    pub max_abs_advantage_sum: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainInit<'a> {
    Scratch,
    FromBackbone(&'a Path),
}

impl TrainState {
    pub fn new(
        config: TrainConfig,
        problem: Problem,
        init: TrainInit,
        adapter_mode: AdapterMode,
    ) -> Result<TrainState> {
        config.validate()?;
        let model = match init {
            TrainInit::Scratch => PolicyModel::build(
                problem,
                config.profile,
                config.backbone,
                adapter_mode,
                config.seed,
            )?,
            TrainInit::FromBackbone(path) => {
                let model = crate::policy::assemble_from_backbone(problem, path, adapter_mode, config.seed)?;
                if model.config != config.backbone {
                    return Err(Error::CheckpointIncompatible(
                        "backbone checkpoint architecture differs from the training config".into(),
                    ));
                }
                model
            }
        };
        let baseline = match config.profile {
            Profile::Am => Some(model.deep_clone()?),
            Profile::Pomo => None,
        };
        let optimizer = Adam::new(config.learning_rate)
            .with_group_rates(config.lr_heads, config.lr_adapters);
        let mut val_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x76616c5f73657464); // "val_setd"
        let val_set = generate_with_rng(
            problem,
            config.n_customers,
            config.val_size,
            config.distribution,
            &mut val_rng,
        )?;
        Ok(TrainState {
            gen_rng: ChaCha8Rng::seed_from_u64(config.seed),
            sample_rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x73616d706c657221), // "sample!"
            model,
            baseline,
            optimizer,
            epoch: 0,
            config,
            problem,
        val_set,
        })
    }

    pub fn next_batch(&mut self) -> Result<Vec<Instance>> {
        generate_with_rng(
            self.problem,
            self.config.n_customers,
            self.config.batch_size,
            self.config.distribution,
            &mut self.gen_rng,
        )
    }
}

/// Greedy decode a set of instances (read-only), in sub-batches.
pub fn greedy_costs(model: &PolicyModel, instances: &[Instance]) -> Result<Vec<f64>> {
    let mut costs = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(256) {
        let refs: Vec<&Instance> = chunk.iter().collect();
        let tape = Tape::new();
        let rollout = rollout_batch(model, &tape, &refs, 1, RolloutOptions::greedy_eval())?;
        costs.extend(rollout.tours.iter().map(|t| t.cost));
    }
    Ok(costs)
}

/// One REINFORCE step with the greedy-rollout baseline (AM profile): sample a
/// tour per instance, baseline it with the frozen model's greedy cost, and
/// descend the advantage-weighted log-likelihood on trainable parameters.
pub fn reinforce_step(state: &mut TrainState, batch: &[Instance]) -> Result<StepStats> {
    if state.config.profile != Profile::Am {
        return Err(Error::invalid_argument("reinforce_step is the AM-profile update"));
    }
    let baseline = state
        .baseline
        .as_ref()
        .expect("AM profile always has a baseline model");
    let refs: Vec<&Instance> = batch.iter().collect();
    let baseline_costs = {
        let tape = Tape::new();
        let rollout = rollout_batch(baseline, &tape, &refs, 1, RolloutOptions::greedy_eval())?;
        rollout.tours.iter().map(|t| t.cost).collect::<Vec<f64>>()
    };

    let tape = Tape::new();
    let opts = RolloutOptions {
        mode: DecodeMode::Sample,
        rng: Some(&mut state.sample_rng),
        record: true,
        forced_first: None,
        teacher_actions: None,
        norm_mode: NormMode::Train { update_stats: true },
    };
    let rollout = rollout_batch(&state.model, &tape, &refs, 1, opts)?;
    let costs: Vec<f64> = rollout.tours.iter().map(|t| t.cost).collect();
    debug_assert!(rollout.tours.iter().all(|t| t.feasible));

    let b = batch.len() as f64;
    let advantages: Vec<f64> = costs.iter().zip(&baseline_costs).map(|(c, bl)| c - bl).collect();
    let weights: Vec<f64> = advantages.iter().map(|a| a / b).collect();
    let logp = rollout.logp_var.expect("recording rollout");
    let loss = tape.dot_const(logp, &DenseArray::from_vec(&[batch.len()], weights)?)?;

    state.model.store().zero_grads();
    tape.backward(loss)?;
    let grad_norm = state.optimizer.step(&state.model.store().params().to_vec());

    Ok(StepStats {
        mean_cost: mean(&costs),
        mean_advantage: mean(&advantages),
        grad_norm,
        surrogate_loss: tape.scalar_of(loss),
        max_abs_advantage_sum: 0.0,
    })
}

/// One POMO step: roll each instance out from `n_starts` forced first nodes,
/// baseline every rollout with the instance's mean cost, and average the
/// advantage-weighted log-likelihood over all `B x n` rollouts.
pub fn pomo_step(state: &mut TrainState, batch: &[Instance]) -> Result<StepStats> {
    if state.config.profile != Profile::Pomo {
        return Err(Error::invalid_argument("pomo_step is the POMO-profile update"));
    }
    if !matches!(state.problem, Problem::Tsp | Problem::Cvrp) {
        return Err(Error::invalid_argument("multi-start training covers TSP and CVRP"));
    }
    let n_customers = state.config.n_customers;
    let n_starts = state.config.pomo_starts.unwrap_or(n_customers);
    if n_starts == 0 || n_starts > n_customers {
        return Err(Error::invalid_argument(format!(
            "{n_starts} starts exceed {n_customers} customers"
        )));
    }

    let refs: Vec<&Instance> = batch.iter().collect();
    // Forced first nodes: customers are node ids 1..=n for depot problems,
    // 0..n for TSP.
    let first_node = |m: usize| if state.problem == Problem::Tsp { m } else { m + 1 };
    let forced: Vec<usize> = (0..batch.len())
        .flat_map(|_| (0..n_starts).map(first_node))
        .collect();

    let tape = Tape::new();
    let opts = RolloutOptions {
        mode: DecodeMode::Sample,
        rng: Some(&mut state.sample_rng),
        record: true,
        forced_first: Some(&forced),
        teacher_actions: None,
        norm_mode: NormMode::Train { update_stats: true },
    };
    let rollout = rollout_batch(&state.model, &tape, &refs, n_starts, opts)?;
    let costs: Vec<f64> = rollout.tours.iter().map(|t| t.cost).collect();

    let mut weights = vec![0.0; costs.len()];
    let mut advantages = vec![0.0; costs.len()];
    let mut max_abs_advantage_sum = 0.0f64;
    let denom = (batch.len() * n_starts) as f64;
    for (j, _) in batch.iter().enumerate() {
        let slice = &costs[j * n_starts..(j + 1) * n_starts];
        let shared = mean(slice);
        let mut balance = 0.0;
        for m in 0..n_starts {
            let adv = slice[m] - shared;
            advantages[j * n_starts + m] = adv;
            weights[j * n_starts + m] = adv / denom;
            balance += adv;
        }
        max_abs_advantage_sum = max_abs_advantage_sum.max(balance.abs());
    }
    let logp = rollout.logp_var.expect("recording rollout");
    let loss = tape.dot_const(logp, &DenseArray::from_vec(&[costs.len()], weights)?)?;

    state.model.store().zero_grads();
    tape.backward(loss)?;
    let grad_norm = state.optimizer.step(&state.model.store().params().to_vec());

    Ok(StepStats {
        mean_cost: mean(&costs),
        mean_advantage: mean(&advantages),
        grad_norm,
        surrogate_loss: tape.scalar_of(loss),
        max_abs_advantage_sum,
    })
}

/// End-of-epoch baseline update (AM profile): greedy-decode both models on the
/// validation set and replace the baseline when the candidate's mean is lower
/// with one-sided significance below the configured level.
pub fn maybe_replace_baseline(state: &mut TrainState) -> Result<bool> {
    if state.val_set.is_empty() {
        return Err(Error::invalid_argument("validation set is empty"));
    }
    let Some(baseline) = &state.baseline else {
        return Ok(false);
    };
    let candidate_costs = greedy_costs(&state.model, &state.val_set)?;
    let baseline_costs = greedy_costs(baseline, &state.val_set)?;
    let p = paired_t_pvalue(&candidate_costs, &baseline_costs);
    if p < state.config.significance {
        state.baseline = Some(state.model.deep_clone()?);
        Ok(true)
    } else {
        Ok(false)
    }
}

#[derive(Serialize, Deserialize)]
struct ResumeInfo {
    epochs_done: usize,
    gen_word_pos: String,
    sample_word_pos: String,
    optimizer_steps: u64,
}

/// Full training loop. Instances are generated on the fly; each epoch logs the
/// mean training cost, greedy validation cost, whether the baseline was
/// replaced, and the last gradient norm. With `out_dir` set, every epoch
/// checkpoints the model (and baseline), optimizer moments and rng positions,
/// and an interrupted run resumes from the last finished epoch.
pub fn train(
    config: TrainConfig,
    problem: Problem,
    init: TrainInit,
    adapter_mode: AdapterMode,
    out_dir: Option<&Path>,
) -> Result<(TrainState, Vec<EpochRecord>)> {
    let mut state = TrainState::new(config, problem, init, adapter_mode)?;
    let mut history: Vec<EpochRecord> = Vec::new();

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        if let Some(resumed) = try_resume(&mut state, dir)? {
            history = resumed;
        }
    }

    while state.epoch < state.config.epochs {
        let mut epoch_cost = 0.0;
        let mut last_grad_norm = 0.0;
        for _ in 0..state.config.batches_per_epoch {
            let batch = state.next_batch()?;
            let stats = match state.config.profile {
                Profile::Am => reinforce_step(&mut state, &batch)?,
                Profile::Pomo => pomo_step(&mut state, &batch)?,
            };
            epoch_cost += stats.mean_cost;
            last_grad_norm = stats.grad_norm;
        }
        let replaced = match state.config.profile {
            Profile::Am => maybe_replace_baseline(&mut state)?,
            Profile::Pomo => false,
        };
        let val_costs = greedy_costs(&state.model, &state.val_set)?;
        state.epoch += 1;
        history.push(EpochRecord {
            epoch: state.epoch,
            train_cost: epoch_cost / state.config.batches_per_epoch as f64,
            val_cost: mean(&val_costs),
            baseline_replaced: replaced,
            grad_norm: last_grad_norm,
        });
        if let Some(dir) = out_dir {
            save_progress(&state, &history, dir)?;
        }
    }
    Ok((state, history))
}

fn save_progress(state: &TrainState, history: &[EpochRecord], dir: &Path) -> Result<()> {
    let mut meta = BTreeMap::new();
    meta.insert("epoch".to_string(), state.epoch.to_string());
    meta.insert("seed".to_string(), state.config.seed.to_string());
    crate::io::save_checkpoint(&state.model, &dir.join("latest.ckpt"), &ParamGroup::ALL, meta.clone())?;
    if let Some(baseline) = &state.baseline {
        crate::io::save_checkpoint(baseline, &dir.join("baseline.ckpt"), &ParamGroup::ALL, meta)?;
    }
    std::fs::write(
        dir.join("optimizer.bin"),
        state.optimizer.state_bytes(&state.model.store().params().to_vec()),
    )?;
    let info = ResumeInfo {
        epochs_done: state.epoch,
        gen_word_pos: state.gen_rng.get_word_pos().to_string(),
        sample_word_pos: state.sample_rng.get_word_pos().to_string(),
        optimizer_steps: state.optimizer.step_count(),
    };
    std::fs::write(
        dir.join("trainstate.json"),
        serde_json::to_string_pretty(&info).map_err(|e| Error::invalid_state(e.to_string()))?,
    )?;
    crate::io::write_history(history, &dir.join("history.jsonl"))?;
    Ok(())
}

fn try_resume(state: &mut TrainState, dir: &Path) -> Result<Option<Vec<EpochRecord>>> {
    let info_path = dir.join("trainstate.json");
    if !info_path.exists() {
        return Ok(None);
    }
    let info: ResumeInfo = serde_json::from_str(&std::fs::read_to_string(&info_path)?)
        .map_err(|e| Error::CorruptCheckpoint(format!("trainstate.json: {e}")))?;
    let ckpt = crate::io::Checkpoint::read(&dir.join("latest.ckpt"))?;
    crate::io::load_into(&state.model, &ckpt, &ParamGroup::ALL)?;
    if state.baseline.is_some() {
        let bl = crate::io::Checkpoint::read(&dir.join("baseline.ckpt"))?;
        let baseline = state.baseline.as_ref().expect("checked");
        crate::io::load_into(baseline, &bl, &ParamGroup::ALL)?;
    }
    let bytes = std::fs::read(dir.join("optimizer.bin"))?;
    state
        .optimizer
        .restore_state(&state.model.store().params().to_vec(), &bytes)?;
    let parse_pos = |s: &str| -> Result<u128> {
        s.parse()
            .map_err(|_| Error::CorruptCheckpoint("bad rng position".into()))
    };
    state.gen_rng.set_word_pos(parse_pos(&info.gen_word_pos)?);
    state.sample_rng.set_word_pos(parse_pos(&info.sample_word_pos)?);
    state.epoch = info.epochs_done;
    let history = crate::io::read_history(&dir.join("history.jsonl"))?;
    Ok(Some(history))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Output directory helpers shared by the CLI.
pub fn latest_checkpoint(dir: &Path) -> PathBuf {
    dir.join("latest.ckpt")
}
