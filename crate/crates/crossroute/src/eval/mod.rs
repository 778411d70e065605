//! Inference modes, metrics and classic sanity baselines.

mod report;
mod tsili;

pub use report::{render_report_table, EvalReport};
pub use tsili::{nearest_neighbor_tour, tsili_construct};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::Tape;
use crate::policy::{rollout_batch, DecodeMode as PolicyDecode, PolicyModel, RolloutOptions};
use crate::train::augment_instance;
use crate::vrp::{brute_force_optimal, check_feasible, tour_cost, Instance};
use crate::{Error, Result};

/// Decoding strategy of one evaluation run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    Greedy,
    /// Best of `k` sampled tours plus the greedy tour.
    Sample { k: usize },
    /// Best greedy tour across the 8 symmetric instance variants.
    Augment8Greedy,
    /// Best of `k` samples plus greedy on each of the 8 variants.
    Augment8Sample { k: usize },
}

impl EvalMode {
    pub fn name(&self) -> String {
        match self {
            EvalMode::Greedy => "greedy".into(),
            EvalMode::Sample { k } => format!("sample{k}"),
            EvalMode::Augment8Greedy => "aug8-greedy".into(),
            EvalMode::Augment8Sample { k } => format!("aug8-sample{k}"),
        }
    }

    /// The published sampling size.
    pub fn sample1280() -> EvalMode {
        EvalMode::Sample { k: 1280 }
    }
}

/// Best tour found for one instance under some decode mode.
#[derive(Clone, Debug)]
pub struct InstanceResult {
    pub cost: f64,
    pub nodes: Vec<usize>,
}

fn greedy_on(model: &PolicyModel, instance: &Instance) -> Result<(f64, Vec<usize>)> {
    let tape = Tape::new();
    let mut rollout = rollout_batch(model, &tape, &[instance], 1, RolloutOptions::greedy_eval())?;
    let t = rollout.tours.remove(0);
    Ok((t.cost, t.nodes))
}

/// Sample `k` tours of `instance` in one batched rollout (shared encoding),
/// returning the best by cost; the tours are evaluated on `score_against`.
fn best_of_samples(
    model: &PolicyModel,
    instance: &Instance,
    score_against: &Instance,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<usize>)> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    // One encoding broadcasts across the whole sample batch; chunk so the
    // per-step arrays stay modest at large n.
    let chunk = k.min(1024).max(1);
    let mut remaining = k;
    while remaining > 0 {
        let s = remaining.min(chunk);
        remaining -= s;
        let tape = Tape::new();
        let opts = RolloutOptions {
            mode: PolicyDecode::Sample,
            rng: Some(rng),
            record: false,
            forced_first: None,
            teacher_actions: None,
            norm_mode: crate::nn::NormMode::Eval,
        };
        let rollout = rollout_batch(model, &tape, &[instance], s, opts)?;
        for t in rollout.tours {
            let cost = tour_cost(score_against, &t.nodes)?;
            if best.as_ref().map_or(true, |(b, _)| cost < *b) {
                best = Some((cost, t.nodes));
            }
        }
    }
    Ok(best.expect("k >= 1"))
}

fn evaluate_instance(
    model: &PolicyModel,
    instance: &Instance,
    mode: EvalMode,
    rng: &mut ChaCha8Rng,
) -> Result<InstanceResult> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    let consider = |cand: (f64, Vec<usize>), best: &mut Option<(f64, Vec<usize>)>| {
        if best.as_ref().map_or(true, |(b, _)| cand.0 < *b) {
            *best = Some(cand);
        }
    };
    match mode {
        EvalMode::Greedy => {
            consider(greedy_on(model, instance)?, &mut best);
        }
        EvalMode::Sample { k } => {
            if k == 0 {
                return Err(Error::invalid_argument("sample count must be positive"));
            }
            consider(greedy_on(model, instance)?, &mut best);
            consider(best_of_samples(model, instance, instance, k, rng)?, &mut best);
        }
        EvalMode::Augment8Greedy => {
            // Node indices are untouched by the coordinate transforms, so a
            // variant's tour evaluates directly on the original instance.
            for variant in augment_instance(instance) {
                let (_, nodes) = greedy_on(model, &variant)?;
                let cost = tour_cost(instance, &nodes)?;
                consider((cost, nodes), &mut best);
            }
        }
        EvalMode::Augment8Sample { k } => {
            for variant in augment_instance(instance) {
                let (_, nodes) = greedy_on(model, &variant)?;
                let cost = tour_cost(instance, &nodes)?;
                consider((cost, nodes), &mut best);
                consider(best_of_samples(model, &variant, instance, k, rng)?, &mut best);
            }
        }
    }
    let (cost, nodes) = best.expect("at least one decode");
    let (feasible, violation) = check_feasible(instance, &nodes);
    if !feasible {
        return Err(Error::invalid_state(format!(
            "decoded tour re-verified infeasible: {violation:?}"
        )));
    }
    Ok(InstanceResult { cost, nodes })
}

/// Best tours per instance under a decode mode, deterministic given the seed.
pub fn evaluate_tours(
    model: &PolicyModel,
    instances: &[Instance],
    mode: EvalMode,
    seed: u64,
) -> Result<Vec<InstanceResult>> {
    if instances.is_empty() {
        return Err(Error::invalid_argument("evaluate needs at least one instance"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    instances
        .iter()
        .map(|inst| evaluate_instance(model, inst, mode, &mut rng))
        .collect()
}

/// Evaluate a model over a set of instances. Deterministic given the seed
/// (wall time aside). Gaps are computed when references are supplied.
pub fn evaluate(
    model: &PolicyModel,
    instances: &[Instance],
    mode: EvalMode,
    references: Option<&[f64]>,
    seed: u64,
) -> Result<EvalReport> {
    if let Some(refs) = references {
        if refs.len() != instances.len() {
            return Err(Error::invalid_argument(format!(
                "{} references for {} instances",
                refs.len(),
                instances.len()
            )));
        }
    }
    let start = Instant::now();
    let per_instance = evaluate_tours(model, instances, mode, seed)?;
    let wall_time = start.elapsed().as_secs_f64();
    let (total, trainable) = count_params(model);
    let problem = instances[0].problem;
    Ok(EvalReport::new(problem, mode.name(), per_instance, references, wall_time, total, trainable))
}

/// Exact parameter counts: (total, trainable).
pub fn count_params(model: &PolicyModel) -> (usize, usize) {
    model.param_counts()
}

/// Where gap references come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceSource<'a> {
    /// Exhaustive optimum; only for desk-size instances.
    Oracle,
    /// Externally supplied best-known values, one per line.
    File(&'a std::path::Path),
}

/// Reference costs for gap computation.
pub fn reference_costs(instances: &[Instance], source: ReferenceSource) -> Result<Vec<f64>> {
    match source {
        ReferenceSource::Oracle => instances
            .iter()
            .map(|inst| brute_force_optimal(inst).map(|t| t.cost))
            .collect(),
        ReferenceSource::File(path) => {
            let text = std::fs::read_to_string(path)?;
            let values: Vec<f64> = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    // either "<value>" or "<name> <value>"
                    let tok = l.split_whitespace().last().expect("nonempty line");
                    tok.parse::<f64>()
                        .map_err(|_| Error::parse(format!("bad reference value {tok:?}"), Some(i + 1)))
                })
                .collect::<Result<_>>()?;
            if values.len() != instances.len() {
                return Err(Error::invalid_argument(format!(
                    "{} references for {} instances",
                    values.len(),
                    instances.len()
                )));
            }
            Ok(values)
        }
    }
}

/// Named best-known values ("<name> <value>" lines) for benchmark files.
pub fn named_references(path: &std::path::Path) -> Result<std::collections::BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = std::collections::BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let name = it
            .next()
            .ok_or_else(|| Error::parse("missing name", Some(i + 1)))?;
        let value: f64 = it
            .next()
            .ok_or_else(|| Error::parse("missing value", Some(i + 1)))?
            .parse()
            .map_err(|_| Error::parse("bad value", Some(i + 1)))?;
        out.insert(name.to_string(), value);
    }
    Ok(out)
}
