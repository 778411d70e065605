//! Tour construction: per-problem masking state and the batched rollout loop.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::forward::StepInputs;
use super::model::PolicyModel;
use crate::nn::{NormMode, Tape, Var};
use crate::vrp::{Instance, Problem, Tour};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Construction progress for one instance. Owns the masking rules: a node is
/// offered to the policy only if choosing it keeps the partial tour extensible
/// to a feasible solution.
pub struct ConstructionState<'a> {
    pub instance: &'a Instance,
    visited: Vec<bool>,
    n_visited: usize,
    actions: Vec<usize>,
    current: Option<usize>,
    first: Option<usize>,
    length: f64,
    collected: f64,
    load_used: f64,
    done: bool,
}

impl<'a> ConstructionState<'a> {
    pub fn new(instance: &'a Instance) -> ConstructionState<'a> {
        ConstructionState {
            instance,
            visited: vec![false; instance.n_nodes()],
            n_visited: 0,
            actions: Vec::new(),
            current: if instance.problem.has_depot() { Some(0) } else { None },
            first: None,
            length: 0.0,
            collected: 0.0,
            load_used: 0.0,
            done: false,
        }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn current(&self) -> Option<usize> {
        self.current
    }

    pub fn first(&self) -> Option<usize> {
        self.first
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    /// Visibility flags over all nodes. Finished rows may only "hold" at the
    /// depot, which carries probability one and zero log-probability.
    pub fn allowed(&self) -> Vec<bool> {
        let inst = self.instance;
        let n = inst.n_nodes();
        let mut allowed = vec![false; n];
        if self.done {
            allowed[0] = true;
            return allowed;
        }
        match inst.problem {
            Problem::Tsp => {
                for (j, flag) in allowed.iter_mut().enumerate() {
                    *flag = !self.visited[j];
                }
            }
            Problem::Op => {
                // ending at the depot is always within budget by induction
                allowed[0] = true;
                let cur = self.current.unwrap_or(0);
                let budget = inst.max_length();
                for j in 1..n {
                    if !self.visited[j] {
                        let extra = inst.distance(cur, j) + inst.distance(j, 0);
                        allowed[j] = self.length + extra <= budget;
                    }
                }
            }
            Problem::Pctsp => {
                let all_visited = self.n_visited == inst.n_customers();
                allowed[0] = self.collected >= inst.min_prize() - 1e-9 || all_visited;
                for j in 1..n {
                    allowed[j] = !self.visited[j];
                }
            }
            Problem::Cvrp => {
                let at_depot = self.current == Some(0);
                allowed[0] = !at_depot;
                let remaining = inst.capacity() - self.load_used;
                for j in 1..n {
                    allowed[j] = !self.visited[j] && inst.demands()[j] <= remaining + 1e-12;
                }
            }
        }
        allowed
    }

    /// Normalized remaining budget / prize-to-collect / vehicle capacity.
    pub fn dynamic_feature(&self) -> Option<f64> {
        let inst = self.instance;
        match inst.problem {
            Problem::Tsp => None,
            Problem::Op => Some((inst.max_length() - self.length) / inst.max_length()),
            Problem::Pctsp => {
                Some((inst.min_prize() - self.collected).max(0.0) / inst.min_prize())
            }
            Problem::Cvrp => Some((inst.capacity() - self.load_used) / inst.capacity()),
        }
    }

    pub fn apply(&mut self, action: usize) -> Result<()> {
        if self.done {
            if action == 0 {
                return Ok(()); // hold at depot, not part of the tour
            }
            return Err(Error::invalid_state("construction already finished"));
        }
        let inst = self.instance;
        if action >= inst.n_nodes() {
            return Err(Error::invalid_argument(format!("action {action} out of range")));
        }
        match inst.problem {
            Problem::Tsp => {
                if self.visited[action] {
                    return Err(Error::invalid_state(format!("node {action} already visited")));
                }
                self.visited[action] = true;
                self.n_visited += 1;
                if self.first.is_none() {
                    self.first = Some(action);
                }
                self.current = Some(action);
                self.actions.push(action);
                if self.n_visited == inst.n_nodes() {
                    self.done = true;
                }
            }
            Problem::Op | Problem::Pctsp => {
                let cur = self.current.unwrap_or(0);
                self.length += inst.distance(cur, action);
                if action == 0 {
                    self.done = true;
                } else {
                    self.visited[action] = true;
                    self.n_visited += 1;
                    if inst.problem == Problem::Pctsp {
                        self.collected += inst.prizes()[action];
                    }
                }
                self.current = Some(action);
                self.actions.push(action);
            }
            Problem::Cvrp => {
                if action == 0 {
                    self.load_used = 0.0;
                } else {
                    if self.visited[action] {
                        return Err(Error::invalid_state(format!("customer {action} already served")));
                    }
                    self.visited[action] = true;
                    self.n_visited += 1;
                    self.load_used += inst.demands()[action];
                }
                self.current = Some(action);
                self.actions.push(action);
                if self.n_visited == inst.n_customers() {
                    self.done = true;
                }
            }
        }
        Ok(())
    }

    /// Normalized tour node sequence for evaluation.
    pub fn into_nodes(self) -> Vec<usize> {
        match self.instance.problem {
            Problem::Tsp => self.actions,
            Problem::Op | Problem::Pctsp => {
                let mut nodes = Vec::with_capacity(self.actions.len() + 2);
                nodes.push(0);
                nodes.extend(&self.actions);
                if nodes.last() != Some(&0) {
                    nodes.push(0);
                }
                nodes
            }
            Problem::Cvrp => {
                let mut nodes = Vec::with_capacity(self.actions.len() + 2);
                nodes.push(0);
                nodes.extend(&self.actions);
                if nodes.last() != Some(&0) {
                    nodes.push(0);
                }
                nodes
            }
        }
    }
}

/// Options for one batched rollout.
pub struct RolloutOptions<'a> {
    pub mode: DecodeMode,
    pub rng: Option<&'a mut ChaCha8Rng>,
    /// Keep the tape nodes and the log-probability variable for backward.
    pub record: bool,
    /// Force each row's first action (multi-start training); the forced step
    /// carries no log-probability.
    pub forced_first: Option<&'a [usize]>,
    /// Replay a fixed action sequence per row instead of choosing.
    pub teacher_actions: Option<&'a [Vec<usize>]>,
    pub norm_mode: NormMode,
}

impl<'a> RolloutOptions<'a> {
    pub fn greedy_eval() -> RolloutOptions<'static> {
        RolloutOptions {
            mode: DecodeMode::Greedy,
            rng: None,
            record: false,
            forced_first: None,
            teacher_actions: None,
            norm_mode: NormMode::Eval,
        }
    }
}

/// Result of one batched rollout. Rows are instance-major: with `n_starts`
/// forced starts, row `i * n_starts + m` is instance `i` started from `m`.
pub struct Rollout {
    pub tours: Vec<Tour>,
    pub log_probs: Vec<f64>,
    pub step_probs: Vec<Vec<f64>>,
    pub logp_var: Option<Var>,
}

/// Construct one tour per row for `instances` tiled `n_starts` times each.
pub fn rollout_batch(
    model: &PolicyModel,
    tape: &Tape,
    instances: &[&Instance],
    n_starts: usize,
    opts: RolloutOptions,
) -> Result<Rollout> {
    if n_starts == 0 {
        return Err(Error::invalid_argument("n_starts must be positive"));
    }
    let rows = instances.len() * n_starts;
    let enc = model.encode_batch(tape, instances, opts.norm_mode)?;
    // Multi-start rollouts of a multi-instance batch need physically tiled
    // encodings; a single instance broadcasts through the decoder instead,
    // so sampling many tours shares one encoding.
    let enc = if n_starts > 1 && instances.len() > 1 {
        super::forward::Encodings {
            node_emb: tape.repeat_interleave0(enc.node_emb, n_starts)?,
            graph_emb: tape.repeat_interleave0(enc.graph_emb, n_starts)?,
        }
    } else {
        enc
    };
    let cache = model.decoder_cache(tape, &enc)?;
    let n = cache.n_nodes;

    let mut states: Vec<ConstructionState> = instances
        .iter()
        .flat_map(|inst| (0..n_starts).map(move |_| ConstructionState::new(inst)))
        .collect();
    let mut log_probs = vec![0.0; rows];
    let mut step_probs: Vec<Vec<f64>> = vec![Vec::new(); rows];
    let mut logp_var: Option<Var> = None;
    let mut teacher_cursor = vec![0usize; rows];
    let mut rng = opts.rng;

    if let Some(firsts) = opts.forced_first {
        if firsts.len() != rows {
            return Err(Error::invalid_argument("forced_first length must equal rollout rows"));
        }
        for (state, &a) in states.iter_mut().zip(firsts) {
            let allowed = state.allowed();
            if !allowed.get(a).copied().unwrap_or(false) {
                return Err(Error::invalid_argument(format!("forced start {a} is not feasible")));
            }
            state.apply(a)?;
        }
    }

    let step_mark = tape.mark();
    let is_tsp = model.problem == Problem::Tsp;
    while states.iter().any(|s| !s.is_done()) {
        let mut allowed = Vec::with_capacity(rows * n);
        for state in &states {
            allowed.extend(state.allowed());
        }
        let last: Option<Vec<usize>> = if states[0].current().is_some() {
            Some(states.iter().map(|s| s.current().expect("uniform batch progress")).collect())
        } else {
            None
        };
        let first: Option<Vec<usize>> = if is_tsp && states[0].first().is_some() {
            Some(states.iter().map(|s| s.first().expect("uniform batch progress")).collect())
        } else {
            None
        };
        let dynamic: Option<Vec<f64>> = states[0]
            .dynamic_feature()
            .map(|_| states.iter().map(|s| s.dynamic_feature().expect("uniform problem")).collect());

        let step = StepInputs {
            rows,
            last: last.as_deref(),
            first: first.as_deref(),
            dynamic,
            allowed: &allowed,
        };
        let probs = model.decode_step_batch(tape, &cache, &step)?;
        let pvals = tape.value_of(probs);

        let mut actions = Vec::with_capacity(rows);
        for (row, state) in states.iter().enumerate() {
            let row_probs = &pvals.data()[row * n..(row + 1) * n];
            let row_allowed = &allowed[row * n..(row + 1) * n];
            let action = if state.is_done() {
                0
            } else if let Some(teacher) = opts.teacher_actions {
                let t = teacher_cursor[row];
                let a = *teacher[row].get(t).ok_or_else(|| {
                    Error::invalid_argument(format!("teacher actions for row {row} exhausted"))
                })?;
                teacher_cursor[row] += 1;
                a
            } else {
                match opts.mode {
                    DecodeMode::Greedy => greedy_pick(row_probs),
                    DecodeMode::Sample => {
                        let r = rng
                            .as_deref_mut()
                            .ok_or_else(|| Error::invalid_argument("sampling needs an rng"))?;
                        sample_pick(row_probs, row_allowed, r)
                    }
                }
            };
            actions.push(action);
        }

        if opts.record {
            let chosen = tape.gather_last(probs, &actions)?;
            let lp = tape.ln(chosen);
            logp_var = Some(match logp_var {
                Some(acc) => tape.add(acc, lp)?,
                None => lp,
            });
        }
        for (row, state) in states.iter_mut().enumerate() {
            if !state.is_done() {
                let p = pvals.data()[row * n + actions[row]];
                log_probs[row] += p.ln();
                step_probs[row].push(p);
            }
            state.apply(actions[row])?;
        }
        if !opts.record {
            tape.truncate(step_mark);
        }
    }

    let tours = states
        .into_iter()
        .enumerate()
        .map(|(row, state)| {
            let inst = instances[row / n_starts];
            Tour::evaluate(inst, state.into_nodes())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Rollout { tours, log_probs, step_probs, logp_var })
}

/// First index of the maximal probability: ties break to the lowest node.
fn greedy_pick(probs: &[f64]) -> usize {
    let mut best = 0;
    let mut best_p = f64::NEG_INFINITY;
    for (j, &p) in probs.iter().enumerate() {
        if p > best_p {
            best_p = p;
            best = j;
        }
    }
    best
}

fn sample_pick(probs: &[f64], allowed: &[bool], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_allowed = 0;
    for (j, (&p, &a)) in probs.iter().zip(allowed).enumerate() {
        if !a {
            continue;
        }
        last_allowed = j;
        cum += p;
        if u < cum {
            return j;
        }
    }
    last_allowed
}
