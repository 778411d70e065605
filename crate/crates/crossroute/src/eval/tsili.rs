//! Classic construction baselines: the randomized orienteering heuristic with
//! desirability proportional to (prize/distance)^4, and nearest-neighbor TSP.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::policy::DecodeMode;
use crate::vrp::{Instance, Problem, Tour};
use crate::{Error, Result};

/// Randomized constructive heuristic for the orienteering problem: from the
/// current node, candidates that fit the remaining budget (including the
/// return leg) are ranked by `(prize / distance)^4`; greedy picks the best,
/// sampling draws proportionally. Always returns a feasible tour.
pub fn tsili_construct(instance: &Instance, mode: DecodeMode, rng: &mut ChaCha8Rng) -> Result<Tour> {
    if instance.problem != Problem::Op {
        return Err(Error::invalid_argument("this heuristic is specific to OP"));
    }
    let n = instance.n_nodes();
    let prizes = instance.prizes();
    let budget = instance.max_length();
    let mut visited = vec![false; n];
    let mut nodes = vec![0usize];
    let mut current = 0usize;
    let mut length = 0.0;

    loop {
        let mut candidates: Vec<(usize, f64)> = Vec::new();
        for j in 1..n {
            if visited[j] {
                continue;
            }
            let out = instance.distance(current, j);
            if length + out + instance.distance(j, 0) <= budget {
                let desirability = (prizes[j] / out.max(1e-9)).powi(4);
                candidates.push((j, desirability));
            }
        }
        if candidates.is_empty() {
            break;
        }
        let pick = match mode {
            DecodeMode::Greedy => {
                candidates
                    .iter()
                    .fold((candidates[0].0, f64::NEG_INFINITY), |acc, &(j, w)| {
                        if w > acc.1 {
                            (j, w)
                        } else {
                            acc
                        }
                    })
                    .0
            }
            DecodeMode::Sample => {
                let total: f64 = candidates.iter().map(|(_, w)| w).sum();
                let mut u: f64 = rng.random::<f64>() * total;
                let mut chosen = candidates[candidates.len() - 1].0;
                for &(j, w) in &candidates {
                    if u < w {
                        chosen = j;
                        break;
                    }
                    u -= w;
                }
                chosen
            }
        };
        visited[pick] = true;
        length += instance.distance(current, pick);
        current = pick;
        nodes.push(pick);
    }
    nodes.push(0);
    Tour::evaluate(instance, nodes)
}

/// Nearest-neighbor TSP constructor starting at node 0 (sanity anchor).
pub fn nearest_neighbor_tour(instance: &Instance) -> Result<Tour> {
    if instance.problem != Problem::Tsp {
        return Err(Error::invalid_argument("nearest neighbor covers TSP"));
    }
    let n = instance.n_nodes();
    let mut visited = vec![false; n];
    let mut nodes = vec![0usize];
    visited[0] = true;
    let mut current = 0usize;
    for _ in 1..n {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for j in 0..n {
            if !visited[j] {
                let d = instance.distance(current, j);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
        }
        visited[best] = true;
        nodes.push(best);
        current = best;
    }
    Tour::evaluate(instance, nodes)
}
