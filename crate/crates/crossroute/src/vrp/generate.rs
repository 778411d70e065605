//! Seeded random instance generation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use super::instance::{Instance, Problem};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distribution {
    Uniform,
    Gaussian,
}

impl Distribution {
    pub fn name(&self) -> &'static str {
        match self {
            Distribution::Uniform => "uniform",
            Distribution::Gaussian => "gaussian",
        }
    }

    pub fn from_name(s: &str) -> Option<Distribution> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Some(Distribution::Uniform),
            "gaussian" => Some(Distribution::Gaussian),
            _ => None,
        }
    }
}

/// OP length budget by instance size (2.0 / 3.0 / 4.0 for the 20 / 50 / 100
/// benchmark sizes; smaller sizes share the n=20 budget).
pub fn op_max_length(n_customers: usize) -> f64 {
    match n_customers {
        0..=20 => 2.0,
        21..=50 => 3.0,
        _ => 4.0,
    }
}

/// PCTSP penalty scale constant by size.
pub fn pctsp_penalty_k(n_customers: usize) -> f64 {
    match n_customers {
        0..=20 => 2.0,
        21..=50 => 3.0,
        _ => 4.0,
    }
}

/// CVRP vehicle capacity by size.
pub fn cvrp_capacity(n_customers: usize) -> f64 {
    match n_customers {
        0..=20 => 30.0,
        21..=50 => 40.0,
        _ => 50.0,
    }
}

pub const PCTSP_MIN_PRIZE: f64 = 1.0;

/// Generate `count` instances, deterministic given the seed.
///
/// Uniform coordinates are drawn from the unit square. Gaussian coordinates
/// are drawn from N(0,1) and min-max rescaled into the unit square per
/// instance so length budgets and pretrained coordinate embeddings stay
/// meaningful. OP prizes are all 1; PCTSP prizes/penalties follow uniform
/// distributions with the prize floor kept attainable; CVRP demands are
/// integers from 1..=9.
pub fn generate_instances(
    problem: Problem,
    n_customers: usize,
    count: usize,
    distribution: Distribution,
    seed: u64,
) -> Result<Vec<Instance>> {
    if n_customers < 1 {
        return Err(Error::invalid_argument("n_customers must be >= 1"));
    }
    if count < 1 {
        return Err(Error::invalid_argument("count must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with_rng(problem, n_customers, count, distribution, &mut rng)
}

/// Draw instances from an existing stream (on-the-fly training batches).
pub fn generate_with_rng(
    problem: Problem,
    n_customers: usize,
    count: usize,
    distribution: Distribution,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Instance>> {
    if n_customers < 1 {
        return Err(Error::invalid_argument("n_customers must be >= 1"));
    }
    if count < 1 {
        return Err(Error::invalid_argument("count must be >= 1"));
    }
    (0..count)
        .map(|_| generate_one(problem, n_customers, distribution, rng))
        .collect()
}

fn draw_coords(n: usize, distribution: Distribution, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    match distribution {
        Distribution::Uniform => (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect(),
        Distribution::Gaussian => {
            let normal = Normal::new(0.0, 1.0).expect("valid parameters");
            let mut coords: Vec<[f64; 2]> =
                (0..n).map(|_| [normal.sample(rng), normal.sample(rng)]).collect();
            for axis in 0..2 {
                let min = coords.iter().map(|c| c[axis]).fold(f64::INFINITY, f64::min);
                let max = coords.iter().map(|c| c[axis]).fold(f64::NEG_INFINITY, f64::max);
                let range = max - min;
                for c in coords.iter_mut() {
                    c[axis] = if range > 1e-12 { (c[axis] - min) / range } else { 0.5 };
                }
            }
            coords
        }
    }
}

fn generate_one(
    problem: Problem,
    n: usize,
    distribution: Distribution,
    rng: &mut ChaCha8Rng,
) -> Result<Instance> {
    let n_nodes = if problem.has_depot() { n + 1 } else { n };
    let coords = draw_coords(n_nodes, distribution, rng);
    match problem {
        Problem::Tsp => Instance::tsp(coords),
        Problem::Op => Instance::op(coords, vec![1.0; n], op_max_length(n)),
        Problem::Pctsp => {
            let mut prizes: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 / n as f64).collect();
            let k = pctsp_penalty_k(n);
            let penalties: Vec<f64> =
                (0..n).map(|_| rng.random::<f64>() * 3.0 * k / n as f64).collect();
            // Keep the prize floor attainable: rescale in the rare draw where
            // the total prize falls short of it.
            let total: f64 = prizes.iter().sum();
            if total < PCTSP_MIN_PRIZE {
                let factor = if total > 0.0 {
                    PCTSP_MIN_PRIZE * (1.0 + 1e-9) / total
                } else {
                    0.0
                };
                if factor > 0.0 {
                    prizes.iter_mut().for_each(|p| *p *= factor);
                } else {
                    prizes = vec![PCTSP_MIN_PRIZE / n as f64 * 1.001; n];
                }
            }
            Instance::pctsp(coords, prizes, penalties, PCTSP_MIN_PRIZE)
        }
        Problem::Cvrp => {
            let demands: Vec<f64> = (0..n).map(|_| rng.random_range(1..=9) as f64).collect();
            Instance::cvrp(coords, demands, cvrp_capacity(n))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_instances_have_unit_prizes_and_depot() {
        let batch = generate_instances(Problem::Op, 20, 1, Distribution::Uniform, 7).unwrap();
        let inst = &batch[0];
        assert_eq!(inst.coords.len(), 21);
        let prizes = inst.prizes();
        assert_eq!(prizes[0], 0.0);
        assert_eq!(&prizes[1..], &[1.0; 20]);
        assert_eq!(inst.max_length(), 2.0);
    }

    #[test]
    fn seeded_generation_is_bitwise_identical() {
        for problem in [Problem::Tsp, Problem::Op, Problem::Pctsp, Problem::Cvrp] {
            let a = generate_instances(problem, 12, 3, Distribution::Uniform, 99).unwrap();
            let b = generate_instances(problem, 12, 3, Distribution::Uniform, 99).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn uniform_coordinates_stay_in_unit_square() {
        let batch = generate_instances(Problem::Tsp, 10, 5, Distribution::Uniform, 3).unwrap();
        for inst in &batch {
            for c in &inst.coords {
                assert!(c[0] >= 0.0 && c[0] < 1.0 && c[1] >= 0.0 && c[1] < 1.0);
            }
        }
    }

    #[test]
    fn gaussian_coordinates_rescale_into_unit_square() {
        let batch = generate_instances(Problem::Tsp, 30, 4, Distribution::Gaussian, 11).unwrap();
        for inst in &batch {
            let mut saw_zero = false;
            let mut saw_one = false;
            for c in &inst.coords {
                assert!(c[0] >= 0.0 && c[0] <= 1.0 && c[1] >= 0.0 && c[1] <= 1.0);
                saw_zero |= c[0] == 0.0 || c[1] == 0.0;
                saw_one |= c[0] == 1.0 || c[1] == 1.0;
            }
            // min-max normalization touches both edges
            assert!(saw_zero && saw_one);
        }
    }

    #[test]
    fn pctsp_prize_floor_is_attainable() {
        for seed in 0..50 {
            let batch = generate_instances(Problem::Pctsp, 7, 4, Distribution::Uniform, seed).unwrap();
            for inst in &batch {
                let total: f64 = inst.prizes().iter().sum();
                assert!(total >= inst.min_prize(), "seed {seed}: total {total}");
                assert_eq!(inst.penalties()[0], 0.0);
            }
        }
    }

    #[test]
    fn cvrp_demands_are_small_integers() {
        let batch = generate_instances(Problem::Cvrp, 20, 3, Distribution::Uniform, 5).unwrap();
        for inst in &batch {
            assert_eq!(inst.capacity(), 30.0);
            assert_eq!(inst.demands()[0], 0.0);
            for &d in &inst.demands()[1..] {
                assert!(d >= 1.0 && d <= 9.0 && d.fract() == 0.0);
            }
        }
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        assert!(generate_instances(Problem::Tsp, 0, 1, Distribution::Uniform, 0).is_err());
        assert!(generate_instances(Problem::Tsp, 5, 0, Distribution::Uniform, 0).is_err());
    }
}
