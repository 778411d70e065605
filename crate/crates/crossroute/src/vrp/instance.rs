//! Problem kinds and instance data.

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Problem {
    Tsp,
    Op,
    Pctsp,
    Cvrp,
}

impl Problem {
    /// TSP has no depot; the other three reserve node 0 for it.
    pub fn has_depot(&self) -> bool {
        !matches!(self, Problem::Tsp)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Problem::Tsp => "tsp",
            Problem::Op => "op",
            Problem::Pctsp => "pctsp",
            Problem::Cvrp => "cvrp",
        }
    }

    pub fn from_name(s: &str) -> Option<Problem> {
        match s.to_ascii_lowercase().as_str() {
            "tsp" => Some(Problem::Tsp),
            "op" => Some(Problem::Op),
            "pctsp" => Some(Problem::Pctsp),
            "cvrp" => Some(Problem::Cvrp),
            _ => None,
        }
    }
}

/// One routing problem instance.
///
/// `coords` holds the depot at index 0 when the problem has one. Attribute
/// vectors (`prizes`, `penalties`, `demands`) are indexed like `coords`, with
/// the depot entry fixed at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub problem: Problem,
    pub coords: Vec<[f64; 2]>,
    pub prizes: Option<Vec<f64>>,
    pub penalties: Option<Vec<f64>>,
    pub demands: Option<Vec<f64>>,
    pub capacity: Option<f64>,
    pub max_length: Option<f64>,
    pub min_prize: Option<f64>,
}

impl Instance {
    pub fn n_customers(&self) -> usize {
        if self.problem.has_depot() {
            self.coords.len() - 1
        } else {
            self.coords.len()
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let [ax, ay] = self.coords[a];
        let [bx, by] = self.coords[b];
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }

    pub fn prizes(&self) -> &[f64] {
        self.prizes.as_deref().expect("problem has prizes")
    }

    pub fn penalties(&self) -> &[f64] {
        self.penalties.as_deref().expect("problem has penalties")
    }

    pub fn demands(&self) -> &[f64] {
        self.demands.as_deref().expect("problem has demands")
    }

    pub fn capacity(&self) -> f64 {
        self.capacity.expect("problem has capacity")
    }

    pub fn max_length(&self) -> f64 {
        self.max_length.expect("problem has max_length")
    }

    pub fn min_prize(&self) -> f64 {
        self.min_prize.expect("problem has min_prize")
    }

    pub fn tsp(coords: Vec<[f64; 2]>) -> Result<Instance> {
        if coords.is_empty() {
            return Err(Error::invalid_argument("TSP needs at least one node"));
        }
        Ok(Instance {
            problem: Problem::Tsp,
            coords,
            prizes: None,
            penalties: None,
            demands: None,
            capacity: None,
            max_length: None,
            min_prize: None,
        })
    }

    /// `customer_prizes` excludes the depot; a zero depot entry is inserted.
    pub fn op(coords: Vec<[f64; 2]>, customer_prizes: Vec<f64>, max_length: f64) -> Result<Instance> {
        if coords.len() != customer_prizes.len() + 1 {
            return Err(Error::invalid_argument(format!(
                "OP wants depot + {} customers, got {} coords",
                customer_prizes.len(),
                coords.len()
            )));
        }
        if max_length <= 0.0 {
            return Err(Error::invalid_argument("max_length must be positive"));
        }
        let mut prizes = vec![0.0];
        prizes.extend(customer_prizes);
        Ok(Instance {
            problem: Problem::Op,
            coords,
            prizes: Some(prizes),
            penalties: None,
            demands: None,
            capacity: None,
            max_length: Some(max_length),
            min_prize: None,
        })
    }

    pub fn pctsp(
        coords: Vec<[f64; 2]>,
        customer_prizes: Vec<f64>,
        customer_penalties: Vec<f64>,
        min_prize: f64,
    ) -> Result<Instance> {
        if coords.len() != customer_prizes.len() + 1 || customer_prizes.len() != customer_penalties.len() {
            return Err(Error::invalid_argument("PCTSP attribute lengths disagree"));
        }
        if min_prize <= 0.0 {
            return Err(Error::invalid_argument("min_prize must be positive"));
        }
        let mut prizes = vec![0.0];
        prizes.extend(customer_prizes);
        let mut penalties = vec![0.0];
        penalties.extend(customer_penalties);
        Ok(Instance {
            problem: Problem::Pctsp,
            coords,
            prizes: Some(prizes),
            penalties: Some(penalties),
            demands: None,
            capacity: None,
            max_length: None,
            min_prize: Some(min_prize),
        })
    }

    pub fn cvrp(coords: Vec<[f64; 2]>, customer_demands: Vec<f64>, capacity: f64) -> Result<Instance> {
        if coords.len() != customer_demands.len() + 1 {
            return Err(Error::invalid_argument("CVRP wants depot + customer demands"));
        }
        if capacity <= 0.0 {
            return Err(Error::invalid_argument("capacity must be positive"));
        }
        if customer_demands.iter().any(|&d| d < 0.0 || d > capacity) {
            return Err(Error::invalid_argument("demands must lie in [0, capacity]"));
        }
        let mut demands = vec![0.0];
        demands.extend(customer_demands);
        Ok(Instance {
            problem: Problem::Cvrp,
            coords,
            prizes: None,
            penalties: None,
            demands: Some(demands),
            capacity: Some(capacity),
            max_length: None,
            min_prize: None,
        })
    }
}
