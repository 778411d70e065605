//! The four routing problems: instances, tours, generation, feasibility,
//! cost/utility evaluation, and exhaustive oracles for desk-size instances.

mod cost;
mod generate;
mod instance;
mod oracle;

pub use cost::{check_feasible, tour_cost, tour_length, Violation};
pub use generate::{generate_instances, generate_with_rng, Distribution};
pub use instance::{Instance, Problem};
pub use oracle::{brute_force_optimal, ORACLE_MAX_CUSTOMERS};

/// An ordered node sequence with its evaluation.
///
/// For problems with a depot the sequence starts and ends at node 0, with
/// interior zeros delimiting CVRP subtours. For TSP the sequence is a
/// permutation of all nodes. `cost` follows the minimization convention
/// everywhere: for OP it stores the negated collected prize.
#[derive(Clone, Debug, PartialEq)]
pub struct Tour {
    pub nodes: Vec<usize>,
    pub problem: Problem,
    pub cost: f64,
    pub feasible: bool,
    pub violation: Option<Violation>,
}

impl Tour {
    /// Evaluate a node sequence against an instance.
    pub fn evaluate(instance: &Instance, nodes: Vec<usize>) -> crate::Result<Tour> {
        let cost = tour_cost(instance, &nodes)?;
        let (feasible, violation) = check_feasible(instance, &nodes);
        Ok(Tour { nodes, problem: instance.problem, cost, feasible, violation })
    }
}
