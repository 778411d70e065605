//! Tour cost/utility evaluation and feasibility checking.

use super::instance::{Instance, Problem};
use crate::{Error, Result};

/// Slack for floating-point comparisons of accumulated lengths/demands against
/// their limits. Keeps verdicts stable across cost recomputation orders and
/// the unit-square symmetry transforms.
pub const FEAS_EPS: f64 = 1e-9;

/// Structured reason a tour is infeasible.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    IndexOutOfRange { index: usize },
    /// TSP tour is not a permutation of all nodes.
    NotPermutation,
    /// Depot-based tour does not start and end at the depot.
    BadEndpoints,
    RepeatVisit { node: usize },
    MissingVisit { node: usize },
    BudgetExceeded { length: f64, max_length: f64 },
    PrizeShortfall { collected: f64, required: f64 },
    CapacityExceeded { subtour: usize, demand: f64, capacity: f64 },
}

fn check_indices(instance: &Instance, nodes: &[usize]) -> Result<()> {
    for &n in nodes {
        if n >= instance.n_nodes() {
            return Err(Error::invalid_argument(format!(
                "node index {n} out of range for {} nodes",
                instance.n_nodes()
            )));
        }
    }
    Ok(())
}

/// Geometric length of the node sequence. TSP sequences close the cycle
/// implicitly; depot-based sequences carry their endpoints explicitly.
pub fn tour_length(instance: &Instance, nodes: &[usize]) -> Result<f64> {
    check_indices(instance, nodes)?;
    let mut len = 0.0;
    for w in nodes.windows(2) {
        len += instance.distance(w[0], w[1]);
    }
    if instance.problem == Problem::Tsp && nodes.len() > 1 {
        len += instance.distance(*nodes.last().expect("nonempty"), nodes[0]);
    }
    Ok(len)
}

/// Cost under the minimization convention.
///
/// TSP/CVRP: Euclidean tour length (CVRP includes the depot legs of every
/// subtour). OP: negated sum of collected prizes. PCTSP: tour length plus the
/// penalties of unvisited customers.
pub fn tour_cost(instance: &Instance, nodes: &[usize]) -> Result<f64> {
    check_indices(instance, nodes)?;
    match instance.problem {
        Problem::Tsp | Problem::Cvrp => tour_length(instance, nodes),
        Problem::Op => {
            let prizes = instance.prizes();
            Ok(-nodes.iter().filter(|&&n| n != 0).map(|&n| prizes[n]).sum::<f64>())
        }
        Problem::Pctsp => {
            let len = tour_length(instance, nodes)?;
            let penalties = instance.penalties();
            let mut visited = vec![false; instance.n_nodes()];
            for &n in nodes {
                visited[n] = true;
            }
            let penalty: f64 = (1..instance.n_nodes()).filter(|&n| !visited[n]).map(|n| penalties[n]).sum();
            Ok(len + penalty)
        }
    }
}

/// Verdict plus the first violation found. Never errors; malformed indices
/// yield an infeasible verdict.
pub fn check_feasible(instance: &Instance, nodes: &[usize]) -> (bool, Option<Violation>) {
    for &n in nodes {
        if n >= instance.n_nodes() {
            return (false, Some(Violation::IndexOutOfRange { index: n }));
        }
    }
    match instance.problem {
        Problem::Tsp => check_tsp(instance, nodes),
        Problem::Op => check_op(instance, nodes),
        Problem::Pctsp => check_pctsp(instance, nodes),
        Problem::Cvrp => check_cvrp(instance, nodes),
    }
}

fn check_tsp(instance: &Instance, nodes: &[usize]) -> (bool, Option<Violation>) {
    if nodes.len() != instance.n_nodes() {
        return (false, Some(Violation::NotPermutation));
    }
    let mut seen = vec![false; instance.n_nodes()];
    for &n in nodes {
        if seen[n] {
            return (false, Some(Violation::RepeatVisit { node: n }));
        }
        seen[n] = true;
    }
    (true, None)
}

/// Endpoints at the depot and every customer at most once; interior depot
/// visits are allowed only where the problem's structure permits them (CVRP).
fn check_open_tour(nodes: &[usize], n_nodes: usize, allow_interior_depot: bool) -> Option<Violation> {
    if nodes.len() < 2 || nodes[0] != 0 || *nodes.last().expect("len >= 2") != 0 {
        return Some(Violation::BadEndpoints);
    }
    let mut seen = vec![false; n_nodes];
    for &n in &nodes[1..nodes.len() - 1] {
        if n == 0 {
            if !allow_interior_depot {
                return Some(Violation::RepeatVisit { node: 0 });
            }
            continue;
        }
        if seen[n] {
            return Some(Violation::RepeatVisit { node: n });
        }
        seen[n] = true;
    }
    None
}

fn check_op(instance: &Instance, nodes: &[usize]) -> (bool, Option<Violation>) {
    if let Some(v) = check_open_tour(nodes, instance.n_nodes(), false) {
        return (false, Some(v));
    }
    let length = tour_length(instance, nodes).expect("indices verified");
    let max_length = instance.max_length();
    if length > max_length + FEAS_EPS {
        return (false, Some(Violation::BudgetExceeded { length, max_length }));
    }
    (true, None)
}

fn check_pctsp(instance: &Instance, nodes: &[usize]) -> (bool, Option<Violation>) {
    if let Some(v) = check_open_tour(nodes, instance.n_nodes(), false) {
        return (false, Some(v));
    }
    let prizes = instance.prizes();
    let collected: f64 = nodes.iter().filter(|&&n| n != 0).map(|&n| prizes[n]).sum();
    let required = instance.min_prize();
    if collected + FEAS_EPS < required {
        return (false, Some(Violation::PrizeShortfall { collected, required }));
    }
    (true, None)
}

fn check_cvrp(instance: &Instance, nodes: &[usize]) -> (bool, Option<Violation>) {
    if let Some(v) = check_open_tour(nodes, instance.n_nodes(), true) {
        return (false, Some(v));
    }
    let mut seen = vec![false; instance.n_nodes()];
    for &n in nodes {
        if n != 0 {
            seen[n] = true;
        }
    }
    if let Some(missing) = (1..instance.n_nodes()).find(|&n| !seen[n]) {
        return (false, Some(Violation::MissingVisit { node: missing }));
    }
    let demands = instance.demands();
    let capacity = instance.capacity();
    let mut subtour = 0usize;
    let mut load = 0.0;
    for &n in &nodes[1..] {
        if n == 0 {
            load = 0.0;
            subtour += 1;
        } else {
            load += demands[n];
            if load > capacity + FEAS_EPS {
                return (false, Some(Violation::CapacityExceeded { subtour, demand: load, capacity }));
            }
        }
    }
    (true, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_tsp() -> Instance {
        Instance::tsp(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap()
    }

    #[test]
    fn tsp_perimeter_costs_four() {
        let inst = square_tsp();
        let cost = tour_cost(&inst, &[0, 1, 2, 3]).unwrap();
        assert!((cost - 4.0).abs() < 1e-12);
    }

    #[test]
    fn tsp_cost_invariant_under_rotation_and_reversal() {
        let inst = square_tsp();
        let base = tour_cost(&inst, &[0, 1, 2, 3]).unwrap();
        for tour in [[1, 2, 3, 0], [2, 3, 0, 1], [3, 2, 1, 0], [0, 3, 2, 1]] {
            let c = tour_cost(&inst, &tour).unwrap();
            assert!((c - base).abs() < 1e-12);
        }
    }

    #[test]
    fn tour_cost_rejects_bad_index() {
        let inst = square_tsp();
        assert!(matches!(tour_cost(&inst, &[0, 9]), Err(crate::Error::InvalidArgument(_))));
    }

    #[test]
    fn op_cost_is_negated_prize_sum() {
        let inst = Instance::op(
            vec![[0.0, 0.0], [0.1, 0.0], [0.2, 0.0], [0.3, 0.0]],
            vec![1.0, 1.0, 1.0],
            2.0,
        )
        .unwrap();
        let cost = tour_cost(&inst, &[0, 1, 3, 0]).unwrap();
        assert_eq!(cost, -2.0);
    }

    #[test]
    fn op_budget_boundary() {
        // depot at origin, customer at distance 1, round trip length 2
        let inst = Instance::op(vec![[0.0, 0.0], [1.0, 0.0]], vec![1.0], 2.0).unwrap();
        let (ok, v) = check_feasible(&inst, &[0, 1, 0]);
        assert!(ok, "{v:?}");
        let tight = Instance::op(vec![[0.0, 0.0], [1.0, 0.0]], vec![1.0], 2.0 - 1e-6).unwrap();
        let (ok, v) = check_feasible(&tight, &[0, 1, 0]);
        assert!(!ok);
        assert!(matches!(v, Some(Violation::BudgetExceeded { .. })));
    }

    #[test]
    fn pctsp_full_visit_has_zero_penalty_term() {
        let coords = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]];
        let inst = Instance::pctsp(coords, vec![0.6, 0.6], vec![0.5, 0.7], 1.0).unwrap();
        let cost = tour_cost(&inst, &[0, 1, 2, 0]).unwrap();
        let len = tour_length(&inst, &[0, 1, 2, 0]).unwrap();
        assert!((cost - len).abs() < 1e-12);
    }

    #[test]
    fn pctsp_empty_tour_shortfall() {
        let inst = Instance::pctsp(vec![[0.0, 0.0], [0.5, 0.5]], vec![2.0], vec![0.3], 1.0).unwrap();
        let (ok, v) = check_feasible(&inst, &[0, 0]);
        assert!(!ok);
        assert!(matches!(v, Some(Violation::PrizeShortfall { .. })));
    }

    #[test]
    fn pctsp_cost_counts_unvisited_penalties() {
        let coords = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let inst = Instance::pctsp(coords, vec![1.0, 1.0], vec![0.25, 0.75], 1.0).unwrap();
        let cost = tour_cost(&inst, &[0, 1, 0]).unwrap();
        assert!((cost - (2.0 + 0.75)).abs() < 1e-12);
    }

    #[test]
    fn cvrp_capacity_is_inclusive() {
        let coords = vec![[0.0, 0.0], [0.1, 0.0], [0.2, 0.0]];
        let inst = Instance::cvrp(coords, vec![5.0, 5.0], 10.0).unwrap();
        let (ok, v) = check_feasible(&inst, &[0, 1, 2, 0]);
        assert!(ok, "{v:?}");
        let smaller = Instance::cvrp(
            vec![[0.0, 0.0], [0.1, 0.0], [0.2, 0.0]],
            vec![5.0, 6.0],
            10.0,
        )
        .unwrap();
        let (ok, v) = check_feasible(&smaller, &[0, 1, 2, 0]);
        assert!(!ok);
        assert!(matches!(v, Some(Violation::CapacityExceeded { .. })));
        // splitting into two subtours restores feasibility
        let (ok, _) = check_feasible(&smaller, &[0, 1, 0, 2, 0]);
        assert!(ok);
    }

    #[test]
    fn cvrp_requires_every_customer() {
        let coords = vec![[0.0, 0.0], [0.1, 0.0], [0.2, 0.0]];
        let inst = Instance::cvrp(coords, vec![1.0, 1.0], 10.0).unwrap();
        let (ok, v) = check_feasible(&inst, &[0, 1, 0]);
        assert!(!ok);
        assert!(matches!(v, Some(Violation::MissingVisit { node: 2 })));
    }

    #[test]
    fn cvrp_cost_includes_depot_legs() {
        let coords = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let inst = Instance::cvrp(coords, vec![1.0, 1.0], 1.0).unwrap();
        // forced into two singleton subtours
        let cost = tour_cost(&inst, &[0, 1, 0, 2, 0]).unwrap();
        assert!((cost - 4.0).abs() < 1e-12);
    }

    #[test]
    fn op_repeat_visit_rejected() {
        let inst = Instance::op(vec![[0.0, 0.0], [0.1, 0.0]], vec![1.0], 5.0).unwrap();
        let (ok, v) = check_feasible(&inst, &[0, 1, 1, 0]);
        assert!(!ok);
        assert!(matches!(v, Some(Violation::RepeatVisit { node: 1 })));
    }

    #[test]
    fn duplicate_coordinates_are_legal() {
        let inst = Instance::tsp(vec![[0.5, 0.5], [0.5, 0.5], [0.0, 0.0]]).unwrap();
        let cost = tour_cost(&inst, &[0, 1, 2]).unwrap();
        let d = 2.0 * (0.5f64.powi(2) * 2.0).sqrt();
        assert!((cost - d).abs() < 1e-12);
    }
}
