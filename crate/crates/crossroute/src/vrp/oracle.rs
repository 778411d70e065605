//! Exhaustive optima for desk-size instances. Test anchor, not a solver.

use super::cost::{check_feasible, tour_cost};
use super::instance::{Instance, Problem};
use super::Tour;
use crate::{Error, Result};

pub const ORACLE_MAX_CUSTOMERS: usize = 10;

/// Exact optimum by exhaustive enumeration over feasible tours.
///
/// TSP fixes the first node and permutes the rest; OP/PCTSP enumerate every
/// customer subset in every order; CVRP enumerates customer permutations with
/// an optimal capacity-respecting split. Refuses more than
/// [`ORACLE_MAX_CUSTOMERS`] customers.
pub fn brute_force_optimal(instance: &Instance) -> Result<Tour> {
    let n = instance.n_customers();
    if n > ORACLE_MAX_CUSTOMERS {
        return Err(Error::OracleSizeExceeded { n, max: ORACLE_MAX_CUSTOMERS });
    }
    match instance.problem {
        Problem::Tsp => tsp_optimal(instance),
        Problem::Op | Problem::Pctsp => subset_order_optimal(instance),
        Problem::Cvrp => cvrp_optimal(instance),
    }
}

fn tsp_optimal(instance: &Instance) -> Result<Tour> {
    let n = instance.n_nodes();
    if n == 1 {
        return Tour::evaluate(instance, vec![0]);
    }
    let mut rest: Vec<usize> = (1..n).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    permute(&mut rest, 0, &mut |perm| {
        let mut nodes = Vec::with_capacity(n);
        nodes.push(0);
        nodes.extend_from_slice(perm);
        let cost = tour_cost(instance, &nodes).expect("valid indices");
        if best.as_ref().map_or(true, |(b, _)| cost < *b) {
            best = Some((cost, nodes));
        }
    });
    let (_, nodes) = best.expect("n >= 2 yields at least one permutation");
    Tour::evaluate(instance, nodes)
}

/// OP and PCTSP: enumerate ordered subsets of customers between depot visits.
fn subset_order_optimal(instance: &Instance) -> Result<Tour> {
    let n = instance.n_customers();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << n) {
        let mut subset: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).collect();
        permute(&mut subset, 0, &mut |perm| {
            let mut nodes = Vec::with_capacity(perm.len() + 2);
            nodes.push(0);
            nodes.extend_from_slice(perm);
            nodes.push(0);
            let (feasible, _) = check_feasible(instance, &nodes);
            if !feasible {
                return;
            }
            let cost = tour_cost(instance, &nodes).expect("valid indices");
            if best.as_ref().map_or(true, |(b, _)| cost < *b) {
                best = Some((cost, nodes));
            }
        });
    }
    match best {
        Some((_, nodes)) => Tour::evaluate(instance, nodes),
        None => Err(Error::invalid_argument(
            "instance admits no feasible tour under exhaustive enumeration",
        )),
    }
}

fn cvrp_optimal(instance: &Instance) -> Result<Tour> {
    let n = instance.n_customers();
    let mut order: Vec<usize> = (1..=n).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    permute(&mut order, 0, &mut |perm| {
        if let Some((cost, nodes)) = optimal_split(instance, perm) {
            if best.as_ref().map_or(true, |(b, _)| cost < *b) {
                best = Some((cost, nodes));
            }
        }
    });
    let (_, nodes) = best.expect("demands <= capacity make singleton splits feasible");
    Tour::evaluate(instance, nodes)
}

/// Split a fixed customer order into depot-returning subtours of minimal
/// total length (classic prefix DP).
fn optimal_split(instance: &Instance, order: &[usize]) -> Option<(f64, Vec<usize>)> {
    let n = order.len();
    let demands = instance.demands();
    let capacity = instance.capacity();
    let mut best = vec![f64::INFINITY; n + 1];
    let mut parent = vec![0usize; n + 1];
    best[0] = 0.0;
    for end in 1..=n {
        // subtour covering order[start..end]
        for start in (0..end).rev() {
            let load: f64 = order[start..end].iter().map(|&c| demands[c]).sum();
            if load > capacity {
                break;
            }
            let mut leg = instance.distance(0, order[start]);
            for w in order[start..end].windows(2) {
                leg += instance.distance(w[0], w[1]);
            }
            leg += instance.distance(order[end - 1], 0);
            if best[start] + leg < best[end] {
                best[end] = best[start] + leg;
                parent[end] = start;
            }
        }
    }
    if !best[n].is_finite() {
        return None;
    }
    let mut cuts = vec![n];
    while *cuts.last().expect("nonempty") > 0 {
        cuts.push(parent[*cuts.last().expect("nonempty")]);
    }
    cuts.reverse();
    let mut nodes = vec![0];
    for w in cuts.windows(2) {
        nodes.extend_from_slice(&order[w[0]..w[1]]);
        nodes.push(0);
    }
    Some((best[n], nodes))
}

/// Heap-style recursive permutation visitor.
fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}
