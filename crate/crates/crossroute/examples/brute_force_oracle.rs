//! Exact optima for desk-size instances, compared against quick heuristics.
//!
//! ```bash
//! cargo run --release --example brute_force_oracle
//! ```

use crossroute::eval::{nearest_neighbor_tour, tsili_construct};
use crossroute::policy::DecodeMode;
use crossroute::vrp::{brute_force_optimal, generate_instances, Distribution, Problem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> crossroute::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let tsp = generate_instances(Problem::Tsp, 8, 1, Distribution::Uniform, 3)?.remove(0);
    let opt = brute_force_optimal(&tsp)?;
    let nn = nearest_neighbor_tour(&tsp)?;
    println!("tsp n=8:   optimal {:.4}  nearest-neighbor {:.4}", opt.cost, nn.cost);

    let op = generate_instances(Problem::Op, 8, 1, Distribution::Uniform, 4)?.remove(0);
    let opt = brute_force_optimal(&op)?;
    let greedy = tsili_construct(&op, DecodeMode::Greedy, &mut rng)?;
    let mut best_sampled = greedy.cost;
    for _ in 0..1280 {
        best_sampled = best_sampled.min(tsili_construct(&op, DecodeMode::Sample, &mut rng)?.cost);
    }
    println!(
        "op  n=8:   optimal prize {:.0}  desirability-greedy {:.0}  best-of-1280 {:.0}",
        -opt.cost, -greedy.cost, -best_sampled
    );

    let pctsp = generate_instances(Problem::Pctsp, 8, 1, Distribution::Uniform, 5)?.remove(0);
    let opt = brute_force_optimal(&pctsp)?;
    println!("pctsp n=8: optimal {:.4} via {:?}", opt.cost, opt.nodes);

    let cvrp = generate_instances(Problem::Cvrp, 7, 1, Distribution::Uniform, 6)?.remove(0);
    let opt = brute_force_optimal(&cvrp)?;
    println!("cvrp n=7:  optimal {:.4} via {:?}", opt.cost, opt.nodes);

    // the oracle refuses instances it cannot enumerate
    let large = generate_instances(Problem::Tsp, 11, 1, Distribution::Uniform, 7)?.remove(0);
    println!("oracle on n=11: {:?}", brute_force_optimal(&large).err().map(|e| e.to_string()));
    Ok(())
}
