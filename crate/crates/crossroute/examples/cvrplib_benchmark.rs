//! Parse a CVRPLIB-format instance, solve it with a policy, and report the
//! objective in the file's original units.
//!
//! ```bash
//! cargo run --release --example cvrplib_benchmark
//! ```

use crossroute::adapters::AdapterMode;
use crossroute::eval::{evaluate_tours, EvalMode};
use crossroute::io::parse_cvrplib;
use crossroute::policy::{assemble_fresh, BackboneConfig, Profile};
use crossroute::vrp::{check_feasible, Problem};

fn main() -> crossroute::Result<()> {
    let text = std::fs::read_to_string("crates/crossroute/tests/data/X-n101-k25.vrp")
        .or_else(|_| std::fs::read_to_string("tests/data/X-n101-k25.vrp"))?;
    let bench = parse_cvrplib(&text)?;
    println!(
        "{}: {} nodes, capacity {:.0}, coordinate span {:.0}",
        bench.name, bench.dimension, bench.capacity, bench.scale
    );

    // model input is the min-max normalized instance; indices transfer back
    let instance = bench.to_instance()?;
    let model = assemble_fresh(
        Problem::Cvrp,
        Profile::Pomo,
        BackboneConfig::desk(32, 2),
        AdapterMode::None,
        5,
    )?;
    let results = evaluate_tours(&model, std::slice::from_ref(&instance), EvalMode::Augment8Greedy, 0)?;
    let nodes = &results[0].nodes;
    let (feasible, _) = check_feasible(&instance, nodes);
    let routes = nodes.iter().filter(|&&n| n == 0).count() - 1;
    let original = bench.tour_cost_original(nodes)?;

    println!("constructed {} routes, feasible: {feasible}", routes);
    println!("objective in original units: {original:.0}");
    let reference = 27_591.0;
    println!(
        "gap to the published best-known {reference:.0}: {:.1}% (untrained desk model)",
        (original - reference) / reference * 100.0
    );
    Ok(())
}
