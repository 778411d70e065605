//! Decoding strategies side by side: greedy, best-of-k sampling, and the
//! 8-fold symmetric augmentation.
//!
//! ```bash
//! cargo run --release --example evaluate_sampling
//! ```

use crossroute::adapters::AdapterMode;
use crossroute::eval::{evaluate, reference_costs, render_report_table, EvalMode, ReferenceSource};
use crossroute::policy::{assemble_fresh, BackboneConfig, Profile};
use crossroute::vrp::{generate_instances, Distribution, Problem};

fn main() -> crossroute::Result<()> {
    let model = assemble_fresh(
        Problem::Tsp,
        Profile::Am,
        BackboneConfig::desk(32, 2),
        AdapterMode::None,
        11,
    )?;
    let instances = generate_instances(Problem::Tsp, 9, 20, Distribution::Uniform, 12)?;
    // desk-size instances admit exact references
    let refs = reference_costs(&instances, ReferenceSource::Oracle)?;

    for mode in [
        EvalMode::Greedy,
        EvalMode::Sample { k: 128 },
        EvalMode::Sample { k: 1280 },
        EvalMode::Augment8Greedy,
        EvalMode::Augment8Sample { k: 128 },
    ] {
        let report = evaluate(&model, &instances, mode, Some(&refs), 42)?;
        print!("{}", render_report_table(&report));
    }
    println!("(untrained weights: the sampling pool and augmentation close part of the gap)");
    Ok(())
}
