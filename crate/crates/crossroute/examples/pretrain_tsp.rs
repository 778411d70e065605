//! Desk-scale TSP pre-training of the backbone policy (CPU, ~10 seconds).
//!
//! ```bash
//! cargo run --release --example pretrain_tsp
//! ```

use crossroute::adapters::AdapterMode;
use crossroute::policy::{assemble_fresh, BackboneConfig, Profile};
use crossroute::train::{greedy_costs, train, TrainConfig, TrainInit};
use crossroute::vrp::{Distribution, Problem};

fn main() -> crossroute::Result<()> {
    let backbone = BackboneConfig::desk(32, 2);
    let mut cfg = TrainConfig::desk(Profile::Am, 10, backbone);
    cfg.epochs = 1;
    cfg.batches_per_epoch = 200;
    cfg.batch_size = 64;
    cfg.val_size = 1000;
    cfg.seed = 1234;

    // untrained reference on the run's validation distribution
    let untrained = assemble_fresh(Problem::Tsp, Profile::Am, backbone, AdapterMode::None, cfg.seed)?;
    let val = crossroute::vrp::generate_instances(Problem::Tsp, 10, 500, Distribution::Uniform, 999)?;
    let before = greedy_costs(&untrained, &val)?.iter().sum::<f64>() / val.len() as f64;

    let out = std::env::temp_dir().join("crossroute-example-pretrain");
    let (state, history) = train(cfg, Problem::Tsp, TrainInit::Scratch, AdapterMode::None, Some(&out))?;
    let after = greedy_costs(&state.model, &val)?.iter().sum::<f64>() / val.len() as f64;

    for r in &history {
        println!(
            "epoch {}: train {:.4}  greedy val {:.4}  baseline replaced: {}",
            r.epoch, r.train_cost, r.val_cost, r.baseline_replaced
        );
    }
    println!("greedy tour length on held-out instances: {before:.4} -> {after:.4}");
    println!("checkpoint: {}", out.join("latest.ckpt").display());
    Ok(())
}
