//! Multi-start training on CVRP: every instance rolls out from each customer
//! as a forced first stop, baselined against the instance's mean cost.
//!
//! ```bash
//! cargo run --release --example pomo_cvrp
//! ```

use crossroute::adapters::AdapterMode;
use crossroute::policy::{BackboneConfig, Profile};
use crossroute::train::{pomo_step, TrainConfig, TrainInit, TrainState};
use crossroute::vrp::Problem;

fn main() -> crossroute::Result<()> {
    let mut cfg = TrainConfig::desk(Profile::Pomo, 8, BackboneConfig::desk(32, 2));
    cfg.batch_size = 16;
    cfg.val_size = 200;
    cfg.seed = 3;

    let mut state = TrainState::new(cfg, Problem::Cvrp, TrainInit::Scratch, AdapterMode::None)?;
    println!("rollouts per step: {} instances x {} starts", 16, 8);
    for step in 1..=30 {
        let batch = state.next_batch()?;
        let stats = pomo_step(&mut state, &batch)?;
        if step % 5 == 0 {
            println!(
                "step {step:>3}: mean rollout cost {:.4}  grad norm {:.3}  advantage balance {:.1e}",
                stats.mean_cost, stats.grad_norm, stats.max_abs_advantage_sum
            );
        }
    }
    Ok(())
}
