//! Transfer a TSP backbone to the orienteering problem four ways: full
//! fine-tuning and the three parameter-efficient adapter schemes.
//!
//! ```bash
//! cargo run --release --example finetune_op
//! ```

use crossroute::adapters::AdapterMode;
use crossroute::io::save_checkpoint;
use crossroute::nn::ParamGroup;
use crossroute::policy::{BackboneConfig, Profile};
use crossroute::train::{train, TrainConfig, TrainInit};
use crossroute::vrp::Problem;

fn main() -> crossroute::Result<()> {
    let backbone_cfg = BackboneConfig::desk(32, 2);

    // a quick TSP backbone: 40 batches, enough to move off random init
    let mut pre = TrainConfig::desk(Profile::Am, 10, backbone_cfg);
    pre.batches_per_epoch = 40;
    pre.val_size = 200;
    pre.seed = 7;
    let (state, _) = train(pre, Problem::Tsp, TrainInit::Scratch, AdapterMode::None, None)?;
    let dir = std::env::temp_dir().join("crossroute-example-finetune");
    std::fs::create_dir_all(&dir)?;
    let backbone = dir.join("tsp.ckpt");
    save_checkpoint(&state.model, &backbone, &ParamGroup::ALL, Default::default())?;

    for mode in [
        AdapterMode::None,
        AdapterMode::Inside,
        AdapterMode::Side,
        AdapterMode::Lora { rank: 2 },
    ] {
        let mut cfg = TrainConfig::desk(Profile::Am, 10, backbone_cfg);
        cfg.batches_per_epoch = 40;
        cfg.val_size = 200;
        cfg.seed = 8;
        let (state, history) =
            train(cfg, Problem::Op, TrainInit::FromBackbone(&backbone), mode, None)?;
        let (total, trainable) = state.model.param_counts();
        println!(
            "{:<6} tuning: {:>6} trainable of {:>6} params, epoch-1 val objective {:.4}",
            mode.name(),
            trainable,
            total,
            history[0].val_cost
        );
        // adapter-mode models store only their problem-specific groups
        if mode.is_adapter() {
            let small = dir.join(format!("op-{}.ckpt", mode.name()));
            save_checkpoint(&state.model, &small, &[ParamGroup::Heads, ParamGroup::Adapters], Default::default())?;
            let bytes = std::fs::metadata(&small)?.len();
            println!("        stored heads+adapters checkpoint: {} KiB", bytes / 1024);
        }
    }
    Ok(())
}
