//! The partitioned checkpoint container: full checkpoints, small
//! heads+adapters checkpoints, and hash-verified backbone pairing.
//!
//! ```bash
//! cargo run --release --example checkpoint_roundtrip
//! ```

use crossroute::adapters::AdapterMode;
use crossroute::io::{load_model, save_checkpoint, Checkpoint};
use crossroute::nn::ParamGroup;
use crossroute::policy::{assemble_fresh, assemble_from_backbone, BackboneConfig, Profile};
use crossroute::vrp::Problem;

fn main() -> crossroute::Result<()> {
    let dir = std::env::temp_dir().join("crossroute-example-ckpt");
    std::fs::create_dir_all(&dir)?;

    let tsp = assemble_fresh(
        Problem::Tsp,
        Profile::Am,
        BackboneConfig::for_profile(Profile::Am),
        AdapterMode::None,
        1,
    )?;
    let backbone = dir.join("tsp.ckpt");
    save_checkpoint(&tsp, &backbone, &ParamGroup::ALL, Default::default())?;
    println!(
        "backbone checkpoint: {} KiB ({} params)",
        std::fs::metadata(&backbone)?.len() / 1024,
        tsp.param_counts().0
    );

    // a downstream adapter model stores only its problem-specific groups
    let op = assemble_from_backbone(Problem::Op, &backbone, AdapterMode::Inside, 2)?;
    let small = dir.join("op-inside.ckpt");
    save_checkpoint(&op, &small, &[ParamGroup::Heads, ParamGroup::Adapters], Default::default())?;
    println!(
        "heads+adapters checkpoint: {} KiB ({} trainable params)",
        std::fs::metadata(&small)?.len() / 1024,
        op.param_counts().1
    );

    // loading requires the paired backbone, verified by hash
    let restored = load_model(&small, Some(&backbone))?;
    println!("restored OP model: {} params", restored.param_counts().0);
    println!("load without backbone: {:?}", load_model(&small, None).err().map(|e| e.to_string()));

    // the manifest is inspectable text
    let ckpt = Checkpoint::read(&small)?;
    println!(
        "manifest: problem={} mode={} groups=[{}]",
        ckpt.manifest.problem,
        ckpt.manifest.adapter_mode,
        ckpt.manifest
            .groups
            .iter()
            .map(|g| format!("{}:{}B", g.name, g.byte_len))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}
