//! Cross-problem transfer learning for neural vehicle-routing heuristics.
//!
//! A construction policy (attention encoder/decoder) is pre-trained on TSP and
//! then transferred to richer routing variants — the orienteering problem (OP),
//! the prize-collecting TSP (PCTSP) and the capacitated VRP (CVRP) — either by
//! fully fine-tuning the shared backbone or by training small adapter networks
//! (inside tuning, side tuning, LoRA) with the backbone frozen.
//!
//! The crate is organized as a library; the `crossroute` binary is a thin CLI
//! over it. Start with the runnable examples:
//!
//! ```bash
//! cargo run --release --example generate_instances
//! cargo run --release --example brute_force_oracle
//! cargo run --release --example pretrain_tsp
//! cargo run --release --example finetune_op
//! cargo run --release --example pomo_cvrp
//! cargo run --release --example evaluate_sampling
//! cargo run --release --example cvrplib_benchmark
//! cargo run --release --example checkpoint_roundtrip
//! ```
//!
//! Module map:
//! - [`vrp`] — problem definitions, instance generation, cost/feasibility,
//!   exhaustive oracles for small instances.
//! - [`nn`] — a minimal reverse-mode autodiff substrate (dense arrays, affine
//!   maps, multi-head attention, normalization, masked softmax).
//! - [`policy`] — the backbone encoder/decoder, problem-specific heads, and
//!   model assembly from checkpoints.
//! - [`adapters`] — inside tuning, side tuning and LoRA, plus parameter
//!   freezing.
//! - [`train`] — REINFORCE with a greedy-rollout baseline, POMO multi-start
//!   training, instance augmentation.
//! - [`eval`] — decoding strategies, metrics, classic sanity baselines.
//! - [`io`] — checkpoints, dataset containers, CVRPLIB parsing, training
//!   history, run configuration.
//! - [`cli`] — the subcommand surface used by the `crossroute` binary.

pub mod adapters;
pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod nn;
pub mod policy;
pub mod train;
pub mod vrp;

pub use error::{Error, Result};
