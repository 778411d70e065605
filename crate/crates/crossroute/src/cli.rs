//! Command-line surface. The `crossroute` binary is a thin wrapper around
//! [`run`]; every subcommand resolves its full configuration (flags over
//! config-file values over defaults), logs it with the seed, and is
//! reproducible from that log.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 checkpoint error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::adapters::AdapterMode;
use crate::eval::{evaluate, named_references, render_report_table, EvalMode, ReferenceSource};
use crate::io::RunConfig;
use crate::policy::{BackboneConfig, Profile};
use crate::train::{train, TrainConfig, TrainInit};
use crate::vrp::{Distribution, Problem};
use crate::{Error, Result};

#[derive(Parser)]
#[command(name = "crossroute", version, about = "Neural vehicle-routing heuristics with cross-problem transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file of random instances.
    GenData {
        #[arg(long, value_parser = parse_problem)]
        problem: Problem,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value = "uniform", value_parser = parse_distribution)]
        distribution: Distribution,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the backbone policy on TSP.
    Pretrain {
        #[arg(long, default_value = "am", value_parser = parse_profile)]
        profile: Profile,
        #[command(flatten)]
        train_args: TrainArgs,
    },
    /// Fine-tune a downstream problem from a pretrained backbone.
    Finetune {
        #[arg(long, value_parser = parse_problem)]
        problem: Problem,
        /// Backbone checkpoint (not used with --mode scratch).
        #[arg(long)]
        backbone: Option<PathBuf>,
        /// full | inside | side | lora | scratch
        #[arg(long, default_value = "full")]
        mode: String,
        /// Override the profile's default low-rank width.
        #[arg(long)]
        lora_rank: Option<usize>,
        #[command(flatten)]
        train_args: TrainArgs,
    },
    /// Evaluate a checkpoint on a dataset or CVRPLIB files.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Paired backbone checkpoint for heads+adapters checkpoints.
        #[arg(long)]
        backbone: Option<PathBuf>,
        /// Dataset file produced by gen-data.
        #[arg(long, conflicts_with = "cvrplib")]
        data: Option<PathBuf>,
        /// A CVRPLIB .vrp file or a directory of them.
        #[arg(long)]
        cvrplib: Option<PathBuf>,
        /// greedy | sample | aug8 | aug8-sample
        #[arg(long, default_value = "greedy")]
        decode: String,
        #[arg(long, default_value_t = 1280)]
        samples: usize,
        /// Reference costs: one value per instance, or "name value" lines.
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Solve one instance file and print the tour.
    Solve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        backbone: Option<PathBuf>,
        /// Dataset file (first instance) or CVRPLIB .vrp file.
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value = "greedy")]
        decode: String,
        #[arg(long, default_value_t = 1280)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a checkpoint's parameter-count table.
    Params {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        backbone: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Key-value config file (epochs, batches_per_epoch, batch_size, lr, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_distribution)]
    distribution: Option<Distribution>,
}

fn parse_problem(s: &str) -> std::result::Result<Problem, String> {
    Problem::from_name(s).ok_or_else(|| format!("unknown problem {s:?} (tsp|op|pctsp|cvrp)"))
}

fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    Profile::from_name(s).ok_or_else(|| format!("unknown profile {s:?} (am|pomo)"))
}

fn parse_distribution(s: &str) -> std::result::Result<Distribution, String> {
    Distribution::from_name(s).ok_or_else(|| format!("unknown distribution {s:?} (uniform|gaussian)"))
}

/// Parse argv and execute; returns the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success codes
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData { problem, n, count, distribution, seed, out } => {
            let dataset = crate::io::Dataset::generate(problem, n, count, distribution, seed)?;
            crate::io::write_dataset(&dataset, &out)?;
            println!(
                "wrote {count} {} instances (n={n}, {}, seed {seed}) to {}",
                problem.name(),
                distribution.name(),
                out.display()
            );
            Ok(())
        }
        Command::Pretrain { profile, train_args } => {
            let config = resolve_train_config(profile, 20, &train_args)?;
            run_training(config, Problem::Tsp, None, AdapterMode::None, &train_args.out)
        }
        Command::Finetune { problem, backbone, mode, lora_rank, train_args } => {
            if problem == Problem::Tsp {
                return Err(Error::invalid_argument("fine-tuning targets op, pctsp or cvrp"));
            }
            let adapter_kind = match mode.as_str() {
                "scratch" | "full" | "inside" | "side" | "lora" => mode.as_str(),
                other => {
                    return Err(Error::invalid_argument(format!(
                        "unknown mode {other:?} (full|inside|side|lora|scratch)"
                    )))
                }
            };
            let backbone = match (adapter_kind, backbone) {
                ("scratch", _) => None,
                (_, Some(p)) => Some(p),
                (_, None) => {
                    return Err(Error::invalid_argument("--backbone is required unless --mode scratch"))
                }
            };
            // profile and architecture follow the backbone checkpoint
            let (profile, backbone_config) = match &backbone {
                Some(p) => {
                    let ckpt = crate::io::Checkpoint::read(p)?;
                    (ckpt.manifest.profile()?, ckpt.manifest.config)
                }
                None => (Profile::Am, BackboneConfig::for_profile(Profile::Am)),
            };
            let adapter_mode = match adapter_kind {
                "inside" => AdapterMode::Inside,
                "side" => AdapterMode::Side,
                "lora" => AdapterMode::Lora {
                    rank: lora_rank.unwrap_or_else(|| profile.default_lora_rank()),
                },
                _ => AdapterMode::None,
            };
            let mut config = resolve_train_config(profile, 20, &train_args)?;
            config.backbone = backbone_config;
            run_training(config, problem, backbone.as_deref(), adapter_mode, &train_args.out)
        }
        Command::Eval { ckpt, backbone, data, cvrplib, decode, samples, refs, seed } => {
            let model = crate::io::load_model(&ckpt, backbone.as_deref())?;
            let mode = parse_eval_mode(&decode, samples)?;
            match (data, cvrplib) {
                (Some(data), None) => {
                    let dataset = crate::io::read_dataset(&data)?;
                    let references = match refs {
                        Some(path) => Some(crate::eval::reference_costs(
                            &dataset.instances,
                            ReferenceSource::File(&path),
                        )?),
                        None => None,
                    };
                    let report = evaluate(&model, &dataset.instances, mode, references.as_deref(), seed)?;
                    print!("{}", render_report_table(&report));
                    Ok(())
                }
                (None, Some(dir)) => eval_cvrplib(&model, &dir, mode, refs.as_deref(), seed),
                (None, None) => Err(Error::invalid_argument("eval needs --data or --cvrplib")),
                (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
            }
        }
        Command::Solve { ckpt, backbone, instance, decode, samples, seed } => {
            let model = crate::io::load_model(&ckpt, backbone.as_deref())?;
            let mode = parse_eval_mode(&decode, samples)?;
            solve_one(&model, &instance, mode, seed)
        }
        Command::Params { ckpt, backbone } => {
            let model = crate::io::load_model(&ckpt, backbone.as_deref())?;
            let partition = model.partition();
            let (total, trainable) = model.param_counts();
            println!(
                "problem {}  profile {}  mode {}",
                model.problem.name(),
                model.profile.name(),
                model.adapter_mode.name()
            );
            for (name, group) in [
                ("backbone", partition.backbone),
                ("heads", partition.heads),
                ("adapters", partition.adapters),
            ] {
                println!(
                    "  {name:<9} {:>10} params  ({})",
                    group.params,
                    if group.trainable { "trainable" } else { "frozen" }
                );
            }
            println!("  {:<9} {total:>10} params, {trainable} trainable", "total");
            Ok(())
        }
    }
}

fn resolve_train_config(profile: Profile, default_n: usize, args: &TrainArgs) -> Result<TrainConfig> {
    let file = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::new(),
    };
    let defaults = BackboneConfig::for_profile(profile);
    let backbone = BackboneConfig {
        d_model: file.get_parsed("d_model")?.unwrap_or(defaults.d_model),
        n_heads: file.get_parsed("n_heads")?.unwrap_or(defaults.n_heads),
        n_encoder_layers: file.get_parsed("n_encoder_layers")?.unwrap_or(defaults.n_encoder_layers),
        ff_hidden: file.get_parsed("ff_hidden")?.unwrap_or(defaults.ff_hidden),
        tanh_clip: file.get_parsed("tanh_clip")?.unwrap_or(defaults.tanh_clip),
    };
    let n_customers = args.n.or(file.get_parsed("n_customers")?).unwrap_or(default_n);
    let mut config = TrainConfig::desk(profile, n_customers, backbone);
    if let Some(v) = file.get_parsed("epochs")? {
        config.epochs = v;
    }
    if let Some(v) = file.get_parsed("batches_per_epoch")? {
        config.batches_per_epoch = v;
    }
    if let Some(v) = file.get_parsed("batch_size")? {
        config.batch_size = v;
    }
    if let Some(v) = file.get_parsed("lr")? {
        config.learning_rate = v;
    }
    config.lr_heads = file.get_parsed("lr_heads")?;
    config.lr_adapters = file.get_parsed("lr_adapters")?;
    if let Some(v) = file.get_parsed("significance")? {
        config.significance = v;
    }
    if let Some(v) = file.get_parsed("val_size")? {
        config.val_size = v;
    }
    if let Some(v) = file.get_parsed("seed")? {
        config.seed = v;
    }
    if let Some(v) = file.get_parsed("pomo_starts")? {
        config.pomo_starts = Some(v);
    }
    if let Some(d) = file.get("distribution") {
        config.distribution = Distribution::from_name(d)
            .ok_or_else(|| Error::invalid_argument(format!("unknown distribution {d:?}")))?;
    }
    // direct flags override the file
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(d) = args.distribution {
        config.distribution = d;
    }
    Ok(config)
}

fn run_training(
    config: TrainConfig,
    problem: Problem,
    backbone: Option<&Path>,
    adapter_mode: AdapterMode,
    out: &Path,
) -> Result<()> {
    let init = match backbone {
        Some(p) => TrainInit::FromBackbone(p),
        None => TrainInit::Scratch,
    };
    log_resolved_config(&config, problem, &init, adapter_mode, out)?;
    let (state, history) = train(config, problem, init, adapter_mode, Some(out))?;
    let last = history.last().expect("at least one epoch");
    println!(
        "finished epoch {}: train cost {:.4}, greedy val cost {:.4}",
        last.epoch, last.train_cost, last.val_cost
    );
    println!("model: {}", crate::train::latest_checkpoint(out).display());
    let (total, trainable) = state.model.param_counts();
    println!("parameters: {total} total, {trainable} trainable");
    Ok(())
}

fn log_resolved_config(
    config: &TrainConfig,
    problem: Problem,
    init: &TrainInit,
    adapter_mode: AdapterMode,
    out: &Path,
) -> Result<()> {
    let mut resolved = RunConfig::new();
    resolved.set("problem", problem.name());
    resolved.set("profile", config.profile.name());
    resolved.set("mode", adapter_mode.name());
    if let AdapterMode::Lora { rank } = adapter_mode {
        resolved.set("lora_rank", rank);
    }
    resolved.set(
        "init",
        match init {
            TrainInit::Scratch => "scratch".to_string(),
            TrainInit::FromBackbone(p) => p.display().to_string(),
        },
    );
    resolved.set("epochs", config.epochs);
    resolved.set("batches_per_epoch", config.batches_per_epoch);
    resolved.set("batch_size", config.batch_size);
    resolved.set("lr", config.learning_rate);
    resolved.set("significance", config.significance);
    resolved.set("val_size", config.val_size);
    resolved.set("seed", config.seed);
    resolved.set("n_customers", config.n_customers);
    resolved.set("distribution", config.distribution.name());
    resolved.set("d_model", config.backbone.d_model);
    resolved.set("n_heads", config.backbone.n_heads);
    resolved.set("n_encoder_layers", config.backbone.n_encoder_layers);
    resolved.set("ff_hidden", config.backbone.ff_hidden);
    resolved.set("tanh_clip", config.backbone.tanh_clip);
    if let Some(s) = config.pomo_starts {
        resolved.set("pomo_starts", s);
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("resolved-config.txt"), resolved.render())?;
    print!("{}", resolved.render());
    Ok(())
}

fn parse_eval_mode(decode: &str, samples: usize) -> Result<EvalMode> {
    match decode {
        "greedy" => Ok(EvalMode::Greedy),
        "sample" => Ok(EvalMode::Sample { k: samples }),
        "aug8" | "aug8-greedy" => Ok(EvalMode::Augment8Greedy),
        "aug8-sample" => Ok(EvalMode::Augment8Sample { k: samples }),
        other => Err(Error::invalid_argument(format!(
            "unknown decode mode {other:?} (greedy|sample|aug8|aug8-sample)"
        ))),
    }
}

fn eval_cvrplib(
    model: &crate::policy::PolicyModel,
    path: &Path,
    mode: EvalMode,
    refs: Option<&Path>,
    seed: u64,
) -> Result<()> {
    if model.problem != Problem::Cvrp {
        return Err(Error::invalid_argument("CVRPLIB evaluation needs a CVRP model"));
    }
    let mut files: Vec<PathBuf> = if path.is_dir() {
        std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "vrp"))
            .collect()
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::invalid_argument(format!("no .vrp files under {}", path.display())));
    }
    files.sort();
    let best_known = match refs {
        Some(p) => named_references(p)?,
        None => Default::default(),
    };
    println!("{:<16} {:>12} {:>12} {:>8}", "instance", "obj", "best-known", "gap");
    for file in files {
        let bench = crate::io::parse_cvrplib(&std::fs::read_to_string(&file)?)?;
        let inst = bench.to_instance()?;
        let nodes = best_tour_nodes(model, &inst, mode, seed)?;
        let original = bench.tour_cost_original(&nodes)?;
        match best_known.get(&bench.name) {
            Some(&bk) => {
                let gap = (original - bk) / bk * 100.0;
                println!("{:<16} {original:>12.0} {bk:>12.0} {gap:>7.2}%", bench.name);
            }
            None => println!("{:<16} {original:>12.0} {:>12} {:>8}", bench.name, "--", "--"),
        }
    }
    Ok(())
}

fn best_tour_nodes(
    model: &crate::policy::PolicyModel,
    inst: &crate::vrp::Instance,
    mode: EvalMode,
    seed: u64,
) -> Result<Vec<usize>> {
    let results = crate::eval::evaluate_tours(model, std::slice::from_ref(inst), mode, seed)?;
    Ok(results.into_iter().next().expect("one instance").nodes)
}

fn solve_one(model: &crate::policy::PolicyModel, path: &Path, mode: EvalMode, seed: u64) -> Result<()> {
    let is_vrp_file = path.extension().is_some_and(|x| x == "vrp");
    if is_vrp_file {
        if model.problem != Problem::Cvrp {
            return Err(Error::invalid_argument("benchmark files describe CVRP instances"));
        }
        let bench = crate::io::parse_cvrplib(&std::fs::read_to_string(path)?)?;
        let inst = bench.to_instance()?;
        let nodes = best_tour_nodes(model, &inst, mode, seed)?;
        let cost = bench.tour_cost_original(&nodes)?;
        println!("tour: {nodes:?}");
        println!("cost (original units): {cost:.0}");
    } else {
        let dataset = crate::io::read_dataset(path)?;
        let inst = dataset
            .instances
            .first()
            .ok_or_else(|| Error::invalid_argument("dataset is empty"))?;
        let nodes = best_tour_nodes(model, inst, mode, seed)?;
        let cost = crate::vrp::tour_cost(inst, &nodes)?;
        println!("tour: {nodes:?}");
        match model.problem {
            Problem::Op => println!("collected prize: {:.4}", -cost),
            _ => println!("cost: {cost:.4}"),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> i32 {
        let mut v = vec!["crossroute".to_string()];
        v.extend(args.iter().map(|s| s.to_string()));
        run(v)
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(cli(&["no-such-command"]), 1);
        assert_eq!(cli(&["gen-data"]), 1); // missing required flags
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(cli(&["--help"]), 0);
    }

    #[test]
    fn gen_data_roundtrip_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        for out in [&a, &b] {
            let code = cli(&[
                "gen-data", "--problem", "op", "--n", "8", "--count", "3",
                "--seed", "9", "--out", out.to_str().unwrap(),
            ]);
            assert_eq!(code, 0);
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn missing_checkpoint_is_a_data_error() {
        assert_eq!(cli(&["params", "--ckpt", "/nonexistent/x.ckpt"]), 2);
    }
}
