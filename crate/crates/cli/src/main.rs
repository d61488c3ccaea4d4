//! Command line runner: dataset generation, single training runs, grid
//! sweeps, and checkpoint evaluation.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 a training run
//! diverged (artifacts for the surviving seeds are still written).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sparsereg::data::io as data_io;
use sparsereg::{
    baselines_for, evaluate_policy, load_actor, normalized_score, run_sweep, run_train,
    CellOutcome, Error, KeyValues, OfflineDataset, Result, RunConfig, RunRecord, SeedStatus,
    SweepConfig,
};

#[derive(Parser)]
#[command(name = "sparsereg", version, about = "Offline RL with sparse training")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an offline dataset and save it as manifest + binary.
    GenData(GenDataArgs),
    /// Train one configuration across its seeds and write a run directory.
    Train(RunArgs),
    /// Run a grid of configurations and write a combined score matrix.
    Sweep(RunArgs),
    /// Roll out a saved actor checkpoint and report its score.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Environment: pointmass | pendulum.
    #[arg(long)]
    env: String,
    /// Behavior policy: expert | medium | medium_replay | expert_replay.
    #[arg(long)]
    quality: String,
    /// Number of transitions.
    #[arg(long)]
    size: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 2025)]
    seed: u64,
    /// Output base path; writes <out>.manifest.json and <out>.bin.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing dataset files.
    #[arg(long)]
    force: bool,
}

/// Flags mirror the run config keys; anything given here overrides the
/// config file. `--set` reaches every remaining dotted key.
#[derive(Args)]
struct RunArgs {
    /// Config file: `key = value` lines with optional [sections].
    #[arg(long)]
    config: Option<PathBuf>,

    /// Environment: pointmass | pendulum.
    #[arg(long)]
    env: Option<String>,
    /// Algorithm: bc | td3bc | iql.
    #[arg(long)]
    algorithm: Option<String>,
    /// Directory for curves, summary, snapshot, and checkpoints.
    #[arg(long)]
    output_dir: Option<PathBuf>,

    /// Base path of a saved dataset (excludes --quality/--size).
    #[arg(long)]
    dataset_path: Option<PathBuf>,
    /// Behavior policy quality for a generated dataset.
    #[arg(long)]
    quality: Option<String>,
    /// Transition count for a generated dataset.
    #[arg(long)]
    size: Option<usize>,
    /// Seed for the dataset generator.
    #[arg(long)]
    gen_seed: Option<u64>,

    /// Regularizer kind: none | sparse | l1 | dropout | weight_decay |
    /// layer_norm | spectral_norm.
    #[arg(long)]
    regularizer: Option<String>,
    /// Target sparsity in [0,1) for the sparse regularizer.
    #[arg(long)]
    sparsity: Option<f64>,
    /// Mask schedule: fixed (at init) | periodic.
    #[arg(long)]
    sparse_mode: Option<String>,

    /// Comma-separated hidden layer widths, e.g. 256,256.
    #[arg(long)]
    hidden_dims: Option<String>,
    #[arg(long)]
    total_steps: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Comma-separated training seeds, e.g. 0,1,2.
    #[arg(long)]
    seeds: Option<String>,
    /// Skip writing actor checkpoints.
    #[arg(long)]
    no_save_actor: bool,

    /// Extra dotted-key override, e.g. --set hyper.lr=1e-4 or
    /// --set sweep.sparsity=0.5,0.95. Repeatable; wins over other flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint base path (as written by train: <dir>/actor_final_<seed>).
    #[arg(long)]
    actor: PathBuf,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RunArgs {
    fn overrides(&self) -> Result<KeyValues> {
        let mut kv = KeyValues::default();
        let mut put = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                kv.set(key, v);
            }
        };
        put("env", self.env.clone());
        put("algorithm", self.algorithm.clone());
        put("output_dir", self.output_dir.as_ref().map(|p| p.display().to_string()));
        put("dataset.path", self.dataset_path.as_ref().map(|p| p.display().to_string()));
        put("dataset.quality", self.quality.clone());
        put("dataset.size", self.size.map(|v| v.to_string()));
        put("dataset.gen_seed", self.gen_seed.map(|v| v.to_string()));
        put("regularizer.kind", self.regularizer.clone());
        put("regularizer.sparsity", self.sparsity.map(|v| v.to_string()));
        put("regularizer.mode", self.sparse_mode.clone());
        put("hidden_dims", self.hidden_dims.clone());
        put("total_steps", self.total_steps.map(|v| v.to_string()));
        put("eval_interval", self.eval_interval.map(|v| v.to_string()));
        put("eval_episodes", self.eval_episodes.map(|v| v.to_string()));
        put("seeds", self.seeds.clone());
        if self.no_save_actor {
            kv.set("save_actor", "false");
        }
        for entry in &self.set {
            let (key, value) = entry.split_once('=').ok_or_else(|| {
                Error::Usage(format!("--set expects KEY=VALUE, got '{entry}'"))
            })?;
            kv.set(key.trim(), value.trim());
        }
        Ok(kv)
    }
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<u8> {
    let env = sparsereg::EnvKind::parse(&args.env)?;
    let quality = sparsereg::DataQuality::parse(&args.quality)?;
    let manifest = data_io::manifest_path(&args.out);
    let bin = data_io::bin_path(&args.out);
    if !args.force && (manifest.exists() || bin.exists()) {
        return Err(Error::Usage(format!(
            "refusing to overwrite {} (pass --force to replace it)",
            args.out.display()
        )));
    }
    let ds = OfflineDataset::generate(env, quality, args.size, args.seed)?;
    data_io::save(&ds, &args.out)?;
    let (ret_mean, ret_std) = ds.trajectory_return_stats();
    println!(
        "wrote {} transitions ({} {}) to {}",
        ds.len(),
        env.name(),
        quality.name(),
        args.out.display()
    );
    println!("source trajectory return: mean={ret_mean:.3} std={ret_std:.3}");
    Ok(0)
}

fn print_run(record: &RunRecord) {
    let s = &record.summary;
    println!(
        "{} {} {} [{}] {} steps",
        s.env, s.algorithm, s.regularizer, s.dataset, s.total_steps
    );
    for seed in &s.seeds {
        match seed.status {
            SeedStatus::Completed => println!(
                "  seed {}: return {:.3}±{:.3}  normalized {:.4}  val_mse {:.6}",
                seed.seed,
                seed.final_return_mean,
                seed.final_return_std,
                seed.final_normalized_score,
                seed.final_val_mse
            ),
            SeedStatus::Diverged => println!(
                "  seed {}: diverged at step {} ({})",
                seed.seed,
                seed.diverged_step.unwrap_or(0),
                seed.diverged_message.as_deref().unwrap_or("no message")
            ),
        }
    }
    if let (Some(m), Some(sd)) = (s.normalized_final_mean, s.normalized_final_std) {
        println!("  final normalized score: {m:.4}±{sd:.4}");
    }
    println!("  artifacts: {}", record.summary_path.parent().unwrap().display());
}

fn cmd_train(args: &RunArgs) -> Result<u8> {
    let overrides = args.overrides()?;
    let cfg = RunConfig::load(args.config.as_deref(), &overrides)?;
    let record = run_train(&cfg)?;
    print_run(&record);
    let diverged = record.diverged();
    if diverged.is_empty() {
        Ok(0)
    } else {
        eprintln!(
            "error: {} of {} seeds diverged; partial artifacts written",
            diverged.len(),
            record.summary.seeds.len()
        );
        Ok(3)
    }
}

fn cmd_sweep(args: &RunArgs) -> Result<u8> {
    let overrides = args.overrides()?;
    let sweep = SweepConfig::load(args.config.as_deref(), &overrides)?;
    let record = run_sweep(&sweep)?;
    for cell in &record.cells {
        match &cell.outcome {
            CellOutcome::Scored { mean, std, .. } => {
                println!("cell {}: {mean:.4}±{std:.4}", cell.tag)
            }
            CellOutcome::Failed { error } => println!("cell {}: failed ({error})", cell.tag),
        }
    }
    println!("{}", record.csv.trim_end());
    println!("matrix: {}", record.csv_path.display());
    Ok(0)
}

fn cmd_eval(args: &EvalArgs) -> Result<u8> {
    let (actor, env) = load_actor(&args.actor)?;
    let (mean, std) = evaluate_policy(&actor, env, args.episodes, args.seed)?;
    let score = normalized_score(mean, baselines_for(env));
    println!(
        "{} over {} episodes (seed {}): return {mean:.3}±{std:.3}  normalized {score:.4}",
        env.name(),
        args.episodes,
        args.seed
    );
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::GenData(args) => cmd_gen_data(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
