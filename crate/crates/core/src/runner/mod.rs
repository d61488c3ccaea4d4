//! Experiment orchestration: resolve a configuration, materialize the
//! dataset, train every seed (in parallel), and write a self-describing
//! run directory of curve CSVs, a summary, a config snapshot, and actor
//! checkpoints.
//!
//! Seeds parallelize; nothing inside a single run does, so a run's outputs
//! depend only on its config snapshot and seed.

pub mod checkpoint;
pub mod config;
pub mod sweep;

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algo::train::{train, TrainOutcome};
use crate::data::{io as data_io, OfflineDataset};
use crate::error::{Error, Result};
use crate::eval::{baselines_for, normalized_score, quantiles, LearningCurve, Quantiles};

pub use checkpoint::{load_actor, save_actor};
pub use config::{DataSource, DatasetSpec, KeyValues, RunConfig};
pub use sweep::{run_sweep, CellOutcome, SweepConfig, SweepRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub status: SeedStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged_message: Option<String>,
    pub final_step: usize,
    pub final_return_mean: f64,
    pub final_return_std: f64,
    pub final_normalized_score: f64,
    pub final_train_mse: f64,
    pub final_val_mse: f64,
    pub curve_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor_file: Option<String>,
}

/// Statistics recomputable from the curve files, plus provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub env: String,
    pub algorithm: String,
    pub regularizer: String,
    /// Where the transitions came from (file path or generator recipe).
    pub dataset: String,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub train_transitions: usize,
    pub val_transitions: usize,
    pub seeds: Vec<SeedReport>,
    /// Mean/std of final normalized scores over completed seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_final_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_final_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_final_quantiles: Option<Quantiles>,
    pub wall_clock_seconds: f64,
    pub version: String,
}

#[derive(Debug)]
pub struct RunRecord {
    pub config: RunConfig,
    pub outcomes: Vec<(u64, TrainOutcome)>,
    pub summary: RunSummary,
    pub curve_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub snapshot_path: PathBuf,
}

impl RunRecord {
    /// Seeds that aborted, with the step they died at.
    pub fn diverged(&self) -> Vec<(u64, usize)> {
        self.outcomes
            .iter()
            .filter_map(|(seed, o)| match o {
                TrainOutcome::Diverged { step, .. } => Some((*seed, *step)),
                TrainOutcome::Completed { .. } => None,
            })
            .collect()
    }

    pub fn curve(&self, seed: u64) -> Option<&LearningCurve> {
        self.outcomes.iter().find(|(s, _)| *s == seed).map(|(_, o)| o.curve())
    }
}

impl DatasetSpec {
    /// Load or generate, check the environment, and split off validation.
    /// Returns (train, validation).
    pub fn materialize(&self, env: crate::envs::EnvKind) -> Result<(OfflineDataset, OfflineDataset)> {
        let full = match &self.source {
            DataSource::File(path) => {
                let ds = data_io::load(path)?;
                if ds.env != env {
                    return Err(Error::Config(format!(
                        "dataset at {} is for env '{}', run wants '{}'",
                        path.display(),
                        ds.env.name(),
                        env.name()
                    )));
                }
                ds
            }
            DataSource::Generate { quality, size, gen_seed } => {
                OfflineDataset::generate(env, *quality, *size, *gen_seed)?
            }
        };
        full.split(self.val_fraction)
    }
}

fn population_stats(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Train every seed of a resolved config and write the run directory.
/// Divergence is not an error here: the seed's partial curve is written and
/// reported, and the caller decides how to surface it.
pub fn run_train(cfg: &RunConfig) -> Result<RunRecord> {
    let t0 = Instant::now();
    let (train_ds, val_ds) = cfg.dataset.materialize(cfg.env)?;
    fs::create_dir_all(&cfg.output_dir)?;

    let snapshot_path = cfg.output_dir.join("config.snapshot");
    fs::write(&snapshot_path, cfg.to_snapshot())?;

    let outcomes: Vec<(u64, TrainOutcome)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| train(&cfg.train_setup(seed), &train_ds, &val_ds).map(|o| (seed, o)))
        .collect::<Result<Vec<_>>>()?;

    let baselines = baselines_for(cfg.env);
    let mut reports = Vec::with_capacity(outcomes.len());
    let mut curve_paths = Vec::with_capacity(outcomes.len());
    for (seed, outcome) in &outcomes {
        let curve_file = format!("curve_{seed}.csv");
        let curve_path = cfg.output_dir.join(&curve_file);
        fs::write(&curve_path, outcome.curve().to_csv())?;
        curve_paths.push(curve_path);

        let mut actor_file = None;
        if let TrainOutcome::Completed { actor, .. } = outcome {
            if cfg.save_actor {
                let base = cfg.output_dir.join(format!("actor_final_{seed}"));
                save_actor(actor, cfg.env, &base)?;
                actor_file = Some(format!("actor_final_{seed}"));
            }
        }

        let last = outcome.curve().final_row().ok_or_else(|| {
            Error::Usage(format!("seed {seed} produced a curve with no rows"))
        })?;
        let (status, diverged_step, diverged_message) = match outcome {
            TrainOutcome::Completed { .. } => (SeedStatus::Completed, None, None),
            TrainOutcome::Diverged { step, message, .. } => {
                (SeedStatus::Diverged, Some(*step), Some(message.clone()))
            }
        };
        reports.push(SeedReport {
            seed: *seed,
            status,
            diverged_step,
            diverged_message,
            final_step: last.step,
            final_return_mean: last.return_mean,
            final_return_std: last.return_std,
            final_normalized_score: normalized_score(last.return_mean, baselines),
            final_train_mse: last.train_mse,
            final_val_mse: last.val_mse,
            curve_file,
            actor_file,
        });
    }

    let finals: Vec<f64> = reports
        .iter()
        .filter(|r| r.status == SeedStatus::Completed)
        .map(|r| r.final_normalized_score)
        .collect();
    let (normalized_final_mean, normalized_final_std) = match population_stats(&finals) {
        Some((m, s)) => (Some(m), Some(s)),
        None => (None, None),
    };
    let normalized_final_quantiles =
        if finals.is_empty() { None } else { Some(quantiles(&finals)?) };

    let summary = RunSummary {
        env: cfg.env.name().to_string(),
        algorithm: cfg.algo.name().to_string(),
        regularizer: cfg.regularizer_label(),
        dataset: cfg.dataset.source.label(),
        total_steps: cfg.total_steps,
        eval_interval: cfg.eval_interval,
        train_transitions: train_ds.len(),
        val_transitions: val_ds.len(),
        seeds: reports,
        normalized_final_mean,
        normalized_final_std,
        normalized_final_quantiles,
        wall_clock_seconds: t0.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let summary_path = cfg.output_dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(&summary_path, json)?;

    Ok(RunRecord { config: cfg.clone(), outcomes, summary, curve_paths, summary_path, snapshot_path })
}
