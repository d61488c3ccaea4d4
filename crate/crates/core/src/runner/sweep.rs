//! Grid sweeps over sparsity, dataset size, regularizer, algorithm, and
//! mask schedule. Every cell is an ordinary run in its own directory under
//! `<output_dir>/cells/`; cell failures are recorded and the sweep keeps
//! going. The combined CSV lays dataset sizes out as rows and sparsity
//! levels as columns, one `mean±std` of final normalized scores per cell.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use super::config::{
    mode_name, parse_mode, regularizer_kind_name, KeyValues, RunConfig, CADENCE_DIVISOR,
    CUTOFF_DIVISOR,
};
use super::{run_train, RunRecord, SeedStatus};
use crate::algo::AlgoKind;
use crate::error::{Error, Result};
use crate::sparse::{SparseMode, SparsityConfig, DEFAULT_SCORE_BATCH};
use crate::tensor::optim::DEFAULT_WEIGHT_DECAY;
use crate::tensor::regularizer::{Regularizer, DEFAULT_DROPOUT_RATE, DEFAULT_L1_LAMBDA};

const KNOWN_KINDS: [&str; 7] =
    ["none", "l1", "dropout", "layer_norm", "spectral_norm", "weight_decay", "sparse"];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Template for every cell; its output_dir is the sweep root.
    pub base: RunConfig,
    pub algorithms: Option<Vec<AlgoKind>>,
    /// Regularizer kind names; parameters come from the base config when
    /// the kinds match, otherwise from the per-kind defaults.
    pub regularizers: Option<Vec<String>>,
    pub modes: Option<Vec<SparseMode>>,
    pub sizes: Option<Vec<usize>>,
    pub sparsities: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub tag: String,
    /// (axis, value) pairs, in matrix order.
    pub axes: Vec<(String, String)>,
    pub config: RunConfig,
}

#[derive(Debug)]
pub enum CellOutcome {
    Scored { mean: f64, std: f64, per_seed: Vec<f64> },
    Failed { error: String },
}

#[derive(Debug)]
pub struct CellResult {
    pub tag: String,
    pub axes: Vec<(String, String)>,
    pub outcome: CellOutcome,
    /// Present whenever the runs themselves executed, even if every seed
    /// diverged.
    pub record: Option<RunRecord>,
}

impl CellResult {
    /// Matrix cell text: the statistic or the failure marker.
    pub fn cell_text(&self) -> String {
        match &self.outcome {
            CellOutcome::Scored { mean, std, .. } => format!("{mean:.4}±{std:.4}"),
            CellOutcome::Failed { .. } => "failed".to_string(),
        }
    }
}

#[derive(Debug)]
pub struct SweepRecord {
    pub cells: Vec<CellResult>,
    pub csv: String,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
}

fn unique_or_err<T: PartialEq + std::fmt::Debug>(axis: &str, values: &[T]) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if values[..i].contains(v) {
            return Err(Error::Config(format!(
                "sweep.{axis}: duplicate value {v:?} would collide in the grid"
            )));
        }
    }
    Ok(())
}

fn as_sparse_mut(reg: &mut Regularizer) -> Result<&mut SparsityConfig> {
    match reg {
        Regularizer::Sparse(cfg) => Ok(cfg),
        other => Err(Error::Config(format!(
            "sparsity/mode axes need the sparse regularizer, cell has '{}'",
            regularizer_kind_name(other)
        ))),
    }
}

fn kind_regularizer(kind: &str, base: &RunConfig) -> Regularizer {
    let b = &base.regularizer;
    match kind {
        "none" => Regularizer::None,
        "layer_norm" => Regularizer::LayerNorm,
        "spectral_norm" => Regularizer::SpectralNorm,
        "l1" => Regularizer::L1 { lambda: b.l1_lambda().unwrap_or(DEFAULT_L1_LAMBDA) },
        "dropout" => Regularizer::Dropout {
            rate: match b {
                Regularizer::Dropout { rate } => *rate,
                _ => DEFAULT_DROPOUT_RATE,
            },
        },
        "weight_decay" => Regularizer::WeightDecay {
            coefficient: match b {
                Regularizer::WeightDecay { coefficient } => *coefficient,
                _ => DEFAULT_WEIGHT_DECAY,
            },
        },
        "sparse" => Regularizer::Sparse(match b {
            Regularizer::Sparse(cfg) => *cfg,
            _ => SparsityConfig {
                sparsity: 0.0, // every caller overwrites this from the axis
                mode: SparseMode::PeriodicUpdates,
                refresh_interval: (base.total_steps / CADENCE_DIVISOR).max(1),
                refresh_cutoff: base.total_steps / CUTOFF_DIVISOR,
                score_batch: DEFAULT_SCORE_BATCH,
                mask_biases: true,
                fixed_score_batch: false,
            },
        }),
        other => unreachable!("kind '{other}' was validated at resolve time"),
    }
}

impl SweepConfig {
    /// Resolve a sweep file: the `[sweep]` section declares the axes, the
    /// rest is the base run config.
    pub fn resolve(kv: &KeyValues) -> Result<SweepConfig> {
        let mut rest = kv.clone();
        let sweep_kv = rest.split_prefix("sweep");

        let mut known = BTreeMap::new();
        for key in sweep_kv.keys() {
            if !["algorithm", "regularizer", "mode", "size", "sparsity"].contains(&key) {
                return Err(Error::Config(format!("sweep.{key}: unknown axis")));
            }
            known.insert(key.to_string(), sweep_kv.get(key).unwrap().to_string());
        }
        let list = |axis: &str| known.get(axis).map(|s| s.as_str());

        let algorithms = list("algorithm")
            .map(|s| {
                s.split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(AlgoKind::parse)
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let regularizers = list("regularizer")
            .map(|s| {
                s.split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(|k| {
                        if KNOWN_KINDS.contains(&k) {
                            Ok(k.to_string())
                        } else {
                            Err(Error::Config(format!(
                                "sweep.regularizer: unknown kind '{k}'"
                            )))
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let modes = list("mode")
            .map(|s| {
                s.split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(|m| parse_mode(m).map_err(|e| Error::Config(format!("sweep.mode: {e}"))))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        fn parse_num_list<T: std::str::FromStr>(axis: &str, s: &str) -> Result<Vec<T>>
        where
            T::Err: std::fmt::Display,
        {
            s.split(',')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(|p| {
                    p.parse().map_err(|e| Error::Config(format!("sweep.{axis}: '{p}': {e}")))
                })
                .collect()
        }
        let sizes: Option<Vec<usize>> =
            list("size").map(|s| parse_num_list("size", s)).transpose()?;
        let sparsities: Option<Vec<f64>> =
            list("sparsity").map(|s| parse_num_list("sparsity", s)).transpose()?;

        for (axis, empty) in [
            ("algorithm", algorithms.as_ref().map_or(false, Vec::is_empty)),
            ("regularizer", regularizers.as_ref().map_or(false, Vec::is_empty)),
            ("mode", modes.as_ref().map_or(false, Vec::is_empty)),
            ("size", sizes.as_ref().map_or(false, Vec::is_empty)),
            ("sparsity", sparsities.as_ref().map_or(false, Vec::is_empty)),
        ] {
            if empty {
                return Err(Error::Config(format!("sweep.{axis}: empty axis")));
            }
        }
        if let Some(v) = &algorithms {
            unique_or_err("algorithm", v)?;
        }
        if let Some(v) = &regularizers {
            unique_or_err("regularizer", v)?;
        }
        if let Some(v) = &modes {
            unique_or_err("mode", v)?;
        }
        if let Some(v) = &sizes {
            unique_or_err("size", v)?;
        }
        if let Some(v) = &sparsities {
            unique_or_err("sparsity", v)?;
        }

        let sparse_axes = sparsities.is_some() || modes.is_some();
        if sparse_axes {
            if let Some(kinds) = &regularizers {
                if kinds.iter().any(|k| k != "sparse") {
                    return Err(Error::Config(
                        "sweep: sparsity/mode axes cannot combine with non-sparse \
                         regularizer axis values; run those as a separate sweep"
                            .into(),
                    ));
                }
            }
            match rest.get("regularizer.kind") {
                None => rest.set("regularizer.kind", "sparse"),
                Some("sparse") => {}
                Some(other) => {
                    return Err(Error::Config(format!(
                        "sweep: sparsity/mode axes need regularizer.kind = sparse, \
                         base config has '{other}'"
                    )))
                }
            }
            if let (Some(sp), false) = (&sparsities, rest.contains("regularizer.sparsity")) {
                rest.set("regularizer.sparsity", sp[0].to_string());
            }
        }
        // A size axis fills in the base dataset size; every cell overrides it.
        if let (Some(sz), false) = (&sizes, rest.contains("dataset.size")) {
            if !rest.contains("dataset.path") {
                rest.set("dataset.size", sz[0].to_string());
            }
        }

        let base = RunConfig::resolve(&rest)?;
        if sizes.is_some() && !matches!(base.dataset.source, super::DataSource::Generate { .. })
        {
            return Err(Error::Config(
                "sweep.size: needs a generated dataset (quality/size), not dataset.path".into(),
            ));
        }
        if let Some(kinds) = &regularizers {
            if kinds.iter().any(|k| k == "sparse")
                && sparsities.is_none()
                && !matches!(base.regularizer, Regularizer::Sparse(_))
            {
                return Err(Error::Config(
                    "sweep.regularizer: 'sparse' needs a sparsity, either in \
                     [regularizer] or as a sparsity axis"
                        .into(),
                ));
            }
        }
        Ok(SweepConfig { base, algorithms, regularizers, modes, sizes, sparsities })
    }

    pub fn load(path: Option<&std::path::Path>, overrides: &KeyValues) -> Result<SweepConfig> {
        let base = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                KeyValues::parse(&text, &p.display().to_string())?
            }
            None => KeyValues::default(),
        };
        SweepConfig::resolve(&base.merged(overrides))
    }

    /// Base snapshot plus the axis declarations.
    pub fn to_snapshot(&self) -> String {
        let mut out = self.base.to_snapshot();
        out.push_str("\n[sweep]\n");
        if let Some(v) = &self.algorithms {
            let names: Vec<&str> = v.iter().map(|a| a.name()).collect();
            out.push_str(&format!("algorithm = {}\n", names.join(",")));
        }
        if let Some(v) = &self.regularizers {
            out.push_str(&format!("regularizer = {}\n", v.join(",")));
        }
        if let Some(v) = &self.modes {
            let names: Vec<&str> = v.iter().map(|m| mode_name(*m)).collect();
            out.push_str(&format!("mode = {}\n", names.join(",")));
        }
        if let Some(v) = &self.sizes {
            let names: Vec<String> = v.iter().map(|n| n.to_string()).collect();
            out.push_str(&format!("size = {}\n", names.join(",")));
        }
        if let Some(v) = &self.sparsities {
            let names: Vec<String> = v.iter().map(|s| s.to_string()).collect();
            out.push_str(&format!("sparsity = {}\n", names.join(",")));
        }
        out
    }

    /// Expand the grid. Axis order in tags and in the matrix is
    /// algorithm, regularizer, mode, size, sparsity.
    pub fn cells(&self) -> Result<Vec<SweepCell>> {
        let algos: Vec<Option<AlgoKind>> = match &self.algorithms {
            Some(v) => v.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let regs: Vec<Option<&str>> = match &self.regularizers {
            Some(v) => v.iter().map(|s| Some(s.as_str())).collect(),
            None => vec![None],
        };
        let modes: Vec<Option<SparseMode>> = match &self.modes {
            Some(v) => v.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let sizes: Vec<Option<usize>> = match &self.sizes {
            Some(v) => v.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let sparsities: Vec<Option<f64>> = match &self.sparsities {
            Some(v) => v.iter().copied().map(Some).collect(),
            None => vec![None],
        };

        let mut cells = Vec::new();
        for &algo in &algos {
            for &reg in &regs {
                for &mode in &modes {
                    for &size in &sizes {
                        for &sparsity in &sparsities {
                            let mut cfg = self.base.clone();
                            let mut tag_parts = Vec::new();
                            let mut axes = Vec::new();
                            if let Some(a) = algo {
                                cfg.algo = a;
                                tag_parts.push(a.name().to_string());
                                axes.push(("algorithm".to_string(), a.name().to_string()));
                            }
                            if let Some(kind) = reg {
                                cfg.regularizer = kind_regularizer(kind, &self.base);
                                tag_parts.push(kind.to_string());
                                axes.push(("regularizer".to_string(), kind.to_string()));
                            }
                            if let Some(m) = mode {
                                let s = as_sparse_mut(&mut cfg.regularizer)?;
                                s.mode = m;
                                s.refresh_cutoff = match m {
                                    SparseMode::FixedAtInit => 0,
                                    SparseMode::PeriodicUpdates => {
                                        if s.refresh_cutoff == 0 {
                                            cfg.total_steps / CUTOFF_DIVISOR
                                        } else {
                                            s.refresh_cutoff
                                        }
                                    }
                                };
                                tag_parts.push(mode_name(m).to_string());
                                axes.push(("mode".to_string(), mode_name(m).to_string()));
                            }
                            if let Some(n) = size {
                                match &mut cfg.dataset.source {
                                    super::DataSource::Generate { size, .. } => *size = n,
                                    super::DataSource::File(_) => {
                                        return Err(Error::Config(
                                            "sweep.size over a file dataset".into(),
                                        ))
                                    }
                                }
                                tag_parts.push(format!("size{n}"));
                                axes.push(("size".to_string(), n.to_string()));
                            }
                            if let Some(sp) = sparsity {
                                as_sparse_mut(&mut cfg.regularizer)?.sparsity = sp;
                                tag_parts.push(format!("sp{sp}"));
                                axes.push(("sparsity".to_string(), sp.to_string()));
                            }
                            cfg.regularizer.validate()?;
                            let tag = if tag_parts.is_empty() {
                                "cell".to_string()
                            } else {
                                tag_parts.join("_")
                            };
                            cfg.output_dir = self.base.output_dir.join("cells").join(&tag);
                            cells.push(SweepCell { tag, axes, config: cfg });
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Serialize)]
struct CellJson<'a> {
    tag: &'a str,
    axes: BTreeMap<&'a str, &'a str>,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    std: Option<f64>,
    per_seed: Vec<f64>,
    diverged_seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
    dir: String,
}

/// Build the combined matrix: one row per (algorithm, regularizer, mode,
/// size) combination, one column per sparsity value (or a single score
/// column when sparsity is not swept).
fn matrix_csv(sweep: &SweepConfig, results: &[CellResult]) -> String {
    let by_tag: BTreeMap<&str, &CellResult> =
        results.iter().map(|r| (r.tag.as_str(), r)).collect();

    let mut header = Vec::new();
    if sweep.algorithms.is_some() {
        header.push("algorithm".to_string());
    }
    if sweep.regularizers.is_some() {
        header.push("regularizer".to_string());
    }
    if sweep.modes.is_some() {
        header.push("mode".to_string());
    }
    if sweep.sizes.is_some() {
        header.push("size".to_string());
    }
    match &sweep.sparsities {
        Some(sps) => header.extend(sps.iter().map(|sp| format!("sparsity_{sp}"))),
        None => header.push("final_score".to_string()),
    }

    let blank = [String::new()];
    let algos: Vec<String> = match &sweep.algorithms {
        Some(v) => v.iter().map(|a| a.name().to_string()).collect(),
        None => blank.to_vec(),
    };
    let regs: Vec<String> = match &sweep.regularizers {
        Some(v) => v.clone(),
        None => blank.to_vec(),
    };
    let modes: Vec<String> = match &sweep.modes {
        Some(v) => v.iter().map(|m| mode_name(*m).to_string()).collect(),
        None => blank.to_vec(),
    };
    let sizes: Vec<String> = match &sweep.sizes {
        Some(v) => v.iter().map(|n| format!("size{n}")).collect(),
        None => blank.to_vec(),
    };
    let sparsities: Vec<String> = match &sweep.sparsities {
        Some(v) => v.iter().map(|sp| format!("sp{sp}")).collect(),
        None => blank.to_vec(),
    };

    let mut out = header.join(",");
    out.push('\n');
    for a in &algos {
        for r in &regs {
            for m in &modes {
                for n in &sizes {
                    let mut row = Vec::new();
                    for part in [a, r, m, n] {
                        if !part.is_empty() {
                            row.push(part.strip_prefix("size").unwrap_or(part).to_string());
                        }
                    }
                    for sp in &sparsities {
                        let tag_parts: Vec<&str> = [a, r, m, n, sp]
                            .into_iter()
                            .filter(|p| !p.is_empty())
                            .map(String::as_str)
                            .collect();
                        let tag =
                            if tag_parts.is_empty() { "cell".to_string() } else { tag_parts.join("_") };
                        let text = by_tag
                            .get(tag.as_str())
                            .map(|r| r.cell_text())
                            .unwrap_or_else(|| "missing".to_string());
                        row.push(text);
                    }
                    out.push_str(&row.join(","));
                    out.push('\n');
                }
            }
        }
    }
    out
}

/// Run every cell, tolerating per-cell failures, and write the combined
/// matrix CSV plus a machine-readable summary at the sweep root.
pub fn run_sweep(sweep: &SweepConfig) -> Result<SweepRecord> {
    let t0 = Instant::now();
    let root = &sweep.base.output_dir;
    fs::create_dir_all(root)?;
    fs::write(root.join("sweep.snapshot"), sweep.to_snapshot())?;

    let cells = sweep.cells()?;
    let mut results = Vec::with_capacity(cells.len());
    for cell in cells {
        let outcome = match run_train(&cell.config) {
            Err(e) => CellResult {
                tag: cell.tag,
                axes: cell.axes,
                outcome: CellOutcome::Failed { error: e.to_string() },
                record: None,
            },
            Ok(record) => {
                let per_seed: Vec<f64> = record
                    .summary
                    .seeds
                    .iter()
                    .filter(|r| r.status == SeedStatus::Completed)
                    .map(|r| r.final_normalized_score)
                    .collect();
                let outcome = match (record.summary.normalized_final_mean,
                                     record.summary.normalized_final_std)
                {
                    (Some(mean), Some(std)) => CellOutcome::Scored { mean, std, per_seed },
                    _ => CellOutcome::Failed {
                        error: format!("all {} seeds diverged", record.summary.seeds.len()),
                    },
                };
                CellResult { tag: cell.tag, axes: cell.axes, outcome, record: Some(record) }
            }
        };
        results.push(outcome);
    }

    let csv = matrix_csv(sweep, &results);
    let csv_path = root.join("sweep.csv");
    fs::write(&csv_path, &csv)?;

    let cells_json: Vec<CellJson> = results
        .iter()
        .map(|r| {
            let (status, mean, std, per_seed, error) = match &r.outcome {
                CellOutcome::Scored { mean, std, per_seed } => {
                    ("ok", Some(*mean), Some(*std), per_seed.clone(), None)
                }
                CellOutcome::Failed { error } => ("failed", None, None, Vec::new(), Some(error.as_str())),
            };
            let diverged_seeds = r
                .record
                .as_ref()
                .map(|rec| rec.diverged().into_iter().map(|(s, _)| s).collect())
                .unwrap_or_default();
            CellJson {
                tag: &r.tag,
                axes: r.axes.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect(),
                status,
                mean,
                std,
                per_seed,
                diverged_seeds,
                error,
                dir: format!("cells/{}", r.tag),
            }
        })
        .collect();
    #[derive(Serialize)]
    struct SweepJson<'a> {
        cells: Vec<CellJson<'a>>,
        wall_clock_seconds: f64,
        version: &'static str,
    }
    let summary = SweepJson {
        cells: cells_json,
        wall_clock_seconds: t0.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION"),
    };
    let summary_path = root.join("sweep_summary.json");
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(&summary_path, json)?;

    Ok(SweepRecord { cells: results, csv, csv_path, summary_path })
}
