//! Run configuration: a flat key-value file with sections, overridable by
//! command line assignments. Overrides always win over file values.
//!
//! Resolution collects every problem it finds (unknown keys, unparsable
//! values, missing required fields, cross-field contradictions) and reports
//! them all in one error instead of stopping at the first.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::algo::train::{TrainSetup, DEFAULT_EVAL_EPISODES};
use crate::algo::{AlgoHyper, AlgoKind};
use crate::data::DataQuality;
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::sparse::{SparseMode, SparsityConfig, DEFAULT_SCORE_BATCH};
use crate::tensor::optim::DEFAULT_WEIGHT_DECAY;
use crate::tensor::regularizer::{Regularizer, DEFAULT_DROPOUT_RATE, DEFAULT_L1_LAMBDA};

pub const DEFAULT_TOTAL_STEPS: usize = 20_000;
pub const DEFAULT_HIDDEN: [usize; 2] = [256, 256];
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];
pub const DEFAULT_VAL_FRACTION: f64 = 0.2;
pub const DEFAULT_GEN_SEED: u64 = 2025;
/// eval_interval and the sparse refresh interval default to
/// total_steps / CADENCE_DIVISOR.
pub const CADENCE_DIVISOR: usize = 200;
/// The sparse refresh cutoff defaults to total_steps / CUTOFF_DIVISOR.
pub const CUTOFF_DIVISOR: usize = 5;

/// Where the transitions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Base path of a saved dataset (`<base>.manifest.json` + `<base>.bin`).
    File(PathBuf),
    Generate { quality: DataQuality, size: usize, gen_seed: u64 },
}

impl DataSource {
    pub fn label(&self) -> String {
        match self {
            DataSource::File(p) => format!("file({})", p.display()),
            DataSource::Generate { quality, size, gen_seed } => {
                format!("generate({}, {size}, seed {gen_seed})", quality.name())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub source: DataSource,
    /// Fraction of transitions (whole trajectories, taken from the front)
    /// held out for validation diagnostics.
    pub val_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub algo: AlgoKind,
    pub dataset: DatasetSpec,
    pub regularizer: Regularizer,
    pub hidden_dims: Vec<usize>,
    pub hyper: AlgoHyper,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Write a per-seed actor checkpoint next to the curve files.
    pub save_actor: bool,
}

/// Dotted-key map. File sections become key prefixes: `sparsity` inside
/// `[regularizer]` is the key `regularizer.sparsity`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str, context: &str) -> Result<KeyValues> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse { context: context.to_string(), message };
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(err(format!("line {}: unterminated section header", idx + 1)));
                };
                section = name.trim().to_string();
                if section.is_empty() {
                    return Err(err(format!("line {}: empty section name", idx + 1)));
                }
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(err(format!(
                    "line {}: expected 'key = value' or '[section]', got '{line}'",
                    idx + 1
                )));
            };
            let k = k.trim();
            if k.is_empty() {
                return Err(err(format!("line {}: empty key", idx + 1)));
            }
            let key =
                if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            entries.insert(key, v.trim().to_string());
        }
        Ok(KeyValues { entries })
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> KeyValues
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        KeyValues {
            entries: pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Layer `over` on top of `self`; values in `over` win.
    pub fn merged(mut self, over: &KeyValues) -> KeyValues {
        for (k, v) in &over.entries {
            self.entries.insert(k.clone(), v.clone());
        }
        self
    }

    /// Split off every key under `prefix.` (the prefix is stripped).
    pub fn split_prefix(&mut self, prefix: &str) -> KeyValues {
        let dotted = format!("{prefix}.");
        let mut taken = BTreeMap::new();
        self.entries.retain(|k, v| {
            if let Some(rest) = k.strip_prefix(&dotted) {
                taken.insert(rest.to_string(), v.clone());
                false
            } else {
                true
            }
        });
        KeyValues { entries: taken }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }
}

/// Tracks which keys resolution consumed so leftovers can be reported, and
/// accumulates every error encountered along the way.
struct Resolver<'a> {
    kv: &'a KeyValues,
    taken: BTreeSet<&'a str>,
    errors: Vec<String>,
}

impl<'a> Resolver<'a> {
    fn new(kv: &'a KeyValues) -> Self {
        Resolver { kv, taken: BTreeSet::new(), errors: Vec::new() }
    }

    fn raw(&mut self, key: &str) -> Option<&'a str> {
        if let Some((k, v)) = self.kv.entries.get_key_value(key) {
            self.taken.insert(k.as_str());
            Some(v.as_str())
        } else {
            None
        }
    }

    fn fail(&mut self, message: impl Into<String>) {
        self.errors.push(message.into());
    }

    fn map<T>(
        &mut self,
        key: &str,
        f: impl FnOnce(&str) -> std::result::Result<T, String>,
    ) -> Option<T> {
        let raw = self.raw(key)?;
        match f(raw) {
            Ok(v) => Some(v),
            Err(m) => {
                self.fail(format!("{key}: {m}"));
                None
            }
        }
    }

    fn number<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: Display,
    {
        self.map(key, |s| s.parse::<T>().map_err(|e| format!("'{s}': {e}")))
    }

    fn boolean(&mut self, key: &str) -> Option<bool> {
        self.map(key, |s| match s {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(format!("'{other}' is not a boolean (true/false)")),
        })
    }

    fn required<T>(&mut self, key: &str, value: Option<T>) -> Option<T> {
        if value.is_none() && !self.kv.contains(key) {
            self.fail(format!("{key}: required"));
        }
        value
    }

    fn finish(mut self) -> Result<()> {
        for key in self.kv.keys() {
            if !self.taken.contains(key) {
                self.errors.push(format!("{key}: unknown or inapplicable key"));
            }
        }
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(self.errors.join("\n")))
        }
    }
}

fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: Display,
{
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    if items.is_empty() {
        return Err("empty list".into());
    }
    items.iter().map(|p| p.parse::<T>().map_err(|e| format!("'{p}': {e}"))).collect()
}

pub(crate) fn parse_mode(s: &str) -> std::result::Result<SparseMode, String> {
    match s {
        "fixed" | "sfi" | "fixed_at_init" => Ok(SparseMode::FixedAtInit),
        "periodic" | "spu" | "periodic_updates" => Ok(SparseMode::PeriodicUpdates),
        other => Err(format!("'{other}' is not a mask schedule (fixed/sfi or periodic/spu)")),
    }
}

pub(crate) fn mode_name(mode: SparseMode) -> &'static str {
    match mode {
        SparseMode::FixedAtInit => "fixed",
        SparseMode::PeriodicUpdates => "periodic",
    }
}

pub(crate) fn regularizer_kind_name(reg: &Regularizer) -> &'static str {
    match reg {
        Regularizer::None => "none",
        Regularizer::L1 { .. } => "l1",
        Regularizer::Dropout { .. } => "dropout",
        Regularizer::LayerNorm => "layer_norm",
        Regularizer::SpectralNorm => "spectral_norm",
        Regularizer::WeightDecay { .. } => "weight_decay",
        Regularizer::Sparse(_) => "sparse",
    }
}

impl RunConfig {
    /// Resolve a config from an optional file plus overrides, applying
    /// defaults and validating everything.
    pub fn load(path: Option<&Path>, overrides: &KeyValues) -> Result<RunConfig> {
        let base = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                KeyValues::parse(&text, &p.display().to_string())?
            }
            None => KeyValues::default(),
        };
        RunConfig::resolve(&base.merged(overrides))
    }

    pub fn resolve(kv: &KeyValues) -> Result<RunConfig> {
        let mut r = Resolver::new(kv);

        let env = r.map("env", |s| EnvKind::parse(s).map_err(|e| e.to_string()));
        let env = r.required("env", env);
        let algo = r.map("algorithm", |s| AlgoKind::parse(s).map_err(|e| e.to_string()));
        let algo = r.required("algorithm", algo);

        let total_steps = r.number::<usize>("total_steps").unwrap_or(DEFAULT_TOTAL_STEPS);
        let eval_interval = r
            .number::<usize>("eval_interval")
            .unwrap_or_else(|| (total_steps / CADENCE_DIVISOR).max(1));
        let eval_episodes = r.number::<usize>("eval_episodes").unwrap_or(DEFAULT_EVAL_EPISODES);
        let hidden_dims = r
            .map("hidden_dims", parse_list::<usize>)
            .unwrap_or_else(|| DEFAULT_HIDDEN.to_vec());
        let seeds =
            r.map("seeds", parse_list::<u64>).unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
        let output_dir = r.raw("output_dir").map(PathBuf::from);
        let output_dir = r.required("output_dir", output_dir);
        let save_actor = r.boolean("save_actor").unwrap_or(true);

        // Dataset: a file path, or generator settings, never both.
        let ds_path = r.raw("dataset.path").map(PathBuf::from);
        let quality = r.map("dataset.quality", |s| {
            DataQuality::parse(s).map_err(|e| e.to_string())
        });
        let size = r.number::<usize>("dataset.size");
        let gen_seed_explicit = kv.contains("dataset.gen_seed");
        let gen_seed = r.number::<u64>("dataset.gen_seed").unwrap_or(DEFAULT_GEN_SEED);
        let val_fraction =
            r.number::<f64>("dataset.val_fraction").unwrap_or(DEFAULT_VAL_FRACTION);
        let source = match ds_path {
            Some(p) => {
                if quality.is_some() || size.is_some() || gen_seed_explicit {
                    r.fail(
                        "dataset.path: excludes dataset.quality, dataset.size and dataset.gen_seed",
                    );
                }
                Some(DataSource::File(p))
            }
            None => match (quality, size) {
                (Some(q), Some(n)) => Some(DataSource::Generate { quality: q, size: n, gen_seed }),
                _ => {
                    if !kv.contains("dataset.quality") || !kv.contains("dataset.size") {
                        r.fail(
                            "dataset: need dataset.path, or dataset.quality and dataset.size",
                        );
                    }
                    None
                }
            },
        };
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            r.fail(format!("dataset.val_fraction: must be in (0, 1), got {val_fraction}"));
        }

        // Exactly one regularizer, chosen by kind.
        let kind = r.raw("regularizer.kind").unwrap_or("none").to_string();
        let regularizer = match kind.as_str() {
            "none" => Regularizer::None,
            "l1" => Regularizer::L1 {
                lambda: r.number::<f64>("regularizer.lambda").unwrap_or(DEFAULT_L1_LAMBDA),
            },
            "dropout" => Regularizer::Dropout {
                rate: r.number::<f64>("regularizer.rate").unwrap_or(DEFAULT_DROPOUT_RATE),
            },
            "layer_norm" => Regularizer::LayerNorm,
            "spectral_norm" => Regularizer::SpectralNorm,
            "weight_decay" => Regularizer::WeightDecay {
                coefficient: r
                    .number::<f64>("regularizer.coefficient")
                    .unwrap_or(DEFAULT_WEIGHT_DECAY),
            },
            "sparse" => {
                let mode = r
                    .map("regularizer.mode", parse_mode)
                    .unwrap_or(SparseMode::PeriodicUpdates);
                let sparsity = r.number::<f64>("regularizer.sparsity");
                let sparsity = r.required("regularizer.sparsity", sparsity).unwrap_or(0.0);
                Regularizer::Sparse(SparsityConfig {
                    sparsity,
                    mode,
                    refresh_interval: r
                        .number::<usize>("regularizer.refresh_interval")
                        .unwrap_or_else(|| (total_steps / CADENCE_DIVISOR).max(1)),
                    refresh_cutoff: r
                        .number::<usize>("regularizer.refresh_cutoff")
                        .unwrap_or(match mode {
                            SparseMode::FixedAtInit => 0,
                            SparseMode::PeriodicUpdates => total_steps / CUTOFF_DIVISOR,
                        }),
                    score_batch: r
                        .number::<usize>("regularizer.score_batch")
                        .unwrap_or(DEFAULT_SCORE_BATCH),
                    mask_biases: r.boolean("regularizer.mask_biases").unwrap_or(true),
                    fixed_score_batch: r
                        .boolean("regularizer.fixed_score_batch")
                        .unwrap_or(false),
                })
            }
            other => {
                r.fail(format!(
                    "regularizer.kind: unknown '{other}'; expected none, l1, dropout, \
                     layer_norm, spectral_norm, weight_decay or sparse"
                ));
                Regularizer::None
            }
        };
        if let Err(e) = regularizer.validate() {
            r.fail(e.to_string());
        }

        let mut hyper = AlgoHyper::default();
        if let Some(v) = r.number::<f64>("hyper.gamma") {
            hyper.gamma = v;
        }
        if let Some(v) = r.number::<f64>("hyper.tau") {
            hyper.tau = v;
        }
        if let Some(v) = r.number::<usize>("hyper.policy_freq") {
            hyper.policy_freq = v;
        }
        if let Some(v) = r.number::<f64>("hyper.lr") {
            hyper.lr = v;
        }
        if let Some(v) = r.number::<usize>("hyper.batch") {
            hyper.batch = v;
        }
        if let Some(v) = r.number::<f64>("hyper.td3bc_alpha") {
            hyper.td3bc_alpha = v;
        }
        if let Some(v) = r.number::<f64>("hyper.iql_expectile") {
            hyper.iql_expectile = v;
        }
        if let Some(v) = r.number::<f64>("hyper.iql_beta") {
            hyper.iql_beta = v;
        }
        if let Some(v) = r.number::<f64>("hyper.awr_clip") {
            hyper.awr_clip = v;
        }
        if let Err(e) = hyper.validate() {
            r.fail(e.to_string());
        }

        if seeds.is_empty() {
            r.fail("seeds: must not be empty");
        } else {
            let mut sorted = seeds.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != seeds.len() {
                r.fail("seeds: duplicate seeds would overwrite each other's outputs");
            }
        }
        if hidden_dims.is_empty() || hidden_dims.iter().any(|&d| d == 0) {
            r.fail(format!("hidden_dims: need positive widths, got {hidden_dims:?}"));
        }
        if total_steps == 0 {
            r.fail("total_steps: must be at least 1");
        }
        if eval_interval == 0 {
            r.fail("eval_interval: must be at least 1");
        } else if total_steps % eval_interval != 0 {
            r.fail(format!(
                "eval_interval: {eval_interval} does not divide total_steps {total_steps}"
            ));
        }
        if eval_episodes == 0 {
            r.fail("eval_episodes: must be at least 1");
        }

        r.finish()?;
        Ok(RunConfig {
            env: env.expect("validated"),
            algo: algo.expect("validated"),
            dataset: DatasetSpec { source: source.expect("validated"), val_fraction },
            regularizer,
            hidden_dims,
            hyper,
            total_steps,
            eval_interval,
            eval_episodes,
            seeds,
            output_dir: output_dir.expect("validated"),
            save_actor,
        })
    }

    /// Canonical key-value rendering. Parsing it back yields an equal
    /// config, so a snapshot plus the seed list pins a run completely.
    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        let mut line = |s: String| {
            out.push_str(&s);
            out.push('\n');
        };
        line(format!("env = {}", self.env.name()));
        line(format!("algorithm = {}", self.algo.name()));
        line(format!(
            "hidden_dims = {}",
            self.hidden_dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
        ));
        line(format!("total_steps = {}", self.total_steps));
        line(format!("eval_interval = {}", self.eval_interval));
        line(format!("eval_episodes = {}", self.eval_episodes));
        line(format!(
            "seeds = {}",
            self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
        ));
        line(format!("output_dir = {}", self.output_dir.display()));
        line(format!("save_actor = {}", self.save_actor));
        line(String::new());
        line("[dataset]".to_string());
        match &self.dataset.source {
            DataSource::File(p) => line(format!("path = {}", p.display())),
            DataSource::Generate { quality, size, gen_seed } => {
                line(format!("quality = {}", quality.name()));
                line(format!("size = {size}"));
                line(format!("gen_seed = {gen_seed}"));
            }
        }
        line(format!("val_fraction = {}", self.dataset.val_fraction));
        line(String::new());
        line("[regularizer]".to_string());
        line(format!("kind = {}", regularizer_kind_name(&self.regularizer)));
        match &self.regularizer {
            Regularizer::L1 { lambda } => line(format!("lambda = {lambda}")),
            Regularizer::Dropout { rate } => line(format!("rate = {rate}")),
            Regularizer::WeightDecay { coefficient } => {
                line(format!("coefficient = {coefficient}"))
            }
            Regularizer::Sparse(cfg) => {
                line(format!("sparsity = {}", cfg.sparsity));
                line(format!("mode = {}", mode_name(cfg.mode)));
                line(format!("refresh_interval = {}", cfg.refresh_interval));
                line(format!("refresh_cutoff = {}", cfg.refresh_cutoff));
                line(format!("score_batch = {}", cfg.score_batch));
                line(format!("mask_biases = {}", cfg.mask_biases));
                line(format!("fixed_score_batch = {}", cfg.fixed_score_batch));
            }
            _ => {}
        }
        line(String::new());
        line("[hyper]".to_string());
        line(format!("gamma = {}", self.hyper.gamma));
        line(format!("tau = {}", self.hyper.tau));
        line(format!("policy_freq = {}", self.hyper.policy_freq));
        line(format!("lr = {}", self.hyper.lr));
        line(format!("batch = {}", self.hyper.batch));
        line(format!("td3bc_alpha = {}", self.hyper.td3bc_alpha));
        line(format!("iql_expectile = {}", self.hyper.iql_expectile));
        line(format!("iql_beta = {}", self.hyper.iql_beta));
        line(format!("awr_clip = {}", self.hyper.awr_clip));
        out
    }

    pub fn train_setup(&self, seed: u64) -> TrainSetup {
        TrainSetup {
            env: self.env,
            algo: self.algo,
            hidden: self.hidden_dims.clone(),
            hyper: self.hyper,
            regularizer: self.regularizer,
            total_steps: self.total_steps,
            eval_interval: self.eval_interval,
            eval_episodes: self.eval_episodes,
            seed,
        }
    }

    /// Compact human-readable regularizer label for summaries and tables.
    pub fn regularizer_label(&self) -> String {
        match &self.regularizer {
            Regularizer::None => "none".into(),
            Regularizer::L1 { lambda } => format!("l1({lambda})"),
            Regularizer::Dropout { rate } => format!("dropout({rate})"),
            Regularizer::LayerNorm => "layer_norm".into(),
            Regularizer::SpectralNorm => "spectral_norm".into(),
            Regularizer::WeightDecay { coefficient } => format!("weight_decay({coefficient})"),
            Regularizer::Sparse(cfg) => {
                format!("sparse({}, {})", cfg.sparsity, mode_name(cfg.mode))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> KeyValues {
        KeyValues::from_pairs([
            ("env", "pointmass"),
            ("algorithm", "bc"),
            ("output_dir", "out"),
            ("dataset.quality", "expert"),
            ("dataset.size", "500"),
        ])
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::resolve(&minimal()).unwrap();
        assert_eq!(cfg.hidden_dims, vec![256, 256]);
        assert_eq!(cfg.total_steps, 20_000);
        assert_eq!(cfg.eval_interval, 100);
        assert_eq!(cfg.eval_episodes, DEFAULT_EVAL_EPISODES);
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.regularizer, Regularizer::None);
        assert_eq!(cfg.dataset.val_fraction, DEFAULT_VAL_FRACTION);
        assert!(cfg.save_actor);
        assert!(matches!(
            cfg.dataset.source,
            DataSource::Generate { gen_seed: DEFAULT_GEN_SEED, size: 500, .. }
        ));
    }

    #[test]
    fn sparse_defaults_scale_with_total_steps() {
        let mut kv = minimal();
        kv.set("total_steps", "10000");
        kv.set("regularizer.kind", "sparse");
        kv.set("regularizer.sparsity", "0.9");
        let cfg = RunConfig::resolve(&kv).unwrap();
        let Regularizer::Sparse(s) = cfg.regularizer else { panic!("expected sparse") };
        assert_eq!(s.refresh_interval, 50);
        assert_eq!(s.refresh_cutoff, 2000);
        assert_eq!(s.score_batch, DEFAULT_SCORE_BATCH);
        assert!(s.mask_biases);
        assert!(!s.fixed_score_batch);
        assert_eq!(cfg.eval_interval, 50);
    }

    #[test]
    fn fixed_mode_defaults_to_zero_cutoff() {
        let mut kv = minimal();
        kv.set("regularizer.kind", "sparse");
        kv.set("regularizer.sparsity", "0.5");
        kv.set("regularizer.mode", "sfi");
        let cfg = RunConfig::resolve(&kv).unwrap();
        let Regularizer::Sparse(s) = cfg.regularizer else { panic!("expected sparse") };
        assert_eq!(s.mode, SparseMode::FixedAtInit);
        assert_eq!(s.refresh_cutoff, 0);
    }

    #[test]
    fn file_parsing_handles_sections_and_comments() {
        let text = "\
# experiment
env = pendulum
algorithm = iql

[dataset]
quality = medium
size = 1000

[regularizer]
kind = l1
lambda = 0.001
";
        let kv = KeyValues::parse(text, "test").unwrap();
        assert_eq!(kv.get("env"), Some("pendulum"));
        assert_eq!(kv.get("dataset.size"), Some("1000"));
        assert_eq!(kv.get("regularizer.lambda"), Some("0.001"));
        let mut kv = kv;
        kv.set("output_dir", "out");
        let cfg = RunConfig::resolve(&kv).unwrap();
        assert_eq!(cfg.regularizer, Regularizer::L1 { lambda: 0.001 });
    }

    #[test]
    fn overrides_win_over_file_values() {
        let file = minimal();
        let over = KeyValues::from_pairs([("dataset.size", "900"), ("total_steps", "400")]);
        let cfg = RunConfig::resolve(&file.merged(&over)).unwrap();
        assert!(matches!(cfg.dataset.source, DataSource::Generate { size: 900, .. }));
        assert_eq!(cfg.total_steps, 400);
        assert_eq!(cfg.eval_interval, 2);
    }

    #[test]
    fn every_violation_is_listed_at_once() {
        let kv = KeyValues::from_pairs([
            ("env", "marscolony"),
            ("algorithm", "bc"),
            ("output_dir", "out"),
            ("dataset.quality", "expert"),
            ("dataset.size", "500"),
            ("total_steps", "1000"),
            ("eval_interval", "300"),
            ("seeds", "1,1"),
            ("hidden_dims", "0,4"),
            ("bogus_key", "1"),
        ]);
        let err = RunConfig::resolve(&kv).unwrap_err();
        let msg = err.to_string();
        for needle in ["env", "eval_interval", "seeds", "hidden_dims", "bogus_key"] {
            assert!(msg.contains(needle), "missing '{needle}' in:\n{msg}");
        }
    }

    #[test]
    fn path_and_generator_settings_are_mutually_exclusive() {
        let mut kv = minimal();
        kv.set("dataset.path", "data/foo");
        let err = RunConfig::resolve(&kv).unwrap_err();
        assert!(err.to_string().contains("excludes"));
    }

    #[test]
    fn inapplicable_regularizer_keys_are_rejected() {
        let mut kv = minimal();
        kv.set("regularizer.kind", "l1");
        kv.set("regularizer.rate", "0.5");
        let err = RunConfig::resolve(&kv).unwrap_err();
        assert!(err.to_string().contains("regularizer.rate"));
    }

    #[test]
    fn snapshot_round_trips_exactly() {
        let mut kv = minimal();
        kv.set("regularizer.kind", "sparse");
        kv.set("regularizer.sparsity", "0.95");
        kv.set("hyper.lr", "0.0003");
        kv.set("seeds", "7,9");
        kv.set("dataset.val_fraction", "0.25");
        let cfg = RunConfig::resolve(&kv).unwrap();
        let snap = cfg.to_snapshot();
        let back = RunConfig::resolve(&KeyValues::parse(&snap, "snapshot").unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn hyper_section_feeds_algorithm_settings() {
        let mut kv = minimal();
        kv.set("hyper.lr", "0.01");
        kv.set("hyper.batch", "32");
        let cfg = RunConfig::resolve(&kv).unwrap();
        assert_eq!(cfg.hyper.lr, 0.01);
        assert_eq!(cfg.hyper.batch, 32);
        // Bad values are validated with everything else.
        kv.set("hyper.gamma", "1.5");
        assert!(RunConfig::resolve(&kv).is_err());
    }

    #[test]
    fn sparsity_of_one_is_rejected() {
        let mut kv = minimal();
        kv.set("regularizer.kind", "sparse");
        kv.set("regularizer.sparsity", "1.0");
        assert!(RunConfig::resolve(&kv).is_err());
    }

    #[test]
    fn malformed_lines_are_parse_errors() {
        assert!(matches!(
            KeyValues::parse("no equals sign", "t"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(KeyValues::parse("[unclosed", "t"), Err(Error::Parse { .. })));
        assert!(matches!(KeyValues::parse("[]", "t"), Err(Error::Parse { .. })));
    }
}
