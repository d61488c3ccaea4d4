//! Gradient-saliency sparse masking.
//!
//! A mask is computed per network by ranking every maskable parameter by
//! connection saliency |theta * dL/dtheta| and keeping the global top
//! k = round((1 - sparsity) * P) entries, where P counts maskable
//! parameters across the whole network (not per layer). Masked entries are
//! written to exact 0.0 and the optimizer skips them entirely, so they stay
//! bitwise zero until a refresh revives them; revived entries resume
//! training from 0.0.
//!
//! Two schedules exist: masks fixed at initialization, or periodic
//! refreshes every `refresh_interval` steps up to `refresh_cutoff`, after
//! which the last mask persists. Both schedules compute their first mask
//! at step 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::mlp::{Mlp, ParamKind};

/// Keep/zero flags for one parameter tensor. `true` means the entry stays
/// trainable; `false` means it is pinned to 0.0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    keep: Vec<bool>,
    kept: usize,
}

impl Mask {
    pub fn all_ones(len: usize) -> Self {
        Mask { keep: vec![true; len], kept: len }
    }

    pub fn from_keep(keep: Vec<bool>) -> Self {
        let kept = keep.iter().filter(|&&k| k).count();
        Mask { keep, kept }
    }

    #[inline]
    pub fn keep(&self, i: usize) -> bool {
        self.keep[i]
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    /// Number of trainable (kept) entries.
    pub fn count_kept(&self) -> usize {
        self.kept
    }

    /// Number of entries pinned to zero.
    pub fn count_masked(&self) -> usize {
        self.keep.len() - self.kept
    }

    /// Bits that differ between two masks of equal length.
    pub fn hamming(&self, other: &Mask) -> Result<usize> {
        if self.len() != other.len() {
            return Err(Error::Dim(format!(
                "mask hamming: {} vs {} entries",
                self.len(),
                other.len()
            )));
        }
        Ok(self.keep.iter().zip(&other.keep).filter(|(a, b)| a != b).count())
    }
}

/// Default scoring batch size.
pub const DEFAULT_SCORE_BATCH: usize = 256;

/// When masks are (re)computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparseMode {
    /// One mask at step 0, fixed for the whole run.
    FixedAtInit,
    /// Refresh every `refresh_interval` steps while step <= `refresh_cutoff`.
    PeriodicUpdates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityConfig {
    /// Fraction of maskable parameters pinned to zero, in [0, 1).
    pub sparsity: f64,
    pub mode: SparseMode,
    /// Steps between refreshes (periodic mode).
    pub refresh_interval: usize,
    /// Last step at which a refresh may fire (periodic mode).
    pub refresh_cutoff: usize,
    /// Batch size for the scoring pass.
    pub score_batch: usize,
    /// Whether biases and norm parameters compete for mask slots.
    pub mask_biases: bool,
    /// Reuse the step-0 scoring batch for every refresh instead of
    /// resampling.
    pub fixed_score_batch: bool,
}

impl SparsityConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.sparsity >= 0.0 && self.sparsity < 1.0) {
            errs.push(format!("sparsity must be in [0, 1), got {}", self.sparsity));
        }
        if self.score_batch == 0 {
            errs.push("score_batch must be at least 1".into());
        }
        match self.mode {
            SparseMode::FixedAtInit => {
                if self.refresh_cutoff != 0 {
                    errs.push(format!(
                        "fixed-at-init mode requires refresh_cutoff == 0, got {}",
                        self.refresh_cutoff
                    ));
                }
            }
            SparseMode::PeriodicUpdates => {
                if self.refresh_interval == 0 {
                    errs.push("refresh_interval must be at least 1 in periodic mode".into());
                } else if self.refresh_interval > self.refresh_cutoff {
                    errs.push(format!(
                        "refresh_interval {} exceeds refresh_cutoff {}; no refresh would ever fire",
                        self.refresh_interval, self.refresh_cutoff
                    ));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("\n")))
        }
    }

    /// True when masks must be (re)computed at `step`. Step 0 computes the
    /// initial mask in both modes.
    pub fn should_refresh(&self, step: usize) -> bool {
        if step == 0 {
            return true;
        }
        match self.mode {
            SparseMode::FixedAtInit => false,
            SparseMode::PeriodicUpdates => {
                step % self.refresh_interval == 0 && step <= self.refresh_cutoff
            }
        }
    }
}

/// Keep flags for the global top-k scores. Exactly `k` entries come back
/// true; ties break toward the lower index.
pub fn top_k_keep(scores: &[f64], k: usize) -> Result<Vec<bool>> {
    if k > scores.len() {
        return Err(Error::Usage(format!(
            "top_k_keep: k = {k} exceeds {} scores",
            scores.len()
        )));
    }
    let mut keep = vec![false; scores.len()];
    if k == 0 {
        return Ok(keep);
    }
    if k == scores.len() {
        keep.iter_mut().for_each(|b| *b = true);
        return Ok(keep);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // Total order: score descending, then index ascending. total_cmp keeps
    // this well defined even if a score is NaN.
    idx.select_nth_unstable_by(k - 1, |&a, &b| {
        scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
    });
    for &i in &idx[..k] {
        keep[i] = true;
    }
    Ok(keep)
}

/// Build per-tensor masks for `net` from the gradients currently stored in
/// its tensors. Callers run one scoring forward/backward first so that
/// `Tensor::grad` holds dL/dtheta for the network's own training loss.
///
/// Maskable tensors are weights, plus everything else when `mask_biases`
/// is set; non-maskable tensors receive all-ones masks. The kept count is
/// exact: k = round((1 - sparsity) * P) over the maskable total P.
pub fn masks_from_grads(net: &Mlp, sparsity: f64, mask_biases: bool) -> Result<Vec<Mask>> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::Config(format!("sparsity must be in [0, 1], got {sparsity}")));
    }
    let params = net.parameters();
    let kinds = net.param_kinds();
    let maskable: Vec<bool> = kinds
        .iter()
        .map(|k| mask_biases || *k == ParamKind::Weight)
        .collect();
    let total: usize = params
        .iter()
        .zip(&maskable)
        .filter(|(_, &m)| m)
        .map(|(t, _)| t.numel())
        .sum();
    let mut scores = Vec::with_capacity(total);
    for (t, &m) in params.iter().zip(&maskable) {
        if m {
            scores.extend(t.data.iter().zip(&t.grad).map(|(&w, &g)| (w * g).abs()));
        }
    }
    let k = ((1.0 - sparsity) * total as f64).round() as usize;
    let keep = top_k_keep(&scores, k.min(total))?;
    let mut masks = Vec::with_capacity(params.len());
    let mut cursor = 0;
    for (t, &m) in params.iter().zip(&maskable) {
        if m {
            let slice = keep[cursor..cursor + t.numel()].to_vec();
            cursor += t.numel();
            masks.push(Mask::from_keep(slice));
        } else {
            masks.push(Mask::all_ones(t.numel()));
        }
    }
    Ok(masks)
}

/// Write exact 0.0 into every masked entry of `net`. Assigning the literal
/// rather than multiplying avoids -0.0 for negative parameters.
pub fn apply_masks(net: &mut Mlp, masks: &[Mask]) -> Result<()> {
    let mut params = net.parameters_mut();
    if params.len() != masks.len() {
        return Err(Error::Dim(format!(
            "apply_masks: {} masks for {} tensors",
            masks.len(),
            params.len()
        )));
    }
    for (t, m) in params.iter_mut().zip(masks) {
        if t.numel() != m.len() {
            return Err(Error::Dim(format!(
                "apply_masks: mask of {} entries on tensor of {}",
                m.len(),
                t.numel()
            )));
        }
        for (i, v) in t.data.iter_mut().enumerate() {
            if !m.keep(i) {
                *v = 0.0;
            }
        }
    }
    Ok(())
}

/// Mask-derived sparsity summary for logging.
#[derive(Debug, Clone)]
pub struct SparsityReport {
    /// Zeroed fraction over all parameters (masked tensors only contribute
    /// their masked entries).
    pub global: f64,
    /// Zeroed fraction per layer, indexed by layer.
    pub per_layer: Vec<f64>,
}

pub fn sparsity_report(net: &Mlp, masks: &[Mask]) -> Result<SparsityReport> {
    let params = net.parameters();
    let layers = net.param_layers();
    if params.len() != masks.len() {
        return Err(Error::Dim(format!(
            "sparsity_report: {} masks for {} tensors",
            masks.len(),
            params.len()
        )));
    }
    let n_layers = net.num_layers();
    let mut zeroed = vec![0usize; n_layers];
    let mut counts = vec![0usize; n_layers];
    for ((m, &li), t) in masks.iter().zip(&layers).zip(&params) {
        debug_assert_eq!(m.len(), t.numel());
        zeroed[li] += m.count_masked();
        counts[li] += m.len();
    }
    let total: usize = counts.iter().sum();
    let total_zero: usize = zeroed.iter().sum();
    Ok(SparsityReport {
        global: total_zero as f64 / total as f64,
        per_layer: zeroed
            .iter()
            .zip(&counts)
            .map(|(&z, &c)| if c == 0 { 0.0 } else { z as f64 / c as f64 })
            .collect(),
    })
}

/// Fraction of maskable bits that changed between two mask sets.
pub fn mask_change_fraction(prev: &[Mask], next: &[Mask]) -> Result<f64> {
    if prev.len() != next.len() {
        return Err(Error::Dim(format!(
            "mask_change_fraction: {} vs {} tensors",
            prev.len(),
            next.len()
        )));
    }
    let mut flips = 0usize;
    let mut total = 0usize;
    for (p, n) in prev.iter().zip(next) {
        flips += p.hamming(n)?;
        total += p.len();
    }
    Ok(flips as f64 / total.max(1) as f64)
}
