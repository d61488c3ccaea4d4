//! Offline RL algorithms: behavioral cloning, TD3+BC, and IQL.
//!
//! Every algorithm trains MLPs from [`crate::tensor`], shares the same
//! regularizer plumbing, and exposes mask refresh hooks for sparse
//! training: at a refresh, each trainable network is scored with its own
//! objective on a shared scoring batch, masked by global top-k saliency,
//! and its targets receive the same masks.

pub mod bc;
pub mod iql;
pub mod td3bc;
pub mod train;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::rng;
use crate::sparse::{self, Mask};
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::mlp::{ForwardPass, Mlp};
use crate::tensor::optim::Optimizer;
use crate::tensor::regularizer::{add_l1_penalty, Regularizer};

/// Absolute loss magnitude beyond which a run is declared diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoKind {
    Bc,
    Td3Bc,
    Iql,
}

impl AlgoKind {
    pub fn name(&self) -> &'static str {
        match self {
            AlgoKind::Bc => "bc",
            AlgoKind::Td3Bc => "td3bc",
            AlgoKind::Iql => "iql",
        }
    }

    pub fn parse(s: &str) -> Result<AlgoKind> {
        match s {
            "bc" => Ok(AlgoKind::Bc),
            "td3bc" => Ok(AlgoKind::Td3Bc),
            "iql" => Ok(AlgoKind::Iql),
            other => Err(Error::Config(format!(
                "unknown algorithm '{other}'; expected bc, td3bc or iql"
            ))),
        }
    }
}

/// Shared hyperparameters. Defaults follow the common settings of the
/// underlying methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgoHyper {
    pub gamma: f64,
    pub tau: f64,
    pub policy_freq: usize,
    pub lr: f64,
    pub batch: usize,
    /// BC-term weight in the TD3+BC actor loss.
    pub td3bc_alpha: f64,
    pub iql_expectile: f64,
    /// Advantage temperature for advantage-weighted regression.
    pub iql_beta: f64,
    pub awr_clip: f64,
}

impl Default for AlgoHyper {
    fn default() -> Self {
        AlgoHyper {
            gamma: 0.99,
            tau: 5e-3,
            policy_freq: 2,
            lr: 1e-3,
            batch: 256,
            td3bc_alpha: 2.5,
            iql_expectile: 0.7,
            iql_beta: 3.0,
            awr_clip: 100.0,
        }
    }
}

impl AlgoHyper {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            errs.push(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            errs.push(format!("tau must be in (0, 1], got {}", self.tau));
        }
        if self.policy_freq == 0 {
            errs.push("policy_freq must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            errs.push(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch == 0 {
            errs.push("batch must be at least 1".into());
        }
        if !(self.td3bc_alpha.is_finite() && self.td3bc_alpha > 0.0) {
            errs.push(format!("td3bc_alpha must be positive, got {}", self.td3bc_alpha));
        }
        if !(self.iql_expectile > 0.5 && self.iql_expectile < 1.0) {
            errs.push(format!(
                "iql_expectile must be in (0.5, 1), got {}",
                self.iql_expectile
            ));
        }
        if !(self.iql_beta.is_finite() && self.iql_beta >= 0.0) {
            errs.push(format!("iql_beta must be non-negative, got {}", self.iql_beta));
        }
        if !(self.awr_clip.is_finite() && self.awr_clip > 0.0) {
            errs.push(format!("awr_clip must be positive, got {}", self.awr_clip));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("\n")))
        }
    }
}

/// Loss values produced by one gradient step. Fields are None when the
/// algorithm has no such network or skipped it this step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepLosses {
    pub actor: Option<f64>,
    pub critic: Option<f64>,
    pub value: Option<f64>,
}

impl StepLosses {
    /// Error if any present loss is non-finite or beyond the divergence
    /// limit.
    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in [
            ("actor", self.actor),
            ("critic", self.critic),
            ("value", self.value),
        ] {
            if let Some(loss) = v {
                if !loss.is_finite() || loss.abs() > DIVERGENCE_LIMIT {
                    return Err(Error::Numeric(format!("{name} loss diverged to {loss}")));
                }
            }
        }
        Ok(())
    }
}

/// One trainable network with its optimizer and (when sparse training is
/// active) its current masks.
#[derive(Debug)]
pub(crate) struct TrainedNet {
    pub net: Mlp,
    pub opt: Optimizer,
    pub masks: Option<Vec<Mask>>,
}

impl TrainedNet {
    pub fn new(net: Mlp, reg: &Regularizer, lr: f64) -> Result<Self> {
        let sizes: Vec<usize> = net.parameters().iter().map(|t| t.numel()).collect();
        let opt = Optimizer::new(reg.optim_kind(), lr, &sizes)?;
        let masks = reg
            .sparsity()
            .map(|_| net.parameters().iter().map(|t| Mask::all_ones(t.numel())).collect());
        Ok(TrainedNet { net, opt, masks })
    }

    /// Pull tape grads, take one optimizer step, leave grads cleared.
    pub fn apply_step(&mut self, g: &Graph, pass: &ForwardPass) -> Result<()> {
        self.net.zero_grad();
        self.net.accumulate_grads(g, pass)?;
        let mut params = self.net.parameters_mut();
        self.opt.step(&mut params, self.masks.as_deref())?;
        Ok(())
    }

    /// Build fresh masks from the gradients currently stored in the
    /// network. Pure read; nothing is applied yet, so several networks can
    /// be scored against the same pre-refresh parameters.
    pub fn score_masks(&self, sparsity: f64, mask_biases: bool) -> Result<Vec<Mask>> {
        sparse::masks_from_grads(&self.net, sparsity, mask_biases)
    }

    /// Pin `masks`, zeroing masked entries here and in every target copy.
    pub fn install_masks(&mut self, masks: Vec<Mask>, targets: &mut [&mut Mlp]) -> Result<()> {
        sparse::apply_masks(&mut self.net, &masks)?;
        for t in targets.iter_mut() {
            sparse::apply_masks(t, &masks)?;
        }
        self.net.zero_grad();
        self.masks = Some(masks);
        Ok(())
    }
}

/// Read-only view of one network and its masks, targets included, for
/// inspection and tests.
pub struct NetworkView<'a> {
    pub name: &'static str,
    pub net: &'a Mlp,
    pub masks: Option<&'a [Mask]>,
}

/// Per-agent random streams, all derived from the run seed with distinct
/// tags so that features consume independent sequences.
#[derive(Debug)]
pub(crate) struct Streams {
    pub dropout: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub score: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams {
            dropout: rng::stream(seed, "dropout"),
            noise: rng::stream(seed, "td-noise"),
            score: rng::stream(seed, "score-forward"),
        }
    }
}

// ── shared tape builders ────────────────────────────────────────────────

/// mean((pred - target)^2) over every element.
pub(crate) fn mse_to_const(g: &mut Graph, pred: NodeId, target: &[f64]) -> Result<NodeId> {
    let (r, c) = g.shape(pred);
    let t = g.constant(r, c, target)?;
    let d = g.sub(pred, t)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// Attach the L1 term when the regularizer asks for one.
pub(crate) fn maybe_l1(
    g: &mut Graph,
    loss: NodeId,
    params: &[NodeId],
    reg: &Regularizer,
) -> Result<NodeId> {
    match reg.l1_lambda() {
        Some(lambda) if lambda > 0.0 => add_l1_penalty(g, loss, params, lambda),
        _ => Ok(loss),
    }
}

/// Row-major [B, obs+act] concatenation used as critic input.
pub(crate) fn concat_rows(obs: &[f64], od: usize, act: &[f64], ad: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(obs.len(), n * od);
    debug_assert_eq!(act.len(), n * ad);
    let mut out = Vec::with_capacity(n * (od + ad));
    for i in 0..n {
        out.extend_from_slice(&obs[i * od..(i + 1) * od]);
        out.extend_from_slice(&act[i * ad..(i + 1) * ad]);
    }
    out
}

/// Critic regression targets y = r + gamma * (1 - done) * bootstrap.
pub(crate) fn td_targets(batch: &Batch, bootstrap: &[f64], gamma: f64) -> Vec<f64> {
    batch
        .reward
        .iter()
        .zip(&batch.done)
        .zip(bootstrap)
        .map(|((&r, &d), &b)| r + gamma * (1.0 - d) * b)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyper_defaults_validate() {
        AlgoHyper::default().validate().unwrap();
    }

    #[test]
    fn hyper_validation_lists_all_violations() {
        let bad = AlgoHyper {
            gamma: 1.5,
            tau: 0.0,
            policy_freq: 0,
            lr: -1.0,
            batch: 0,
            td3bc_alpha: 0.0,
            iql_expectile: 0.5,
            iql_beta: -1.0,
            awr_clip: 0.0,
        };
        let msg = match bad.validate() {
            Err(Error::Config(m)) => m,
            other => panic!("expected config error, got {other:?}"),
        };
        for field in [
            "gamma", "tau", "policy_freq", "lr", "batch", "td3bc_alpha", "iql_expectile",
            "iql_beta", "awr_clip",
        ] {
            assert!(msg.contains(field), "missing {field} in:\n{msg}");
        }
    }

    #[test]
    fn losses_divergence_check() {
        let ok = StepLosses { actor: Some(3.0), critic: None, value: None };
        ok.check_finite().unwrap();
        let nan = StepLosses { actor: Some(f64::NAN), ..Default::default() };
        assert!(nan.check_finite().is_err());
        let huge = StepLosses { critic: Some(-2e8), ..Default::default() };
        assert!(huge.check_finite().is_err());
    }

    #[test]
    fn td_targets_zero_gamma_equals_reward() {
        let b = Batch {
            n: 3,
            obs: vec![],
            act: vec![],
            reward: vec![1.0, -2.0, 0.5],
            next_obs: vec![],
            done: vec![0.0, 0.0, 1.0],
        };
        assert_eq!(td_targets(&b, &[9.0, 9.0, 9.0], 0.0), vec![1.0, -2.0, 0.5]);
        // Done transitions drop the bootstrap entirely.
        let y = td_targets(&b, &[10.0, 10.0, 10.0], 0.5);
        assert_eq!(y, vec![6.0, 3.0, 0.5]);
    }

    #[test]
    fn concat_rows_interleaves() {
        let obs = [1.0, 2.0, 3.0, 4.0];
        let act = [9.0, 8.0];
        assert_eq!(
            concat_rows(&obs, 2, &act, 1, 2),
            vec![1.0, 2.0, 9.0, 3.0, 4.0, 8.0]
        );
    }

    #[test]
    fn algo_names_round_trip() {
        for k in [AlgoKind::Bc, AlgoKind::Td3Bc, AlgoKind::Iql] {
            assert_eq!(AlgoKind::parse(k.name()).unwrap(), k);
        }
        assert!(AlgoKind::parse("sac").is_err());
    }
}
