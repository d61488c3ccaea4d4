//! Regularizer selection and the loss-level L1 penalty.
//!
//! One regularizer is active per run. Each variant acts through a different
//! mechanism: L1 adds a loss term, dropout / layer norm / spectral scaling
//! are structural hooks inside the network, weight decay switches the
//! optimizer to AdamW, and sparse masking is driven by the training loop.

use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::mlp::Hooks;
use super::optim::OptimKind;
use crate::error::{Error, Result};
use crate::sparse::SparsityConfig;

pub const DEFAULT_DROPOUT_RATE: f64 = 0.1;
pub const DEFAULT_L1_LAMBDA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    None,
    L1 { lambda: f64 },
    Dropout { rate: f64 },
    LayerNorm,
    SpectralNorm,
    WeightDecay { coefficient: f64 },
    Sparse(SparsityConfig),
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::L1 { lambda } if !(lambda.is_finite() && lambda >= 0.0) => Err(
                Error::Config(format!("l1 lambda must be non-negative, got {lambda}")),
            ),
            Regularizer::Dropout { rate } if !(0.0..1.0).contains(&rate) => Err(Error::Config(
                format!("dropout rate must be in [0, 1), got {rate}"),
            )),
            Regularizer::WeightDecay { coefficient } if !(coefficient.is_finite() && coefficient >= 0.0) => {
                Err(Error::Config(format!(
                    "weight decay coefficient must be non-negative, got {coefficient}"
                )))
            }
            Regularizer::Sparse(cfg) => cfg.validate(),
            _ => Ok(()),
        }
    }

    /// Structural hooks this regularizer installs in every trained network.
    pub fn hooks(&self) -> Hooks {
        match *self {
            Regularizer::Dropout { rate } => Hooks { dropout: Some(rate), ..Hooks::default() },
            Regularizer::LayerNorm => Hooks { layer_norm: true, ..Hooks::default() },
            Regularizer::SpectralNorm => Hooks { spectral_norm: true, ..Hooks::default() },
            _ => Hooks::default(),
        }
    }

    /// Optimizer family this regularizer requires.
    pub fn optim_kind(&self) -> OptimKind {
        match *self {
            Regularizer::WeightDecay { coefficient } => OptimKind::AdamW { weight_decay: coefficient },
            _ => OptimKind::Adam,
        }
    }

    pub fn sparsity(&self) -> Option<&SparsityConfig> {
        match self {
            Regularizer::Sparse(cfg) => Some(cfg),
            _ => None,
        }
    }

    pub fn l1_lambda(&self) -> Option<f64> {
        match *self {
            Regularizer::L1 { lambda } => Some(lambda),
            _ => None,
        }
    }
}

impl Default for Regularizer {
    fn default() -> Self {
        Regularizer::None
    }
}

/// loss + lambda * sum(|theta|) over the given parameter leaves.
pub fn add_l1_penalty(
    g: &mut Graph,
    loss: NodeId,
    params: &[NodeId],
    lambda: f64,
) -> Result<NodeId> {
    if params.is_empty() {
        return Err(Error::Usage("l1 penalty over an empty parameter list".into()));
    }
    let mut acc: Option<NodeId> = None;
    for &p in params {
        let a = g.abs(p);
        let s = g.sum(a);
        acc = Some(match acc {
            None => s,
            Some(prev) => g.add(prev, s)?,
        });
    }
    let scaled = g.scale(acc.expect("non-empty"), lambda);
    g.add(loss, scaled)
}
