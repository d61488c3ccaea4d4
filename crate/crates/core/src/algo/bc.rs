//! Behavioral cloning: regress the actor onto dataset actions.

use crate::algo::{maybe_l1, mse_to_const, AlgoHyper, NetworkView, StepLosses, Streams, TrainedNet};
use crate::data::Batch;
use crate::error::Result;
use crate::rng;
use crate::tensor::graph::Graph;
use crate::tensor::mlp::{Activation, Mlp, OutputTransform};
use crate::tensor::regularizer::Regularizer;

#[derive(Debug)]
pub struct BcAgent {
    actor: TrainedNet,
    hyper: AlgoHyper,
    regularizer: Regularizer,
    streams: Streams,
    obs_dim: usize,
    act_dim: usize,
}

impl BcAgent {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        act_bound: f64,
        hidden: &[usize],
        hyper: AlgoHyper,
        regularizer: Regularizer,
        seed: u64,
    ) -> Result<Self> {
        hyper.validate()?;
        regularizer.validate()?;
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(act_dim);
        let actor = Mlp::new(
            &dims,
            Activation::Relu,
            OutputTransform::TanhBounded(act_bound),
            regularizer.hooks(),
            &mut rng::stream(seed, "init-actor"),
        )?;
        Ok(BcAgent {
            actor: TrainedNet::new(actor, &regularizer, hyper.lr)?,
            hyper,
            regularizer,
            streams: Streams::new(seed),
            obs_dim,
            act_dim,
        })
    }

    /// One gradient step on mean squared action error. Returns the pre-step
    /// training loss, penalty included when one is configured.
    pub fn update(&mut self, batch: &Batch) -> Result<StepLosses> {
        let mut g = Graph::new();
        let x = g.constant(batch.n, self.obs_dim, &batch.obs)?;
        let pass = self.actor.net.forward_train(&mut g, x, &mut self.streams.dropout)?;
        let mse = mse_to_const(&mut g, pass.output, &batch.act)?;
        let loss = maybe_l1(&mut g, mse, &pass.params, &self.regularizer)?;
        let losses = StepLosses { actor: Some(g.scalar(loss)?), ..Default::default() };
        losses.check_finite()?;
        g.backward(loss)?;
        self.actor.apply_step(&g, &pass)?;
        Ok(losses)
    }

    /// Re-score the actor with the plain cloning loss on `batch` and pin
    /// fresh top-k masks. No-op unless sparse training is configured.
    pub fn refresh_masks(&mut self, batch: &Batch) -> Result<()> {
        let Some(cfg) = self.regularizer.sparsity().copied() else {
            return Ok(());
        };
        let mut g = Graph::new();
        let x = g.constant(batch.n, self.obs_dim, &batch.obs)?;
        let pass = self.actor.net.forward_train(&mut g, x, &mut self.streams.score)?;
        let loss = mse_to_const(&mut g, pass.output, &batch.act)?;
        g.backward(loss)?;
        self.actor.net.zero_grad();
        self.actor.net.accumulate_grads(&g, &pass)?;
        let masks = self.actor.score_masks(cfg.sparsity, cfg.mask_biases)?;
        self.actor.install_masks(masks, &mut [])
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor.net
    }

    pub fn networks(&self) -> Vec<NetworkView<'_>> {
        vec![NetworkView {
            name: "actor",
            net: &self.actor.net,
            masks: self.actor.masks.as_deref(),
        }]
    }

    pub fn actor_masks(&self) -> Option<&[crate::sparse::Mask]> {
        self.actor.masks.as_deref()
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn hyper(&self) -> &AlgoHyper {
        &self.hyper
    }
}
