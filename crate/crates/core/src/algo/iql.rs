//! Implicit Q-learning: expectile value regression, TD critics that
//! bootstrap through the value net, and an advantage-weighted cloning
//! actor. No actions outside the dataset are ever evaluated by the
//! critics.
//!
//! Update order within one step is fixed: value, then critics (using the
//! just-updated value net for targets), then actor (advantages from the
//! updated value net), then polyak on the target critics.

use crate::algo::{
    concat_rows, maybe_l1, mse_to_const, td_targets, AlgoHyper, NetworkView, StepLosses, Streams,
    TrainedNet,
};
use crate::data::Batch;
use crate::error::Result;
use crate::rng;
use crate::tensor::graph::Graph;
use crate::tensor::mlp::{Activation, Mlp, OutputTransform};
use crate::tensor::regularizer::Regularizer;

#[derive(Debug)]
pub struct IqlAgent {
    actor: TrainedNet,
    critic1: TrainedNet,
    critic2: TrainedNet,
    value: TrainedNet,
    target_critic1: Mlp,
    target_critic2: Mlp,
    hyper: AlgoHyper,
    regularizer: Regularizer,
    streams: Streams,
    obs_dim: usize,
    act_dim: usize,
}

impl IqlAgent {
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
        let hooks = regularizer.hooks();
        let mut actor_dims = vec![obs_dim];
        actor_dims.extend_from_slice(hidden);
        actor_dims.push(act_dim);
        let mut critic_dims = vec![obs_dim + act_dim];
        critic_dims.extend_from_slice(hidden);
        critic_dims.push(1);
        let mut value_dims = vec![obs_dim];
        value_dims.extend_from_slice(hidden);
        value_dims.push(1);

        let actor = Mlp::new(
            &actor_dims,
            Activation::Relu,
            OutputTransform::TanhBounded(act_bound),
            hooks,
            &mut rng::stream(seed, "init-actor"),
        )?;
        let critic1 = Mlp::new(
            &critic_dims,
            Activation::Relu,
            OutputTransform::Identity,
            hooks,
            &mut rng::stream(seed, "init-critic1"),
        )?;
        let critic2 = Mlp::new(
            &critic_dims,
            Activation::Relu,
            OutputTransform::Identity,
            hooks,
            &mut rng::stream(seed, "init-critic2"),
        )?;
        let value = Mlp::new(
            &value_dims,
            Activation::Relu,
            OutputTransform::Identity,
            hooks,
            &mut rng::stream(seed, "init-value"),
        )?;
        let target_critic1 = critic1.clone();
        let target_critic2 = critic2.clone();
        Ok(IqlAgent {
            actor: TrainedNet::new(actor, &regularizer, hyper.lr)?,
            critic1: TrainedNet::new(critic1, &regularizer, hyper.lr)?,
            critic2: TrainedNet::new(critic2, &regularizer, hyper.lr)?,
            value: TrainedNet::new(value, &regularizer, hyper.lr)?,
            target_critic1,
            target_critic2,
            hyper,
            regularizer,
            streams: Streams::new(seed),
            obs_dim,
            act_dim,
        })
    }

    /// min over target critics of Q(s, a) for the dataset pairs.
    fn min_target_q(&self, batch: &Batch) -> Result<Vec<f64>> {
        let sa = concat_rows(&batch.obs, self.obs_dim, &batch.act, self.act_dim, batch.n);
        let q1 = self.target_critic1.predict(&sa, batch.n)?;
        let q2 = self.target_critic2.predict(&sa, batch.n)?;
        Ok(q1.iter().zip(&q2).map(|(&a, &b)| a.min(b)).collect())
    }

    /// Expectile regression of V(s) toward min target Q. Returns the loss;
    /// the asymmetric weight |tau_e - 1{u < 0}| is treated as a constant.
    fn value_step(&mut self, batch: &Batch, min_q: &[f64]) -> Result<f64> {
        let tau_e = self.hyper.iql_expectile;
        let mut g = Graph::new();
        let x = g.constant(batch.n, self.obs_dim, &batch.obs)?;
        let pass = self.value.net.forward_train(&mut g, x, &mut self.streams.dropout)?;
        let target = g.constant(batch.n, 1, min_q)?;
        let u = g.sub(target, pass.output)?;
        let w: Vec<f64> = g
            .value(u)
            .iter()
            .map(|&ui| (tau_e - if ui < 0.0 { 1.0 } else { 0.0 }).abs())
            .collect();
        let sq = g.square(u);
        let weighted = g.mul_const(sq, &w)?;
        let mut loss = g.mean(weighted);
        loss = maybe_l1(&mut g, loss, &pass.params, &self.regularizer)?;
        let val = g.scalar(loss)?;
        g.backward(loss)?;
        self.value.apply_step(&g, &pass)?;
        Ok(val)
    }

    /// Twin critic regression toward r + gamma (1 - done) V(s').
    fn critic_step(&mut self, batch: &Batch, y: &[f64]) -> Result<f64> {
        let sa = concat_rows(&batch.obs, self.obs_dim, &batch.act, self.act_dim, batch.n);
        let mut g = Graph::new();
        let x = g.constant(batch.n, self.obs_dim + self.act_dim, &sa)?;
        let pass1 = self.critic1.net.forward_train(&mut g, x, &mut self.streams.dropout)?;
        let pass2 = self.critic2.net.forward_train(&mut g, x, &mut self.streams.dropout)?;
        let mse1 = mse_to_const(&mut g, pass1.output, y)?;
        let mse2 = mse_to_const(&mut g, pass2.output, y)?;
        let mut loss = g.add(mse1, mse2)?;
        let both: Vec<_> = pass1.params.iter().chain(&pass2.params).copied().collect();
        loss = maybe_l1(&mut g, loss, &both, &self.regularizer)?;
        let val = g.scalar(loss)?;
        g.backward(loss)?;
        self.critic1.apply_step(&g, &pass1)?;
        self.critic2.apply_step(&g, &pass2)?;
        Ok(val)
    }

    /// Advantage-weighted cloning: mean over elements of
    /// w * (pi(s) - a)^2 with w = clip(exp(beta * adv), 0, awr_clip).
    fn actor_step(&mut self, batch: &Batch, advantage: &[f64]) -> Result<f64> {
        let mut w = Vec::with_capacity(batch.n * self.act_dim);
        for &adv in advantage {
            let wi = (self.hyper.iql_beta * adv).exp().clamp(0.0, self.hyper.awr_clip);
            // Same weight for every action dimension of the row.
            for _ in 0..self.act_dim {
                w.push(wi);
            }
        }
        let mut g = Graph::new();
        let x = g.constant(batch.n, self.obs_dim, &batch.obs)?;
        let pass = self.actor.net.forward_train(&mut g, x, &mut self.streams.dropout)?;
        let target = g.constant(batch.n, self.act_dim, &batch.act)?;
        let diff = g.sub(pass.output, target)?;
        let sq = g.square(diff);
        let weighted = g.mul_const(sq, &w)?;
        let mut loss = g.mean(weighted);
        loss = maybe_l1(&mut g, loss, &pass.params, &self.regularizer)?;
        let val = g.scalar(loss)?;
        g.backward(loss)?;
        self.actor.apply_step(&g, &pass)?;
        Ok(val)
    }

    pub fn update(&mut self, batch: &Batch) -> Result<StepLosses> {
        let min_q = self.min_target_q(batch)?;
        let value_loss = self.value_step(batch, &min_q)?;
        StepLosses { value: Some(value_loss), ..Default::default() }.check_finite()?;

        let v_next = self.value.net.predict(&batch.next_obs, batch.n)?;
        let y = td_targets(batch, &v_next, self.hyper.gamma);
        let critic_loss = self.critic_step(batch, &y)?;

        let v_now = self.value.net.predict(&batch.obs, batch.n)?;
        let adv: Vec<f64> = min_q.iter().zip(&v_now).map(|(&q, &v)| q - v).collect();
        let actor_loss = self.actor_step(batch, &adv)?;

        let losses = StepLosses {
            actor: Some(actor_loss),
            critic: Some(critic_loss),
            value: Some(value_loss),
        };
        losses.check_finite()?;
        self.target_critic1.polyak_from(&self.critic1.net, self.hyper.tau)?;
        self.target_critic2.polyak_from(&self.critic2.net, self.hyper.tau)?;
        Ok(losses)
    }

    /// Saliency refresh. All four networks are scored with their own loss
    /// on `batch` against pre-refresh parameters; masks install afterward
    /// and target critics inherit their source's masks.
    pub fn refresh_masks(&mut self, batch: &Batch) -> Result<()> {
        let Some(cfg) = self.regularizer.sparsity().copied() else {
            return Ok(());
        };
        let n = batch.n;
        let mut score_rng = self.streams.score.clone();
        let tau_e = self.hyper.iql_expectile;
        let min_q = self.min_target_q(batch)?;

        // Value: expectile loss.
        {
            let mut g = Graph::new();
            let x = g.constant(n, self.obs_dim, &batch.obs)?;
            let pass = self.value.net.forward_train(&mut g, x, &mut score_rng)?;
            let target = g.constant(n, 1, &min_q)?;
            let u = g.sub(target, pass.output)?;
            let w: Vec<f64> = g
                .value(u)
                .iter()
                .map(|&ui| (tau_e - if ui < 0.0 { 1.0 } else { 0.0 }).abs())
                .collect();
            let sq = g.square(u);
            let weighted = g.mul_const(sq, &w)?;
            let loss = g.mean(weighted);
            g.backward(loss)?;
            self.value.net.zero_grad();
            self.value.net.accumulate_grads(&g, &pass)?;
        }
        // Critics: TD loss with the current (pre-refresh) value net.
        let v_next = self.value.net.predict(&batch.next_obs, n)?;
        let y = td_targets(batch, &v_next, self.hyper.gamma);
        let sa = concat_rows(&batch.obs, self.obs_dim, &batch.act, self.act_dim, n);
        for critic in [&mut self.critic1, &mut self.critic2] {
            let mut g = Graph::new();
            let x = g.constant(n, self.obs_dim + self.act_dim, &sa)?;
            let pass = critic.net.forward_train(&mut g, x, &mut score_rng)?;
            let loss = mse_to_const(&mut g, pass.output, &y)?;
            g.backward(loss)?;
            critic.net.zero_grad();
            critic.net.accumulate_grads(&g, &pass)?;
        }
        // Actor: advantage-weighted cloning loss.
        {
            let v_now = self.value.net.predict(&batch.obs, n)?;
            let mut w = Vec::with_capacity(n * self.act_dim);
            for (&q, &v) in min_q.iter().zip(&v_now) {
                let wi = (self.hyper.iql_beta * (q - v)).exp().clamp(0.0, self.hyper.awr_clip);
                for _ in 0..self.act_dim {
                    w.push(wi);
                }
            }
            let mut g = Graph::new();
            let x = g.constant(n, self.obs_dim, &batch.obs)?;
            let pass = self.actor.net.forward_train(&mut g, x, &mut score_rng)?;
            let target = g.constant(n, self.act_dim, &batch.act)?;
            let diff = g.sub(pass.output, target)?;
            let sq = g.square(diff);
            let weighted = g.mul_const(sq, &w)?;
            let loss = g.mean(weighted);
            g.backward(loss)?;
            self.actor.net.zero_grad();
            self.actor.net.accumulate_grads(&g, &pass)?;
        }

        let vm = self.value.score_masks(cfg.sparsity, cfg.mask_biases)?;
        let c1m = self.critic1.score_masks(cfg.sparsity, cfg.mask_biases)?;
        let c2m = self.critic2.score_masks(cfg.sparsity, cfg.mask_biases)?;
        let am = self.actor.score_masks(cfg.sparsity, cfg.mask_biases)?;
        self.value.install_masks(vm, &mut [])?;
        self.critic1.install_masks(c1m, &mut [&mut self.target_critic1])?;
        self.critic2.install_masks(c2m, &mut [&mut self.target_critic2])?;
        self.actor.install_masks(am, &mut [])?;
        self.streams.score = score_rng;
        Ok(())
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor.net
    }

    pub fn networks(&self) -> Vec<NetworkView<'_>> {
        vec![
            NetworkView { name: "actor", net: &self.actor.net, masks: self.actor.masks.as_deref() },
            NetworkView {
                name: "critic1",
                net: &self.critic1.net,
                masks: self.critic1.masks.as_deref(),
            },
            NetworkView {
                name: "critic2",
                net: &self.critic2.net,
                masks: self.critic2.masks.as_deref(),
            },
            NetworkView { name: "value", net: &self.value.net, masks: self.value.masks.as_deref() },
            NetworkView {
                name: "target_critic1",
                net: &self.target_critic1,
                masks: self.critic1.masks.as_deref(),
            },
            NetworkView {
                name: "target_critic2",
                net: &self.target_critic2,
                masks: self.critic2.masks.as_deref(),
            },
        ]
    }

    pub fn actor_masks(&self) -> Option<&[crate::sparse::Mask]> {
        self.actor.masks.as_deref()
    }
}
