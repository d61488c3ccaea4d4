//! TD3 with a behavioral-cloning anchor on the actor.
//!
//! Twin critics regress on clipped double-Q targets with smoothed target
//! actions; the actor maximizes Q1 plus a cloning term, with the Q scale
//! normalized away by a detached lambda = alpha / mean |Q1|. Actor and
//! target updates run every `policy_freq` critic steps.

use rand_chacha::ChaCha8Rng;

use crate::algo::{
    concat_rows, maybe_l1, mse_to_const, td_targets, AlgoHyper, NetworkView, StepLosses, Streams,
    TrainedNet,
};
use crate::data::Batch;
use crate::envs::standard_normal;
use crate::error::Result;
use crate::rng;
use crate::tensor::graph::Graph;
use crate::tensor::mlp::{Activation, Mlp, OutputTransform};
use crate::tensor::regularizer::Regularizer;

/// Target-smoothing noise scale and clip, as fractions of the action bound.
pub const SMOOTHING_SIGMA_FRAC: f64 = 0.2;
pub const SMOOTHING_CLIP_FRAC: f64 = 0.5;

#[derive(Debug)]
pub struct Td3BcAgent {
    actor: TrainedNet,
    critic1: TrainedNet,
    critic2: TrainedNet,
    target_actor: Mlp,
    target_critic1: Mlp,
    target_critic2: Mlp,
    hyper: AlgoHyper,
    regularizer: Regularizer,
    streams: Streams,
    obs_dim: usize,
    act_dim: usize,
    act_bound: f64,
    updates: usize,
}

impl Td3BcAgent {
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
        // Targets start as exact copies of their sources.
        let target_actor = actor.clone();
        let target_critic1 = critic1.clone();
        let target_critic2 = critic2.clone();
        Ok(Td3BcAgent {
            actor: TrainedNet::new(actor, &regularizer, hyper.lr)?,
            critic1: TrainedNet::new(critic1, &regularizer, hyper.lr)?,
            critic2: TrainedNet::new(critic2, &regularizer, hyper.lr)?,
            target_actor,
            target_critic1,
            target_critic2,
            hyper,
            regularizer,
            streams: Streams::new(seed),
            obs_dim,
            act_dim,
            act_bound,
            updates: 0,
        })
    }

    /// Clipped double-Q regression targets with smoothed target-policy
    /// actions. `noise` must be the stream dedicated to the caller.
    fn critic_targets(&self, batch: &Batch, noise: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let n = batch.n;
        let sigma = SMOOTHING_SIGMA_FRAC * self.act_bound;
        let clip = SMOOTHING_CLIP_FRAC * self.act_bound;
        let mut next_act = self.target_actor.predict(&batch.next_obs, n)?;
        for a in next_act.iter_mut() {
            let eps = (sigma * standard_normal(noise)).clamp(-clip, clip);
            *a = (*a + eps).clamp(-self.act_bound, self.act_bound);
        }
        let sa = concat_rows(&batch.next_obs, self.obs_dim, &next_act, self.act_dim, n);
        let q1 = self.target_critic1.predict(&sa, n)?;
        let q2 = self.target_critic2.predict(&sa, n)?;
        let boot: Vec<f64> = q1.iter().zip(&q2).map(|(&a, &b)| a.min(b)).collect();
        Ok(td_targets(batch, &boot, self.hyper.gamma))
    }

    /// One TD3+BC step: both critics every call, actor and targets every
    /// `policy_freq` calls. Critic loss is the sum of both MSEs.
    pub fn update(&mut self, batch: &Batch) -> Result<StepLosses> {
        let n = batch.n;
        let mut noise = self.streams.noise.clone();
        let y = self.critic_targets(batch, &mut noise)?;
        self.streams.noise = noise;

        // Twin critic regression on a single tape.
        let sa = concat_rows(&batch.obs, self.obs_dim, &batch.act, self.act_dim, n);
        let mut g = Graph::new();
        let x = g.constant(n, self.obs_dim + self.act_dim, &sa)?;
        let pass1 = self.critic1.net.forward_train(&mut g, x, &mut self.streams.dropout)?;
        let pass2 = self.critic2.net.forward_train(&mut g, x, &mut self.streams.dropout)?;
        let mse1 = mse_to_const(&mut g, pass1.output, &y)?;
        let mse2 = mse_to_const(&mut g, pass2.output, &y)?;
        let mut closs = g.add(mse1, mse2)?;
        let both: Vec<_> = pass1.params.iter().chain(&pass2.params).copied().collect();
        closs = maybe_l1(&mut g, closs, &both, &self.regularizer)?;
        let mut losses = StepLosses { critic: Some(g.scalar(closs)?), ..Default::default() };
        losses.check_finite()?;
        g.backward(closs)?;
        self.critic1.apply_step(&g, &pass1)?;
        self.critic2.apply_step(&g, &pass2)?;

        self.updates += 1;
        if self.updates % self.hyper.policy_freq == 0 {
            losses.actor = Some(self.actor_step(batch)?);
            losses.check_finite()?;
            self.target_actor.polyak_from(&self.actor.net, self.hyper.tau)?;
            self.target_critic1.polyak_from(&self.critic1.net, self.hyper.tau)?;
            self.target_critic2.polyak_from(&self.critic2.net, self.hyper.tau)?;
        }
        Ok(losses)
    }

    /// Actor loss: -lambda * mean Q1(s, pi(s)) + mean (pi(s) - a)^2, with
    /// lambda = alpha / mean |Q1| treated as a constant.
    fn actor_step(&mut self, batch: &Batch) -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(batch.n, self.obs_dim, &batch.obs)?;
        let pass_a = self.actor.net.forward_train(&mut g, x, &mut self.streams.dropout)?;
        let sa = g.concat_cols(x, pass_a.output)?;
        // The critic is the objective here, not a training target, so it
        // runs in eval mode; gradients still flow through it to the actor.
        let pass_q = self.critic1.net.forward_eval(&mut g, sa)?;
        let q_mean = g.mean(pass_q.output);
        let q_abs_mean = g
            .value(pass_q.output)
            .iter()
            .map(|v| v.abs())
            .sum::<f64>()
            / batch.n as f64;
        let lambda = self.hyper.td3bc_alpha / q_abs_mean;
        let neg_q = g.scale(q_mean, -lambda);
        let bc = mse_to_const(&mut g, pass_a.output, &batch.act)?;
        let mut loss = g.add(neg_q, bc)?;
        loss = maybe_l1(&mut g, loss, &pass_a.params, &self.regularizer)?;
        let val = g.scalar(loss)?;
        g.backward(loss)?;
        self.actor.apply_step(&g, &pass_a)?;
        Ok(val)
    }

    /// Score every trainable network with its own loss on `batch` against
    /// the pre-refresh parameters, then install the new masks, propagating
    /// each network's masks to its target copy.
    pub fn refresh_masks(&mut self, batch: &Batch) -> Result<()> {
        let Some(cfg) = self.regularizer.sparsity().copied() else {
            return Ok(());
        };
        let n = batch.n;
        // Scoring draws its smoothing noise from the dedicated stream so a
        // refresh never perturbs the training sequence.
        let mut score_rng = self.streams.score.clone();
        let y = self.critic_targets(batch, &mut score_rng)?;

        // Actor saliency from its own loss.
        {
            let mut g = Graph::new();
            let x = g.constant(n, self.obs_dim, &batch.obs)?;
            let pass_a = self.actor.net.forward_train(&mut g, x, &mut score_rng)?;
            let sa = g.concat_cols(x, pass_a.output)?;
            let pass_q = self.critic1.net.forward_eval(&mut g, sa)?;
            let q_mean = g.mean(pass_q.output);
            let q_abs_mean =
                g.value(pass_q.output).iter().map(|v| v.abs()).sum::<f64>() / n as f64;
            let lambda = self.hyper.td3bc_alpha / q_abs_mean;
            let neg_q = g.scale(q_mean, -lambda);
            let bc = mse_to_const(&mut g, pass_a.output, &batch.act)?;
            let loss = g.add(neg_q, bc)?;
            g.backward(loss)?;
            self.actor.net.zero_grad();
            self.actor.net.accumulate_grads(&g, &pass_a)?;
        }
        // Each critic gets its own TD tape.
        let sa = concat_rows(&batch.obs, self.obs_dim, &batch.act, self.act_dim, n);
        for (critic, _) in [(&mut self.critic1, 1), (&mut self.critic2, 2)] {
            let mut g = Graph::new();
            let x = g.constant(n, self.obs_dim + self.act_dim, &sa)?;
            let pass = critic.net.forward_train(&mut g, x, &mut score_rng)?;
            let loss = mse_to_const(&mut g, pass.output, &y)?;
            g.backward(loss)?;
            critic.net.zero_grad();
            critic.net.accumulate_grads(&g, &pass)?;
        }

        let am = self.actor.score_masks(cfg.sparsity, cfg.mask_biases)?;
        let c1m = self.critic1.score_masks(cfg.sparsity, cfg.mask_biases)?;
        let c2m = self.critic2.score_masks(cfg.sparsity, cfg.mask_biases)?;
        self.actor.install_masks(am, &mut [&mut self.target_actor])?;
        self.critic1.install_masks(c1m, &mut [&mut self.target_critic1])?;
        self.critic2.install_masks(c2m, &mut [&mut self.target_critic2])?;
        // Advance the scoring stream past what this refresh consumed.
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
            NetworkView {
                name: "target_actor",
                net: &self.target_actor,
                masks: self.actor.masks.as_deref(),
            },
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
