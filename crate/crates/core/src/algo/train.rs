//! Unified training loop: mask refreshes, gradient steps, periodic
//! evaluation, divergence handling.
//!
//! Per-step order is fixed: refresh masks when due, sample a batch, run
//! the algorithm update, record an evaluation row when the step lands on
//! the cadence. Refreshes draw their scoring batch from a dedicated
//! stream so a sparse run at sparsity 0 replays a dense run exactly.

use crate::algo::bc::BcAgent;
use crate::algo::iql::IqlAgent;
use crate::algo::td3bc::Td3BcAgent;
use crate::algo::{AlgoHyper, AlgoKind, NetworkView, StepLosses};
use crate::data::{Batch, OfflineDataset};
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::eval::{action_mse, evaluate_policy, CurveRow, LearningCurve};
use crate::rng;
use crate::sparse::{mask_change_fraction, sparsity_report, Mask};
use crate::tensor::mlp::Mlp;
use crate::tensor::regularizer::Regularizer;

pub const DEFAULT_EVAL_EPISODES: usize = 10;

/// Everything one training run needs besides the data.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub env: EnvKind,
    pub algo: AlgoKind,
    pub hidden: Vec<usize>,
    pub hyper: AlgoHyper,
    pub regularizer: Regularizer,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.regularizer.validate()?;
        let mut errs = Vec::new();
        if self.eval_interval == 0 {
            errs.push("eval_interval must be at least 1".to_string());
        } else if self.total_steps % self.eval_interval != 0 {
            errs.push(format!(
                "total_steps ({}) must be a multiple of eval_interval ({})",
                self.total_steps, self.eval_interval
            ));
        }
        if self.eval_episodes == 0 {
            errs.push("eval_episodes must be at least 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("\n")))
        }
    }
}

/// Algorithm dispatch. Each variant owns its networks and streams.
#[derive(Debug)]
pub enum Agent {
    Bc(BcAgent),
    Td3Bc(Td3BcAgent),
    Iql(IqlAgent),
}

impl Agent {
    pub fn new(setup: &TrainSetup) -> Result<Agent> {
        let od = setup.env.obs_dim();
        let ad = setup.env.act_dim();
        let bound = setup.env.act_bound();
        let h = &setup.hidden;
        Ok(match setup.algo {
            AlgoKind::Bc => Agent::Bc(BcAgent::new(
                od,
                ad,
                bound,
                h,
                setup.hyper,
                setup.regularizer,
                setup.seed,
            )?),
            AlgoKind::Td3Bc => Agent::Td3Bc(Td3BcAgent::new(
                od,
                ad,
                bound,
                h,
                setup.hyper,
                setup.regularizer,
                setup.seed,
            )?),
            AlgoKind::Iql => Agent::Iql(IqlAgent::new(
                od,
                ad,
                bound,
                h,
                setup.hyper,
                setup.regularizer,
                setup.seed,
            )?),
        })
    }

    pub fn update(&mut self, batch: &Batch) -> Result<StepLosses> {
        match self {
            Agent::Bc(a) => a.update(batch),
            Agent::Td3Bc(a) => a.update(batch),
            Agent::Iql(a) => a.update(batch),
        }
    }

    pub fn refresh_masks(&mut self, batch: &Batch) -> Result<()> {
        match self {
            Agent::Bc(a) => a.refresh_masks(batch),
            Agent::Td3Bc(a) => a.refresh_masks(batch),
            Agent::Iql(a) => a.refresh_masks(batch),
        }
    }

    pub fn actor(&self) -> &Mlp {
        match self {
            Agent::Bc(a) => a.actor(),
            Agent::Td3Bc(a) => a.actor(),
            Agent::Iql(a) => a.actor(),
        }
    }

    pub fn networks(&self) -> Vec<NetworkView<'_>> {
        match self {
            Agent::Bc(a) => a.networks(),
            Agent::Td3Bc(a) => a.networks(),
            Agent::Iql(a) => a.networks(),
        }
    }

    pub fn actor_masks(&self) -> Option<&[Mask]> {
        match self {
            Agent::Bc(a) => a.actor_masks(),
            Agent::Td3Bc(a) => a.actor_masks(),
            Agent::Iql(a) => a.actor_masks(),
        }
    }
}

#[derive(Debug)]
pub enum TrainOutcome {
    Completed { curve: LearningCurve, actor: Box<Mlp> },
    /// The run aborted at `step`; evaluation rows recorded before the
    /// abort are kept.
    Diverged { step: usize, message: String, partial: LearningCurve },
}

impl TrainOutcome {
    pub fn curve(&self) -> &LearningCurve {
        match self {
            TrainOutcome::Completed { curve, .. } => curve,
            TrainOutcome::Diverged { partial, .. } => partial,
        }
    }
}

struct Recorder<'a> {
    setup: &'a TrainSetup,
    train_ds: &'a OfflineDataset,
    val_ds: &'a OfflineDataset,
    last_mask_change: f64,
    rows: Vec<CurveRow>,
}

impl Recorder<'_> {
    fn record(&mut self, agent: &Agent, step: usize, losses: StepLosses) -> Result<()> {
        let actor = agent.actor();
        let (return_mean, return_std) =
            evaluate_policy(actor, self.setup.env, self.setup.eval_episodes, self.setup.seed)?;
        let (global_sparsity, per_layer_sparsity) = match agent.actor_masks() {
            Some(masks) => {
                let rep = sparsity_report(actor, masks)?;
                (rep.global, rep.per_layer)
            }
            None => (0.0, vec![0.0; actor.num_layers()]),
        };
        self.rows.push(CurveRow {
            step,
            return_mean,
            return_std,
            train_mse: action_mse(actor, self.train_ds)?,
            val_mse: action_mse(actor, self.val_ds)?,
            actor_loss: losses.actor,
            critic_loss: losses.critic,
            value_loss: losses.value,
            global_sparsity,
            mask_change: self.last_mask_change,
            per_layer_sparsity,
        });
        Ok(())
    }
}

/// One mask refresh: draw (or reuse) the scoring batch, recompute every
/// network's masks, track how much the actor's masks moved.
fn do_refresh(
    agent: &mut Agent,
    cfg: &crate::sparse::SparsityConfig,
    train_ds: &OfflineDataset,
    score_rng: &mut rand_chacha::ChaCha8Rng,
    cache: &mut Option<Batch>,
    rec: &mut Recorder,
) -> Result<()> {
    let prev: Option<Vec<Mask>> = agent.actor_masks().map(|m| m.to_vec());
    let owned;
    let batch: &Batch = if cfg.fixed_score_batch {
        if cache.is_none() {
            *cache = Some(train_ds.sample_batch(cfg.score_batch, score_rng)?);
        }
        cache.as_ref().unwrap()
    } else {
        owned = train_ds.sample_batch(cfg.score_batch, score_rng)?;
        &owned
    };
    agent.refresh_masks(batch)?;
    if let (Some(prev), Some(next)) = (prev, agent.actor_masks()) {
        rec.last_mask_change = mask_change_fraction(&prev, next)?;
    }
    Ok(())
}

/// Run one seed to completion. Divergence is reported as a normal
/// outcome so callers can keep the partial curve; every other error
/// propagates.
pub fn train(
    setup: &TrainSetup,
    train_ds: &OfflineDataset,
    val_ds: &OfflineDataset,
) -> Result<TrainOutcome> {
    setup.validate()?;
    if train_ds.env != setup.env || val_ds.env != setup.env {
        return Err(Error::Config(format!(
            "dataset env mismatch: setup {} vs data {}/{}",
            setup.env.name(),
            train_ds.env.name(),
            val_ds.env.name()
        )));
    }
    let mut agent = Agent::new(setup)?;
    let mut batch_rng = rng::stream(setup.seed, "batch");
    let mut score_rng = rng::stream(setup.seed, "score-batch");
    let sparse_cfg = setup.regularizer.sparsity().copied();
    let layers = agent.actor().num_layers();
    let mut refresh_steps = Vec::new();
    let mut score_cache: Option<Batch> = None;
    let mut rec = Recorder { setup, train_ds, val_ds, last_mask_change: 0.0, rows: Vec::new() };

    if let Some(cfg) = &sparse_cfg {
        if cfg.should_refresh(0) {
            do_refresh(&mut agent, cfg, train_ds, &mut score_rng, &mut score_cache, &mut rec)?;
            refresh_steps.push(0);
        }
    }
    rec.record(&agent, 0, StepLosses::default())?;

    for step in 1..=setup.total_steps {
        if let Some(cfg) = &sparse_cfg {
            if cfg.should_refresh(step) {
                do_refresh(&mut agent, cfg, train_ds, &mut score_rng, &mut score_cache, &mut rec)?;
                refresh_steps.push(step);
            }
        }
        let batch = train_ds.sample_batch(setup.hyper.batch, &mut batch_rng)?;
        match agent.update(&batch) {
            Ok(losses) => {
                if step % setup.eval_interval == 0 {
                    rec.record(&agent, step, losses)?;
                }
            }
            Err(Error::Numeric(message)) => {
                return Ok(TrainOutcome::Diverged {
                    step,
                    message,
                    partial: LearningCurve { rows: rec.rows, refresh_steps, layers },
                });
            }
            Err(e) => return Err(e),
        }
    }
    let actor = Box::new(agent.actor().clone());
    Ok(TrainOutcome::Completed {
        curve: LearningCurve { rows: rec.rows, refresh_steps, layers },
        actor,
    })
}
