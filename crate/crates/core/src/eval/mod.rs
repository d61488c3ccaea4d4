//! Policy evaluation, score normalization, and learning-curve plumbing.
//!
//! Rollout returns are normalized against pinned scripted baselines so
//! that 0 means random-policy performance and 1 means expert performance
//! on each environment. Curves aggregate across environments first, then
//! across seeds.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::OfflineDataset;
use crate::envs::{EnvKind, PolicyQuality};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::mlp::Mlp;

/// Anything that maps an observation to an action. The generator is only
/// consumed by stochastic policies.
pub trait Policy {
    fn act(&self, observation: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

impl Policy for Mlp {
    fn act(&self, observation: &[f64], _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.predict(observation, 1)
    }
}

/// Scripted controller wrapper so baselines evaluate through the same
/// rollout path as learned actors.
#[derive(Debug, Clone, Copy)]
pub struct ScriptedPolicy {
    pub env: EnvKind,
    pub quality: PolicyQuality,
}

impl Policy for ScriptedPolicy {
    fn act(&self, observation: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(self.env.scripted_policy(self.quality, observation, rng))
    }
}

/// Sum of rewards over one full episode.
fn rollout_return(
    policy: &dyn Policy,
    env: EnvKind,
    reset_rng: &mut ChaCha8Rng,
    policy_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut state = env.reset_rng(reset_rng);
    let mut total = 0.0;
    loop {
        let action = policy.act(&state.observation, policy_rng)?;
        let (next, reward, done) = env.step(&state, &action)?;
        total += reward;
        if done {
            return Ok(total);
        }
        state = next;
    }
}

/// Mean and population standard deviation of the return over `episodes`
/// rollouts. Episode i draws its reset and its policy noise from
/// substreams of `seed` indexed by i, so repeated calls see identical
/// initial states.
pub fn evaluate_policy(
    policy: &dyn Policy,
    env: EnvKind,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::Usage("evaluate_policy needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut reset = rng::substream(seed, "eval-reset", i as u64);
        let mut noise = rng::substream(seed, "eval-policy", i as u64);
        returns.push(rollout_return(policy, env, &mut reset, &mut noise)?);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / episodes as f64;
    Ok((mean, var.sqrt()))
}

/// Reference returns used for score normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBaselines {
    pub random: f64,
    pub expert: f64,
}

/// Episode count behind the pinned anchors. Random-policy returns are
/// heavy-tailed (hundreds of units of spread against a gap of a few
/// hundred), so the anchors need a large sample to hold up at seeds other
/// than the pinning seed.
pub const BASELINE_EPISODES: usize = 5000;
pub const BASELINE_SEED: u64 = 2026;

/// Pinned Monte-Carlo baselines: mean return of the scripted expert and
/// random policies over `BASELINE_EPISODES` episodes with
/// `BASELINE_SEED`. `measured_baselines` reproduces these bit for bit.
pub fn baselines_for(env: EnvKind) -> ScoreBaselines {
    match env {
        EnvKind::PointMass => {
            ScoreBaselines { random: -396.44699628743473, expert: -12.346984335951776 }
        }
        EnvKind::Pendulum => {
            ScoreBaselines { random: -888.5131378738856, expert: -102.88306528645303 }
        }
    }
}

/// Recompute what `baselines_for` pins.
pub fn measured_baselines(env: EnvKind) -> Result<ScoreBaselines> {
    let expert = ScriptedPolicy { env, quality: PolicyQuality::Expert };
    let random = ScriptedPolicy { env, quality: PolicyQuality::Random };
    let (e, _) = evaluate_policy(&expert, env, BASELINE_EPISODES, BASELINE_SEED)?;
    let (r, _) = evaluate_policy(&random, env, BASELINE_EPISODES, BASELINE_SEED)?;
    Ok(ScoreBaselines { random: r, expert: e })
}

/// (raw - random) / (expert - random): 0 at random, 1 at expert.
pub fn normalized_score(raw: f64, baselines: ScoreBaselines) -> f64 {
    (raw - baselines.random) / (baselines.expert - baselines.random)
}

/// Mean squared action error of the actor over the entire dataset,
/// averaged over transitions and action dimensions.
pub fn action_mse(actor: &Mlp, dataset: &OfflineDataset) -> Result<f64> {
    if dataset.len() == 0 {
        return Err(Error::Usage("action_mse on an empty dataset".into()));
    }
    let batch = dataset.full_batch();
    let act_dim = batch.act.len() / batch.n;
    let pred = actor.predict(&batch.obs, batch.n)?;
    if pred.len() != batch.act.len() {
        return Err(Error::Dim(format!(
            "actor emits {} values for {} dataset actions",
            pred.len(),
            batch.act.len()
        )));
    }
    let sq: f64 = pred.iter().zip(&batch.act).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok(sq / (batch.n * act_dim) as f64)
}

// ── learning curves ─────────────────────────────────────────────────────

/// One evaluation point. Loss fields are None when the algorithm has no
/// such network or had not yet updated it (step 0).
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub step: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub train_mse: f64,
    pub val_mse: f64,
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub value_loss: Option<f64>,
    /// Masked fraction over all maskable parameters; 0 when no masks.
    pub global_sparsity: f64,
    /// Fraction of actor mask entries flipped by the latest refresh.
    pub mask_change: f64,
    /// Masked fraction per layer of the actor, input side first.
    pub per_layer_sparsity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
    /// Steps at which masks were recomputed, step 0 included.
    pub refresh_steps: Vec<usize>,
    /// Actor layer count; every row carries this many per-layer entries.
    pub layers: usize,
}

fn push_opt(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(x) = v {
        out.push_str(&x.to_string());
    }
}

impl LearningCurve {
    /// Fixed-schema CSV. Optional losses render as empty fields; floats
    /// use shortest round-trip formatting, so equal values always produce
    /// identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "step,return_mean,return_std,train_mse,val_mse,actor_loss,critic_loss,value_loss,global_sparsity,mask_change",
        );
        for l in 0..self.layers {
            out.push_str(&format!(",sparsity_l{l}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}",
                r.step, r.return_mean, r.return_std, r.train_mse, r.val_mse
            ));
            push_opt(&mut out, r.actor_loss);
            push_opt(&mut out, r.critic_loss);
            push_opt(&mut out, r.value_loss);
            out.push_str(&format!(",{},{}", r.global_sparsity, r.mask_change));
            debug_assert_eq!(r.per_layer_sparsity.len(), self.layers);
            for v in &r.per_layer_sparsity {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn final_row(&self) -> Option<&CurveRow> {
        self.rows.last()
    }
}

// ── aggregation across environments and seeds ───────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CurveKey {
    pub env: EnvKind,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linear-interpolation quantile at fraction `p` of a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn quantiles(values: &[f64]) -> Result<Quantiles> {
    if values.is_empty() {
        return Err(Error::Usage("quantiles of an empty sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    Ok(Quantiles {
        min: v[0],
        q25: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q75: quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCurve {
    pub steps: Vec<usize>,
    /// Per step: mean over seeds of (mean over envs of normalized return).
    pub mean: Vec<f64>,
    /// Population std across seeds of the per-seed env means.
    pub std: Vec<f64>,
    /// Final per-seed scores, in ascending seed order.
    pub final_per_seed: Vec<f64>,
    pub final_quantiles: Quantiles,
}

/// Normalize each curve by its environment baselines, average across
/// environments within each seed, then across seeds. All curves must
/// share the same evaluation cadence.
pub fn aggregate(curves: &[(CurveKey, &LearningCurve)]) -> Result<AggregateCurve> {
    if curves.is_empty() {
        return Err(Error::Usage("aggregate over zero curves".into()));
    }
    let steps: Vec<usize> = curves[0].1.rows.iter().map(|r| r.step).collect();
    for (key, c) in curves {
        let s: Vec<usize> = c.rows.iter().map(|r| r.step).collect();
        if s != steps {
            return Err(Error::Usage(format!(
                "curve for {} seed {} has a different evaluation cadence",
                key.env.name(),
                key.seed
            )));
        }
    }
    let mut seeds: Vec<u64> = curves.iter().map(|(k, _)| k.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();

    // Per seed, mean across that seed's envs at each step.
    let mut per_seed: Vec<Vec<f64>> = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let group: Vec<&LearningCurve> = curves
            .iter()
            .filter(|(k, _)| k.seed == seed)
            .map(|(_, c)| *c)
            .collect();
        let mut acc = vec![0.0; steps.len()];
        for (key, c) in curves.iter().filter(|(k, _)| k.seed == seed) {
            let b = baselines_for(key.env);
            for (i, row) in c.rows.iter().enumerate() {
                acc[i] += normalized_score(row.return_mean, b);
            }
        }
        for v in acc.iter_mut() {
            *v /= group.len() as f64;
        }
        per_seed.push(acc);
    }

    let n = seeds.len() as f64;
    let mut mean = vec![0.0; steps.len()];
    let mut std = vec![0.0; steps.len()];
    for i in 0..steps.len() {
        let m = per_seed.iter().map(|s| s[i]).sum::<f64>() / n;
        let var = per_seed.iter().map(|s| (s[i] - m).powi(2)).sum::<f64>() / n;
        mean[i] = m;
        std[i] = var.sqrt();
    }
    let final_per_seed: Vec<f64> = per_seed.iter().map(|s| *s.last().unwrap()).collect();
    let final_quantiles = quantiles(&final_per_seed)?;
    Ok(AggregateCurve { steps, mean, std, final_per_seed, final_quantiles })
}
