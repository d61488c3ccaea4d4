//! Deterministic toy continuous-control environments plus scripted
//! policies for dataset generation.
//!
//! Both environments are fixed-horizon (no early termination), have pure
//! dynamics (stepping is a function of observation, action, and constants
//! only), and expose the full physical state through the observation, so a
//! rollout can be replayed exactly from stored transitions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const HORIZON: usize = 200;
const DT: f64 = 0.05;

// Point-mass on a line: obs = [x, v, goal - x].
const PM_ACT_BOUND: f64 = 1.0;
const PM_ACTION_COST: f64 = 0.01;
const PM_KP: f64 = 4.0;
const PM_KD: f64 = 4.0;

// Torque-limited inverted pendulum: obs = [cos th, sin th, th_dot].
// Upright (th = 0) is the unstable equilibrium; gravity g/l = 1.5 with
// m = l = 1, torque bound 2.0 > 1.5 so the expert can always push through.
const PEND_ACT_BOUND: f64 = 2.0;
const PEND_GRAVITY: f64 = 1.5;
const PEND_KP: f64 = 4.0;
const PEND_KD: f64 = 1.5;

/// Noise scale for the medium policy, as a fraction of the action bound.
pub const MEDIUM_NOISE_SCALE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    PointMass,
    Pendulum,
}

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub act_bound: f64,
    pub horizon: usize,
    /// Reserved: both environments have deterministic dynamics.
    pub dynamics_seed: u64,
}

/// Observation plus step counter. `t` counts completed steps; an episode
/// ends when `t` reaches the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyQuality {
    Expert,
    Medium,
    Random,
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::PointMass => "pointmass",
            EnvKind::Pendulum => "pendulum",
        }
    }

    pub fn parse(s: &str) -> Result<EnvKind> {
        match s {
            "pointmass" => Ok(EnvKind::PointMass),
            "pendulum" => Ok(EnvKind::Pendulum),
            other => Err(Error::Config(format!(
                "unknown env '{other}'; expected pointmass or pendulum"
            ))),
        }
    }

    pub fn obs_dim(&self) -> usize {
        3
    }

    pub fn act_dim(&self) -> usize {
        1
    }

    pub fn act_bound(&self) -> f64 {
        match self {
            EnvKind::PointMass => PM_ACT_BOUND,
            EnvKind::Pendulum => PEND_ACT_BOUND,
        }
    }

    pub fn horizon(&self) -> usize {
        HORIZON
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: self.name().to_string(),
            obs_dim: self.obs_dim(),
            act_dim: self.act_dim(),
            act_bound: self.act_bound(),
            horizon: self.horizon(),
            dynamics_seed: 0,
        }
    }

    /// Initial state drawn from the given generator.
    pub fn reset_rng(&self, rng: &mut ChaCha8Rng) -> EnvState {
        let observation = match self {
            EnvKind::PointMass => {
                let x = rng.gen_range(-1.0..1.0);
                let goal = rng.gen_range(-1.0..1.0);
                vec![x, 0.0, goal - x]
            }
            EnvKind::Pendulum => {
                let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                let theta_dot = rng.gen_range(-1.0..1.0);
                vec![theta.cos(), theta.sin(), theta_dot]
            }
        };
        EnvState { observation, t: 0 }
    }

    /// Deterministic reset keyed by a seed.
    pub fn reset(&self, seed: u64) -> EnvState {
        self.reset_rng(&mut rng::stream(seed, "env-reset"))
    }

    /// One transition. The action is clipped to the bound before both the
    /// dynamics and the action-cost term. Pure in (state, action).
    pub fn step(&self, state: &EnvState, action: &[f64]) -> Result<(EnvState, f64, bool)> {
        if action.len() != self.act_dim() {
            return Err(Error::Dim(format!(
                "{}: action has {} dims, expected {}",
                self.name(),
                action.len(),
                self.act_dim()
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numeric(format!("{}: non-finite action", self.name())));
        }
        if state.t >= self.horizon() {
            return Err(Error::Usage(format!(
                "{}: episode already finished at t = {}",
                self.name(),
                state.t
            )));
        }
        let b = self.act_bound();
        let a = action[0].clamp(-b, b);
        let (observation, reward) = match self {
            EnvKind::PointMass => {
                let (x, v, goal_dx) = (state.observation[0], state.observation[1], state.observation[2]);
                let goal = x + goal_dx;
                let reward = -(x - goal).powi(2) - PM_ACTION_COST * a * a;
                let x_next = x + DT * v;
                let v_next = v + DT * a;
                (vec![x_next, v_next, goal - x_next], reward)
            }
            EnvKind::Pendulum => {
                let (cos_t, sin_t, theta_dot) = (
                    state.observation[0],
                    state.observation[1],
                    state.observation[2],
                );
                let theta = sin_t.atan2(cos_t);
                let tw = wrap_angle(theta);
                let reward = -(tw * tw + 0.1 * theta_dot * theta_dot + 0.001 * a * a);
                let theta_next = theta + DT * theta_dot;
                let theta_dot_next = theta_dot + DT * (PEND_GRAVITY * theta.sin() + a);
                (vec![theta_next.cos(), theta_next.sin(), theta_dot_next], reward)
            }
        };
        let t = state.t + 1;
        let done = t == self.horizon();
        Ok((EnvState { observation, t }, reward, done))
    }

    /// Hand-derived near-optimal PD controller.
    pub fn expert_action(&self, observation: &[f64]) -> Vec<f64> {
        let b = self.act_bound();
        let a = match self {
            EnvKind::PointMass => {
                // obs[2] is goal - x: proportional on distance, damping on v.
                PM_KP * observation[2] - PM_KD * observation[1]
            }
            EnvKind::Pendulum => {
                let theta = observation[1].atan2(observation[0]);
                -PEND_KP * wrap_angle(theta) - PEND_KD * observation[2]
            }
        };
        vec![a.clamp(-b, b)]
    }

    /// Expert plus clipped Gaussian noise of standard deviation
    /// `sigma_scale * act_bound`.
    pub fn medium_action(
        &self,
        observation: &[f64],
        sigma_scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        let b = self.act_bound();
        let mut a = self.expert_action(observation);
        for v in a.iter_mut() {
            *v = (*v + sigma_scale * b * standard_normal(rng)).clamp(-b, b);
        }
        a
    }

    pub fn random_action(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let b = self.act_bound();
        vec![rng.gen_range(-b..b)]
    }

    /// Dispatch on quality; deterministic given (observation, rng state).
    pub fn scripted_policy(
        &self,
        quality: PolicyQuality,
        observation: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        match quality {
            PolicyQuality::Expert => self.expert_action(observation),
            PolicyQuality::Medium => self.medium_action(observation, MEDIUM_NOISE_SCALE, rng),
            PolicyQuality::Random => self.random_action(rng),
        }
    }
}

/// Map an angle into [-pi, pi).
fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Box-Muller standard normal; two uniform draws per sample.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1], keeps ln finite
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
