//! Offline reinforcement learning with gradient-saliency sparse training.
//!
//! The crate is self-contained: reverse-mode autodiff MLPs, Adam/AdamW,
//! a family of regularizers including periodic sparse masking, two toy
//! continuous-control environments with dataset generation, and three
//! offline RL algorithms (behavioral cloning, TD3+BC, IQL) wired into a
//! deterministic training and evaluation harness.

pub mod algo;
pub mod data;
pub mod envs;
pub mod error;
pub mod eval;
pub mod rng;
pub mod runner;
pub mod sparse;
pub mod tensor;

pub use algo::train::{train, Agent, TrainOutcome, TrainSetup};
pub use algo::{AlgoHyper, AlgoKind, NetworkView, StepLosses};
pub use data::{Batch, DataQuality, OfflineDataset, SplitTag, Transition};
pub use envs::{EnvKind, EnvSpec, EnvState, PolicyQuality};
pub use error::{Error, Result};
pub use eval::{
    action_mse, aggregate, baselines_for, evaluate_policy, normalized_score, AggregateCurve,
    CurveKey, CurveRow, LearningCurve, Policy, Quantiles, ScoreBaselines, ScriptedPolicy,
};
pub use runner::{
    load_actor, run_sweep, run_train, save_actor, CellOutcome, DataSource, DatasetSpec, KeyValues,
    RunConfig, RunRecord, RunSummary, SeedReport, SeedStatus, SweepConfig, SweepRecord,
};
pub use sparse::{Mask, SparseMode, SparsityConfig};
pub use tensor::graph::{Graph, NodeId};
pub use tensor::mlp::{Activation, ForwardPass, Hooks, Mlp, OutputTransform, ParamKind};
pub use tensor::optim::{OptimKind, Optimizer};
pub use tensor::regularizer::Regularizer;
pub use tensor::Tensor;
