//! Scheduler library for masked-diffusion language-model decoding.
//!
//! Decoding starts from a fully masked token sequence and commits tokens over
//! a fixed budget of denoising steps, one mask-predictor forward call per
//! step. How many tokens to commit per step, and where, is the sampling
//! strategy's call — and it dominates inference cost, since cost is counted
//! in forward calls.
//!
//! The crate provides:
//!
//! - [`seq`]: the sequence state, the commit transition, and the unmask
//!   schedule shared by all strategies;
//! - [`predictor`]: the forward-call abstraction, a seeded synthetic oracle
//!   with known ground truth, and a trace replay predictor;
//! - [`strategies`]: random, low-confidence, semi-autoregressive and
//!   confidence-gated parallel baselines;
//! - [`slowfast`]: the adaptive two-phase strategy that alternates cautious
//!   exploration with accelerated in-span parallel commits;
//! - [`cache`]: out-of-span prediction reuse and its evaluation accounting;
//! - [`harness`]: seeded experiments, metrics CSV, trace and confidence-map
//!   emission, and strategy comparison reports.
//!
//! Everything is deterministic in (config, seed): runs are reproducible byte
//! for byte, apart from an explicitly excluded wall-time column.

pub mod cache;
pub mod error;
pub mod harness;
pub mod predictor;
pub mod rng;
pub mod seq;
pub mod slowfast;
pub mod strategies;
pub mod trace;

pub use cache::{accounting_report, CachePolicy, ComputeSavings};
pub use error::{Error, Result};
pub use harness::{
    compare_experiment, compare_report, execute_run, export_confidence_map, run_experiment,
    run_strategy, CompareReport, ExperimentConfig, OracleParams, OracleSource, RunMetrics,
    StrategySpec,
};
pub use predictor::{OracleConfig, Predictor, ReplayPredictor, SyntheticOracle};
pub use seq::{
    target_unmasked_count, Phase, Prediction, PredictionRow, SequenceState, StepRecord, TokenId,
};
pub use slowfast::{
    fast_step, finalize_cycle_endpoint, predict_endpoint, run_slowfast, slow_step,
    stability_check, CycleState, SlowFastConfig,
};
pub use strategies::{
    baseline_step, low_confidence_step, random_remask_step, run_baseline,
    semi_autoregressive_step, threshold_parallel_step, BaselineConfig, BaselineKind,
};
pub use trace::{DecodeRun, TraceFile, TraceHeader, TraceStep};
