//! Experiment execution: config ingestion, seeded runs across strategies,
//! metrics/trace emission, and plot-ready exports.
//!
//! A single JSON document describes an experiment (sequence length, step
//! budget, vocabulary, strategy, oracle parameters or a trace path, seeds,
//! output paths). Every run is a pure function of (config, seed): repeated
//! invocations produce byte-identical artifacts except for the wall-time
//! column, which is explicitly excluded from determinism comparisons.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::cache::CachePolicy;
use crate::error::{Error, Result};
use crate::predictor::{OracleConfig, Predictor, ReplayPredictor, SyntheticOracle};
use crate::rng::{self, SALT_GROUND_TRUTH, SALT_ORACLE_SEED, SALT_STRATEGY_SEED};
use crate::seq::{Phase, PredictionRow, SequenceState, StepRecord, TokenId};
use crate::slowfast::{run_slowfast, SlowFastConfig};
use crate::strategies::{run_baseline, BaselineConfig, BaselineKind};
use crate::trace::{DecodeRun, TraceFile};

/// Strategy selector with its per-kind parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySpec {
    Random,
    LowConfidence,
    SemiAutoregressive {
        #[serde(default = "default_block_length")]
        block_length: usize,
    },
    ThresholdParallel {
        #[serde(default = "default_parallel_threshold")]
        threshold: f64,
    },
    Slowfast {
        #[serde(flatten)]
        config: SlowFastConfig,
        #[serde(default = "default_cache")]
        cache: bool,
    },
}

fn default_block_length() -> usize {
    32
}

fn default_parallel_threshold() -> f64 {
    0.9
}

fn default_cache() -> bool {
    true
}

impl StrategySpec {
    /// Stable label used in CSV rows, trace headers and file names.
    pub fn label(&self) -> &'static str {
        match self {
            StrategySpec::Random => "random",
            StrategySpec::LowConfidence => "low_confidence",
            StrategySpec::SemiAutoregressive { .. } => "semi_autoregressive",
            StrategySpec::ThresholdParallel { .. } => "threshold_parallel",
            StrategySpec::Slowfast { .. } => "slowfast",
        }
    }

    /// A spec from a bare name, with that kind's default parameters.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "random" => Ok(StrategySpec::Random),
            "low_confidence" => Ok(StrategySpec::LowConfidence),
            "semi_autoregressive" => Ok(StrategySpec::SemiAutoregressive {
                block_length: default_block_length(),
            }),
            "threshold_parallel" => Ok(StrategySpec::ThresholdParallel {
                threshold: default_parallel_threshold(),
            }),
            "slowfast" => Ok(StrategySpec::Slowfast {
                config: SlowFastConfig::default(),
                cache: default_cache(),
            }),
            other => Err(Error::InvalidConfig(format!("unknown strategy '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StrategySpec::SemiAutoregressive { block_length } => {
                if *block_length == 0 {
                    return Err(Error::InvalidConfig("block_length must be >= 1".into()));
                }
            }
            StrategySpec::ThresholdParallel { threshold } => {
                if !(*threshold > 0.0 && *threshold <= 1.0) {
                    return Err(Error::InvalidConfig(
                        "threshold must be in (0, 1]".into(),
                    ));
                }
            }
            StrategySpec::Slowfast { config, .. } => config.validate()?,
            _ => {}
        }
        Ok(())
    }
}

/// Synthetic-oracle parameters as they appear in experiment configs; the
/// ground truth and oracle seed are derived per run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    pub base_noise: f64,
    pub convergence_rate: f64,
    pub neighbor_radius: usize,
    pub neighbor_boost: f64,
    pub error_rate_floor: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            base_noise: 0.04,
            convergence_rate: 0.25,
            neighbor_radius: 15,
            neighbor_boost: 3.6,
            error_rate_floor: 0.25,
        }
    }
}

impl OracleParams {
    /// Build the concrete oracle for one run.
    pub fn materialize(&self, run_seed: u64, length: usize, vocab_size: u32) -> OracleConfig {
        let ground_truth = (0..length)
            .map(|i| {
                TokenId(rng::index_draw(
                    run_seed,
                    i as u64,
                    0,
                    SALT_GROUND_TRUTH,
                    vocab_size as u64,
                ) as u32)
            })
            .collect();
        OracleConfig {
            ground_truth,
            vocab_size,
            seed: rng::keyed_hash(run_seed, 0, 0, SALT_ORACLE_SEED),
            base_noise: self.base_noise,
            convergence_rate: self.convergence_rate,
            neighbor_radius: self.neighbor_radius,
            neighbor_boost: self.neighbor_boost,
            error_rate_floor: self.error_rate_floor,
        }
    }
}

/// Where predictions come from: a synthetic oracle or a recorded trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OracleSource {
    Trace { trace: PathBuf },
    Synthetic(OracleParams),
}

impl Default for OracleSource {
    fn default() -> Self {
        OracleSource::Synthetic(OracleParams::default())
    }
}

/// One experiment: a strategy over a seed list on one predictor source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub length: usize,
    pub steps: usize,
    pub vocab_size: u32,
    pub strategy: StrategySpec,
    pub oracle: OracleSource,
    pub seeds: Vec<u64>,
    pub metrics_csv: Option<PathBuf>,
    pub trace_dir: Option<PathBuf>,
    pub confmap_dir: Option<PathBuf>,
    pub emit_trace: bool,
    pub emit_confmap: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            length: 256,
            steps: 256,
            vocab_size: 1000,
            strategy: StrategySpec::Slowfast {
                config: SlowFastConfig::default(),
                cache: default_cache(),
            },
            oracle: OracleSource::default(),
            seeds: vec![0],
            metrics_csv: None,
            trace_dir: None,
            confmap_dir: None,
            emit_trace: false,
            emit_confmap: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::InvalidConfig("length must be >= 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if self.vocab_size == 0 {
            return Err(Error::InvalidConfig("vocab_size must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        self.strategy.validate()
    }
}

/// Per-run metrics, one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub strategy: String,
    pub forward_calls: usize,
    pub evaluated_positions: usize,
    pub cached_positions: usize,
    pub tokens_per_forward_call: f64,
    /// Fraction of final tokens equal to the oracle ground truth; absent for
    /// replay runs without ground truth.
    pub token_accuracy: Option<f64>,
    pub wall_time_ms: f64,
}

/// Drive one strategy with the given predictor.
pub fn run_strategy(
    strategy: &StrategySpec,
    predictor: &mut dyn Predictor,
    initial: &SequenceState,
    run_seed: u64,
) -> Result<DecodeRun> {
    match strategy {
        StrategySpec::Random => {
            let config = BaselineConfig {
                seed: rng::keyed_hash(run_seed, 0, 0, SALT_STRATEGY_SEED),
                ..BaselineConfig::new(BaselineKind::Random)
            };
            run_baseline(predictor, initial, &config)
        }
        StrategySpec::LowConfidence => run_baseline(
            predictor,
            initial,
            &BaselineConfig::new(BaselineKind::LowConfidence),
        ),
        StrategySpec::SemiAutoregressive { block_length } => {
            let config = BaselineConfig {
                block_length: *block_length,
                ..BaselineConfig::new(BaselineKind::SemiAutoregressive)
            };
            run_baseline(predictor, initial, &config)
        }
        StrategySpec::ThresholdParallel { threshold } => {
            let config = BaselineConfig {
                parallel_threshold: *threshold,
                ..BaselineConfig::new(BaselineKind::ThresholdParallel)
            };
            run_baseline(predictor, initial, &config)
        }
        StrategySpec::Slowfast { config, cache } => run_slowfast(
            predictor,
            initial,
            config,
            cache.then(CachePolicy::enabled),
        ),
    }
}

/// Execute one (strategy, seed) run and collect its metrics.
pub fn execute_run(
    cfg: &ExperimentConfig,
    strategy: &StrategySpec,
    seed: u64,
) -> Result<(RunMetrics, DecodeRun)> {
    strategy.validate()?;
    let initial = SequenceState::init_masked(vec![], cfg.length, cfg.steps)?;
    let started = Instant::now();
    let (run, ground_truth) = match &cfg.oracle {
        OracleSource::Synthetic(params) => {
            let oracle_config = params.materialize(seed, cfg.length, cfg.vocab_size);
            let truth = oracle_config.ground_truth.clone();
            let mut oracle = SyntheticOracle::new(oracle_config)?;
            (run_strategy(strategy, &mut oracle, &initial, seed)?, Some(truth))
        }
        OracleSource::Trace { trace } => {
            let file = fs::File::open(trace)?;
            let trace = TraceFile::read_jsonl(BufReader::new(file))?;
            if trace.header.l != cfg.length || trace.header.n != cfg.steps {
                return Err(Error::TraceHeaderMismatch {
                    header_l: trace.header.l,
                    header_n: trace.header.n,
                    run_l: cfg.length,
                    run_n: cfg.steps,
                });
            }
            let mut replay = ReplayPredictor::new(trace);
            (run_strategy(strategy, &mut replay, &initial, seed)?, None)
        }
    };
    let wall_time_ms = started.elapsed().as_secs_f64() * 1e3;

    let forward_calls = run.forward_calls();
    let mut evaluated_positions = 0usize;
    let mut cached_positions = 0usize;
    for step in &run.steps {
        evaluated_positions += step.record.evaluated;
        cached_positions += step.record.cached;
    }
    let token_accuracy = ground_truth.map(|truth| {
        let matches = run
            .final_state
            .response()
            .iter()
            .zip(&truth)
            .filter(|(a, b)| a == b)
            .count();
        matches as f64 / cfg.length as f64
    });
    let metrics = RunMetrics {
        seed,
        strategy: strategy.label().to_string(),
        forward_calls,
        evaluated_positions,
        cached_positions,
        tokens_per_forward_call: cfg.length as f64 / forward_calls as f64,
        token_accuracy,
        wall_time_ms,
    };
    Ok((metrics, run))
}

/// Run the configured strategy over every seed, emitting artifacts per the
/// config flags, and return one metrics row per run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunMetrics>> {
    cfg.validate()?;
    let mut all = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (metrics, run) = execute_run(cfg, &cfg.strategy, seed)?;
        let stem = format!("{}_seed{}", cfg.strategy.label(), seed);
        if cfg.emit_trace {
            if let Some(dir) = &cfg.trace_dir {
                fs::create_dir_all(dir)?;
                let trace = run.clone().into_trace(
                    cfg.length,
                    cfg.steps,
                    cfg.vocab_size,
                    seed,
                    cfg.strategy.label(),
                );
                let mut file = fs::File::create(dir.join(format!("{stem}.jsonl")))?;
                trace.write_jsonl(&mut file)?;
            }
        }
        if cfg.emit_confmap {
            if let Some(dir) = &cfg.confmap_dir {
                fs::create_dir_all(dir)?;
                let (conf, decode) = export_confidence_map(&run.records(), &run.rows())?;
                fs::write(dir.join(format!("{stem}.conf.tsv")), conf)?;
                fs::write(dir.join(format!("{stem}.decode.tsv")), decode)?;
            }
        }
        all.push(metrics);
    }
    if let Some(path) = &cfg.metrics_csv {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(path, metrics_to_csv(&all))?;
    }
    Ok(all)
}

/// Run several strategies over the same config and seeds.
pub fn compare_experiment(
    cfg: &ExperimentConfig,
    strategies: &[StrategySpec],
) -> Result<(Vec<RunMetrics>, CompareReport)> {
    cfg.validate()?;
    let mut all = Vec::new();
    for strategy in strategies {
        for &seed in &cfg.seeds {
            let (metrics, _) = execute_run(cfg, strategy, seed)?;
            all.push(metrics);
        }
    }
    let report = compare_report(&all)?;
    Ok((all, report))
}

/// Versioned metrics CSV. The wall-time column is last and excluded from
/// determinism comparisons.
pub const METRICS_CSV_HEADER: &str = "seed,strategy,forward_calls,evaluated_positions,cached_positions,tokens_per_forward_call,token_accuracy,wall_time_ms";

pub fn metrics_to_csv(metrics: &[RunMetrics]) -> String {
    let mut out = String::from("#schema=1\n");
    out.push_str(METRICS_CSV_HEADER);
    out.push('\n');
    for m in metrics {
        let accuracy = m
            .token_accuracy
            .map(|a| format!("{a:.6}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{},{:.3}\n",
            m.seed,
            m.strategy,
            m.forward_calls,
            m.evaluated_positions,
            m.cached_positions,
            m.tokens_per_forward_call,
            accuracy,
            m.wall_time_ms,
        ));
    }
    out
}

/// The CSV with the volatile wall-time column stripped from data rows; this
/// is the region compared by determinism checks.
pub fn csv_deterministic_body(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            if line.starts_with('#') || !line.contains(',') {
                line.to_string()
            } else {
                match line.rsplit_once(',') {
                    Some((head, _)) => head.to_string(),
                    None => line.to_string(),
                }
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Confidence-map export: a (steps × L) matrix of confidences (tab-separated,
/// 6-decimal fixed point) and a parallel single-row matrix giving, for each
/// position, the 0-based record index at which it was committed (-1 if never).
pub fn export_confidence_map(
    records: &[StepRecord],
    rows: &[PredictionRow],
) -> Result<(String, String)> {
    if records.len() != rows.len() {
        return Err(Error::TraceLengthMismatch {
            records: records.len(),
            rows: rows.len(),
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let len = rows[0].len();
    let mut conf = String::new();
    for (record, row) in records.iter().zip(rows) {
        if row.len() != len {
            return Err(Error::RowLengthMismatch {
                expected: len,
                found: row.len(),
            });
        }
        let _ = record;
        let line: Vec<String> = (0..len)
            .map(|i| format!("{:.6}", row.confidence(i)))
            .collect();
        conf.push_str(&line.join("\t"));
        conf.push('\n');
    }
    let mut decode_step = vec![-1i64; len];
    for (ordinal, record) in records.iter().enumerate() {
        for &(position, _, _) in &record.unmasked {
            decode_step[position] = ordinal as i64;
        }
    }
    let decode = decode_step
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join("\t")
        + "\n";
    Ok((conf, decode))
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub strategy: String,
    pub runs: usize,
    pub mean_tokens_per_forward_call: f64,
    pub std_tokens_per_forward_call: f64,
    pub mean_token_accuracy: Option<f64>,
    pub std_token_accuracy: Option<f64>,
    pub mean_forward_calls: f64,
    /// Ratio of mean tokens-per-forward-call against the reference strategy
    /// (low_confidence when present, else the first strategy).
    pub speedup: f64,
}

/// Comparison summary across strategies on identical seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub reference: String,
    pub rows: Vec<CompareRow>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Aggregate per-strategy statistics and speedups from raw per-run metrics.
/// Requires every strategy to cover the same seed set.
pub fn compare_report(metrics: &[RunMetrics]) -> Result<CompareReport> {
    if metrics.is_empty() {
        return Err(Error::EmptyRecords);
    }
    // Group by strategy, preserving first-appearance order.
    let mut order: Vec<&str> = Vec::new();
    for m in metrics {
        if !order.contains(&m.strategy.as_str()) {
            order.push(&m.strategy);
        }
    }
    let groups: Vec<(&str, Vec<&RunMetrics>)> = order
        .iter()
        .map(|&label| {
            (
                label,
                metrics.iter().filter(|m| m.strategy == label).collect(),
            )
        })
        .collect();

    let mut seed_sets: Vec<Vec<u64>> = groups
        .iter()
        .map(|(_, g)| g.iter().map(|m| m.seed).collect())
        .collect();
    for seeds in &mut seed_sets {
        seeds.sort_unstable();
    }
    if seed_sets.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::MismatchedSeeds);
    }

    let reference = if order.contains(&"low_confidence") {
        "low_confidence"
    } else {
        order[0]
    };
    let reference_mean = {
        let group = groups
            .iter()
            .find(|(label, _)| *label == reference)
            .expect("reference group exists");
        mean(
            &group
                .1
                .iter()
                .map(|m| m.tokens_per_forward_call)
                .collect::<Vec<_>>(),
        )
    };

    let rows = groups
        .iter()
        .map(|(label, group)| {
            let tpfc: Vec<f64> = group.iter().map(|m| m.tokens_per_forward_call).collect();
            let calls: Vec<f64> = group.iter().map(|m| m.forward_calls as f64).collect();
            let accuracies: Option<Vec<f64>> =
                group.iter().map(|m| m.token_accuracy).collect();
            CompareRow {
                strategy: label.to_string(),
                runs: group.len(),
                mean_tokens_per_forward_call: mean(&tpfc),
                std_tokens_per_forward_call: population_std(&tpfc),
                mean_token_accuracy: accuracies.as_deref().map(mean),
                std_token_accuracy: accuracies.as_deref().map(population_std),
                mean_forward_calls: mean(&calls),
                speedup: mean(&tpfc) / reference_mean,
            }
        })
        .collect();
    Ok(CompareReport {
        reference: reference.to_string(),
        rows,
    })
}

pub const COMPARE_CSV_HEADER: &str = "strategy,runs,mean_tokens_per_forward_call,std_tokens_per_forward_call,mean_token_accuracy,std_token_accuracy,mean_forward_calls,speedup";

impl CompareReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("#schema=1\n");
        out.push_str(&format!("#reference={}\n", self.reference));
        out.push_str(COMPARE_CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let mean_acc = row
                .mean_token_accuracy
                .map(|a| format!("{a:.6}"))
                .unwrap_or_default();
            let std_acc = row
                .std_token_accuracy
                .map(|a| format!("{a:.6}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{},{},{:.6},{:.2}\n",
                row.strategy,
                row.runs,
                row.mean_tokens_per_forward_call,
                row.std_tokens_per_forward_call,
                mean_acc,
                std_acc,
                row.mean_forward_calls,
                row.speedup,
            ));
        }
        out
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22} {:>5} {:>12} {:>10} {:>10} {:>9} {:>12} {:>9}\n",
            "strategy", "runs", "tok/call", "std", "accuracy", "std", "fwd calls", "speedup"
        ));
        for row in &self.rows {
            let mean_acc = row
                .mean_token_accuracy
                .map(|a| format!("{a:.4}"))
                .unwrap_or_else(|| "-".into());
            let std_acc = row
                .std_token_accuracy
                .map(|a| format!("{a:.4}"))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{:<22} {:>5} {:>12.4} {:>10.4} {:>10} {:>9} {:>12.2} {:>8.2}x\n",
                row.strategy,
                row.runs,
                row.mean_tokens_per_forward_call,
                row.std_tokens_per_forward_call,
                mean_acc,
                std_acc,
                row.mean_forward_calls,
                row.speedup,
            ));
        }
        out
    }
}

/// Count trace records that consumed a forward call.
pub fn forward_call_records(records: &[StepRecord]) -> usize {
    records
        .iter()
        .filter(|r| r.phase != Phase::Flush)
        .count()
}
