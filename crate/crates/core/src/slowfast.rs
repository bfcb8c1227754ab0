//! The adaptive two-phase sampling strategy.
//!
//! Decoding proceeds in cycles over a growing left boundary `s_cycle`. Each
//! cycle has two phases:
//!
//! - **Slow (exploratory).** Commit the top `k_slow` masked positions in
//!   `[s_cycle, L-1]` per step while tracking the furthest position whose
//!   confidence clears `tau_min_conf` (the endpoint candidate). When the last
//!   `w_hist` candidates have population variance below `sigma2_stable`, the
//!   span endpoint is frozen to their floored mean; if `k_max` steps pass
//!   without stability, the last candidate is used instead.
//! - **Fast (accelerated).** Within the frozen span `[s_cycle, e_cycle]`,
//!   commit every masked position above `tau_high_conf` simultaneously; when
//!   none qualifies, fall back to the top `k_fast` in-span positions. Spans
//!   beyond `e_cycle` may have low-confidence predictions cached and reused
//!   between fast steps.
//!
//! When the span is fully decoded the next cycle starts at `e_cycle + 1`.
//! Each consumed step is exactly one predictor forward call and one trace
//! record; if the step budget runs out with masks remaining, a terminal
//! flush record commits the final row's tokens without a further call.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::cache::CachePolicy;
use crate::error::{Error, Result};
use crate::predictor::Predictor;
use crate::seq::{Phase, PredictionRow, SequenceState, StepRecord, TokenId};
use crate::strategies::{flush_step, top_masked_by_confidence};
use crate::trace::{DecodeRun, TraceStep};

/// Scheduler hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlowFastConfig {
    /// Minimum confidence for a position to count toward the endpoint.
    pub tau_min_conf: f64,
    /// Gate for simultaneous in-span commits during the fast phase.
    pub tau_high_conf: f64,
    /// Maximum exploratory steps per cycle.
    pub k_max: usize,
    /// Sliding window length for the stability check.
    pub w_hist: usize,
    /// Population-variance threshold below which the endpoint is stable.
    /// Negative values never fire, which degenerates the run to pure
    /// exploratory decoding.
    pub sigma2_stable: f64,
    /// Commits per exploratory step.
    pub k_slow: usize,
    /// Commits per fast fallback step.
    pub k_fast: usize,
}

impl Default for SlowFastConfig {
    fn default() -> Self {
        Self {
            tau_min_conf: 0.1,
            tau_high_conf: 0.85,
            k_max: 8,
            w_hist: 2,
            sigma2_stable: 1.0,
            k_slow: 1,
            k_fast: 1,
        }
    }
}

impl SlowFastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_min_conf) {
            return Err(Error::InvalidConfig("tau_min_conf must be in [0, 1]".into()));
        }
        if !(self.tau_high_conf > 0.0 && self.tau_high_conf <= 1.0) {
            return Err(Error::InvalidConfig("tau_high_conf must be in (0, 1]".into()));
        }
        if self.tau_min_conf >= self.tau_high_conf {
            return Err(Error::InvalidConfig(
                "tau_min_conf must be strictly below tau_high_conf".into(),
            ));
        }
        if self.k_max == 0 || self.w_hist == 0 || self.k_slow == 0 || self.k_fast == 0 {
            return Err(Error::InvalidConfig(
                "k_max, w_hist, k_slow and k_fast must all be >= 1".into(),
            ));
        }
        if !self.sigma2_stable.is_finite() {
            return Err(Error::InvalidConfig("sigma2_stable must be finite".into()));
        }
        Ok(())
    }
}

/// Per-cycle bookkeeping: the span boundaries and the endpoint history.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleState {
    s_cycle: usize,
    e_cycle: Option<usize>,
    history: VecDeque<usize>,
    w_hist: usize,
    exploratory_steps_used: usize,
}

impl CycleState {
    pub fn new(s_cycle: usize, w_hist: usize) -> Self {
        Self {
            s_cycle,
            e_cycle: None,
            history: VecDeque::with_capacity(w_hist),
            w_hist,
            exploratory_steps_used: 0,
        }
    }

    pub fn s_cycle(&self) -> usize {
        self.s_cycle
    }

    pub fn e_cycle(&self) -> Option<usize> {
        self.e_cycle
    }

    pub fn exploratory_steps_used(&self) -> usize {
        self.exploratory_steps_used
    }

    /// Recorded endpoint candidates, oldest first (at most `w_hist`).
    pub fn history(&self) -> Vec<usize> {
        self.history.iter().copied().collect()
    }

    pub fn set_endpoint(&mut self, e_cycle: usize) {
        self.e_cycle = Some(e_cycle);
    }

    fn push_candidate(&mut self, e_cand: usize) {
        if self.history.len() == self.w_hist {
            self.history.pop_front();
        }
        self.history.push_back(e_cand);
    }

    /// Reset exploration in place (used when no candidate ever qualified).
    fn restart_exploration(&mut self) {
        self.history.clear();
        self.exploratory_steps_used = 0;
    }

    /// Open the next cycle at a new left boundary.
    fn advance_to(&mut self, s_cycle: usize) {
        self.s_cycle = s_cycle;
        self.e_cycle = None;
        self.history.clear();
        self.exploratory_steps_used = 0;
    }
}

/// Furthest position in `[s_cycle, L-1]` with confidence strictly above
/// `tau_min_conf`, or `None` when no position qualifies. Decoded positions
/// carry confidence 1 and therefore always qualify while `tau_min_conf < 1`.
pub fn predict_endpoint(
    row: &PredictionRow,
    s_cycle: usize,
    tau_min_conf: f64,
) -> Option<usize> {
    (s_cycle..row.len())
        .rev()
        .find(|&i| row.confidence(i) > tau_min_conf)
}

/// Sliding-window stability: stable iff at least `w_hist` values are present
/// and the population variance of the last `w_hist` is strictly below
/// `sigma2_stable`. The variance (over the available tail) is returned either
/// way for tracing.
pub fn stability_check(history: &[f64], w_hist: usize, sigma2_stable: f64) -> (bool, f64) {
    let tail_len = history.len().min(w_hist);
    if tail_len == 0 {
        return (false, 0.0);
    }
    let tail = &history[history.len() - tail_len..];
    // Welford accumulation; the brute-force two-pass form lives in tests.
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for (idx, &x) in tail.iter().enumerate() {
        let count = (idx + 1) as f64;
        let delta = x - mean;
        mean += delta / count;
        m2 += delta * (x - mean);
    }
    let variance = m2 / tail_len as f64;
    (history.len() >= w_hist && variance < sigma2_stable, variance)
}

/// Freeze the cycle endpoint: the floored mean of the last `w_hist` recorded
/// candidates when stable, otherwise the last candidate (the no-convergence
/// fallback). The result is clamped into `[s_cycle, len-1]`.
pub fn finalize_cycle_endpoint(
    history: &[usize],
    w_hist: usize,
    stable: bool,
    s_cycle: usize,
    len: usize,
) -> Result<usize> {
    let last = *history.last().ok_or(Error::EmptyHistory)?;
    let endpoint = if stable {
        let tail_len = history.len().min(w_hist);
        let tail = &history[history.len() - tail_len..];
        tail.iter().sum::<usize>() / tail_len
    } else {
        last
    };
    Ok(endpoint.clamp(s_cycle, len - 1))
}

/// Outcome of one exploratory step.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowOutcome {
    pub choices: Vec<(usize, TokenId)>,
    pub e_cand: Option<usize>,
}

/// One exploratory step: commit the top `k_slow` masked positions in the
/// window, record the endpoint candidate (absent candidates record nothing),
/// and advance the exploratory step counter. Stability is evaluated by the
/// caller after the append.
pub fn slow_step(
    row: &PredictionRow,
    state: &SequenceState,
    cycle: &mut CycleState,
    config: &SlowFastConfig,
) -> Result<SlowOutcome> {
    row.check_len(state)?;
    if cycle.s_cycle >= state.len() {
        return Err(Error::PositionOutOfBounds(cycle.s_cycle));
    }
    let choices = top_masked_by_confidence(
        row,
        state,
        cycle.s_cycle..=state.len() - 1,
        config.k_slow,
    );
    let e_cand = predict_endpoint(row, cycle.s_cycle, config.tau_min_conf);
    if let Some(e) = e_cand {
        cycle.push_candidate(e);
    }
    cycle.exploratory_steps_used += 1;
    Ok(SlowOutcome { choices, e_cand })
}

/// One accelerated step: commit every masked in-span position above
/// `tau_high_conf` simultaneously; if none qualifies, fall back to the top
/// `k_fast` in-span positions. Returns no choices when the span holds no
/// masks (the driver then closes the cycle).
pub fn fast_step(
    row: &PredictionRow,
    state: &SequenceState,
    cycle: &CycleState,
    config: &SlowFastConfig,
) -> Result<Vec<(usize, TokenId)>> {
    row.check_len(state)?;
    let e_cycle = cycle.e_cycle.ok_or(Error::EndpointUnset)?;
    let span = cycle.s_cycle..=e_cycle;
    let high: Vec<(usize, TokenId)> = span
        .clone()
        .filter(|&i| state.is_masked(i) && row.confidence(i) > config.tau_high_conf)
        .map(|i| (i, row.token(i)))
        .collect();
    if !high.is_empty() {
        return Ok(high);
    }
    Ok(top_masked_by_confidence(row, state, span, config.k_fast))
}

fn span_has_masks(state: &SequenceState, s: usize, e: usize) -> bool {
    (s..=e).any(|i| state.is_masked(i))
}

/// Drive the full slow/fast loop to completion.
///
/// Every consumed step invokes the predictor exactly once and appends one
/// record. Exploration runs until the stability check fires or `k_max` steps
/// pass (an exploration with no recorded candidate restarts instead of
/// finalizing); the fast phase then drains the frozen span; the next cycle
/// opens at `e_cycle + 1`. The cache, when enabled, only ever substitutes
/// out-of-span low-confidence predictions, so committed tokens are identical
/// with and without it.
pub fn run_slowfast(
    predictor: &mut dyn Predictor,
    initial: &SequenceState,
    config: &SlowFastConfig,
    cache: Option<CachePolicy>,
) -> Result<DecodeRun> {
    config.validate()?;
    let len = initial.len();
    let mut cache = cache.unwrap_or_else(CachePolicy::disabled);
    let mut state = initial.clone();
    let mut steps: Vec<TraceStep> = Vec::new();
    let mut cycle = CycleState::new(0, config.w_hist);
    // Raw (pre-merge) row kept for the terminal flush.
    let mut last_raw_row: Option<PredictionRow> = None;

    'run: while !state.is_fully_decoded() {
        if state.step() == 0 {
            let row = last_raw_row.ok_or(Error::NoRowForFlush)?;
            steps.push(flush_step(&mut state, &row)?);
            break;
        }

        // Exploratory phase. Slow steps always see fresh predictions.
        cache.clear();
        let mut stable = false;
        loop {
            if state.is_fully_decoded() {
                break 'run;
            }
            if state.step() == 0 {
                let row = last_raw_row.ok_or(Error::NoRowForFlush)?;
                steps.push(flush_step(&mut state, &row)?);
                break 'run;
            }
            let row = predictor.predict(&state)?;
            row.check_len(&state)?;
            last_raw_row = Some(row.clone());
            let k = state.step();
            let outcome = slow_step(&row, &state, &mut cycle, config)?;
            state = state.apply_unmask(&outcome.choices)?;
            steps.push(TraceStep {
                record: StepRecord {
                    step: k,
                    phase: Phase::Slow,
                    unmasked: outcome
                        .choices
                        .iter()
                        .map(|&(i, t)| (i, t, row.confidence(i)))
                        .collect(),
                    evaluated: len,
                    cached: 0,
                    e_cand: outcome.e_cand,
                    span: None,
                },
                row,
            });

            let history: Vec<f64> = cycle.history().iter().map(|&e| e as f64).collect();
            let (is_stable, _) = stability_check(&history, config.w_hist, config.sigma2_stable);
            if is_stable {
                stable = true;
                break;
            }
            if cycle.exploratory_steps_used >= config.k_max {
                if cycle.history().is_empty() {
                    // No candidate ever cleared tau_min_conf: keep decoding
                    // cautiously and start the exploration count over.
                    cycle.restart_exploration();
                    continue;
                }
                break;
            }
        }
        if state.is_fully_decoded() {
            break;
        }

        let e_cycle = finalize_cycle_endpoint(
            &cycle.history(),
            config.w_hist,
            stable,
            cycle.s_cycle(),
            len,
        )?;
        cycle.set_endpoint(e_cycle);

        // Accelerated phase: drain the span.
        while span_has_masks(&state, cycle.s_cycle(), e_cycle) {
            if state.step() == 0 {
                let row = last_raw_row.ok_or(Error::NoRowForFlush)?;
                steps.push(flush_step(&mut state, &row)?);
                break 'run;
            }
            let raw = predictor.predict(&state)?;
            raw.check_len(&state)?;
            last_raw_row = Some(raw.clone());
            let (merged, served) = cache.serve(&raw, &state);
            cache.fill(&merged, e_cycle, config.tau_min_conf, state.step());
            let k = state.step();
            let choices = fast_step(&merged, &state, &cycle, config)?;
            state = state.apply_unmask(&choices)?;
            steps.push(TraceStep {
                record: StepRecord {
                    step: k,
                    phase: Phase::Fast,
                    unmasked: choices
                        .iter()
                        .map(|&(i, t)| (i, t, merged.confidence(i)))
                        .collect(),
                    evaluated: len - served,
                    cached: served,
                    e_cand: None,
                    span: Some((cycle.s_cycle(), e_cycle)),
                },
                row: merged,
            });
        }

        // Span complete; open the next cycle past it.
        cache.clear();
        let next_start = e_cycle + 1;
        if next_start >= len {
            break;
        }
        cycle.advance_to(next_start);
    }

    Ok(DecodeRun {
        final_state: state,
        steps,
    })
}
