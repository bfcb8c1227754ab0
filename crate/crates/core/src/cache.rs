//! Out-of-span prediction caching for fast phases.
//!
//! During an accelerated phase, positions beyond the frozen span whose fresh
//! confidence is below `tau_min_conf` have their predictions stored once and
//! reused on later fast steps instead of being re-evaluated. Entries never
//! sit inside the active span (they are filled strictly beyond its endpoint
//! and the whole cache clears at cycle boundaries), and an entry is evicted
//! the moment its position is decoded. Since every served value is below
//! `tau_min_conf < tau_high_conf` and out of span, caching can never change
//! which tokens get committed; it only changes the evaluation accounting.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::seq::{Phase, Prediction, PredictionRow, SequenceState, StepRecord, TokenId};

/// A reused prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheEntry {
    pub token: TokenId,
    pub confidence: f64,
    pub cached_at_step: usize,
}

/// Position-keyed store of reusable out-of-span predictions.
#[derive(Debug, Clone, Default)]
pub struct CachePolicy {
    enabled: bool,
    entries: BTreeMap<usize, CacheEntry>,
}

impl CachePolicy {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            entries: BTreeMap::new(),
        }
    }

    pub fn enabled() -> Self {
        Self::new(true)
    }

    pub fn disabled() -> Self {
        Self::new(false)
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, position: usize) -> Option<&CacheEntry> {
        self.entries.get(&position)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Store predictions for positions strictly beyond `e_cycle` whose
    /// confidence is below `tau_min_conf`. Existing entries are kept, not
    /// overwritten.
    pub fn fill(
        &mut self,
        row: &PredictionRow,
        e_cycle: usize,
        tau_min_conf: f64,
        step: usize,
    ) {
        if !self.enabled {
            return;
        }
        for position in (e_cycle + 1)..row.len() {
            if row.confidence(position) < tau_min_conf {
                self.entries.entry(position).or_insert(CacheEntry {
                    token: row.token(position),
                    confidence: row.confidence(position),
                    cached_at_step: step,
                });
            }
        }
    }

    /// Merge live entries into a fresh row: cached token/confidence replace
    /// the fresh values at cached positions, everything else passes through.
    /// Entries whose position has been decoded are evicted first and never
    /// served. Returns the merged row and the substitution count.
    pub fn serve(&mut self, row: &PredictionRow, state: &SequenceState) -> (PredictionRow, usize) {
        if !self.enabled || self.entries.is_empty() {
            return (row.clone(), 0);
        }
        self.entries.retain(|&position, _| {
            position < state.len() && state.is_masked(position)
        });
        let mut served = 0usize;
        let predictions: Vec<Prediction> = (0..row.len())
            .map(|position| match self.entries.get(&position) {
                Some(entry) => {
                    served += 1;
                    Prediction {
                        token: entry.token,
                        confidence: entry.confidence,
                    }
                }
                None => Prediction {
                    token: row.token(position),
                    confidence: row.confidence(position),
                },
            })
            .collect();
        // Entries were validated on the way in; re-wrapping cannot fail.
        let merged = PredictionRow::new(predictions).expect("merged row is valid");
        (merged, served)
    }
}

/// Aggregate evaluation accounting for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputeSavings {
    /// Predictor invocations (flush records excluded).
    pub forward_calls: usize,
    /// Total per-position evaluations actually performed.
    pub evaluated_positions: usize,
    /// Total positions served from cache.
    pub cached_positions: usize,
    /// Evaluations avoided thanks to the cache — equals `cached_positions`.
    pub evaluations_saved: usize,
    /// Sequence length divided by forward calls.
    pub tokens_per_forward_call: f64,
}

/// Roll the per-step records of one run into totals. The sequence length is
/// recovered from the per-step identity `evaluated + cached == L`.
pub fn accounting_report(records: &[StepRecord]) -> Result<ComputeSavings> {
    let mut forward_calls = 0usize;
    let mut evaluated_positions = 0usize;
    let mut cached_positions = 0usize;
    let mut len = None;
    for record in records {
        if record.phase == Phase::Flush {
            continue;
        }
        forward_calls += 1;
        evaluated_positions += record.evaluated;
        cached_positions += record.cached;
        len.get_or_insert(record.evaluated + record.cached);
    }
    let Some(len) = len else {
        return Err(Error::EmptyRecords);
    };
    Ok(ComputeSavings {
        forward_calls,
        evaluated_positions,
        cached_positions,
        evaluations_saved: cached_positions,
        tokens_per_forward_call: len as f64 / forward_calls as f64,
    })
}
