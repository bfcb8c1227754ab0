//! Shared fixtures for integration tests: adversarial predictors with fixed
//! confidence patterns and helpers for replaying recorded runs.

use slowfast_core::{
    Phase, Prediction, PredictionRow, Predictor, Result, SequenceState, StepRecord, TokenId,
};

/// Fixed confidence patterns that stress scheduler edge paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// Every masked confidence 0.05: endpoint candidates never qualify at
    /// the default minimum threshold.
    AllLow,
    /// Every masked confidence 0.99: immediate stability and full-span
    /// parallel commits.
    AllHigh,
    /// Confidence 0.95 when (position + step) is even, else 0.05.
    Alternating,
    /// All-low for the first half of the step budget, alternating after:
    /// exercises empty-history exploration restarts followed by real cycles.
    LateAlternating,
}

/// Predictor with a fixed confidence pattern and deterministic tokens.
pub struct PatternPredictor {
    pub pattern: Pattern,
    pub vocab_size: u32,
}

impl PatternPredictor {
    pub fn new(pattern: Pattern, vocab_size: u32) -> Self {
        Self {
            pattern,
            vocab_size,
        }
    }
}

impl Predictor for PatternPredictor {
    fn predict(&mut self, state: &SequenceState) -> Result<PredictionRow> {
        let k = state.step();
        let predictions = (0..state.len())
            .map(|i| {
                if !state.is_masked(i) {
                    return Prediction {
                        token: state.response()[i],
                        confidence: 1.0,
                    };
                }
                let confidence = match self.pattern {
                    Pattern::AllLow => 0.05,
                    Pattern::AllHigh => 0.99,
                    Pattern::Alternating => {
                        if (i + k) % 2 == 0 {
                            0.95
                        } else {
                            0.05
                        }
                    }
                    Pattern::LateAlternating => {
                        if k > state.total_steps() / 2 {
                            0.05
                        } else if (i + k) % 2 == 0 {
                            0.95
                        } else {
                            0.05
                        }
                    }
                };
                Prediction {
                    token: TokenId((i as u32 * 7 + k as u32) % self.vocab_size),
                    confidence,
                }
            })
            .collect();
        PredictionRow::new(predictions)
    }
}

/// Independent record replay: applies every record's unmask list to a plain
/// token buffer, checking monotonicity (no position committed twice, no mask
/// writes) and per-step mask/decoded conservation. Returns the final buffer.
pub fn replay_records(len: usize, records: &[StepRecord]) -> Vec<Option<u32>> {
    let mut buffer: Vec<Option<u32>> = vec![None; len];
    for record in records {
        for &(position, token, _) in &record.unmasked {
            assert!(position < len, "position out of range");
            assert!(
                buffer[position].is_none(),
                "position {position} committed twice"
            );
            assert!(!token.is_mask(), "mask token committed");
            buffer[position] = Some(token.0);
        }
        let decoded = buffer.iter().filter(|t| t.is_some()).count();
        let masked = len - decoded;
        assert_eq!(decoded + masked, len);
    }
    buffer
}

/// Forward-call records (everything except the terminal flush).
pub fn forward_records(records: &[StepRecord]) -> Vec<&StepRecord> {
    records.iter().filter(|r| r.phase != Phase::Flush).collect()
}
