//! Token sequences, the decoding-step transition, and the unmask schedule.
//!
//! A decoding run starts from a fully masked response of length `L` with a
//! step counter at `N` and moves toward step 0, committing (unmasking) tokens
//! on the way. Committed tokens are never changed or re-masked. Positions are
//! 0-indexed everywhere, including in emitted traces.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// A vocabulary token index. One value is reserved as the mask sentinel.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    /// The reserved mask token.
    pub const MASK: TokenId = TokenId(u32::MAX);

    pub fn is_mask(self) -> bool {
        self == Self::MASK
    }
}

impl fmt::Debug for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_mask() {
            write!(f, "MASK")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The evolving token sequence: prompt, response with mask flags, and the
/// step counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceState {
    prompt: Vec<TokenId>,
    response: Vec<TokenId>,
    step: usize,
    total_steps: usize,
}

impl SequenceState {
    /// Start a run: a fully masked response of length `len` at step `steps`.
    ///
    /// Rejects an empty response, a zero step budget, and a prompt that
    /// contains the mask token.
    pub fn init_masked(prompt: Vec<TokenId>, len: usize, steps: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyResponse);
        }
        if steps == 0 {
            return Err(Error::ZeroSteps);
        }
        if prompt.iter().any(|t| t.is_mask()) {
            return Err(Error::MaskInPrompt);
        }
        Ok(Self {
            prompt,
            response: vec![TokenId::MASK; len],
            step: steps,
            total_steps: steps,
        })
    }

    pub fn prompt(&self) -> &[TokenId] {
        &self.prompt
    }

    pub fn response(&self) -> &[TokenId] {
        &self.response
    }

    /// Response length `L`.
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    /// Current step counter `k`, counting down from `total_steps` to 0.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Total step budget `N`.
    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn is_masked(&self, position: usize) -> bool {
        self.response[position].is_mask()
    }

    pub fn masked_count(&self) -> usize {
        self.response.iter().filter(|t| t.is_mask()).count()
    }

    pub fn decoded_count(&self) -> usize {
        self.len() - self.masked_count()
    }

    pub fn is_fully_decoded(&self) -> bool {
        self.masked_count() == 0
    }

    /// Positions still holding the mask token, in ascending order.
    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.response
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_mask())
            .map(|(i, _)| i)
    }

    /// One decoding transition: commit `choices` and decrement the step.
    ///
    /// Every chosen position must currently be masked, chosen tokens must not
    /// be the mask token, and positions must be distinct. An empty choice
    /// list still consumes a step, since the step counter counts predictor
    /// invocations. All other positions are carried over unchanged; committed
    /// tokens are never overwritten.
    pub fn apply_unmask(&self, choices: &[(usize, TokenId)]) -> Result<Self> {
        if self.step == 0 {
            return Err(Error::StepsExhausted);
        }
        let mut next = self.response.clone();
        let mut seen = vec![false; next.len()];
        for &(position, token) in choices {
            if position >= next.len() {
                return Err(Error::PositionOutOfBounds(position));
            }
            if seen[position] {
                return Err(Error::DuplicatePosition(position));
            }
            seen[position] = true;
            if !next[position].is_mask() {
                return Err(Error::AlreadyDecoded(position));
            }
            if token.is_mask() {
                return Err(Error::MaskWrite(position));
            }
            next[position] = token;
        }
        Ok(Self {
            prompt: self.prompt.clone(),
            response: next,
            step: self.step - 1,
            total_steps: self.total_steps,
        })
    }

    /// Commit tokens for every remaining masked position without consuming a
    /// step. Used by run drivers when the step budget is exhausted with masks
    /// remaining; the committed tokens come from the last predicted row.
    pub(crate) fn flush_remaining(&self, tokens: &[(usize, TokenId)]) -> Result<Self> {
        let mut next = self.response.clone();
        for &(position, token) in tokens {
            if position >= next.len() {
                return Err(Error::PositionOutOfBounds(position));
            }
            if !next[position].is_mask() {
                return Err(Error::AlreadyDecoded(position));
            }
            if token.is_mask() {
                return Err(Error::MaskWrite(position));
            }
            next[position] = token;
        }
        Ok(Self {
            prompt: self.prompt.clone(),
            response: next,
            step: self.step,
            total_steps: self.total_steps,
        })
    }
}

/// Target number of unmasked tokens after the transition taken at step `k`:
/// `⌊L·(1 − (k−1)/N)⌋`, computed exactly in integers.
///
/// Non-decreasing as `k` counts down; equals `L` at `k = 1`.
pub fn target_unmasked_count(len: usize, steps: usize, k: usize) -> Result<usize> {
    if k == 0 || k > steps {
        return Err(Error::StepOutOfRange {
            step: k,
            total: steps,
        });
    }
    // L·(1 − (k−1)/N) == L·(N−k+1)/N exactly.
    let numerator = len as u128 * (steps - k + 1) as u128;
    Ok((numerator / steps as u128) as usize)
}

/// A single per-position prediction: the greedy token and its confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub token: TokenId,
    pub confidence: f64,
}

/// One prediction per position, covering the whole response.
///
/// Already-decoded positions carry confidence 1 and the committed token, so
/// strategies can treat the row uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    predictions: Vec<Prediction>,
}

impl PredictionRow {
    /// Wrap a row, validating that no prediction is the mask token and every
    /// confidence lies in [0, 1].
    pub fn new(predictions: Vec<Prediction>) -> Result<Self> {
        for (i, p) in predictions.iter().enumerate() {
            if p.token.is_mask() {
                return Err(Error::MaskPrediction(i));
            }
            if !(0.0..=1.0).contains(&p.confidence) || p.confidence.is_nan() {
                return Err(Error::ConfidenceOutOfRange {
                    position: i,
                    value: p.confidence,
                });
            }
        }
        Ok(Self { predictions })
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn token(&self, position: usize) -> TokenId {
        self.predictions[position].token
    }

    pub fn confidence(&self, position: usize) -> f64 {
        self.predictions[position].confidence
    }

    pub fn predictions(&self) -> &[Prediction] {
        &self.predictions
    }

    /// Check the row length against a state and the decoded-position
    /// convention is not enforced here; predictors own that contract.
    pub fn check_len(&self, state: &SequenceState) -> Result<()> {
        if self.len() != state.len() {
            return Err(Error::RowLengthMismatch {
                expected: state.len(),
                found: self.len(),
            });
        }
        Ok(())
    }
}

/// Which kind of step produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Slow,
    Fast,
    Baseline,
    /// Terminal commit of remaining masks once the step budget is exhausted.
    /// Consumes no forward call.
    Flush,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Slow => "slow",
            Phase::Fast => "fast",
            Phase::Baseline => "baseline",
            Phase::Flush => "flush",
        };
        f.write_str(s)
    }
}

/// Per-step bookkeeping: what was unmasked, what the predictor evaluated,
/// what came from cache, and (for cycle strategies) the endpoint candidate
/// and active span.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Step counter `k` at prediction time.
    pub step: usize,
    pub phase: Phase,
    /// Newly committed positions with their token and the confidence they
    /// carried in the row used for the decision.
    pub unmasked: Vec<(usize, TokenId, f64)>,
    /// Per-position predictor evaluations actually performed this step.
    pub evaluated: usize,
    /// Positions served from cache this step.
    pub cached: usize,
    /// Endpoint candidate computed this step (exploratory steps only).
    pub e_cand: Option<usize>,
    /// Active span `(s_cycle, e_cycle)` (accelerated steps only).
    pub span: Option<(usize, usize)>,
}
