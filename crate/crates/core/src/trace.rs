//! Run traces and their JSON-lines wire format.
//!
//! Line 1 is a header object `{"L":..,"N":..,"V":..,"seed":..,"strategy":..}`;
//! every following line is one step:
//!
//! ```text
//! {"k":..,"conf":[..],"tok":[..],"unmasked":[[pos,tok,conf],..],
//!  "phase":"slow","e_cand":..,"span":[s,e],"evaluated":..,"cached":..}
//! ```
//!
//! Confidences are rounded to 6 decimals on write. Encoding is UTF-8 with LF
//! line endings. One record per consumed step; `flush` records (terminal
//! commit, no forward call) are the only records that do not correspond to a
//! predictor invocation.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::seq::{Phase, Prediction, PredictionRow, SequenceState, StepRecord, TokenId};

/// Trace file header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "V")]
    pub v: u32,
    pub seed: u64,
    pub strategy: String,
}

/// One consumed step: the bookkeeping record plus the full row the strategy
/// saw (cache-merged where caching was active).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub record: StepRecord,
    pub row: PredictionRow,
}

/// A complete recorded run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub steps: Vec<TraceStep>,
}

/// Result of driving a strategy to completion.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRun {
    pub final_state: SequenceState,
    pub steps: Vec<TraceStep>,
}

impl DecodeRun {
    /// The per-step records, in order.
    pub fn records(&self) -> Vec<StepRecord> {
        self.steps.iter().map(|s| s.record.clone()).collect()
    }

    /// The per-step rows, in order.
    pub fn rows(&self) -> Vec<PredictionRow> {
        self.steps.iter().map(|s| s.row.clone()).collect()
    }

    /// Predictor invocations consumed by this run (flush records excluded).
    pub fn forward_calls(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.record.phase != Phase::Flush)
            .count()
    }

    /// Package the run as a trace file under the given header fields.
    pub fn into_trace(self, l: usize, n: usize, v: u32, seed: u64, strategy: &str) -> TraceFile {
        TraceFile {
            header: TraceHeader {
                l,
                n,
                v,
                seed,
                strategy: strategy.to_string(),
            },
            steps: self.steps,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TraceLine {
    k: usize,
    conf: Vec<f64>,
    tok: Vec<u32>,
    unmasked: Vec<(usize, u32, f64)>,
    phase: Phase,
    e_cand: Option<usize>,
    span: Option<(usize, usize)>,
    evaluated: usize,
    cached: usize,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

impl TraceFile {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for step in &self.steps {
            let line = TraceLine {
                k: step.record.step,
                conf: step
                    .row
                    .predictions()
                    .iter()
                    .map(|p| round6(p.confidence))
                    .collect(),
                tok: step.row.predictions().iter().map(|p| p.token.0).collect(),
                unmasked: step
                    .record
                    .unmasked
                    .iter()
                    .map(|&(pos, tok, conf)| (pos, tok.0, round6(conf)))
                    .collect(),
                phase: step.record.phase,
                e_cand: step.record.e_cand,
                span: step.record.span,
                evaluated: step.record.evaluated,
                cached: step.record.cached,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::MalformedTrace(e.to_string()))
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::MalformedTrace("missing header line".into()))??;
        let header: TraceHeader = serde_json::from_str(&header_line)?;
        let mut steps = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(&line)?;
            if parsed.conf.len() != header.l || parsed.tok.len() != header.l {
                return Err(Error::MalformedTrace(format!(
                    "record at k={} has {} confidences and {} tokens, expected {}",
                    parsed.k,
                    parsed.conf.len(),
                    parsed.tok.len(),
                    header.l
                )));
            }
            let predictions = parsed
                .conf
                .iter()
                .zip(&parsed.tok)
                .map(|(&confidence, &tok)| Prediction {
                    token: TokenId(tok),
                    confidence,
                })
                .collect();
            let row = PredictionRow::new(predictions)?;
            steps.push(TraceStep {
                record: StepRecord {
                    step: parsed.k,
                    phase: parsed.phase,
                    unmasked: parsed
                        .unmasked
                        .into_iter()
                        .map(|(pos, tok, conf)| (pos, TokenId(tok), conf))
                        .collect(),
                    evaluated: parsed.evaluated,
                    cached: parsed.cached,
                    e_cand: parsed.e_cand,
                    span: parsed.span,
                },
                row,
            });
        }
        Ok(Self { header, steps })
    }

    pub fn from_jsonl_str(s: &str) -> Result<Self> {
        Self::read_jsonl(s.as_bytes())
    }
}
