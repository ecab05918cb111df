//! Trace data model: per-batch timing and correctness records, the
//! method-level trace that every protocol consumes, and frozen-phase runs
//! used by amortised evaluation.

mod io;
mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, TraceError};
use crate::time::Nanos;

pub use io::{load_bundles, load_frozen, load_trace, write_frozen, write_trace, Format, FrozenHeader, TraceHeader};
pub use synth::{gen_frozen, gen_synthetic, preset_names, AccuracyCurve, Preset, Profile, CORRUPTIONS, PRESETS};

/// One batch: intrinsic span `e` (pickup to prediction), extrinsic span
/// `ell` (prediction to pipeline release), and correctness counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub index: usize,
    pub e: Nanos,
    pub ell: Nanos,
    pub batch_size: u32,
    pub correct: u32,
}

impl BatchRecord {
    /// Total processing latency `e + ell`.
    pub fn delta(&self) -> Nanos {
        self.e + self.ell
    }

    pub fn accuracy(&self) -> f64 {
        f64::from(self.correct) / f64::from(self.batch_size)
    }

    fn validate(&self, row: usize) -> Result<(), TraceError> {
        if self.batch_size == 0 {
            return Err(TraceError::ZeroBatchSize { row });
        }
        if self.correct > self.batch_size {
            return Err(TraceError::CorrectExceedsBatch { row, correct: self.correct, batch_size: self.batch_size });
        }
        Ok(())
    }
}

/// Checks records are indexed `first, first+1, ...` and individually valid.
fn validate_records(records: &[BatchRecord], first: usize, relaxed_sizes: bool) -> Result<(), TraceError> {
    let uniform = records.first().map(|r| r.batch_size);
    for (offset, rec) in records.iter().enumerate() {
        let row = offset + 1;
        let expected = first + offset;
        if rec.index != expected {
            return Err(TraceError::NonContiguousIndex { row, expected, found: rec.index });
        }
        rec.validate(row)?;
        if !relaxed_sizes {
            if let Some(size) = uniform {
                if rec.batch_size != size {
                    return Err(TraceError::NonUniformBatchSize { row, expected: size, found: rec.batch_size });
                }
            }
        }
    }
    Ok(())
}

/// Ordered batch records for one method on one stream, plus the baseline
/// latency used to measure overhead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTrace {
    method: String,
    lambda: Nanos,
    corruption: Option<String>,
    relaxed_sizes: bool,
    records: Vec<BatchRecord>,
}

impl MethodTrace {
    pub fn new(
        method: impl Into<String>,
        lambda: Nanos,
        corruption: Option<String>,
        records: Vec<BatchRecord>,
    ) -> Result<Self, TraceError> {
        Self::build(method.into(), lambda, corruption, records, false)
    }

    /// Like [`MethodTrace::new`] but allows batches of differing size.
    pub fn with_relaxed_sizes(
        method: impl Into<String>,
        lambda: Nanos,
        corruption: Option<String>,
        records: Vec<BatchRecord>,
    ) -> Result<Self, TraceError> {
        Self::build(method.into(), lambda, corruption, records, true)
    }

    fn build(
        method: String,
        lambda: Nanos,
        corruption: Option<String>,
        records: Vec<BatchRecord>,
        relaxed_sizes: bool,
    ) -> Result<Self, TraceError> {
        if lambda == Nanos::ZERO {
            return Err(TraceError::NonPositiveLambda);
        }
        if records.is_empty() {
            return Err(TraceError::Empty);
        }
        validate_records(&records, 1, relaxed_sizes)?;
        Ok(MethodTrace { method, lambda, corruption, relaxed_sizes, records })
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn lambda(&self) -> Nanos {
        self.lambda
    }

    pub fn corruption(&self) -> Option<&str> {
        self.corruption.as_deref()
    }

    pub fn relaxed_sizes(&self) -> bool {
        self.relaxed_sizes
    }

    pub fn records(&self) -> &[BatchRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record for 1-based batch `index`.
    pub fn record(&self, index: usize) -> Option<&BatchRecord> {
        index.checked_sub(1).and_then(|i| self.records.get(i))
    }

    /// Mean processing latency over all batches, in milliseconds.
    pub fn mean_delta_ms(&self) -> f64 {
        let total: f64 = self.records.iter().map(|r| r.delta().as_ms_f64()).sum();
        total / self.records.len() as f64
    }
}

/// Inference with adaptation disabled after batch `cutoff`, covering
/// batches `cutoff+1 ..= N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenRun {
    cutoff: usize,
    records: Vec<BatchRecord>,
}

impl FrozenRun {
    pub fn new(cutoff: usize, records: Vec<BatchRecord>) -> Result<Self, TraceError> {
        let first = cutoff + 1;
        if let Some(head) = records.first() {
            if head.index != first {
                return Err(TraceError::FrozenCoverage {
                    cutoff,
                    expected_first: first,
                    expected_last: first + records.len() - 1,
                    found_first: head.index,
                    found_last: records.last().map_or(head.index, |r| r.index),
                });
            }
        }
        validate_records(&records, first, true)?;
        Ok(FrozenRun { cutoff, records })
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn records(&self) -> &[BatchRecord] {
        &self.records
    }

    /// Last covered index, or the cutoff itself when the run is empty.
    pub fn last_index(&self) -> usize {
        self.cutoff + self.records.len()
    }

    pub fn record(&self, index: usize) -> Option<&BatchRecord> {
        index.checked_sub(self.cutoff + 1).and_then(|i| self.records.get(i))
    }
}

/// An adapted trace together with the frozen runs available for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceBundle {
    adapted: MethodTrace,
    frozen_runs: BTreeMap<usize, FrozenRun>,
}

impl TraceBundle {
    pub fn new(adapted: MethodTrace) -> Self {
        TraceBundle { adapted, frozen_runs: BTreeMap::new() }
    }

    /// Adds a frozen run; it must end exactly at the adapted trace's last batch.
    pub fn with_frozen(mut self, run: FrozenRun) -> Result<Self, TraceError> {
        self.insert_frozen(run)?;
        Ok(self)
    }

    pub fn insert_frozen(&mut self, run: FrozenRun) -> Result<(), TraceError> {
        let n = self.adapted.len();
        if run.cutoff > n {
            return Err(TraceError::FrozenCutoffRange { cutoff: run.cutoff, n });
        }
        if run.last_index() != n {
            return Err(TraceError::FrozenCoverage {
                cutoff: run.cutoff,
                expected_first: run.cutoff + 1,
                expected_last: n,
                found_first: run.records.first().map_or(run.cutoff, |r| r.index),
                found_last: run.last_index(),
            });
        }
        self.frozen_runs.insert(run.cutoff, run);
        Ok(())
    }

    pub fn adapted(&self) -> &MethodTrace {
        &self.adapted
    }

    pub fn frozen_runs(&self) -> &BTreeMap<usize, FrozenRun> {
        &self.frozen_runs
    }

    /// The run with exactly this cutoff, else the nearest one below it.
    /// The flag is `true` for an exact match.
    pub fn frozen_for(&self, cutoff: usize) -> Option<(&FrozenRun, bool)> {
        if let Some(run) = self.frozen_runs.get(&cutoff) {
            return Some((run, true));
        }
        self.frozen_runs.range(..cutoff).next_back().map(|(_, run)| (run, false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Unweighted mean of per-batch accuracies.
    #[default]
    PerBatch,
    /// Total correct over total samples.
    PerSample,
}

impl std::str::FromStr for Weighting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "per-batch" | "per_batch" => Ok(Weighting::PerBatch),
            "per-sample" | "per_sample" => Ok(Weighting::PerSample),
            other => Err(format!("unknown weighting `{other}` (per-batch | per-sample)")),
        }
    }
}

pub fn accuracy_mean<'a, I>(records: I, weighting: Weighting) -> Result<f64>
where
    I: IntoIterator<Item = &'a BatchRecord>,
{
    let mut count = 0usize;
    let mut acc_sum = 0.0;
    let mut correct = 0u64;
    let mut samples = 0u64;
    for r in records {
        count += 1;
        acc_sum += r.accuracy();
        correct += u64::from(r.correct);
        samples += u64::from(r.batch_size);
    }
    if count == 0 {
        return Err(Error::EmptyRecords);
    }
    Ok(match weighting {
        Weighting::PerBatch => acc_sum / count as f64,
        Weighting::PerSample => correct as f64 / samples as f64,
    })
}

/// Baseline latency as `mean + k_sigma * sd`, using the sample (n-1)
/// standard deviation, rounded to the nearest nanosecond.
pub fn estimate_lambda(samples: &[Nanos], k_sigma: f64) -> Result<Nanos> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !k_sigma.is_finite() || k_sigma < 0.0 {
        return Err(Error::InvalidSigma(k_sigma));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.0 as f64).sum::<f64>() / n;
    let sd = if samples.len() > 1 {
        let ss: f64 = samples.iter().map(|s| (s.0 as f64 - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Nanos((mean + k_sigma * sd).round() as u64))
}
