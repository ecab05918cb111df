//! Budgeted adaptation.
//!
//! Each batch spends `c_i = delta_i - lambda` of a fixed overhead budget `B`.
//! Adaptation continues through the longest prefix that fits; afterwards the
//! model is frozen and the remaining batches are scored from a frozen run.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::Nanos;
use crate::trace::{accuracy_mean, BatchRecord, MethodTrace, TraceBundle, Weighting};

/// Per-batch overheads, clamped at zero.
pub fn overheads(trace: &MethodTrace) -> Vec<Nanos> {
    overheads_with(trace.records(), trace.lambda())
}

pub fn overheads_with(records: &[BatchRecord], lambda: Nanos) -> Vec<Nanos> {
    records.iter().map(|r| r.delta().saturating_sub(lambda)).collect()
}

/// Raw overheads in signed nanoseconds; batches faster than `lambda` are negative.
pub fn signed_overheads(trace: &MethodTrace) -> Vec<i64> {
    let lambda = trace.lambda().0 as i64;
    trace.records().iter().map(|r| r.delta().0 as i64 - lambda).collect()
}

/// Longest prefix of `c` whose sum stays within `budget`.
pub fn cutoff(c: &[Nanos], budget: Nanos) -> usize {
    let mut spent = 0u64;
    for (j, ci) in c.iter().enumerate() {
        spent = spent.saturating_add(ci.0);
        if spent > budget.0 {
            return j;
        }
    }
    c.len()
}

/// Cutoff over signed overheads. Prefix sums are not monotone here, so every
/// prefix is checked.
pub fn cutoff_signed(c: &[i64], budget: Nanos) -> usize {
    let budget = i128::from(budget.0);
    let mut spent = 0i128;
    let mut best = 0;
    for (j, ci) in c.iter().enumerate() {
        spent += i128::from(*ci);
        if spent <= budget {
            best = j + 1;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmortisedConfig {
    pub budget: Nanos,
    pub lambda: Nanos,
    /// Frozen-phase accuracy used when no frozen run covers the cutoff.
    pub frozen_fallback: Option<f64>,
    pub weighting: Weighting,
    /// Use raw signed overheads instead of clamping at zero.
    pub signed: bool,
}

impl AmortisedConfig {
    pub fn new(budget: Nanos, lambda: Nanos) -> Self {
        AmortisedConfig { budget, lambda, frozen_fallback: None, weighting: Weighting::PerBatch, signed: false }
    }

    pub fn with_fallback(mut self, accuracy: f64) -> Self {
        self.frozen_fallback = Some(accuracy);
        self
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn signed(mut self, signed: bool) -> Self {
        self.signed = signed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrozenSource {
    /// Scored from the frozen run with this cutoff.
    FrozenRun {
        cutoff: usize,
        exact: bool,
    },
    Constant,
    /// No frozen phase (the budget covered the whole stream).
    None,
}

impl std::fmt::Display for FrozenSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FrozenSource::FrozenRun { cutoff, exact: true } => write!(f, "frozen_run:{cutoff}"),
            FrozenSource::FrozenRun { cutoff, exact: false } => write!(f, "frozen_run~{cutoff}"),
            FrozenSource::Constant => f.write_str("constant"),
            FrozenSource::None => f.write_str("none"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmortisedReport {
    pub cutoff_m: usize,
    pub n: usize,
    /// `m / N`.
    pub adapted_fraction: f64,
    pub adapt_accuracy: Option<f64>,
    pub frozen_accuracy: Option<f64>,
    pub utility: f64,
    pub budget_spent: Nanos,
    pub frozen_source: FrozenSource,
    pub warnings: Vec<String>,
}

impl AmortisedReport {
    /// Combines the two phase means; either may be absent only when its
    /// phase is empty.
    pub fn from_phases(
        cutoff_m: usize,
        n: usize,
        adapt_accuracy: Option<f64>,
        frozen_accuracy: Option<f64>,
        budget_spent: Nanos,
        frozen_source: FrozenSource,
        warnings: Vec<String>,
    ) -> Self {
        let beta = cutoff_m as f64 / n as f64;
        let utility = compose(beta, adapt_accuracy.unwrap_or(0.0), frozen_accuracy.unwrap_or(0.0));
        AmortisedReport {
            cutoff_m,
            n,
            adapted_fraction: beta,
            adapt_accuracy,
            frozen_accuracy,
            utility,
            budget_spent,
            frozen_source,
            warnings,
        }
    }
}

/// Amortised utility from its decomposition terms.
pub fn compose(adapted_fraction: f64, adapt_accuracy: f64, frozen_accuracy: f64) -> f64 {
    adapted_fraction * adapt_accuracy + (1.0 - adapted_fraction) * frozen_accuracy
}

pub fn amortised_utility(bundle: &TraceBundle, cfg: &AmortisedConfig) -> Result<AmortisedReport> {
    let trace = bundle.adapted();
    let n = trace.len();
    let clamped = overheads_with(trace.records(), cfg.lambda);
    let (m, budget_spent) = if cfg.signed {
        let lambda = cfg.lambda.0 as i64;
        let raw: Vec<i64> = trace.records().iter().map(|r| r.delta().0 as i64 - lambda).collect();
        let m = cutoff_signed(&raw, cfg.budget);
        (m, Nanos(raw[..m].iter().sum::<i64>().max(0) as u64))
    } else {
        let m = cutoff(&clamped, cfg.budget);
        (m, clamped[..m].iter().copied().sum())
    };

    let adapt_accuracy = if m > 0 { Some(accuracy_mean(&trace.records()[..m], cfg.weighting)?) } else { None };
    let (frozen_accuracy, source, warnings) = resolve_frozen(bundle, m, cfg)?;
    Ok(AmortisedReport::from_phases(m, n, adapt_accuracy, frozen_accuracy, budget_spent, source, warnings))
}

/// Frozen-phase accuracy for batches `m+1..=N`: exact run, nearest earlier
/// run, configured constant, else an error.
pub(crate) fn resolve_frozen(
    bundle: &TraceBundle,
    m: usize,
    cfg: &AmortisedConfig,
) -> Result<(Option<f64>, FrozenSource, Vec<String>)> {
    let n = bundle.adapted().len();
    if m >= n {
        return Ok((None, FrozenSource::None, Vec::new()));
    }
    if let Some((run, exact)) = bundle.frozen_for(m) {
        let tail: Vec<&BatchRecord> = (m + 1..=n).filter_map(|i| run.record(i)).collect();
        let acc = accuracy_mean(tail, cfg.weighting)?;
        let mut warnings = Vec::new();
        if !exact {
            warnings.push(nearest_run_warning(m, run.cutoff()));
        }
        return Ok((Some(acc), FrozenSource::FrozenRun { cutoff: run.cutoff(), exact }, warnings));
    }
    match cfg.frozen_fallback {
        Some(acc) => Ok((Some(acc), FrozenSource::Constant, Vec::new())),
        None => Err(Error::FrozenUnresolvable { cutoff: m, n }),
    }
}

pub(crate) fn nearest_run_warning(m: usize, used: usize) -> String {
    format!("no frozen run at cutoff {m}; using nearest earlier run at cutoff {used}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub budget: Nanos,
    pub utility: f64,
    pub method: String,
}

impl BudgetPoint {
    pub fn new(budget: Nanos, utility: f64, method: impl Into<String>) -> Self {
        BudgetPoint { budget, utility, method: method.into() }
    }

    fn dominated_by(&self, other: &BudgetPoint) -> bool {
        other.budget <= self.budget
            && other.utility >= self.utility
            && (other.budget < self.budget || other.utility > self.utility)
    }
}

/// Whether each point survives domination, in input order.
pub fn frontier_flags(points: &[BudgetPoint]) -> Vec<bool> {
    points.iter().map(|p| !points.iter().any(|q| p.dominated_by(q))).collect()
}

/// Non-dominated points sorted by budget, ties kept.
pub fn pareto_frontier(points: &[BudgetPoint]) -> Vec<BudgetPoint> {
    let mut front: Vec<BudgetPoint> =
        points.iter().zip(frontier_flags(points)).filter(|(_, keep)| *keep).map(|(p, _)| p.clone()).collect();
    front.sort_by(|a, b| a.budget.cmp(&b.budget).then_with(|| a.method.cmp(&b.method)));
    front
}

/// Plot-ready CSV with columns `budget_s, utility, method, on_frontier`.
pub fn write_frontier_csv<W: Write>(points: &[BudgetPoint], out: W) -> Result<()> {
    let flags = frontier_flags(points);
    let mut rows: Vec<(&BudgetPoint, bool)> = points.iter().zip(flags).collect();
    rows.sort_by(|a, b| a.0.budget.cmp(&b.0.budget).then_with(|| a.0.method.cmp(&b.0.method)));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["budget_s", "utility", "method", "on_frontier"])?;
    for (p, on) in rows {
        w.write_record([p.budget.to_secs_string(), p.utility.to_string(), p.method.clone(), on.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
