//! Greedy-pacing streams with hyperbolic latency discounting.
//!
//! The user requests the next batch as soon as a prediction is emitted, so the
//! wait for batch `i` is the previous batch's extrinsic time plus this batch's
//! intrinsic time. Delay beyond `lambda` discounts the prediction by
//! `kappa = 1 / (1 + d / (T - lambda))`, which halves exactly when `w = T`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::Nanos;
use crate::trace::{BatchRecord, MethodTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinuousConfig {
    threshold: Nanos,
    lambda: Nanos,
}

impl ContinuousConfig {
    pub fn new(threshold: Nanos, lambda: Nanos) -> Result<Self> {
        if threshold <= lambda {
            return Err(Error::InvalidThreshold {
                threshold_ms: threshold.to_ms_string(),
                lambda_ms: lambda.to_ms_string(),
            });
        }
        Ok(ContinuousConfig { threshold, lambda })
    }

    pub fn threshold(&self) -> Nanos {
        self.threshold
    }

    pub fn lambda(&self) -> Nanos {
        self.lambda
    }

    /// `T - lambda`, the delay at which responsiveness halves.
    pub fn half_life(&self) -> Nanos {
        self.threshold - self.lambda
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchTiming {
    pub index: usize,
    pub wait: Nanos,
    pub delay: Nanos,
}

/// `(w_i, d_i)` for every batch against the trace's own `lambda`.
pub fn wait_times(trace: &MethodTrace) -> Vec<BatchTiming> {
    wait_times_with(trace.records(), trace.lambda())
}

pub fn wait_times_with(records: &[BatchRecord], lambda: Nanos) -> Vec<BatchTiming> {
    let mut prev_ell = Nanos::ZERO;
    records
        .iter()
        .map(|r| {
            let wait = prev_ell + r.e;
            prev_ell = r.ell;
            BatchTiming { index: r.index, wait, delay: wait.saturating_sub(lambda) }
        })
        .collect()
}

pub fn decay(delay: Nanos, cfg: &ContinuousConfig) -> f64 {
    1.0 / (1.0 + delay.0 as f64 / cfg.half_life().0 as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchResponse {
    pub index: usize,
    pub wait: Nanos,
    pub delay: Nanos,
    pub kappa: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousReport {
    pub mean_accuracy: f64,
    pub mean_responsiveness: f64,
    /// Population covariance of per-batch accuracy and responsiveness.
    pub covariance: f64,
    /// `U / (mean_accuracy * mean_responsiveness)`; absent when the product is zero.
    pub alignment: Option<f64>,
    pub utility: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_batch: Option<Vec<BatchResponse>>,
}

impl ContinuousReport {
    /// Aggregates `(accuracy, kappa)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyRecords);
        }
        let n = pairs.len() as f64;
        let mean_accuracy = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_responsiveness = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let utility = pairs.iter().map(|(a, k)| a * k).sum::<f64>() / n;
        let covariance = pairs.iter().map(|(a, k)| (a - mean_accuracy) * (k - mean_responsiveness)).sum::<f64>() / n;
        let product = mean_accuracy * mean_responsiveness;
        Ok(ContinuousReport {
            mean_accuracy,
            mean_responsiveness,
            covariance,
            alignment: (product > 0.0).then(|| utility / product),
            utility,
            per_batch: None,
        })
    }

    /// Per-batch dump with columns `index, w_ms, d_ms, kappa, a`.
    pub fn write_per_batch_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "w_ms", "d_ms", "kappa", "a"])?;
        for b in self.per_batch.iter().flatten() {
            w.write_record([
                b.index.to_string(),
                b.wait.to_ms_string(),
                b.delay.to_ms_string(),
                b.kappa.to_string(),
                b.accuracy.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Continuous utility from its decomposition terms.
pub fn compose(mean_accuracy: f64, mean_responsiveness: f64, alignment: f64) -> f64 {
    mean_accuracy * mean_responsiveness * alignment
}

pub fn continuous_utility(trace: &MethodTrace, cfg: &ContinuousConfig) -> Result<ContinuousReport> {
    continuous_utility_records(trace.records(), cfg, true)
}

pub(crate) fn continuous_utility_records(
    records: &[BatchRecord],
    cfg: &ContinuousConfig,
    keep_per_batch: bool,
) -> Result<ContinuousReport> {
    let per_batch: Vec<BatchResponse> = wait_times_with(records, cfg.lambda)
        .into_iter()
        .zip(records)
        .map(|(t, r)| BatchResponse {
            index: t.index,
            wait: t.wait,
            delay: t.delay,
            kappa: decay(t.delay, cfg),
            accuracy: r.accuracy(),
        })
        .collect();
    let pairs: Vec<(f64, f64)> = per_batch.iter().map(|b| (b.accuracy, b.kappa)).collect();
    let mut report = ContinuousReport::from_pairs(&pairs)?;
    if keep_per_batch {
        report.per_batch = Some(per_batch);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::tests::rec;
    use proptest::prelude::*;

    fn ms(s: &str) -> Nanos {
        Nanos::parse_ms(s).unwrap()
    }

    #[test]
    fn threshold_must_exceed_lambda() {
        assert!(ContinuousConfig::new(ms("39.9"), ms("39.9")).is_err());
        assert!(ContinuousConfig::new(ms("30"), ms("39.9")).is_err());
        assert!(ContinuousConfig::new(ms("50"), ms("39.9")).is_ok());
    }

    #[test]
    fn wait_uses_previous_extrinsic() {
        let recs = vec![
            BatchRecord { index: 1, e: ms("41.1"), ell: ms("56.6"), batch_size: 64, correct: 1 },
            BatchRecord { index: 2, e: ms("41.1"), ell: ms("56.6"), batch_size: 64, correct: 1 },
        ];
        let t = MethodTrace::new("ETA", ms("39.9"), None, recs).unwrap();
        let w = wait_times(&t);
        assert_eq!(w[0].wait, ms("41.1"));
        assert_eq!(w[0].delay, ms("1.2"));
        assert_eq!(w[1].wait, ms("97.7"));
        assert_eq!(w[1].delay, ms("57.8"));
    }

    #[test]
    fn standard_inference_has_no_delay() {
        let t = MethodTrace::new("S", ms("40"), None, (1..=3).map(|i| rec(i, 40, 0, 10, 3)).collect()).unwrap();
        assert!(wait_times(&t).iter().all(|w| w.delay == Nanos::ZERO));
        let r = continuous_utility(&t, &ContinuousConfig::new(ms("50"), ms("40")).unwrap()).unwrap();
        assert_eq!(r.mean_responsiveness, 1.0);
        assert_eq!(r.utility, r.mean_accuracy);
    }

    #[test]
    fn half_life() {
        let lambda = ms("39.9");
        for t in [50u64, 100, 200, 400, 1000] {
            let cfg = ContinuousConfig::new(Nanos::from_ms(t), lambda).unwrap();
            assert_eq!(decay(cfg.half_life(), &cfg), 0.5);
            assert_eq!(decay(Nanos::ZERO, &cfg), 1.0);
            assert_eq!(decay(Nanos(3 * cfg.half_life().0), &cfg), 0.25);
        }
    }

    #[test]
    fn reported_decompositions() {
        assert!((compose(0.3172, 0.896, 1.0) - 0.2842).abs() < 5e-5);
        assert!((compose(0.1816, 1.0, 1.0) - 0.1816).abs() < 1e-12);
    }

    #[test]
    fn constant_accuracy_has_zero_covariance() {
        let recs = vec![rec(1, 40, 90, 10, 4), rec(2, 80, 10, 10, 4), rec(3, 45, 0, 10, 4)];
        let t = MethodTrace::new("m", ms("40"), None, recs).unwrap();
        let r = continuous_utility(&t, &ContinuousConfig::new(ms("100"), ms("40")).unwrap()).unwrap();
        assert!(r.covariance.abs() < 1e-15);
        assert!((r.utility - 0.4 * r.mean_responsiveness).abs() < 1e-15);
    }

    #[test]
    fn per_batch_csv() {
        let recs = vec![rec(1, 60, 40, 10, 5), rec(2, 60, 0, 10, 10)];
        let t = MethodTrace::new("m", ms("40"), None, recs).unwrap();
        let r = continuous_utility(&t, &ContinuousConfig::new(ms("80"), ms("40")).unwrap()).unwrap();
        let mut buf = Vec::new();
        r.write_per_batch_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "index,w_ms,d_ms,kappa,a\n1,60,20,0.6666666666666666,0.5\n2,100,60,0.4,1\n"
        );
    }

    fn arb_records() -> impl Strategy<Value = Vec<BatchRecord>> {
        prop::collection::vec((0u64..400_000_000, 0u64..400_000_000, 0u32..=64), 1..80).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (e, l, c))| BatchRecord {
                    index: i + 1,
                    e: Nanos(e),
                    ell: Nanos(l),
                    batch_size: 64,
                    correct: c,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn decomposition_identity(recs in arb_records(), lambda in 1u64..100_000_000, slack in 1u64..1_000_000_000) {
            let cfg = ContinuousConfig::new(Nanos(lambda + slack), Nanos(lambda)).unwrap();
            let t = MethodTrace::new("m", Nanos(lambda), None, recs).unwrap();
            let r = continuous_utility(&t, &cfg).unwrap();
            prop_assert!((r.utility - (r.mean_accuracy * r.mean_responsiveness + r.covariance)).abs() <= 1e-12);
            prop_assert!(r.utility <= r.mean_accuracy + 1e-15);
            for b in r.per_batch.as_ref().unwrap() {
                prop_assert!(b.kappa > 0.0 && b.kappa <= 1.0);
            }
        }

        #[test]
        fn kappa_monotone(d1 in 0u64..1_000_000_000, d2 in 0u64..1_000_000_000, lambda in 1u64..100_000_000, t1 in 1u64..500_000_000, t2 in 1u64..500_000_000) {
            let (lo, hi) = (d1.min(d2), d1.max(d2));
            let cfg = ContinuousConfig::new(Nanos(lambda + t1), Nanos(lambda)).unwrap();
            prop_assert!(decay(Nanos(lo), &cfg) >= decay(Nanos(hi), &cfg));
            let (ta, tb) = (t1.min(t2), t1.max(t2));
            let a = ContinuousConfig::new(Nanos(lambda + ta), Nanos(lambda)).unwrap();
            let b = ContinuousConfig::new(Nanos(lambda + tb), Nanos(lambda)).unwrap();
            prop_assert!(decay(Nanos(hi), &a) <= decay(Nanos(hi), &b));
        }

        #[test]
        fn break_even(a in 0.0f64..1.0, k in 0.01f64..1.0, a0 in 0.0f64..1.0) {
            let u = compose(a, k, 1.0);
            prop_assume!((a - a0 / k).abs() > 1e-9);
            prop_assert_eq!(u >= a0, a >= a0 / k);
        }
    }
}
