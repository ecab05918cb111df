#![allow(dead_code)]

use tcu_core::amortised::AmortisedConfig;
use tcu_core::trace::{BatchRecord, FrozenRun, MethodTrace, TraceBundle};
use tcu_core::Nanos;

pub const METHODS: [&str; 8] = ["Standard", "AdaBN", "LAME", "NEO", "Tent", "ETA", "SHOT-IM", "SAR"];

/// Discrete decomposition at rho = 100%: alpha, served count, served accuracy, utility (percent).
pub const DISCRETE_ROWS: [(&str, f64, usize, f64, f64); 8] = [
    ("Standard", 100.0, 11_715, 18.2, 18.2),
    ("AdaBN", 97.2, 11_388, 31.7, 30.8),
    ("LAME", 98.8, 11_579, 17.5, 17.3),
    ("NEO", 100.0, 11_715, 22.1, 22.1),
    ("Tent", 41.2, 4_830, 40.4, 16.6),
    ("ETA", 41.0, 4_800, 45.6, 18.7),
    ("SHOT-IM", 33.2, 3_885, 40.6, 13.5),
    ("SAR", 20.6, 2_415, 37.6, 7.8),
];

/// Continuous decomposition at T = 50 ms: mean accuracy, mean responsiveness,
/// alignment, utility (percent except alignment).
pub const CONTINUOUS_ROWS: [(&str, f64, f64, f64, f64); 8] = [
    ("Standard", 18.16, 100.0, 1.000, 18.16),
    ("AdaBN", 31.72, 89.6, 1.000, 28.42),
    ("LAME", 17.40, 95.7, 1.018, 16.96),
    ("NEO", 22.14, 100.0, 1.000, 22.14),
    ("Tent", 42.88, 15.1, 0.998, 6.46),
    ("ETA", 48.35, 15.0, 0.998, 7.22),
    ("SHOT-IM", 42.43, 11.2, 0.998, 4.73),
    ("SAR", 44.14, 6.2, 0.995, 2.73),
];

/// Amortised decomposition at B = 1 s: adapted fraction, adapt accuracy,
/// frozen accuracy, utility (percent).
pub const AMORTISED_ROWS: [(&str, f64, f64, Option<f64>, f64); 8] = [
    ("Standard", 100.0, 18.16, None, 18.16),
    ("AdaBN", 100.0, 31.72, None, 31.72),
    ("LAME", 99.9, 17.42, Some(3.81), 17.40),
    ("NEO", 100.0, 22.14, None, 22.14),
    ("Tent", 2.3, 32.11, Some(0.10), 0.84),
    ("ETA", 2.3, 33.37, Some(0.10), 0.87),
    ("SHOT-IM", 1.7, 32.23, Some(32.22), 32.22),
    ("SAR", 0.9, 33.54, Some(0.10), 0.40),
];

/// Corruption-averaged offline accuracy (percent), in [`METHODS`] order.
pub const OFFLINE_MEANS: [f64; 8] = [18.16, 31.72, 17.40, 22.14, 42.88, 48.35, 42.43, 44.14];

/// Corruption-averaged discrete utility at rho = 25% (percent).
pub const RHO_25: [f64; 8] = [18.16, 31.72, 17.40, 22.14, 42.88, 48.35, 42.43, 35.48];

pub const BUDGETS_S: [u64; 6] = [1, 2, 4, 8, 16, 32];

/// Corruption-averaged amortised utility (percent) per budget in [`BUDGETS_S`].
pub const BUDGET_ROWS: [(&str, [f64; 6]); 8] = [
    ("Standard", [18.16; 6]),
    ("AdaBN", [31.72; 6]),
    ("LAME", [17.40; 6]),
    ("NEO", [22.14; 6]),
    ("Tent", [0.84, 1.56, 24.05, 40.60, 42.55, 43.12]),
    ("ETA", [0.87, 1.68, 29.23, 46.85, 48.30, 48.56]),
    ("SHOT-IM", [32.22, 35.26, 37.24, 40.52, 42.07, 42.75]),
    ("SAR", [0.40, 0.63, 1.31, 36.56, 39.47, 42.33]),
];

pub const LAMBDA: Nanos = Nanos(39_900_000);

/// Served batches of size 1000 realising a discrete row exactly on `n = 1000`.
pub fn served_batches(alpha_pct: f64, served_pct: f64) -> Vec<BatchRecord> {
    let count = (alpha_pct * 10.0).round() as usize;
    let correct = (served_pct * 10.0).round() as u32;
    (1..=count).map(|i| BatchRecord { index: i, e: LAMBDA, ell: Nanos::ZERO, batch_size: 1000, correct }).collect()
}

/// Two `(accuracy, kappa)` points with the given means whose population
/// covariance makes their product mean equal `utility`.
pub fn continuous_pairs(mean_a: f64, mean_k: f64, utility: f64) -> Vec<(f64, f64)> {
    let cov = utility - mean_a * mean_k;
    let dk = mean_k.min(1.0 - mean_k) / 2.0;
    let da = if dk == 0.0 { 0.0 } else { cov / dk };
    vec![(mean_a + da, mean_k + dk), (mean_a - da, mean_k - dk)]
}

const PER_BATCH_OVERHEAD: Nanos = Nanos(10_000_000);

/// A 1000-batch bundle with a 10 ms overhead per batch and a budget that
/// admits exactly `round(beta * 1000)` adapted batches.
pub fn amortised_fixture(
    method: &str,
    beta_pct: f64,
    adapt_pct: f64,
    frozen_pct: Option<f64>,
) -> (TraceBundle, AmortisedConfig) {
    let n = 1000;
    let m = (beta_pct * 10.0).round() as usize;
    let correct = |pct: f64| (pct * 100.0).round() as u32;
    let lambda = Nanos::from_ms(40);
    let recs = (1..=n)
        .map(|i| BatchRecord {
            index: i,
            e: lambda,
            ell: PER_BATCH_OVERHEAD,
            batch_size: 10_000,
            correct: correct(adapt_pct),
        })
        .collect();
    let trace = MethodTrace::new(method, lambda, Some("fixture".into()), recs).unwrap();
    let mut bundle = TraceBundle::new(trace);
    if let Some(f) = frozen_pct {
        let frozen = (m + 1..=n)
            .map(|i| BatchRecord { index: i, e: lambda, ell: Nanos::ZERO, batch_size: 10_000, correct: correct(f) })
            .collect();
        bundle.insert_frozen(FrozenRun::new(m, frozen).unwrap()).unwrap();
    }
    (bundle, AmortisedConfig::new(Nanos(PER_BATCH_OVERHEAD.0 * m as u64), lambda))
}

pub fn within(actual: f64, expected: f64, tol: f64) -> bool {
    (actual - expected).abs() <= tol + 1e-9
}
