mod common;

use std::path::PathBuf;

use proptest::prelude::*;
use tcu_core::amortised::{amortised_utility, AmortisedConfig};
use tcu_core::analysis::{insolvency_table, spearman_vs_offline, winners, UtilityMatrix};
use tcu_core::continuous::{continuous_utility, ContinuousConfig};
use tcu_core::discrete::{discrete_utility, simulate, DiscreteConfig, Variant};
use tcu_core::sweep::{read_cells_csv, run_sweep, synthetic_bundles, write_cells_csv, write_outputs, SweepSpec};
use tcu_core::trace::{
    accuracy_mean, load_trace, write_trace, BatchRecord, Format, MethodTrace, TraceBundle, Weighting,
};
use tcu_core::{Execution, Nanos};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn offline_fixture_loads_exactly() {
    let t = load_trace(fixture("eta_offline.jsonl"), Format::Jsonl).unwrap();
    assert_eq!(t.len(), 15);
    assert_eq!(t.lambda(), Nanos(39_900_000));
    assert_eq!(t.records()[0].ell, Nanos(56_600_000));
    let a = accuracy_mean(t.records(), Weighting::PerBatch).unwrap();
    assert!((a * 100.0 - 48.35).abs() < 0.005, "{a}");
    assert!((a - accuracy_mean(t.records(), Weighting::PerSample).unwrap()).abs() < 1e-15);
}

#[test]
fn trace_files_round_trip() {
    let t = load_trace(fixture("eta_offline.jsonl"), Format::Jsonl).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (name, format) in [("t.jsonl", Format::Jsonl), ("t.csv", Format::Csv)] {
        let path = dir.path().join(name);
        write_trace(&t, &path, format).unwrap();
        assert_eq!(load_trace(&path, format).unwrap(), t, "{name}");
    }
}

#[test]
fn sweep_outputs_feed_analysis() {
    let budgets = [Nanos::from_secs(1), Nanos::from_secs(8)];
    let bundles = synthetic_bundles(120, 5, &budgets, Execution::Parallel).unwrap();
    let spec = SweepSpec { budgets: budgets.to_vec(), ..SweepSpec::default() };
    let result = run_sweep(&bundles, &spec).unwrap();
    assert_eq!(result.failures().count(), 0);

    let dir = tempfile::tempdir().unwrap();
    let names = write_outputs(&result, dir.path()).unwrap();
    assert!(names.contains(&"frontier.csv"));
    let matrix = UtilityMatrix::read_csv(std::fs::File::open(dir.path().join("matrix.csv")).unwrap()).unwrap();
    assert_eq!(matrix.methods().len(), 8);
    assert_eq!(matrix.corruptions().len(), 15);

    let rows = spearman_vs_offline(&matrix).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.aggregated.is_some_and(|x| (-1.0..=1.0).contains(&x))));
    assert_eq!(winners(&matrix).len(), 12 * 15);

    let mut buf = Vec::new();
    write_cells_csv(&result, &mut buf).unwrap();
    let summary = read_cells_csv(buf.as_slice()).unwrap();
    let table = insolvency_table(&matrix, &summary.factors, "AdaBN").unwrap();
    assert!(!table.is_empty());
    assert!(table.iter().all(|r| r.insolvent == (r.required > 1.0)));
    let report = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(report.contains("## Offline accuracy"));
}

#[test]
fn fixture_rows_are_reproduced() {
    for (method, beta, adapt, frozen, published) in common::AMORTISED_ROWS {
        let (bundle, cfg) = common::amortised_fixture(method, beta, adapt, frozen);
        let r = amortised_utility(&bundle, &cfg).unwrap();
        assert!(common::within(r.utility * 100.0, published, 0.05), "{method}: {}", r.utility);
        assert_eq!(r.cutoff_m, (beta * 10.0).round() as usize);
    }
}

fn trace_of(deltas_ms: &[u64]) -> MethodTrace {
    let recs = deltas_ms
        .iter()
        .enumerate()
        .map(|(i, &d)| BatchRecord { index: i + 1, e: Nanos::from_ms(d), ell: Nanos::ZERO, batch_size: 1, correct: 1 })
        .collect();
    MethodTrace::new("m", Nanos::from_ms(40), None, recs).unwrap()
}

#[test]
fn buffered_can_serve_fewer_with_uneven_latencies() {
    // buffered picks the slow batch 2; strict skips it and catches the fast ones
    let t = trace_of(&[150, 250, 10, 10, 10]);
    let cfg = |v| DiscreteConfig::new(Nanos::from_ms(100), v, Nanos::from_ms(40)).unwrap();
    assert_eq!(simulate(&t, &cfg(Variant::Buffered)).served().collect::<Vec<_>>(), vec![1, 2, 5]);
    assert_eq!(simulate(&t, &cfg(Variant::Strict)).served().collect::<Vec<_>>(), vec![1, 3, 4, 5]);
}

fn trace_strategy() -> impl Strategy<Value = MethodTrace> {
    (1usize..80, 1u64..100, 1u32..64).prop_flat_map(|(n, lambda_ms, size)| {
        prop::collection::vec((0u64..300_000_000, 0u64..200_000_000, 0u32..=size), n).prop_map(move |rows| {
            let recs = rows
                .into_iter()
                .enumerate()
                .map(|(i, (e, ell, c))| BatchRecord {
                    index: i + 1,
                    e: Nanos(e),
                    ell: Nanos(ell),
                    batch_size: size,
                    correct: c,
                })
                .collect();
            MethodTrace::new("p", Nanos::from_ms(lambda_ms), None, recs).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn buffered_never_serves_fewer_at_constant_latency(delta in 0u64..1000, gamma in 1u64..300, n in 1usize..200) {
        let t = trace_of(&vec![delta; n]);
        let cfg = |v| DiscreteConfig::new(Nanos::from_ms(gamma), v, Nanos::from_ms(40)).unwrap();
        prop_assert!(simulate(&t, &cfg(Variant::Buffered)).served_count() >= simulate(&t, &cfg(Variant::Strict)).served_count());
    }

    #[test]
    fn discrete_utility_is_capped_by_availability(trace in trace_strategy(), rho in 0.05f64..=1.0) {
        let cfg = |v| DiscreteConfig::from_rho(trace.lambda(), rho, v).unwrap();
        let b = simulate(&trace, &cfg(Variant::Buffered));
        let s = simulate(&trace, &cfg(Variant::Strict));
        for sched in [&b, &s] {
            let r = discrete_utility(sched, &trace, Weighting::PerBatch).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.utility));
            prop_assert!(r.utility <= r.availability + 1e-15);
        }
    }

    #[test]
    fn continuous_utility_grows_with_threshold(trace in trace_strategy(), t1 in 1u64..500, t2 in 1u64..500) {
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let cfg = |t: u64| ContinuousConfig::new(Nanos(trace.lambda().0 + t * 1_000_000), trace.lambda()).unwrap();
        let a = continuous_utility(&trace, &cfg(lo)).unwrap();
        let b = continuous_utility(&trace, &cfg(hi)).unwrap();
        prop_assert!(a.utility <= b.utility + 1e-12);
        prop_assert!(b.utility <= b.mean_accuracy + 1e-12);
    }

    #[test]
    fn amortised_cutoff_grows_with_budget(trace in trace_strategy(), b1 in 0u64..5_000, b2 in 0u64..5_000) {
        let lambda = trace.lambda();
        let bundle = TraceBundle::new(trace);
        let run = |b: u64| amortised_utility(&bundle, &AmortisedConfig::new(Nanos::from_ms(b), lambda).with_fallback(0.0)).unwrap();
        let (lo, hi) = (run(b1.min(b2)), run(b1.max(b2)));
        prop_assert!(lo.cutoff_m <= hi.cutoff_m);
        prop_assert!(hi.budget_spent <= Nanos::from_ms(b1.max(b2)));
    }
}
