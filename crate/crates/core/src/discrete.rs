//! Asynchronous fixed-interval streams.
//!
//! Batch `i` arrives at `t_i = (i-1) * gamma`. A single pipeline serves one
//! batch at a time; batches that arrive while it is busy may be skipped and
//! receive null predictions (zero correct).
//!
//! Two variants:
//! * **buffered**: a one-batch buffer holds the latest arrival from `t_i`
//!   until `t_{i+1}`, so a pipeline that frees up mid-interval picks it up
//!   immediately. The final batch is never evicted (drain phase).
//! * **strict**: no buffer; a free pipeline can only pick up a batch at the
//!   instant it arrives, otherwise it idles until the next arrival.
//!
//! Arrivals are closed: a batch arriving exactly when the pipeline frees up
//! is served.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::Nanos;
use crate::trace::{accuracy_mean, BatchRecord, MethodTrace, Weighting};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Buffered,
    Strict,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "buffered" => Ok(Variant::Buffered),
            "strict" => Ok(Variant::Strict),
            other => Err(format!("unknown variant `{other}` (buffered | strict)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Buffered => "buffered",
            Variant::Strict => "strict",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteConfig {
    gamma: Nanos,
    variant: Variant,
    lambda: Nanos,
}

impl DiscreteConfig {
    pub fn new(gamma: Nanos, variant: Variant, lambda: Nanos) -> Result<Self> {
        if gamma == Nanos::ZERO {
            return Err(Error::InvalidGamma);
        }
        Ok(DiscreteConfig { gamma, variant, lambda })
    }

    pub fn from_rho(lambda: Nanos, rho: f64, variant: Variant) -> Result<Self> {
        Self::new(utilisation_to_gamma(lambda, rho)?, variant, lambda)
    }

    pub fn gamma(&self) -> Nanos {
        self.gamma
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn lambda(&self) -> Nanos {
        self.lambda
    }

    /// Utilisation `lambda / gamma`.
    pub fn rho(&self) -> f64 {
        self.lambda.0 as f64 / self.gamma.0 as f64
    }

    /// Arrival time of 1-based batch `index`.
    pub fn arrival(&self, index: usize) -> Nanos {
        Nanos((index as u64 - 1) * self.gamma.0)
    }
}

/// Inter-arrival time for utilisation `rho`, rounded to the nearest ns.
pub fn utilisation_to_gamma(lambda: Nanos, rho: f64) -> Result<Nanos> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidRho(rho));
    }
    let gamma = (lambda.0 as f64 / rho).round();
    if gamma < 1.0 {
        return Err(Error::InvalidGamma);
    }
    Ok(Nanos(gamma as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    /// Served batch index.
    pub batch: usize,
    pub start: Nanos,
    pub finish: Nanos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    events: Vec<ScheduleEvent>,
    n: usize,
}

impl Schedule {
    pub fn new(events: Vec<ScheduleEvent>, n: usize) -> Self {
        Schedule { events, n }
    }

    pub fn events(&self) -> &[ScheduleEvent] {
        &self.events
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn served_count(&self) -> usize {
        self.events.len()
    }

    pub fn served(&self) -> impl Iterator<Item = usize> + '_ {
        self.events.iter().map(|e| e.batch)
    }

    pub fn served_set(&self) -> BTreeSet<usize> {
        self.served().collect()
    }

    pub fn availability(&self) -> f64 {
        self.events.len() as f64 / self.n as f64
    }

    /// Audit CSV with columns `event, p, s_ms, f_ms`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["event", "p", "s_ms", "f_ms"])?;
        for (j, ev) in self.events.iter().enumerate() {
            w.write_record([
                (j + 1).to_string(),
                ev.batch.to_string(),
                ev.start.to_ms_string(),
                ev.finish.to_ms_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Incremental form of the serving recurrence.
///
/// The scheduler proposes the next batch to serve and its start time; the
/// caller reports that batch's latency, which determines the next proposal.
/// This lets a live provider be driven one served batch at a time.
#[derive(Debug, Clone)]
pub struct Scheduler {
    cfg: DiscreteConfig,
    n: usize,
    next: Option<(usize, Nanos)>,
    events: Vec<ScheduleEvent>,
}

impl Scheduler {
    pub fn new(cfg: DiscreteConfig, n: usize) -> Self {
        let next = (n > 0).then_some((1, Nanos::ZERO));
        Scheduler { cfg, n, next, events: Vec::new() }
    }

    /// Next batch to serve and its start time, or `None` once the stream ends.
    pub fn peek(&self) -> Option<(usize, Nanos)> {
        self.next
    }

    /// Records the latency of the batch returned by [`Scheduler::peek`].
    pub fn complete(&mut self, delta: Nanos) {
        let Some((batch, start)) = self.next else { return };
        let finish = start + delta;
        self.events.push(ScheduleEvent { batch, start, finish });
        self.next = self.successor(batch, finish);
    }

    fn successor(&self, served: usize, finish: Nanos) -> Option<(usize, Nanos)> {
        let gamma = self.cfg.gamma.0;
        let newest = match self.cfg.variant {
            // latest arrival at or before `finish`; the final batch stays buffered
            Variant::Buffered => (finish.0 / gamma + 1).min(self.n as u64) as usize,
            // first arrival at or after `finish`
            Variant::Strict => {
                let idx = finish.0.div_ceil(gamma) + 1;
                usize::try_from(idx).unwrap_or(usize::MAX)
            }
        };
        let candidate = newest.max(served + 1);
        if candidate > self.n {
            return None;
        }
        let start = finish.max(self.cfg.arrival(candidate));
        Some((candidate, start))
    }

    pub fn finish(self) -> Schedule {
        Schedule { events: self.events, n: self.n }
    }
}

/// Closed-form schedule for a whole trace.
pub fn simulate(trace: &MethodTrace, cfg: &DiscreteConfig) -> Schedule {
    let mut sched = Scheduler::new(*cfg, trace.len());
    while let Some((batch, _)) = sched.peek() {
        let delta = trace.record(batch).expect("scheduler stays within 1..=N").delta();
        sched.complete(delta);
    }
    sched.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteReport {
    /// `|P| / N`.
    pub availability: f64,
    /// Mean accuracy over served batches; absent when nothing was served.
    pub served_accuracy: Option<f64>,
    pub utility: f64,
    pub served_count: usize,
    pub n: usize,
}

impl DiscreteReport {
    /// Report from the served records of an `n`-batch stream.
    pub fn from_served<'a, I>(served: I, n: usize, weighting: Weighting) -> Self
    where
        I: IntoIterator<Item = &'a BatchRecord>,
    {
        let served: Vec<&BatchRecord> = served.into_iter().collect();
        let served_accuracy = accuracy_mean(served.iter().copied(), weighting).ok();
        let availability = served.len() as f64 / n as f64;
        DiscreteReport {
            availability,
            served_accuracy,
            utility: served_accuracy.map_or(0.0, |a| compose(availability, a)),
            served_count: served.len(),
            n,
        }
    }
}

/// Discrete utility from its two factors.
pub fn compose(availability: f64, served_accuracy: f64) -> f64 {
    availability * served_accuracy
}

pub fn discrete_utility(schedule: &Schedule, trace: &MethodTrace, weighting: Weighting) -> Result<DiscreteReport> {
    if schedule.n() != trace.len() {
        return Err(Error::LengthMismatch { schedule: schedule.n(), trace: trace.len() });
    }
    let served = schedule.served().map(|i| trace.record(i).expect("served index within trace"));
    Ok(DiscreteReport::from_served(served, trace.len(), weighting))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::tests::rec;
    use proptest::prelude::*;

    fn constant(delta_ms: u64, n: usize) -> MethodTrace {
        MethodTrace::new("m", Nanos::from_ms(40), None, (1..=n).map(|i| rec(i, delta_ms, 0, 10, 5)).collect()).unwrap()
    }

    fn cfg(gamma_ms: u64, variant: Variant) -> DiscreteConfig {
        DiscreteConfig::new(Nanos::from_ms(gamma_ms), variant, Nanos::from_ms(40)).unwrap()
    }

    #[test]
    fn gamma_from_utilisation() {
        let lambda = Nanos::parse_ms("39.9").unwrap();
        assert_eq!(utilisation_to_gamma(lambda, 1.0).unwrap(), lambda);
        assert_eq!(utilisation_to_gamma(lambda, 0.5).unwrap(), Nanos::parse_ms("79.8").unwrap());
        assert_eq!(utilisation_to_gamma(lambda, 0.25).unwrap(), Nanos::parse_ms("159.6").unwrap());
        // sqrt(2) spacing gives the reported 56.4 and 112.8 after rounding to 0.1 ms
        let g70 = utilisation_to_gamma(lambda, 0.70).unwrap().as_ms_f64();
        let g35 = utilisation_to_gamma(lambda, 0.35).unwrap().as_ms_f64();
        assert!((g70 - 57.0).abs() < 0.01 && (g35 - 114.0).abs() < 0.01);
        assert!(matches!(utilisation_to_gamma(lambda, 0.0), Err(Error::InvalidRho(_))));
        assert!(utilisation_to_gamma(lambda, -0.5).is_err());
    }

    #[test]
    fn keeping_pace_serves_everything_on_arrival() {
        let t = constant(40, 10);
        for variant in [Variant::Buffered, Variant::Strict] {
            let c = cfg(40, variant);
            let s = simulate(&t, &c);
            assert_eq!(s.served_count(), 10);
            for (j, ev) in s.events().iter().enumerate() {
                assert_eq!(ev.batch, j + 1);
                assert_eq!(ev.start, c.arrival(j + 1));
            }
        }
    }

    #[test]
    fn stepped_penalty_example_strict() {
        let s = simulate(&constant(150, 4), &cfg(100, Variant::Strict));
        assert_eq!(s.served().collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(s.availability(), 0.5);
    }

    #[test]
    fn stepped_penalty_example_buffered() {
        let s = simulate(&constant(150, 4), &cfg(100, Variant::Buffered));
        assert_eq!(s.served().collect::<Vec<_>>(), vec![1, 2, 4]);
        let starts: Vec<u64> = s.events().iter().map(|e| e.start.0 / 1_000_000).collect();
        assert_eq!(starts, vec![0, 150, 300]);
        assert_eq!(s.availability(), 0.75);
    }

    #[test]
    fn strict_tier_endpoint_is_closed() {
        // delta exactly 2*gamma still serves every second batch
        let s = simulate(&constant(200, 6), &cfg(100, Variant::Strict));
        assert_eq!(s.served().collect::<Vec<_>>(), vec![1, 3, 5]);
    }

    #[test]
    fn drain_phase_serves_final_batch() {
        // one slow batch pushes the pipeline past the last arrival
        let mut recs: Vec<_> = (1..=3).map(|i| rec(i, 10, 0, 10, 5)).collect();
        recs[0] = rec(1, 1000, 0, 10, 5);
        let t = MethodTrace::new("m", Nanos::from_ms(10), None, recs).unwrap();
        let s = simulate(&t, &cfg(100, Variant::Buffered));
        assert_eq!(s.served().collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(s.events()[1].start, Nanos::from_ms(1000));
        let strict = simulate(&t, &cfg(100, Variant::Strict));
        assert_eq!(strict.served().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn utility_from_schedule() {
        let recs = vec![rec(1, 150, 0, 10, 2), rec(2, 150, 0, 10, 8), rec(3, 150, 0, 10, 4), rec(4, 150, 0, 10, 6)];
        let t = MethodTrace::new("m", Nanos::from_ms(40), None, recs).unwrap();
        let s = simulate(&t, &cfg(100, Variant::Strict));
        let r = discrete_utility(&s, &t, Weighting::PerBatch).unwrap();
        assert_eq!(r.served_count, 2);
        assert_eq!(r.availability, 0.5);
        assert!((r.served_accuracy.unwrap() - 0.3).abs() < 1e-12);
        assert!((r.utility - 0.15).abs() < 1e-12);
        let other = constant(10, 3);
        assert!(matches!(discrete_utility(&s, &other, Weighting::PerBatch), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn empty_schedule_reports_zero() {
        let r = DiscreteReport::from_served(std::iter::empty(), 5, Weighting::PerBatch);
        assert_eq!((r.availability, r.served_accuracy, r.utility), (0.0, None, 0.0));
    }

    #[test]
    fn reported_decompositions() {
        assert!((compose(0.410, 0.456) - 0.1870).abs() < 5e-4);
        assert!((compose(0.972, 0.317) - 0.308).abs() < 5e-4);
    }

    #[test]
    fn schedule_csv() {
        let s = simulate(&constant(150, 4), &cfg(100, Variant::Buffered));
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "event,p,s_ms,f_ms\n1,1,0,150\n2,2,150,300\n3,4,300,450\n");
    }

    fn arb_trace() -> impl Strategy<Value = (MethodTrace, u64)> {
        (1u64..200, prop::collection::vec((0u64..600, 0u64..600, 0u32..=10), 1..60)).prop_map(|(gamma, rows)| {
            let recs = rows
                .into_iter()
                .enumerate()
                .map(|(i, (e, l, c))| BatchRecord {
                    index: i + 1,
                    e: Nanos(e),
                    ell: Nanos(l),
                    batch_size: 10,
                    correct: c,
                })
                .collect();
            (MethodTrace::new("m", Nanos(40), None, recs).unwrap(), gamma)
        })
    }

    proptest! {
        #[test]
        fn schedule_invariants((trace, gamma) in arb_trace(), strict in any::<bool>()) {
            let variant = if strict { Variant::Strict } else { Variant::Buffered };
            let c = DiscreteConfig::new(Nanos(gamma), variant, Nanos(40)).unwrap();
            let s = simulate(&trace, &c);
            let ev = s.events();
            prop_assert_eq!(ev[0].batch, 1);
            for w in ev.windows(2) {
                prop_assert!(w[1].batch > w[0].batch);
                prop_assert!(w[1].start >= w[0].finish);
            }
            for e in ev {
                prop_assert!(e.start >= c.arrival(e.batch));
                prop_assert_eq!(e.finish, e.start + trace.record(e.batch).unwrap().delta());
            }
            let r = discrete_utility(&s, &trace, Weighting::PerBatch).unwrap();
            prop_assert!(r.utility <= r.availability + 1e-15);
            prop_assert!((r.utility - r.availability * r.served_accuracy.unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn fast_pipeline_matches_offline((trace, gamma) in arb_trace()) {
            let max_delta = trace.records().iter().map(|r| r.delta()).max().unwrap();
            let c = DiscreteConfig::new(max_delta.max(Nanos(gamma)), Variant::Strict, Nanos(40)).unwrap();
            let r = discrete_utility(&simulate(&trace, &c), &trace, Weighting::PerBatch).unwrap();
            prop_assert_eq!(r.availability, 1.0);
            let offline = accuracy_mean(trace.records(), Weighting::PerBatch).unwrap();
            prop_assert!((r.utility - offline).abs() < 1e-12);
        }

        #[test]
        fn strict_tier_miss_rate(k in 1u64..5, frac in 1u64..=100, n in 50usize..400) {
            let gamma = 100u64;
            let delta = k * gamma + frac; // (k*gamma, (k+1)*gamma]
            let recs = (1..=n).map(|i| BatchRecord { index: i, e: Nanos(delta), ell: Nanos::ZERO, batch_size: 1, correct: 1 }).collect();
            let t = MethodTrace::new("m", Nanos(40), None, recs).unwrap();
            let s = simulate(&t, &DiscreteConfig::new(Nanos(gamma), Variant::Strict, Nanos(40)).unwrap());
            let expected_served = n.div_ceil(k as usize + 1);
            prop_assert_eq!(s.served_count(), expected_served);
        }
    }
}
