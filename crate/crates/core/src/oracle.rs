//! Brute-force reference implementations.
//!
//! The discrete walker steps time tick by tick with an explicit pipeline,
//! arrival events and a one-slot buffer, rather than using the closed-form
//! recurrence. It exists to cross-check [`crate::discrete::simulate`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discrete::{simulate, DiscreteConfig, Schedule, ScheduleEvent, Variant};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::time::Nanos;
use crate::trace::{BatchRecord, MethodTrace};

/// 100 microseconds.
pub const DEFAULT_TICK: Nanos = Nanos(100_000);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleConfig {
    tick: Nanos,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { tick: DEFAULT_TICK }
    }
}

impl OracleConfig {
    pub fn new(tick: Nanos) -> Result<Self> {
        if tick == Nanos::ZERO {
            return Err(Error::ZeroTick);
        }
        Ok(OracleConfig { tick })
    }

    pub fn tick(&self) -> Nanos {
        self.tick
    }

    fn ticks(&self, value: Nanos) -> Result<u64> {
        if !value.0.is_multiple_of(self.tick.0) {
            return Err(Error::TickMisaligned { tick_ns: self.tick.0, value_ns: value.0 });
        }
        Ok(value.0 / self.tick.0)
    }
}

struct Busy {
    batch: usize,
    start: u64,
    finish: u64,
}

/// Time-stepped discrete schedule. Every latency and `gamma` must be a
/// multiple of the tick.
pub fn oracle_discrete(trace: &MethodTrace, cfg: &DiscreteConfig, oracle: &OracleConfig) -> Result<Schedule> {
    let n = trace.len();
    let gamma = oracle.ticks(cfg.gamma())?;
    let deltas: Vec<u64> = trace.records().iter().map(|r| oracle.ticks(r.delta())).collect::<Result<_>>()?;
    let buffered = cfg.variant() == Variant::Buffered;

    let mut events = Vec::new();
    let mut busy: Option<Busy> = None;
    let mut buffer: Option<usize> = None;
    let mut next_arrival = 1usize;
    let mut now = 0u64;

    loop {
        // pipeline release
        if busy.as_ref().is_some_and(|b| b.finish == now) {
            let b = busy.take().unwrap();
            events.push(ScheduleEvent {
                batch: b.batch,
                start: Nanos(b.start * oracle.tick.0),
                finish: Nanos(b.finish * oracle.tick.0),
            });
        }

        // arrival; in the buffered variant it evicts the previous occupant
        let mut arriving = None;
        if next_arrival <= n && (next_arrival as u64 - 1) * gamma == now {
            arriving = Some(next_arrival);
            next_arrival += 1;
            if buffered {
                buffer = arriving;
            }
        }

        // pickup, repeated while zero-latency batches free the pipeline instantly
        while busy.is_none() {
            let candidate = if buffered { buffer.take() } else { arriving.take() };
            let Some(batch) = candidate else { break };
            let finish = now + deltas[batch - 1];
            if finish == now {
                events.push(ScheduleEvent {
                    batch,
                    start: Nanos(now * oracle.tick.0),
                    finish: Nanos(now * oracle.tick.0),
                });
            } else {
                busy = Some(Busy { batch, start: now, finish });
            }
        }

        if busy.is_none() && buffer.is_none() && next_arrival > n {
            break;
        }
        now += 1;
    }
    Ok(Schedule::new(events, n))
}

/// Largest `j` with `c_1 + ... + c_j <= budget`, summing every prefix from scratch.
pub fn oracle_cutoff(c: &[Nanos], budget: Nanos) -> usize {
    (0..=c.len())
        .filter(|&j| c[..j].iter().map(|x| u128::from(x.0)).sum::<u128>() <= u128::from(budget.0))
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub traces: usize,
    pub schedule_mismatches: usize,
    /// Traces where buffered availability fell below strict availability.
    pub availability_inversions: usize,
    pub first_failure: Option<String>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.schedule_mismatches == 0 && self.availability_inversions == 0
    }
}

/// Random trace with `n` batches, `gamma_ticks` spacing and latencies drawn
/// uniformly from `[0.2, 3] * gamma`, all on the tick grid.
pub fn random_trace(rng: &mut impl Rng, n: usize, gamma_ticks: u64, tick: Nanos) -> MethodTrace {
    let lo = gamma_ticks / 5;
    let hi = gamma_ticks * 3;
    let recs = (1..=n)
        .map(|i| {
            let delta = rng.random_range(lo..=hi);
            let e = rng.random_range(0..=delta);
            BatchRecord {
                index: i,
                e: Nanos(e * tick.0),
                ell: Nanos((delta - e) * tick.0),
                batch_size: 1,
                correct: rng.random_range(0..=1),
            }
        })
        .collect();
    MethodTrace::new("random", Nanos(gamma_ticks * tick.0), None, recs).expect("generated trace is valid")
}

/// Compares [`simulate`] against [`oracle_discrete`] on `traces` random traces
/// for both variants.
pub fn check_equivalence(
    traces: usize,
    n: usize,
    seed: u64,
    oracle: OracleConfig,
    exec: Execution,
) -> EquivalenceReport {
    let seeds: Vec<u64> = (0..traces as u64).map(|i| seed ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15)).collect();
    let results = exec.map(&seeds, |&s| -> std::result::Result<(), (bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let gamma_ticks = rng.random_range(50..=400);
        let trace = random_trace(&mut rng, n, gamma_ticks, oracle.tick);
        let mut avail = [0usize; 2];
        for (k, variant) in [Variant::Buffered, Variant::Strict].into_iter().enumerate() {
            let cfg = DiscreteConfig::new(Nanos(gamma_ticks * oracle.tick.0), variant, trace.lambda())
                .expect("gamma positive");
            let closed = simulate(&trace, &cfg);
            let walked = oracle_discrete(&trace, &cfg, &oracle).map_err(|e| (true, e.to_string()))?;
            if closed != walked {
                return Err((
                    true,
                    format!(
                        "seed {s} {variant}: closed-form {:?} vs oracle {:?}",
                        closed.served_set(),
                        walked.served_set()
                    ),
                ));
            }
            avail[k] = closed.served_count();
        }
        if avail[0] < avail[1] {
            return Err((false, format!("seed {s}: buffered served {} < strict {}", avail[0], avail[1])));
        }
        Ok(())
    });
    let mut report =
        EquivalenceReport { traces, schedule_mismatches: 0, availability_inversions: 0, first_failure: None };
    for r in results {
        if let Err((mismatch, msg)) = r {
            if mismatch {
                report.schedule_mismatches += 1;
            } else {
                report.availability_inversions += 1;
            }
            report.first_failure.get_or_insert(msg);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amortised::cutoff;
    use crate::trace::tests::rec;
    use proptest::prelude::{any, prop, prop_assert_eq, proptest};

    fn constant(delta_ms: u64, n: usize) -> MethodTrace {
        MethodTrace::new("m", Nanos::from_ms(40), None, (1..=n).map(|i| rec(i, delta_ms, 0, 10, 5)).collect()).unwrap()
    }

    #[test]
    fn stepped_penalty_examples() {
        let o = OracleConfig::default();
        let strict = DiscreteConfig::new(Nanos::from_ms(100), Variant::Strict, Nanos::from_ms(40)).unwrap();
        let s = oracle_discrete(&constant(150, 4), &strict, &o).unwrap();
        assert_eq!(s.served().collect::<Vec<_>>(), vec![1, 3]);
        let buffered = DiscreteConfig::new(Nanos::from_ms(100), Variant::Buffered, Nanos::from_ms(40)).unwrap();
        let s = oracle_discrete(&constant(150, 4), &buffered, &o).unwrap();
        assert_eq!(s.served().collect::<Vec<_>>(), vec![1, 2, 4]);
        assert_eq!(s, simulate(&constant(150, 4), &buffered));
        let s = oracle_discrete(&constant(40, 6), &strict, &o).unwrap();
        assert_eq!(s.served_count(), 6);
    }

    #[test]
    fn misaligned_tick() {
        let o = OracleConfig::new(Nanos::from_ms(7)).unwrap();
        let cfg = DiscreteConfig::new(Nanos::from_ms(100), Variant::Strict, Nanos::from_ms(40)).unwrap();
        assert!(matches!(oracle_discrete(&constant(150, 2), &cfg, &o), Err(Error::TickMisaligned { .. })));
        assert!(matches!(OracleConfig::new(Nanos::ZERO), Err(Error::ZeroTick)));
    }

    #[test]
    fn cutoff_edges() {
        let c = [Nanos(3), Nanos(4)];
        assert_eq!(oracle_cutoff(&c, Nanos::ZERO), 0);
        assert_eq!(oracle_cutoff(&c, Nanos(7)), 2);
        assert_eq!(oracle_cutoff(&[], Nanos(0)), 0);
    }

    #[test]
    fn small_equivalence_run() {
        let r = check_equivalence(20, 50, 3, OracleConfig::default(), Execution::Sequential);
        assert!(r.passed(), "{r:?}");
    }

    proptest! {
        #[test]
        fn closed_form_matches_walker(seed in any::<u64>(), gamma in 1u64..40, n in 1usize..40, zero_ok in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let recs = (1..=n).map(|i| {
                let lo = if zero_ok { 0 } else { 1 };
                BatchRecord { index: i, e: Nanos(rng.random_range(lo..=gamma * 3)), ell: Nanos(rng.random_range(0..=gamma)), batch_size: 1, correct: 1 }
            }).collect();
            let trace = MethodTrace::new("m", Nanos(gamma), None, recs).unwrap();
            let fine = OracleConfig::new(Nanos(1)).unwrap();
            for variant in [Variant::Buffered, Variant::Strict] {
                let cfg = DiscreteConfig::new(Nanos(gamma), variant, Nanos(gamma)).unwrap();
                prop_assert_eq!(simulate(&trace, &cfg), oracle_discrete(&trace, &cfg, &fine).unwrap());
            }
        }

        #[test]
        fn tick_refinement_invariant(seed in any::<u64>(), n in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coarse = OracleConfig::new(Nanos(4)).unwrap();
            let half = OracleConfig::new(Nanos(2)).unwrap();
            let trace = random_trace(&mut rng, n, 10, coarse.tick());
            for variant in [Variant::Buffered, Variant::Strict] {
                let cfg = DiscreteConfig::new(Nanos(40), variant, Nanos(40)).unwrap();
                prop_assert_eq!(oracle_discrete(&trace, &cfg, &coarse).unwrap(), oracle_discrete(&trace, &cfg, &half).unwrap());
            }
        }

        #[test]
        fn cutoff_matches_scan(c in prop::collection::vec(0u64..1000, 0..40), budget in 0u64..20_000) {
            let c: Vec<Nanos> = c.into_iter().map(Nanos).collect();
            prop_assert_eq!(cutoff(&c, Nanos(budget)), oracle_cutoff(&c, Nanos(budget)));
        }
    }
}
