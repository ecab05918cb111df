//! Protocol drivers that request batches from a provider one at a time.

use serde::{Deserialize, Serialize};

use super::{Handshake, Provider, ProviderError, ProviderKind, StepRequest, StepResponse};
use crate::amortised::{nearest_run_warning, AmortisedConfig, AmortisedReport, FrozenSource};
use crate::continuous::{continuous_utility_records, ContinuousConfig, ContinuousReport};
use crate::discrete::{DiscreteConfig, DiscreteReport, Schedule, Scheduler};
use crate::error::{Error, Result};
use crate::time::Nanos;
use crate::trace::{accuracy_mean, BatchRecord, Weighting};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome<R> {
    pub report: R,
    pub provider: ProviderKind,
    /// Every request with its response, in order.
    pub steps: Vec<(StepRequest, StepResponse)>,
}

struct Driver<'p, P: Provider + ?Sized> {
    provider: &'p mut P,
    steps: Vec<(StepRequest, StepResponse)>,
}

impl<'p, P: Provider + ?Sized> Driver<'p, P> {
    fn open(provider: &'p mut P, method: &str, lambda: Nanos, n: usize, protocol: &str) -> Result<Self> {
        let hs = Handshake { method: method.to_string(), lambda, n, protocol: protocol.to_string() };
        provider.hello(&hs)?;
        Ok(Driver { provider, steps: Vec::new() })
    }

    fn step(&mut self, request: StepRequest) -> std::result::Result<BatchRecord, ProviderError> {
        let res = self.provider.step(request)?;
        self.steps.push((request, res));
        Ok(res.into_record(request.index))
    }

    fn close<R>(self, report: R) -> Result<SessionOutcome<R>> {
        self.provider.finish()?;
        Ok(SessionOutcome { report, provider: self.provider.kind(), steps: self.steps })
    }
}

/// Discrete protocol with the schedule computed online: each served batch's
/// latency decides which batch is requested next.
pub fn run_discrete<P: Provider + ?Sized>(
    provider: &mut P,
    method: &str,
    n: usize,
    cfg: &DiscreteConfig,
    weighting: Weighting,
) -> Result<SessionOutcome<(DiscreteReport, Schedule)>> {
    let mut driver = Driver::open(provider, method, cfg.lambda(), n, "discrete")?;
    let mut scheduler = Scheduler::new(*cfg, n);
    let mut served = Vec::new();
    while let Some((index, _)) = scheduler.peek() {
        let rec = driver.step(StepRequest::adapt(index))?;
        scheduler.complete(rec.delta());
        served.push(rec);
    }
    let report = DiscreteReport::from_served(&served, n, weighting);
    driver.close((report, scheduler.finish()))
}

/// Continuous protocol: every batch is processed in order.
pub fn run_continuous<P: Provider + ?Sized>(
    provider: &mut P,
    method: &str,
    n: usize,
    cfg: &ContinuousConfig,
) -> Result<SessionOutcome<ContinuousReport>> {
    let mut driver = Driver::open(provider, method, cfg.lambda(), n, "continuous")?;
    let records = (1..=n).map(|i| driver.step(StepRequest::adapt(i))).collect::<std::result::Result<Vec<_>, _>>()?;
    let report = continuous_utility_records(&records, cfg, true)?;
    driver.close(report)
}

/// Amortised protocol: adapt while the cumulative overhead fits the budget.
/// The adapt step that overflows it is discarded and the same batch is
/// re-requested frozen, followed by frozen steps through `n`.
pub fn run_amortised<P: Provider + ?Sized>(
    provider: &mut P,
    method: &str,
    n: usize,
    cfg: &AmortisedConfig,
) -> Result<SessionOutcome<AmortisedReport>> {
    if cfg.signed {
        return Err(Error::Config("signed overheads need the whole trace and cannot be driven online".into()));
    }
    let mut driver = Driver::open(provider, method, cfg.lambda, n, "amortised")?;
    let mut adapted = Vec::new();
    let mut spent = Nanos::ZERO;
    for i in 1..=n {
        let rec = driver.step(StepRequest::adapt(i))?;
        let c = rec.delta().saturating_sub(cfg.lambda);
        if spent.0.saturating_add(c.0) > cfg.budget.0 {
            break;
        }
        spent += c;
        adapted.push(rec);
    }
    let m = adapted.len();

    let mut frozen = Vec::new();
    let mut source = FrozenSource::None;
    let mut warnings = Vec::new();
    if m < n {
        for i in m + 1..=n {
            match driver.step(StepRequest::frozen(i)) {
                Ok(rec) => frozen.push(rec),
                Err(ProviderError::Uncovered { .. }) if frozen.is_empty() && cfg.frozen_fallback.is_some() => break,
                Err(e) => return Err(e.into()),
            }
        }
        source = if frozen.is_empty() {
            FrozenSource::Constant
        } else {
            match driver.provider.frozen_source() {
                Some((cutoff, exact)) => {
                    if !exact {
                        warnings.push(nearest_run_warning(m, cutoff));
                    }
                    FrozenSource::FrozenRun { cutoff, exact }
                }
                None => FrozenSource::FrozenRun { cutoff: m, exact: true },
            }
        };
    }

    let adapt_accuracy = if m > 0 { Some(accuracy_mean(&adapted, cfg.weighting)?) } else { None };
    let frozen_accuracy = match source {
        FrozenSource::None => None,
        FrozenSource::Constant => cfg.frozen_fallback,
        FrozenSource::FrozenRun { .. } => Some(accuracy_mean(&frozen, cfg.weighting)?),
    };
    let report = AmortisedReport::from_phases(m, n, adapt_accuracy, frozen_accuracy, spent, source, warnings);
    driver.close(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amortised::amortised_utility;
    use crate::continuous::continuous_utility;
    use crate::discrete::{discrete_utility, simulate, Variant};
    use crate::provider::ReplayProvider;
    use crate::trace::tests::rec;
    use crate::trace::{FrozenRun, MethodTrace, TraceBundle};

    fn bundle() -> TraceBundle {
        let recs =
            (1..=12).map(|i| rec(i, 41 + (i as u64 % 3), 30 + 7 * (i as u64 % 4), 10, (i % 11) as u32)).collect();
        let t = MethodTrace::new("m", Nanos::from_ms(40), None, recs).unwrap();
        let run = FrozenRun::new(3, (4..=12).map(|i| rec(i, 40, 0, 10, 2)).collect()).unwrap();
        TraceBundle::new(t).with_frozen(run).unwrap()
    }

    #[test]
    fn discrete_matches_direct() {
        let b = bundle();
        for variant in [Variant::Buffered, Variant::Strict] {
            let cfg = DiscreteConfig::new(Nanos::from_ms(50), variant, Nanos::from_ms(40)).unwrap();
            let mut p = ReplayProvider::new(&b);
            let out = run_discrete(&mut p, "m", 12, &cfg, Weighting::PerBatch).unwrap();
            let sched = simulate(b.adapted(), &cfg);
            assert_eq!(out.report.1, sched);
            assert_eq!(out.report.0, discrete_utility(&sched, b.adapted(), Weighting::PerBatch).unwrap());
            let requested: Vec<usize> = out.steps.iter().map(|s| s.0.index).collect();
            assert_eq!(requested, sched.served().collect::<Vec<_>>());
            assert_eq!(out.provider, ProviderKind::Replay);
        }
    }

    #[test]
    fn continuous_matches_direct() {
        let b = bundle();
        let cfg = ContinuousConfig::new(Nanos::from_ms(100), Nanos::from_ms(40)).unwrap();
        let out = run_continuous(&mut ReplayProvider::new(&b), "m", 12, &cfg).unwrap();
        assert_eq!(out.report, continuous_utility(b.adapted(), &cfg).unwrap());
    }

    #[test]
    fn amortised_matches_direct() {
        let b = bundle();
        for budget_ms in [0u64, 20, 120, 200, 10_000] {
            let cfg = AmortisedConfig::new(Nanos::from_ms(budget_ms), Nanos::from_ms(40)).with_fallback(0.05);
            let out = run_amortised(&mut ReplayProvider::new(&b), "m", 12, &cfg).unwrap();
            assert_eq!(out.report, amortised_utility(&b, &cfg).unwrap(), "budget {budget_ms}");
        }
    }

    #[test]
    fn uncovered_without_fallback_fails() {
        let b = bundle();
        let cfg = AmortisedConfig::new(Nanos::ZERO, Nanos::from_ms(40));
        assert!(run_amortised(&mut ReplayProvider::new(&b), "m", 12, &cfg).is_err());
    }
}
