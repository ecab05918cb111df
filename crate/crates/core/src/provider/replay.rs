use super::{Handshake, Mode, Provider, ProviderError, ProviderKind, StepRequest, StepResponse};
use crate::trace::{FrozenRun, TraceBundle};

/// Answers steps from recorded traces: adapt steps from the adapted trace,
/// frozen steps from the frozen run chosen at the first frozen request.
#[derive(Debug)]
pub struct ReplayProvider<'a> {
    bundle: &'a TraceBundle,
    frozen: Option<(&'a FrozenRun, bool)>,
}

impl<'a> ReplayProvider<'a> {
    pub fn new(bundle: &'a TraceBundle) -> Self {
        ReplayProvider { bundle, frozen: None }
    }
}

impl Provider for ReplayProvider<'_> {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Replay
    }

    fn hello(&mut self, _handshake: &Handshake) -> Result<(), ProviderError> {
        self.frozen = None;
        Ok(())
    }

    fn step(&mut self, request: StepRequest) -> Result<StepResponse, ProviderError> {
        let n = self.bundle.adapted().len();
        if request.index == 0 || request.index > n {
            return Err(ProviderError::OutOfRange { index: request.index, n });
        }
        let record = match request.mode {
            Mode::Adapt => self.bundle.adapted().record(request.index),
            Mode::Frozen => {
                if self.frozen.is_none() {
                    self.frozen = self.bundle.frozen_for(request.index - 1);
                }
                self.frozen.and_then(|(run, _)| run.record(request.index))
            }
        };
        record.map(StepResponse::from_record).ok_or(ProviderError::Uncovered { index: request.index })
    }

    fn finish(&mut self) -> Result<(), ProviderError> {
        Ok(())
    }

    fn frozen_source(&self) -> Option<(usize, bool)> {
        self.frozen.map(|(run, exact)| (run.cutoff(), exact))
    }
}
