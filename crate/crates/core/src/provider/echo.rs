use std::io::{BufRead, Write};

use super::{Handshake, Message, Provider, ProviderError, ReplayProvider, StepRequest};
use crate::trace::TraceBundle;

/// Serves the child side of the line protocol from recorded traces. Used to
/// check that a live session reproduces replay results.
pub fn serve<R: BufRead, W: Write>(bundle: &TraceBundle, input: R, mut output: W) -> Result<(), ProviderError> {
    let mut replay = ReplayProvider::new(bundle);
    let mut greeted = false;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |reason: String| ProviderError::Protocol(format!("line {}: {reason}", i + 1));
        let msg = Message::parse(&line).map_err(at)?;
        match msg.verb.as_str() {
            "HELLO" => {
                let hs = Handshake::parse(&msg).map_err(at)?;
                replay.hello(&hs)?;
                greeted = true;
                writeln!(output, "READY")?;
            }
            "STEP" if greeted => {
                let req = StepRequest::parse(&msg).map_err(at)?;
                let res = replay.step(req)?;
                writeln!(output, "{}", res.to_line())?;
            }
            "BYE" if greeted => {
                writeln!(output, "DONE")?;
                output.flush()?;
                return Ok(());
            }
            "STEP" | "BYE" => return Err(at(format!("{} before HELLO", msg.verb))),
            other => return Err(at(format!("unknown message `{other}`"))),
        }
        output.flush()?;
    }
    Err(ProviderError::Protocol("input ended before BYE".into()))
}
