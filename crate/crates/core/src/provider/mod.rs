//! Batch-by-batch sources of latency and correctness.
//!
//! A [`Provider`] answers one request per processed batch. The replay
//! provider reads recorded traces; the external provider drives a child
//! process over a line protocol on its standard input and output:
//!
//! ```text
//! engine -> child   HELLO method=<label> lambda_ms=<decimal> n=<int> protocol=<tag>
//! child  -> engine  READY
//! engine -> child   STEP index=<int> mode=<adapt|frozen>
//! child  -> engine  RES e_ms=<decimal> ell_ms=<decimal> batch_size=<int> correct=<int>
//! engine -> child   BYE
//! child  -> engine  DONE
//! ```
//!
//! Unknown keys are ignored. A `frozen` step at index `i` is answered with
//! the parameters obtained by adapting on the batches the session adapted
//! on before `i`; an adapt step immediately followed by a frozen step on the
//! same index means the adapt step was discarded.

mod echo;
mod external;
mod replay;
mod session;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Nanos;
use crate::trace::BatchRecord;

pub use echo::serve as serve_echo;
pub use external::ExternalProvider;
pub use replay::ReplayProvider;
pub use session::{run_amortised, run_continuous, run_discrete, SessionOutcome};

/// Lines kept in error messages from the end of a transcript.
const TRANSCRIPT_TAIL: usize = 20;

/// Messages exchanged so far, prefixed `>` (sent) or `<` (received).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript(pub Vec<String>);

impl Transcript {
    pub fn sent(&mut self, line: &str) {
        self.0.push(format!("> {line}"));
    }

    pub fn received(&mut self, line: &str) {
        self.0.push(format!("< {line}"));
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let skip = self.0.len().saturating_sub(TRANSCRIPT_TAIL);
        if skip > 0 {
            writeln!(f, "  ... {skip} earlier lines")?;
        }
        for line in &self.0[skip..] {
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("failed to spawn `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("provider I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed line {line_no} `{line}`: {reason}\ntranscript:\n{transcript}")]
    Malformed { line_no: usize, line: String, reason: String, transcript: Transcript },
    #[error("line {line_no}: expected {expected}, got `{found}`\ntranscript:\n{transcript}")]
    Unexpected { line_no: usize, expected: &'static str, found: String, transcript: Transcript },
    #[error("provider exited ({status}) before responding\ntranscript:\n{transcript}")]
    ChildExited { status: String, transcript: Transcript },
    #[error("provider did not respond within {timeout_ms} ms\ntranscript:\n{transcript}")]
    Timeout { timeout_ms: u64, transcript: Transcript },
    #[error("no frozen run covers batch {index}")]
    Uncovered { index: usize },
    #[error("batch {index} outside 1..={n}")]
    OutOfRange { index: usize, n: usize },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("invalid label `{0}`: must be non-empty without whitespace")]
    InvalidLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Adapt,
    Frozen,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Adapt => "adapt",
            Mode::Frozen => "frozen",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adapt" => Ok(Mode::Adapt),
            "frozen" => Ok(Mode::Frozen),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Replay,
    External,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::Replay => "replay",
            ProviderKind::External => "external",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub method: String,
    pub lambda: Nanos,
    pub n: usize,
    pub protocol: String,
}

impl Handshake {
    pub fn to_line(&self) -> Result<String, ProviderError> {
        for label in [&self.method, &self.protocol] {
            if label.is_empty() || label.chars().any(char::is_whitespace) {
                return Err(ProviderError::InvalidLabel(label.clone()));
            }
        }
        Ok(format!(
            "HELLO method={} lambda_ms={} n={} protocol={}",
            self.method,
            self.lambda.to_ms_string(),
            self.n,
            self.protocol
        ))
    }

    pub fn parse(msg: &Message) -> Result<Self, String> {
        msg.expect_verb("HELLO")?;
        Ok(Handshake {
            method: msg.field("method")?.to_string(),
            lambda: Nanos::parse_ms(msg.field("lambda_ms")?).map_err(|e| format!("lambda_ms: {e}"))?,
            n: msg.parse_field("n")?,
            protocol: msg.field("protocol")?.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRequest {
    pub index: usize,
    pub mode: Mode,
}

impl StepRequest {
    pub fn adapt(index: usize) -> Self {
        StepRequest { index, mode: Mode::Adapt }
    }

    pub fn frozen(index: usize) -> Self {
        StepRequest { index, mode: Mode::Frozen }
    }

    pub fn to_line(&self) -> String {
        format!("STEP index={} mode={}", self.index, self.mode.as_str())
    }

    pub fn parse(msg: &Message) -> Result<Self, String> {
        msg.expect_verb("STEP")?;
        Ok(StepRequest { index: msg.parse_field("index")?, mode: msg.parse_field("mode")? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepResponse {
    pub e: Nanos,
    pub ell: Nanos,
    pub batch_size: u32,
    pub correct: u32,
}

impl StepResponse {
    pub fn from_record(r: &BatchRecord) -> Self {
        StepResponse { e: r.e, ell: r.ell, batch_size: r.batch_size, correct: r.correct }
    }

    pub fn into_record(self, index: usize) -> BatchRecord {
        BatchRecord { index, e: self.e, ell: self.ell, batch_size: self.batch_size, correct: self.correct }
    }

    pub fn to_line(&self) -> String {
        format!(
            "RES e_ms={} ell_ms={} batch_size={} correct={}",
            self.e.to_ms_string(),
            self.ell.to_ms_string(),
            self.batch_size,
            self.correct
        )
    }

    pub fn parse(msg: &Message) -> Result<Self, String> {
        msg.expect_verb("RES")?;
        let res = StepResponse {
            e: Nanos::parse_ms(msg.field("e_ms")?).map_err(|e| format!("e_ms: {e}"))?,
            ell: Nanos::parse_ms(msg.field("ell_ms")?).map_err(|e| format!("ell_ms: {e}"))?,
            batch_size: msg.parse_field("batch_size")?,
            correct: msg.parse_field("correct")?,
        };
        if res.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if res.correct > res.batch_size {
            return Err(format!("correct ({}) exceeds batch_size ({})", res.correct, res.batch_size));
        }
        Ok(res)
    }
}

/// One protocol line: a verb followed by `key=value` fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub verb: String,
    pub fields: BTreeMap<String, String>,
}

impl Message {
    pub fn parse(line: &str) -> Result<Self, String> {
        let mut parts = line.split_whitespace();
        let verb = parts.next().ok_or("empty line")?.to_string();
        let mut fields = BTreeMap::new();
        for part in parts {
            let (k, v) = part.split_once('=').ok_or_else(|| format!("token `{part}` is not key=value"))?;
            fields.insert(k.to_string(), v.to_string());
        }
        Ok(Message { verb, fields })
    }

    pub fn expect_verb(&self, verb: &str) -> Result<(), String> {
        if self.verb == verb {
            Ok(())
        } else {
            Err(format!("expected {verb}, got {}", self.verb))
        }
    }

    pub fn field(&self, key: &str) -> Result<&str, String> {
        self.fields.get(key).map(String::as_str).ok_or_else(|| format!("missing `{key}`"))
    }

    pub fn parse_field<T>(&self, key: &str) -> Result<T, String>
    where
        T: std::str::FromStr,
        T::Err: fmt::Display,
    {
        self.field(key)?.parse().map_err(|e| format!("{key}: {e}"))
    }
}

pub trait Provider {
    fn kind(&self) -> ProviderKind;

    fn hello(&mut self, handshake: &Handshake) -> Result<(), ProviderError>;

    fn step(&mut self, request: StepRequest) -> Result<StepResponse, ProviderError>;

    /// Ends the session.
    fn finish(&mut self) -> Result<(), ProviderError>;

    /// Cutoff of the frozen run serving frozen steps and whether it matched
    /// the requested cutoff exactly. `None` when the provider freezes live.
    fn frozen_source(&self) -> Option<(usize, bool)> {
        None
    }
}
