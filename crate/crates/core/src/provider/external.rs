use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use super::{Handshake, Message, Provider, ProviderError, ProviderKind, StepRequest, StepResponse, Transcript};

/// A child process speaking the line protocol.
#[derive(Debug)]
pub struct ExternalProvider {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    transcript: Transcript,
    received: usize,
}

impl ExternalProvider {
    /// Spawns `argv[0]` with the remaining arguments. Each response must
    /// arrive within `timeout_ms`.
    pub fn spawn<S: AsRef<str>>(argv: &[S], timeout_ms: u64) -> Result<Self, ProviderError> {
        let command = argv.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
        let (program, args) =
            argv.split_first().ok_or_else(|| ProviderError::Protocol("empty provider command".into()))?;
        let mut child = Command::new(program.as_ref())
            .args(args.iter().map(AsRef::as_ref))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ProviderError::Spawn { command, source })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(ExternalProvider {
            child,
            stdin,
            lines: rx,
            timeout: Duration::from_millis(timeout_ms),
            transcript: Transcript::default(),
            received: 0,
        })
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    fn send(&mut self, line: &str) -> Result<(), ProviderError> {
        self.transcript.sent(line);
        let stdin = self.stdin.as_mut().ok_or_else(|| ProviderError::Protocol("session already closed".into()))?;
        let written = writeln!(stdin, "{line}").and_then(|_| stdin.flush());
        if written.is_err() {
            return Err(self.exited());
        }
        Ok(())
    }

    fn exited(&mut self) -> ProviderError {
        // give the reader a moment to observe the exit status
        let status = match self.child.wait_timeout(Duration::from_millis(500)) {
            Some(status) => status.to_string(),
            None => "still running, stdout closed".into(),
        };
        ProviderError::ChildExited { status, transcript: self.transcript.clone() }
    }

    fn receive(&mut self, expected: &'static str) -> Result<Message, ProviderError> {
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(ProviderError::Io(e)),
            Err(RecvTimeoutError::Disconnected) => return Err(self.exited()),
            Err(RecvTimeoutError::Timeout) => {
                return Err(ProviderError::Timeout {
                    timeout_ms: self.timeout.as_millis() as u64,
                    transcript: self.transcript.clone(),
                })
            }
        };
        self.received += 1;
        self.transcript.received(&line);
        let msg = Message::parse(&line).map_err(|reason| self.malformed(&line, reason))?;
        if msg.verb != expected {
            return Err(ProviderError::Unexpected {
                line_no: self.received,
                expected,
                found: line,
                transcript: self.transcript.clone(),
            });
        }
        Ok(msg)
    }

    fn malformed(&self, line: &str, reason: String) -> ProviderError {
        ProviderError::Malformed {
            line_no: self.received,
            line: line.to_string(),
            reason,
            transcript: self.transcript.clone(),
        }
    }
}

trait WaitTimeout {
    fn wait_timeout(&mut self, limit: Duration) -> Option<std::process::ExitStatus>;
}

impl WaitTimeout for Child {
    fn wait_timeout(&mut self, limit: Duration) -> Option<std::process::ExitStatus> {
        let step = Duration::from_millis(10);
        let mut waited = Duration::ZERO;
        loop {
            if let Ok(Some(status)) = self.try_wait() {
                return Some(status);
            }
            if waited >= limit {
                return None;
            }
            thread::sleep(step);
            waited += step;
        }
    }
}

impl Provider for ExternalProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::External
    }

    fn hello(&mut self, handshake: &Handshake) -> Result<(), ProviderError> {
        self.send(&handshake.to_line()?)?;
        self.receive("READY").map(drop)
    }

    fn step(&mut self, request: StepRequest) -> Result<StepResponse, ProviderError> {
        self.send(&request.to_line())?;
        let msg = self.receive("RES")?;
        StepResponse::parse(&msg).map_err(|reason| {
            let line = self.transcript.0.last().map(|l| l[2..].to_string()).unwrap_or_default();
            self.malformed(&line, reason)
        })
    }

    fn finish(&mut self) -> Result<(), ProviderError> {
        self.send("BYE")?;
        self.receive("DONE")?;
        self.stdin = None;
        let _ = self.child.wait_timeout(Duration::from_millis(1000));
        Ok(())
    }
}

impl Drop for ExternalProvider {
    fn drop(&mut self) {
        self.stdin = None;
        if !matches!(self.child.try_wait(), Ok(Some(_))) {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}
