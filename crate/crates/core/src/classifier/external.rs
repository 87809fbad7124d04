//! Out-of-process classifiers speaking line-delimited JSON on stdin/stdout.
//!
//! The peer first writes a handshake `{"classes":K}`. Each request is one
//! line `{"id":n,"op":"logits"|"grad","label":l,"shape":[h,w,c],"pixels":[..]}`
//! and is answered by one line `{"id":n,"logits":[..]}` or
//! `{"id":n,"grad":[..]}`. A peer may answer `{"id":n,"error":"..."}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use super::{cross_entropy_loss, Classifier};
use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    op: &'a str,
    label: usize,
    shape: [usize; 3],
    pixels: &'a [f64],
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
}

impl Session {
    fn read_line(&mut self) -> Result<String> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::Session(format!("reading from peer failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Session(format!(
                "peer did not reply within {:?}",
                self.timeout
            ))),
            Err(RecvTimeoutError::Disconnected) => {
                let status = self
                    .child
                    .try_wait()
                    .ok()
                    .flatten()
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "closed its output".into());
                Err(Error::Session(format!("peer exited: {status}")))
            }
        }
    }

    fn request(&mut self, op: &str, x: &Image, label: usize) -> Result<Vec<f64>> {
        let id = self.next_id;
        self.next_id += 1;
        let (h, w, c) = x.shape();
        let line = serde_json::to_string(&Request {
            id,
            op,
            label,
            shape: [h, w, c],
            pixels: x.data(),
        })
        .expect("request serializes");
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::Session(format!("writing to peer failed: {e}")))?;

        let reply = self.read_line()?;
        let value: Value = serde_json::from_str(&reply)
            .map_err(|e| Error::protocol("reply", format!("not valid JSON ({e}): {reply:.80}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::protocol("reply", "expected a JSON object"))?;
        let got = obj
            .get("id")
            .ok_or_else(|| Error::protocol("id", "missing"))?
            .as_u64()
            .ok_or_else(|| Error::protocol("id", "not an unsigned integer"))?;
        if got != id {
            return Err(Error::protocol("id", format!("expected {id}, got {got}")));
        }
        if let Some(msg) = obj.get("error") {
            return Err(Error::Session(format!("peer reported: {msg}")));
        }
        let field = if op == "logits" { "logits" } else { "grad" };
        let arr = obj
            .get(field)
            .ok_or_else(|| Error::protocol(field, "missing"))?
            .as_array()
            .ok_or_else(|| Error::protocol(field, "not an array"))?;
        arr.iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_f64()
                    .filter(|f| f.is_finite())
                    .ok_or_else(|| Error::protocol(field, format!("entry {i} is not a finite number")))
            })
            .collect()
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A classifier served by a child process. One request is in flight at a time.
pub struct ExternalClassifier {
    session: Mutex<Session>,
    classes: usize,
}

impl std::fmt::Debug for ExternalClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalClassifier").field("classes", &self.classes).finish()
    }
}

impl ExternalClassifier {
    /// Spawns `program arg ...` from a whitespace-separated command line.
    pub fn from_spec(spec: &str, timeout: Duration) -> Result<Self> {
        let mut parts = spec.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::config("classifier", "empty exec: command"))?;
        let mut cmd = Command::new(program);
        cmd.args(parts);
        Self::spawn(cmd, timeout)
    }

    pub fn spawn(mut command: Command, timeout: Duration) -> Result<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Session(format!("cannot start peer: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut session = Session {
            child,
            stdin,
            lines: rx,
            next_id: 0,
            timeout,
        };
        let hello = session.read_line()?;
        let value: Value = serde_json::from_str(&hello)
            .map_err(|e| Error::protocol("handshake", format!("not valid JSON ({e})")))?;
        let classes = value
            .get("classes")
            .ok_or_else(|| Error::protocol("classes", "missing from handshake"))?
            .as_u64()
            .filter(|&k| k >= 2)
            .ok_or_else(|| Error::protocol("classes", "must be an integer >= 2"))? as usize;
        Ok(Self {
            session: Mutex::new(session),
            classes,
        })
    }

    fn call(&self, op: &str, x: &Image, label: usize) -> Result<Vec<f64>> {
        let mut session = self
            .session
            .lock()
            .map_err(|_| Error::Session("session poisoned by an earlier failure".into()))?;
        session.request(op, x, label)
    }
}

impl Classifier for ExternalClassifier {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn logits(&self, x: &Image) -> Result<Vec<f64>> {
        let logits = self.call("logits", x, 0)?;
        if logits.len() != self.classes {
            return Err(Error::protocol(
                "logits",
                format!("expected {} values, got {}", self.classes, logits.len()),
            ));
        }
        Ok(logits)
    }

    fn loss_and_input_gradient(&self, x: &Image, label: usize) -> Result<(f64, Vec<f64>)> {
        if label >= self.classes {
            return Err(Error::Label {
                label,
                classes: self.classes,
            });
        }
        let loss = cross_entropy_loss(&self.logits(x)?, label)?;
        let grad = self.call("grad", x, label)?;
        if grad.len() != x.len() {
            return Err(Error::protocol(
                "grad",
                format!("expected {} values, got {}", x.len(), grad.len()),
            ));
        }
        Ok((loss, grad))
    }
}
