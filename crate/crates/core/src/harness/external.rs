//! Trackers in a child process speaking line-delimited JSON.
//!
//! ```text
//! → {"type":"init","left_frame":p,"right_frame":p,"bbox_left":[..],"bbox_right":[..]}
//! ← {"type":"ready"}
//! → {"type":"frame","left_frame":p,"right_frame":p}
//! ← {"type":"bbox","left":[..],"right":[..]} | {"type":"none"}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{FrameRef, Tracker, TrackerError};
use crate::types::{BBox, Outcome, StereoBBox};

#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Request<'a> {
    Init { left_frame: &'a str, right_frame: &'a str, bbox_left: BBox, bbox_right: BBox },
    Frame { left_frame: &'a str, right_frame: &'a str },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Response {
    Ready,
    Bbox { left: BBox, right: BBox },
    None,
}

pub struct ExternalTracker {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

impl ExternalTracker {
    /// Starts `command` through `sh -c`.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, TrackerError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| TrackerError::Spawn { command: command.to_string(), source })?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self { command: command.to_string(), stdin: child.stdin.take(), child, lines: rx, timeout })
    }

    fn exit_status(&mut self) -> String {
        match self.child.try_wait() {
            Ok(Some(status)) => status.to_string(),
            _ => "stdout closed".to_string(),
        }
    }

    fn exchange(&mut self, request: &Request) -> Result<Response, TrackerError> {
        let mut line = serde_json::to_string(request).expect("requests serialise");
        line.push('\n');
        let sent = self.stdin.as_mut().map(|s| s.write_all(line.as_bytes()).and_then(|_| s.flush()));
        if !matches!(sent, Some(Ok(()))) {
            // Give the process a moment to be reaped so the status is informative.
            thread::sleep(Duration::from_millis(20));
            return Err(TrackerError::Crashed(self.exit_status()));
        }
        let reply = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(TrackerError::Crashed(e.to_string())),
            Err(RecvTimeoutError::Timeout) => {
                let _ = self.child.kill();
                return Err(TrackerError::Timeout(self.timeout.as_millis() as u64));
            }
            Err(RecvTimeoutError::Disconnected) => {
                let _ = self.child.wait();
                return Err(TrackerError::Crashed(self.exit_status()));
            }
        };
        serde_json::from_str(&reply).map_err(|e| TrackerError::Protocol(format!("`{}`: {e}", reply.trim())))
    }
}

fn path_str(p: &std::path::Path) -> Result<&str, TrackerError> {
    p.to_str().ok_or_else(|| TrackerError::Frame(format!("non UTF-8 path {}", p.display())))
}

impl Tracker for ExternalTracker {
    fn init(&mut self, frame: &FrameRef, bbox: StereoBBox) -> Result<(), TrackerError> {
        let req = Request::Init {
            left_frame: path_str(&frame.left)?,
            right_frame: path_str(&frame.right)?,
            bbox_left: bbox.left,
            bbox_right: bbox.right,
        };
        match self.exchange(&req)? {
            Response::Ready => Ok(()),
            other => Err(TrackerError::Protocol(format!("expected ready after init, got {other:?}"))),
        }
    }

    fn track(&mut self, frame: &FrameRef) -> Result<Outcome, TrackerError> {
        let req = Request::Frame { left_frame: path_str(&frame.left)?, right_frame: path_str(&frame.right)? };
        match self.exchange(&req)? {
            Response::None => Ok(Outcome::NoTarget),
            Response::Bbox { left, right } => {
                let ok = [left, right].iter().all(|b| b.is_valid());
                if !ok {
                    return Err(TrackerError::Protocol(format!("degenerate box in reply: {left:?} {right:?}")));
                }
                Ok(Outcome::Predicted(StereoBBox::new(left, right)))
            }
            Response::Ready => Err(TrackerError::Protocol("unexpected ready for a frame".into())),
        }
    }
}

impl Drop for ExternalTracker {
    fn drop(&mut self) {
        drop(self.stdin.take());
        if !matches!(self.child.try_wait(), Ok(Some(_))) {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
        log::debug!("tracker `{}` stopped", self.command);
    }
}
