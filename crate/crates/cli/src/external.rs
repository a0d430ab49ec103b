//! External-process SUT adapter.
//!
//! Drives a child process over line-delimited JSON: each request is one
//! line on the child's stdin — `{"id", "task", "image_path",
//! "annotations"?}` — and each answer one line on its stdout, either
//! `{"label": n}` or `{"detections": [...]}`. The image is written as a
//! uniquely named P6 file in a private temp directory before the
//! request goes out. One request is in flight at a time; a configurable
//! timeout (default 30 s) bounds every execution, and a child that
//! exceeds it is killed and respawned on the next request.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use morphic_core::relations::BoundingBox;
use morphic_core::sut::{Sut, SutError, SutOutput, SutRequest, Task};
use morphic_core::verdicts::{Detection, GroundTruth};
use serde::{Deserialize, Serialize};

use crate::formats::ppm::write_ppm;

#[derive(Serialize)]
struct WireRequest<'a> {
    id: &'a str,
    task: Task,
    image_path: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    annotations: Option<&'a [GroundTruth]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireResponse {
    label: Option<u32>,
    detections: Option<Vec<Detection>>,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    /// Lines forwarded from the child's stdout by a reader thread.
    lines: mpsc::Receiver<std::io::Result<String>>,
}

/// A spawned SUT process plus the temp directory its images live in.
pub struct ExternalSut {
    command: Vec<String>,
    timeout: Duration,
    workdir: tempfile::TempDir,
    running: Option<Running>,
    counter: u64,
}

impl ExternalSut {
    /// Prepares the adapter without spawning; call
    /// [`ExternalSut::ensure_running`] to start the child.
    pub fn new(command: Vec<String>, timeout_secs: u64) -> Result<Self, SutError> {
        if command.is_empty() {
            return Err(SutError::Config("external SUT command is empty".into()));
        }
        let workdir = tempfile::tempdir()
            .map_err(|e| SutError::Io(format!("creating SUT temp dir: {e}")))?;
        Ok(ExternalSut {
            command,
            timeout: Duration::from_secs(timeout_secs),
            workdir,
            running: None,
            counter: 0,
        })
    }

    /// Spawns the child if none is alive.
    pub fn ensure_running(&mut self) -> Result<(), SutError> {
        if self.running.is_some() {
            return Ok(());
        }
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| SutError::Io(format!("spawning {:?}: {e}", self.command[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        self.running = Some(Running {
            child,
            stdin,
            lines: rx,
        });
        Ok(())
    }

    fn kill(&mut self) {
        if let Some(mut running) = self.running.take() {
            let _ = running.child.kill();
            let _ = running.child.wait();
        }
    }

    /// One request/response exchange with the live child.
    fn exchange(&mut self, request: &SutRequest<'_>, image_path: &PathBuf) -> Result<String, SutError> {
        let wire = WireRequest {
            id: request.source_id,
            task: request.task,
            image_path: image_path.to_str().ok_or_else(|| {
                SutError::Io(format!("non-UTF-8 temp path {}", image_path.display()))
            })?,
            annotations: request.truths,
        };
        let mut line = serde_json::to_string(&wire)
            .map_err(|e| SutError::Io(format!("encoding request: {e}")))?;
        line.push('\n');
        let running = self.running.as_mut().expect("ensured");
        if let Err(e) = running
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| running.stdin.flush())
        {
            // A broken pipe means the child is gone; drop it so the
            // next request spawns a fresh one.
            self.kill();
            return Err(SutError::Io(format!("writing to SUT stdin: {e}")));
        }
        match running.lines.recv_timeout(self.timeout) {
            Ok(Ok(answer)) => Ok(answer),
            Ok(Err(e)) => {
                self.kill();
                Err(SutError::Io(format!("reading SUT stdout: {e}")))
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {
                let secs = self.timeout.as_secs();
                self.kill();
                Err(SutError::Timeout(secs))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                self.kill();
                Err(SutError::Io("SUT closed its stdout".into()))
            }
        }
    }

    fn parse_response(&self, task: Task, line: &str) -> Result<SutOutput, SutError> {
        let response: WireResponse = serde_json::from_str(line)
            .map_err(|_| SutError::Protocol(format!("not a response object: {line:?}")))?;
        match (task, response.label, response.detections) {
            (Task::Classification, Some(label), None) => Ok(SutOutput::Label(label)),
            (Task::Detection, None, Some(detections)) => {
                for (i, d) in detections.iter().enumerate() {
                    BoundingBox::new(d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max)
                        .map_err(|e| SutError::Protocol(format!("detection {i}: {e}")))?;
                    if !d.score.is_finite() {
                        return Err(SutError::Protocol(format!(
                            "detection {i}: non-finite score {}",
                            d.score
                        )));
                    }
                }
                Ok(SutOutput::Detections(detections))
            }
            _ => Err(SutError::Protocol(format!(
                "answer does not match a {} request: {line:?}",
                match task {
                    Task::Classification => "classification",
                    Task::Detection => "detection",
                }
            ))),
        }
    }
}

impl Sut for ExternalSut {
    fn execute(&mut self, request: &SutRequest<'_>) -> Result<SutOutput, SutError> {
        self.ensure_running()?;
        self.counter += 1;
        let image_path = self.workdir.path().join(format!("req-{:06}.ppm", self.counter));
        write_ppm(&image_path, request.image).map_err(|e| SutError::Io(format!("{e}")))?;
        let result = self
            .exchange(request, &image_path)
            .and_then(|line| self.parse_response(request.task, &line));
        let _ = std::fs::remove_file(&image_path);
        result
    }
}

impl Drop for ExternalSut {
    fn drop(&mut self) {
        self.kill();
    }
}

// Behavioural tests live in tests/external_sut.rs; they need a child
// process to talk to.
