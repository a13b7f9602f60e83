//! Delivery of warning sentences to a speaker.
//!
//! Delivery runs on a worker thread fed by an unbounded channel, so a slow or
//! broken sink never stalls the frame loop. Failures are logged and counted.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::WarningEvent;

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("speech sink unavailable: {0}")]
    SinkUnavailable(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SinkConfig {
    #[default]
    None,
    Stdout,
    File {
        path: PathBuf,
    },
    /// `template` is split on whitespace; `{text}` inside any argument is
    /// replaced by the sentence. No shell is involved.
    Command {
        template: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    2000
}

pub enum SpeechSink {
    Null,
    Stream(Box<dyn Write + Send>),
    File(PathBuf),
    Command { argv: Vec<String>, timeout: Duration },
}

impl SpeechSink {
    pub fn from_config(cfg: &SinkConfig) -> Self {
        match cfg {
            SinkConfig::None => Self::Null,
            SinkConfig::Stdout => Self::Stream(Box::new(std::io::stdout())),
            SinkConfig::File { path } => Self::File(path.clone()),
            SinkConfig::Command { template, timeout_ms } => Self::Command {
                argv: template.split_whitespace().map(str::to_owned).collect(),
                timeout: Duration::from_millis(*timeout_ms),
            },
        }
    }
}

/// Synchronously delivers one sentence.
pub fn deliver(sink: &mut SpeechSink, text: &str) -> Result<(), SinkError> {
    let unavailable = |e: &dyn std::fmt::Display| SinkError::SinkUnavailable(e.to_string());
    match sink {
        SpeechSink::Null => Ok(()),
        SpeechSink::Stream(w) => {
            writeln!(w, "{text}").and_then(|_| w.flush()).map_err(|e| unavailable(&e))
        }
        SpeechSink::File(path) => {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&*path)
                .map_err(|e| unavailable(&format!("{}: {e}", path.display())))?;
            writeln!(f, "{text}").map_err(|e| unavailable(&e))
        }
        SpeechSink::Command { argv, timeout } => {
            let (program, args) = argv.split_first().ok_or_else(|| unavailable(&"empty command template"))?;
            let mut child = Command::new(program)
                .args(args.iter().map(|a| a.replace("{text}", text)))
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .spawn()
                .map_err(|e| unavailable(&format!("{program}: {e}")))?;
            let deadline = Instant::now() + *timeout;
            loop {
                match child.try_wait().map_err(|e| unavailable(&e))? {
                    Some(status) if status.success() => return Ok(()),
                    Some(status) => return Err(unavailable(&format!("{program} exited with {status}"))),
                    None if Instant::now() >= deadline => {
                        let _ = child.kill();
                        let _ = child.wait();
                        return Err(unavailable(&format!("{program} timed out after {timeout:?}")));
                    }
                    None => std::thread::sleep(Duration::from_millis(2)),
                }
            }
        }
    }
}

/// Fire-and-forget front end for a [`SpeechSink`].
pub struct Speaker {
    tx: Option<Sender<String>>,
    worker: Option<JoinHandle<()>>,
    failures: Arc<AtomicUsize>,
    delivered: Arc<AtomicUsize>,
}

impl Speaker {
    pub fn new(mut sink: SpeechSink) -> Self {
        let (tx, rx) = mpsc::channel::<String>();
        let failures = Arc::new(AtomicUsize::new(0));
        let delivered = Arc::new(AtomicUsize::new(0));
        let (f, d) = (failures.clone(), delivered.clone());
        let worker = std::thread::Builder::new()
            .name("speech".into())
            .spawn(move || {
                for text in rx {
                    match deliver(&mut sink, &text) {
                        Ok(()) => {
                            d.fetch_add(1, Ordering::Relaxed);
                        }
                        Err(e) => {
                            log::warn!("{e}");
                            f.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                }
            })
            .expect("spawn speech worker");
        Self { tx: Some(tx), worker: Some(worker), failures, delivered }
    }

    pub fn from_config(cfg: &SinkConfig) -> Self {
        Self::new(SpeechSink::from_config(cfg))
    }

    /// Queues the event's sentence; never blocks.
    pub fn speak(&self, event: &WarningEvent) {
        if let Some(tx) = &self.tx {
            let _ = tx.send(event.text.to_string());
        }
    }

    pub fn failures(&self) -> usize {
        self.failures.load(Ordering::Relaxed)
    }

    pub fn delivered(&self) -> usize {
        self.delivered.load(Ordering::Relaxed)
    }

    /// Waits for queued sentences to be delivered.
    pub fn finish(&mut self) {
        self.tx.take();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

impl Drop for Speaker {
    fn drop(&mut self) {
        self.finish();
    }
}
