//! Line-oriented JSON subprocess protocol used by external model backends.
//!
//! The tool spawns the configured command through `sh -c`, writes one JSON
//! request per line to its stdin and reads exactly one JSON response line
//! back. A process serves requests sequentially; [`PluginPool`] keeps idle
//! processes around so concurrent callers each get their own.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde_json::Value;

use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

pub struct PluginProcess {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    dead: bool,
}

impl PluginProcess {
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Plugin(format!("failed to spawn `{command}`: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(PluginProcess {
            command: command.to_string(),
            child,
            stdin,
            lines: rx,
            timeout,
            dead: false,
        })
    }

    /// Sends one request and waits for its response line.
    pub fn request(&mut self, request: &Value) -> Result<Value> {
        if self.dead {
            return Err(Error::Plugin(format!("`{}` is no longer running", self.command)));
        }
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::Plugin("plugin stdin closed".into()))?;
        let mut line = request.to_string();
        line.push('\n');
        if let Err(e) = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()) {
            self.dead = true;
            return Err(Error::Plugin(format!(
                "writing request to `{}` failed: {e}",
                self.command
            )));
        }
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(resp)) => parse_response_line(&resp),
            Ok(Err(e)) => {
                self.dead = true;
                Err(Error::Plugin(format!("reading from `{}` failed: {e}", self.command)))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.dead = true;
                let _ = self.child.kill();
                Err(Error::Plugin(format!(
                    "`{}` timed out after {:.1}s",
                    self.command,
                    self.timeout.as_secs_f64()
                )))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.dead = true;
                Err(Error::Plugin(format!(
                    "`{}` exited without responding",
                    self.command
                )))
            }
        }
    }

    pub fn is_alive(&self) -> bool {
        !self.dead
    }
}

impl Drop for PluginProcess {
    fn drop(&mut self) {
        // Closing stdin lets well-behaved plugins exit on EOF.
        self.stdin.take();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Parses a response line. An object carrying an `"error"` key is turned
/// into a plugin error.
pub fn parse_response_line(line: &str) -> Result<Value> {
    let value: Value = serde_json::from_str(line.trim())
        .map_err(|e| Error::Plugin(format!("malformed response {line:?}: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Plugin(format!("response is not a JSON object: {line:?}")))?;
    if let Some(err) = obj.get("error") {
        return Err(Error::Plugin(format!("plugin reported error: {err}")));
    }
    Ok(value)
}

/// Pool of plugin processes, one in-flight request per process.
pub struct PluginPool {
    command: String,
    timeout: Duration,
    idle: Mutex<Vec<PluginProcess>>,
}

impl PluginPool {
    pub fn new(command: impl Into<String>, timeout: Duration) -> Self {
        PluginPool {
            command: command.into(),
            timeout,
            idle: Mutex::new(Vec::new()),
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn call(&self, request: &Value) -> Result<Value> {
        let proc = self.idle.lock().expect("pool lock").pop();
        let mut proc = match proc {
            Some(p) => p,
            None => PluginProcess::spawn(&self.command, self.timeout)?,
        };
        let result = proc.request(request);
        if proc.is_alive() {
            self.idle.lock().expect("pool lock").push(proc);
        }
        result
    }
}
