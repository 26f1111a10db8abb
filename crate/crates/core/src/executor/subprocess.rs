use std::io::Write;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use log::debug;

use super::{ExecError, Transport, TransportError};
use crate::codec;

struct Running {
    child: Child,
    stdin: ChildStdin,
    frames: Receiver<Result<Vec<u8>, String>>,
}

impl Running {
    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Talks to an executable over stdin/stdout. The process is started lazily
/// and replaced after a fault, a timeout or an explicit restart.
pub struct SubprocessTransport {
    command: Vec<String>,
    per_call: bool,
    running: Option<Running>,
}

impl SubprocessTransport {
    pub fn new(command: Vec<String>, per_call: bool) -> Result<Self, ExecError> {
        if command.is_empty() {
            return Err(ExecError::Backend("empty subprocess command".into()));
        }
        Ok(SubprocessTransport {
            command,
            per_call,
            running: None,
        })
    }

    fn spawn(&self) -> Result<Running, String> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("cannot start `{}`: {e}", self.command[0]))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let mut stdout = child.stdout.take().expect("stdout is piped");
        let (tx, frames) = mpsc::channel();
        thread::spawn(move || loop {
            let msg = match codec::read_frame(&mut stdout) {
                Ok(Some(body)) => Ok(body),
                Ok(None) => Err("executor closed its output".to_string()),
                Err(e) => Err(e.to_string()),
            };
            let stop = msg.is_err();
            if tx.send(msg).is_err() || stop {
                break;
            }
        });
        Ok(Running { child, stdin, frames })
    }

    fn stop(&mut self) {
        if let Some(r) = self.running.take() {
            r.kill();
        }
    }
}

impl Transport for SubprocessTransport {
    fn exchange(&mut self, request: &[u8], budget: Duration) -> Result<Vec<u8>, TransportError> {
        if self.per_call {
            self.stop();
        }
        if self.running.is_none() {
            self.running = Some(self.spawn().map_err(TransportError::Fault)?);
        }
        let running = self.running.as_mut().expect("process started above");
        if let Err(e) = running.stdin.write_all(request).and_then(|_| running.stdin.flush()) {
            self.stop();
            return Err(TransportError::Fault(format!("write to executor failed: {e}")));
        }
        match running.frames.recv_timeout(budget) {
            Ok(Ok(body)) => Ok(codec::frame(&body)),
            Ok(Err(msg)) => {
                debug!("subprocess executor fault: {msg}");
                self.stop();
                Err(TransportError::Fault(msg))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.stop();
                Err(TransportError::Timeout)
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.stop();
                Err(TransportError::Fault("executor reader vanished".into()))
            }
        }
    }

    fn restart(&mut self) -> Result<(), ExecError> {
        self.stop();
        Ok(())
    }
}

impl Drop for SubprocessTransport {
    fn drop(&mut self) {
        self.stop();
    }
}
