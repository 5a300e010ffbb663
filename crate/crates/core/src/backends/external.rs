//! Client side of the adapter protocol. Each execution launches its own
//! worker process, so a runtime that crashes or hangs only affects the
//! trace it was asked to produce.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use super::wire::{
    parse_line, to_line, ExecuteRequest, ExecuteResponse, Hello, HelloReply, WireInput,
    WireOptions, WireStatus,
};
use super::{CaptureOptions, ExecutionTrace, LayerOutput, Stage, TimingMode};
use crate::error::{Error, Result};
use crate::ir::onnx::export_onnx;
use crate::ir::GraphModel;
use crate::tensor::Tensor;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// How to launch an adapter: a program, its arguments and a reply timeout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterCommand {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl AdapterCommand {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    /// Splits a command line on whitespace. Quoting is not interpreted.
    pub fn parse(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace().map(String::from);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("empty adapter command".into()))?;
        Ok(Self::new(program, parts.collect()))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn label(&self) -> String {
        std::path::Path::new(&self.program)
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.program.clone())
    }
}

/// A launched adapter that has answered the handshake.
pub struct AdapterSession {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    pub hello: HelloReply,
    next_id: u64,
}

/// Why a session could not produce a reply.
enum Lost {
    Timeout,
    Gone,
}

impl Lost {
    fn signature(&self) -> &'static str {
        match self {
            Lost::Timeout => "timeout",
            Lost::Gone => "adapter-lost",
        }
    }
}

impl AdapterSession {
    pub fn launch(cmd: &AdapterCommand) -> Result<Self> {
        Self::start(cmd)?.map_err(|sig| Error::Protocol {
            reason: format!("handshake failed: {sig}"),
            raw: String::new(),
        })
    }

    /// The inner error is the crash signature for a lost handshake.
    fn start(cmd: &AdapterCommand) -> Result<std::result::Result<Self, &'static str>> {
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
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
        let mut session = Self {
            child,
            stdin,
            lines: rx,
            timeout: cmd.timeout,
            hello: HelloReply {
                name: String::new(),
                runtime: String::new(),
                version: String::new(),
            },
            next_id: 1,
        };
        let raw = match session.roundtrip(&to_line(&Hello::new())?) {
            Ok(raw) => raw,
            Err(lost) => return Ok(Err(lost.signature())),
        };
        session.hello = parse_line(&raw)?;
        Ok(Ok(session))
    }

    fn roundtrip(&mut self, line: &str) -> std::result::Result<String, Lost> {
        if self
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .is_err()
        {
            return Err(Lost::Gone);
        }
        loop {
            match self.lines.recv_timeout(self.timeout) {
                Ok(Ok(l)) if l.trim().is_empty() => continue,
                Ok(Ok(l)) => return Ok(l),
                Ok(Err(_)) | Err(RecvTimeoutError::Disconnected) => return Err(Lost::Gone),
                Err(RecvTimeoutError::Timeout) => return Err(Lost::Timeout),
            }
        }
    }

    /// Sends one execute request. Death and timeout become crash traces.
    pub fn execute(
        &mut self,
        backend_id: &str,
        model: &GraphModel,
        input: &Tensor,
        capture: &CaptureOptions,
    ) -> Result<ExecutionTrace> {
        let mut trace = ExecutionTrace::new(backend_id);
        let bytes = match export_onnx(model) {
            Ok(b) => b,
            Err(e) => {
                trace.mark_crash(Stage::Build, format!("export: {e}"));
                return Ok(trace);
            }
        };
        let id = self.next_id;
        self.next_id += 1;
        let request = ExecuteRequest {
            id,
            cmd: "execute".into(),
            model_b64: B64.encode(bytes),
            input: WireInput::from_tensor(input),
            options: WireOptions {
                per_layer: capture.per_layer,
                timing: capture.timing != TimingMode::Off,
            },
        };
        let raw = match self.roundtrip(&to_line(&request)?) {
            Ok(raw) => raw,
            Err(lost) => {
                trace.mark_ok(Stage::Build);
                trace.mark_ok(Stage::Load);
                trace.mark_crash(Stage::Infer, lost.signature());
                return Ok(trace);
            }
        };
        let response: ExecuteResponse = parse_line(&raw)?;
        if response.id != id {
            return Err(Error::Protocol {
                reason: format!("response id {} does not match request id {id}", response.id),
                raw,
            });
        }
        convert(trace, model, capture, response, &raw)
    }
}

impl Drop for AdapterSession {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn convert(
    mut trace: ExecutionTrace,
    model: &GraphModel,
    capture: &CaptureOptions,
    response: ExecuteResponse,
    raw: &str,
) -> Result<ExecutionTrace> {
    let protocol = |reason: String| Error::Protocol {
        reason,
        raw: raw.to_string(),
    };
    trace.total_ms = response.total_ms;
    trace.peak_mem_bytes = response.peak_mem_bytes.unwrap_or(0);
    if response.status == WireStatus::Crash {
        // a `build:` or `load:` prefix names the failing stage
        let sig = response.error.unwrap_or_else(|| "crash".into());
        let stage = if sig.starts_with("build:") {
            Stage::Build
        } else if sig.starts_with("load:") {
            Stage::Load
        } else {
            Stage::Infer
        };
        for s in Stage::ALL.into_iter().take_while(|s| *s != stage) {
            trace.mark_ok(s);
        }
        trace.mark_crash(stage, sig);
        return Ok(trace);
    }
    let mut all = Vec::with_capacity(response.outputs.len());
    for o in &response.outputs {
        let tensor = o
            .to_tensor()
            .map_err(|e| protocol(format!("output `{}`: {e}", o.name)))?;
        all.push(LayerOutput {
            node: o.name.clone(),
            tensor,
        });
    }
    for name in &model.outputs {
        let found = all
            .iter()
            .find(|o| o.node == *name)
            .ok_or_else(|| protocol(format!("response lacks model output `{name}`")))?;
        trace.outputs.push(found.clone());
    }
    if capture.per_layer {
        trace.layer_outputs = all;
    }
    for s in Stage::ALL {
        trace.mark_ok(s);
    }
    Ok(trace)
}

/// Launches a fresh worker, runs one model, and shuts the worker down.
pub fn external_execute(
    cmd: &AdapterCommand,
    model: &GraphModel,
    input: &Tensor,
    capture: &CaptureOptions,
) -> Result<ExecutionTrace> {
    let backend_id = format!("external:{}", cmd.label());
    match AdapterSession::start(cmd)? {
        Ok(mut session) => session.execute(&backend_id, model, input, capture),
        Err(sig) => {
            let mut trace = ExecutionTrace::new(backend_id);
            trace.mark_crash(Stage::Build, sig);
            Ok(trace)
        }
    }
}
