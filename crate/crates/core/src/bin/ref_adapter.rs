//! Adapter that serves the wire protocol using the in-process reference
//! interpreter. Used to exercise the external backend without a third-party
//! runtime. Misbehavior flags simulate broken adapters:
//!
//! * `--die-after N` exits, unanswered, on execute request N+1
//! * `--hang` never answers execute requests
//! * `--garbage` answers execute requests with a non-JSON line
//! * `--drop-field NAME` removes a field from every execute response
//! * `--backend optimized` echoes the optimized interpreter instead

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use graphmut::backends::wire::{
    parse_line, ExecuteRequest, ExecuteResponse, HelloReply, WireOutput, WireStatus,
};
use graphmut::backends::{
    optimized_interpret, reference_interpret, CaptureOptions, StageStatus, TimingMode,
};
use graphmut::ir::onnx::import_onnx;

#[derive(Default)]
struct Flags {
    die_after: Option<usize>,
    hang: bool,
    garbage: bool,
    drop_field: Option<String>,
    optimized: bool,
}

fn parse_flags() -> Result<Flags, String> {
    let mut flags = Flags::default();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        match a.as_str() {
            "--die-after" => {
                let n = args.next().ok_or("--die-after needs a count")?;
                flags.die_after = Some(n.parse().map_err(|_| format!("bad count `{n}`"))?);
            }
            "--hang" => flags.hang = true,
            "--garbage" => flags.garbage = true,
            "--drop-field" => flags.drop_field = Some(args.next().ok_or("--drop-field needs a name")?),
            "--backend" => match args.next().as_deref() {
                Some("reference") => {}
                Some("optimized") => flags.optimized = true,
                other => return Err(format!("unknown backend {other:?}")),
            },
            other => return Err(format!("unknown flag `{other}`")),
        }
    }
    Ok(flags)
}

fn respond(req: &ExecuteRequest, optimized: bool) -> ExecuteResponse {
    let crash = |error: String| ExecuteResponse {
        id: req.id,
        status: WireStatus::Crash,
        error: Some(error),
        outputs: Vec::new(),
        total_ms: 0.0,
        peak_mem_bytes: None,
    };
    let model = match B64
        .decode(&req.model_b64)
        .map_err(|e| e.to_string())
        .and_then(|b| import_onnx(&b).map_err(|e| e.to_string()))
    {
        Ok(m) => m,
        Err(e) => return crash(format!("build: {e}")),
    };
    let input = match req.input.to_tensor() {
        Ok(t) => t,
        Err(e) => return crash(format!("load: {e}")),
    };
    let capture = CaptureOptions {
        per_layer: req.options.per_layer,
        timing: if req.options.timing {
            TimingMode::Measured { reps: 1 }
        } else {
            TimingMode::Off
        },
    };
    let trace = if optimized {
        optimized_interpret(&model, &input, &capture)
    } else {
        reference_interpret(&model, &input, &capture)
    };
    if let Some((stage, sig)) = trace.crash() {
        return crash(format!("{}: {sig}", stage.name()));
    }
    debug_assert!(trace.stage_status.values().all(|s| *s == StageStatus::Ok));
    let mut outputs: Vec<WireOutput> = trace
        .layer_outputs
        .iter()
        .map(|o| WireOutput::from_tensor(&o.node, &o.tensor))
        .collect();
    for o in &trace.outputs {
        if !outputs.iter().any(|w| w.name == o.node) {
            outputs.push(WireOutput::from_tensor(&o.node, &o.tensor));
        }
    }
    ExecuteResponse {
        id: req.id,
        status: if trace.any_non_finite() {
            WireStatus::Nan
        } else {
            WireStatus::Ok
        },
        error: None,
        outputs,
        total_ms: trace.total_ms,
        peak_mem_bytes: Some(trace.peak_mem_bytes),
    }
}

fn main() -> ExitCode {
    let flags = match parse_flags() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("graphmut-ref-adapter: {e}");
            return ExitCode::from(2);
        }
    };
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    let mut executed = 0usize;
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("graphmut-ref-adapter: unreadable request: {e}");
                continue;
            }
        };
        let reply = match value.get("cmd").and_then(|c| c.as_str()) {
            Some("hello") => serde_json::to_value(HelloReply {
                name: "graphmut-ref-adapter".into(),
                runtime: if flags.optimized { "graphmut-optimized" } else { "graphmut-reference" }.into(),
                version: env!("CARGO_PKG_VERSION").into(),
            })
            .expect("serializable"),
            Some("execute") => {
                if flags.die_after.is_some_and(|n| executed >= n) {
                    return ExitCode::from(3);
                }
                executed += 1;
                if flags.hang {
                    std::thread::park();
                    continue;
                }
                if flags.garbage {
                    let _ = writeln!(stdout, "this is not json");
                    let _ = stdout.flush();
                    continue;
                }
                let response = match parse_line::<ExecuteRequest>(&line) {
                    Ok(req) => respond(&req, flags.optimized),
                    Err(e) => {
                        eprintln!("graphmut-ref-adapter: {e}");
                        continue;
                    }
                };
                let mut v = serde_json::to_value(response).expect("serializable");
                if let (Some(field), Some(obj)) = (&flags.drop_field, v.as_object_mut()) {
                    obj.remove(field);
                }
                v
            }
            other => {
                eprintln!("graphmut-ref-adapter: unknown command {other:?}");
                continue;
            }
        };
        if writeln!(stdout, "{reply}").and_then(|_| stdout.flush()).is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}
