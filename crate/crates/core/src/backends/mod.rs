//! Execution backends and the traces they produce.
//!
//! Three in-process interpreters share one driver ([`interp`]) and differ in
//! their kernels: `reference` uses direct loops with sequential summation,
//! `optimized` lowers convolution to GEMM and sums pairwise, and `faulty`
//! is the reference with injectable defects. `external` talks to an adapter
//! process over the JSON-lines wire protocol.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::GraphModel;
use crate::tensor::Tensor;

pub mod external;
mod interp;
mod kernels;
mod optimized;
pub mod wire;

pub use external::{external_execute, AdapterCommand, AdapterSession};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Build,
    Load,
    Infer,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Build, Stage::Load, Stage::Infer];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Build => "build",
            Stage::Load => "load",
            Stage::Infer => "infer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Crash(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerOutput {
    pub node: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTime {
    pub node: String,
    pub ms: f64,
}

/// One run of one model on one backend.
///
/// Stages after a crashed one are absent, and `layer_outputs` only covers
/// the executed prefix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub backend_id: String,
    pub stage_status: BTreeMap<Stage, StageStatus>,
    pub layer_outputs: Vec<LayerOutput>,
    /// The model's declared outputs; empty unless inference completed.
    pub outputs: Vec<LayerOutput>,
    pub layer_times: Vec<LayerTime>,
    pub total_ms: f64,
    pub peak_mem_bytes: u64,
    pub alloc_failed: bool,
}

impl ExecutionTrace {
    pub fn new(backend_id: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            stage_status: BTreeMap::new(),
            layer_outputs: Vec::new(),
            outputs: Vec::new(),
            layer_times: Vec::new(),
            total_ms: 0.0,
            peak_mem_bytes: 0,
            alloc_failed: false,
        }
    }

    pub(crate) fn mark_ok(&mut self, stage: Stage) {
        self.stage_status.insert(stage, StageStatus::Ok);
    }

    pub(crate) fn mark_crash(&mut self, stage: Stage, signature: impl Into<String>) {
        self.stage_status
            .insert(stage, StageStatus::Crash(signature.into()));
    }

    /// The first crashed stage and its signature.
    pub fn crash(&self) -> Option<(Stage, &str)> {
        Stage::ALL.iter().find_map(|s| match self.stage_status.get(s) {
            Some(StageStatus::Crash(sig)) => Some((*s, sig.as_str())),
            _ => None,
        })
    }

    pub fn crashed(&self) -> bool {
        self.crash().is_some()
    }

    /// All three stages finished.
    pub fn completed(&self) -> bool {
        Stage::ALL
            .iter()
            .all(|s| self.stage_status.get(s) == Some(&StageStatus::Ok))
    }

    pub fn layer(&self, node: &str) -> Option<&Tensor> {
        self.layer_outputs
            .iter()
            .find(|l| l.node == node)
            .map(|l| &l.tensor)
    }

    pub fn layer_time(&self, node: &str) -> Option<f64> {
        self.layer_times.iter().find(|t| t.node == node).map(|t| t.ms)
    }

    pub fn final_non_finite(&self) -> bool {
        self.outputs.iter().any(|o| o.tensor.has_non_finite())
    }

    pub fn any_non_finite(&self) -> bool {
        self.final_non_finite() || self.layer_outputs.iter().any(|o| o.tensor.has_non_finite())
    }

    /// Largest finite-or-infinite magnitude over the final outputs.
    pub fn final_max_abs(&self) -> f32 {
        self.outputs
            .iter()
            .map(|o| o.tensor.max_abs())
            .fold(0.0, f32::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum TimingMode {
    Off,
    /// Deterministic cost model: one nanosecond per multiply-accumulate or
    /// element touched.
    #[default]
    Modeled,
    /// Monotonic wall clock, median of `reps` runs per layer.
    Measured { reps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureOptions {
    pub per_layer: bool,
    pub timing: TimingMode,
}

impl Default for CaptureOptions {
    fn default() -> Self {
        Self {
            per_layer: true,
            timing: TimingMode::Modeled,
        }
    }
}

/// Defects the faulty backend injects.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    /// ReLU6 turns NaN inputs into 6.
    pub relu6_nan_mishandle: bool,
    /// Conv2D emits an all-NaN output once any value exceeds 1e4 in magnitude.
    pub conv_nan_emit: bool,
    /// Pad crashes at inference on inputs of rank above 4.
    pub pad_crash: bool,
    /// Flatten layer time is multiplied by this factor.
    pub flatten_slowdown: Option<f64>,
    /// Flatten fails to allocate on inputs above 1e5 elements.
    pub flatten_alloc_fail: bool,
    /// Mul outputs are scaled by `1 + delta`.
    pub mul_inconsistency: Option<f64>,
}

pub const CONV_NAN_THRESHOLD: f32 = 1e4;
pub const FLATTEN_ALLOC_LIMIT: usize = 100_000;
pub const PAD_MAX_RANK: usize = 4;
pub const DEFAULT_SLOWDOWN: f64 = 1.4586;
pub const DEFAULT_MUL_DELTA: f64 = 1e-3;

impl FaultSpec {
    /// Every fault at its default setting.
    pub fn all() -> Self {
        Self {
            relu6_nan_mishandle: true,
            conv_nan_emit: true,
            pad_crash: true,
            flatten_slowdown: Some(DEFAULT_SLOWDOWN),
            flatten_alloc_fail: true,
            mul_inconsistency: Some(DEFAULT_MUL_DELTA),
        }
    }

    pub fn is_empty(&self) -> bool {
        *self == FaultSpec::default()
    }

    /// Parses names such as `pad-crash` or `flatten-slowdown(1.4586)`.
    pub fn parse_list<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut spec = FaultSpec::default();
        for raw in names {
            let raw = raw.as_ref().trim();
            let (name, arg) = match raw.split_once('(') {
                Some((n, rest)) => {
                    let v = rest
                        .strip_suffix(')')
                        .and_then(|v| v.trim().parse::<f64>().ok())
                        .ok_or_else(|| Error::Config(format!("bad fault argument in `{raw}`")))?;
                    (n.trim(), Some(v))
                }
                None => (raw, None),
            };
            let no_arg = |spec_field: &mut bool| -> Result<()> {
                if arg.is_some() {
                    return Err(Error::Config(format!("fault `{name}` takes no argument")));
                }
                *spec_field = true;
                Ok(())
            };
            match name {
                "relu6-nan-mishandle" => no_arg(&mut spec.relu6_nan_mishandle)?,
                "conv-nan-emit" => no_arg(&mut spec.conv_nan_emit)?,
                "pad-crash" => no_arg(&mut spec.pad_crash)?,
                "flatten-alloc-fail" => no_arg(&mut spec.flatten_alloc_fail)?,
                "flatten-slowdown" => spec.flatten_slowdown = Some(arg.unwrap_or(DEFAULT_SLOWDOWN)),
                "mul-inconsistency" => {
                    spec.mul_inconsistency = Some(arg.unwrap_or(DEFAULT_MUL_DELTA))
                }
                other => return Err(Error::Config(format!("unknown fault `{other}`"))),
            }
        }
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if let Some(f) = self.flatten_slowdown {
            if !(f > 1.0 && f.is_finite()) {
                return Err(Error::Config(format!("flatten-slowdown factor {f} must exceed 1")));
            }
        }
        if let Some(d) = self.mul_inconsistency {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Config(format!("mul-inconsistency delta {d} must be positive")));
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.relu6_nan_mishandle {
            out.push("relu6-nan-mishandle".to_string());
        }
        if self.conv_nan_emit {
            out.push("conv-nan-emit".to_string());
        }
        if self.pad_crash {
            out.push("pad-crash".to_string());
        }
        if let Some(f) = self.flatten_slowdown {
            out.push(format!("flatten-slowdown({f})"));
        }
        if self.flatten_alloc_fail {
            out.push("flatten-alloc-fail".to_string());
        }
        if let Some(d) = self.mul_inconsistency {
            out.push(format!("mul-inconsistency({d})"));
        }
        out
    }
}

/// Which backend to run.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Reference,
    Optimized,
    Faulty(FaultSpec),
    External(AdapterCommand),
}

impl Backend {
    pub fn id(&self) -> String {
        match self {
            Backend::Reference => "reference".into(),
            Backend::Optimized => "optimized".into(),
            Backend::Faulty(_) => "faulty".into(),
            Backend::External(cmd) => format!("external:{}", cmd.label()),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for Backend {
    type Err = Error;

    /// `reference`, `optimized`, `faulty` (all faults at defaults) or
    /// `external:COMMAND`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Backend::Reference),
            "optimized" => Ok(Backend::Optimized),
            "faulty" => Ok(Backend::Faulty(FaultSpec::all())),
            _ => match s.strip_prefix("external:") {
                Some(cmd) => Ok(Backend::External(AdapterCommand::parse(cmd)?)),
                None => Err(Error::Config(format!("unknown backend `{s}`"))),
            },
        }
    }
}

pub fn reference_interpret(
    model: &GraphModel,
    input: &Tensor,
    capture: &CaptureOptions,
) -> ExecutionTrace {
    interp::interpret(
        "reference",
        model,
        input,
        capture,
        &kernels::Reference,
        &FaultSpec::default(),
    )
}

pub fn optimized_interpret(
    model: &GraphModel,
    input: &Tensor,
    capture: &CaptureOptions,
) -> ExecutionTrace {
    interp::interpret(
        "optimized",
        model,
        input,
        capture,
        &optimized::Optimized,
        &FaultSpec::default(),
    )
}

pub fn faulty_interpret(
    model: &GraphModel,
    input: &Tensor,
    faults: &FaultSpec,
    capture: &CaptureOptions,
) -> ExecutionTrace {
    interp::interpret("faulty", model, input, capture, &kernels::Reference, faults)
}

/// Runs `model` on `backend`. Only adapter protocol violations and launch
/// failures are errors; model failures are crash entries in the trace.
pub fn execute(
    backend: &Backend,
    model: &GraphModel,
    input: &Tensor,
    capture: &CaptureOptions,
) -> Result<ExecutionTrace> {
    Ok(match backend {
        Backend::Reference => reference_interpret(model, input, capture),
        Backend::Optimized => optimized_interpret(model, input, capture),
        Backend::Faulty(f) => faulty_interpret(model, input, f, capture),
        Backend::External(cmd) => external_execute(cmd, model, input, capture)?,
    })
}
