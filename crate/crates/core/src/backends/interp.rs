//! Stage-by-stage execution shared by the in-process backends.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use super::kernels::{self, Kernels};
use super::{
    CaptureOptions, ExecutionTrace, FaultSpec, LayerOutput, LayerTime, Stage, TimingMode,
    CONV_NAN_THRESHOLD, FLATTEN_ALLOC_LIMIT, PAD_MAX_RANK,
};
use crate::ir::{infer_shapes, GraphModel, LayerKind, LayerNode, ShapeMap};
use crate::tensor::{element_count, Tensor};

const F32_BYTES: u64 = 4;

pub(crate) fn interpret(
    backend_id: &str,
    model: &GraphModel,
    input: &Tensor,
    capture: &CaptureOptions,
    kernels: &dyn Kernels,
    faults: &FaultSpec,
) -> ExecutionTrace {
    let mut trace = ExecutionTrace::new(backend_id);

    // build: the graph must order and type-check
    let (order, shapes) = match build(model) {
        Ok(v) => v,
        Err(sig) => {
            trace.mark_crash(Stage::Build, sig);
            return trace;
        }
    };
    trace.mark_ok(Stage::Build);
    trace.peak_mem_bytes = peak_memory(model, &order, &shapes);

    // load: weight buffers and the input must match their declared shapes
    if let Err(sig) = load(model, input) {
        trace.mark_crash(Stage::Load, sig);
        return trace;
    }
    trace.mark_ok(Stage::Load);

    let result = catch_unwind(AssertUnwindSafe(|| {
        run(model, input, &order, &shapes, capture, kernels, faults, &mut trace)
    }));
    match result {
        Ok(Ok(())) => trace.mark_ok(Stage::Infer),
        Ok(Err(sig)) => trace.mark_crash(Stage::Infer, sig),
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown".into());
            trace.outputs.clear();
            trace.mark_crash(Stage::Infer, format!("panic: {msg}"));
        }
    }
    trace.total_ms = trace.layer_times.iter().map(|t| t.ms).sum();
    trace
}

fn build(model: &GraphModel) -> Result<(Vec<usize>, ShapeMap), String> {
    let order = model.topo_order().map_err(|e| format!("graph: {e}"))?;
    let shapes = infer_shapes(model).map_err(|e| format!("shape: {e}"))?;
    if model.outputs.is_empty() {
        return Err("graph: no outputs".into());
    }
    if let Some(o) = model.outputs.iter().find(|o| !shapes.contains_key(*o)) {
        return Err(format!("graph: unknown output `{o}`"));
    }
    Ok((order, shapes))
}

fn load(model: &GraphModel, input: &Tensor) -> Result<(), String> {
    if input.shape != model.input.shape || input.len() != element_count(&input.shape) {
        return Err(format!(
            "input: expected shape {:?}, got {:?} with {} elements",
            model.input.shape,
            input.shape,
            input.len()
        ));
    }
    for node in &model.nodes {
        for (i, w) in node.weights.iter().enumerate() {
            if w.len() != element_count(&w.shape) {
                return Err(format!(
                    "weights: `{}` tensor {i} holds {} values for shape {:?}",
                    node.id,
                    w.len(),
                    w.shape
                ));
            }
        }
    }
    Ok(())
}

/// Bytes of weights plus the largest live activation set over a
/// topological schedule. A tensor lives from its producer to its last
/// consumer; model outputs live to the end.
pub(crate) fn peak_memory(model: &GraphModel, order: &[usize], shapes: &ShapeMap) -> u64 {
    let weights: u64 = model
        .nodes
        .iter()
        .flat_map(|n| &n.weights)
        .map(|w| element_count(&w.shape) as u64 * F32_BYTES)
        .sum();
    let bytes = |id: &str| -> u64 {
        let shape = if id == model.input.name {
            &model.input.shape
        } else {
            &shapes[id]
        };
        element_count(shape) as u64 * F32_BYTES
    };
    let mut last_use: HashMap<&str, usize> = HashMap::new();
    for (step, &i) in order.iter().enumerate() {
        for inp in &model.nodes[i].inputs {
            last_use.insert(inp.as_str(), step);
        }
    }
    for o in &model.outputs {
        last_use.insert(o.as_str(), order.len());
    }
    let mut live = bytes(&model.input.name);
    let mut peak = live;
    for (step, &i) in order.iter().enumerate() {
        let node = &model.nodes[i];
        live += bytes(&node.id);
        peak = peak.max(live);
        let mut freed: Vec<&str> = node.inputs.iter().map(String::as_str).collect();
        freed.push(node.id.as_str());
        freed.sort_unstable();
        freed.dedup();
        for id in freed {
            if last_use.get(id).copied().unwrap_or(step) <= step {
                live -= bytes(id);
            }
        }
    }
    weights + peak
}

/// Deterministic cost in nanoseconds: one per multiply-accumulate for
/// Conv2D and Dense, one per output element otherwise.
fn modeled_ns(node: &LayerNode, inputs: &[&Tensor], out: &Tensor) -> f64 {
    let n = match node.kind {
        LayerKind::Conv2D => {
            let w = &node.weights[0].shape;
            out.len() * w[1] * w[2] * w[3]
        }
        LayerKind::Dense => out.len() * node.weights[0].shape[0],
        _ => out.len().max(inputs.first().map_or(0, |t| t.len())),
    };
    n as f64
}

#[allow(clippy::too_many_arguments)]
fn run(
    model: &GraphModel,
    input: &Tensor,
    order: &[usize],
    shapes: &ShapeMap,
    capture: &CaptureOptions,
    kernels: &dyn Kernels,
    faults: &FaultSpec,
    trace: &mut ExecutionTrace,
) -> Result<(), String> {
    let mut values: HashMap<&str, Tensor> = HashMap::new();
    for &i in order {
        let node = &model.nodes[i];
        let inputs: Vec<&Tensor> = node
            .inputs
            .iter()
            .map(|id| {
                if *id == model.input.name {
                    input
                } else {
                    &values[id.as_str()]
                }
            })
            .collect();

        if faults.pad_crash && node.kind == LayerKind::Pad && inputs[0].rank() > PAD_MAX_RANK {
            return Err(format!(
                "pad: `{}` received a rank-{} input, at most {PAD_MAX_RANK} supported",
                node.id,
                inputs[0].rank()
            ));
        }
        if faults.flatten_alloc_fail
            && node.kind == LayerKind::Flatten
            && inputs[0].len() > FLATTEN_ALLOC_LIMIT
        {
            trace.alloc_failed = true;
            return Err(format!(
                "flatten: allocation of {} elements failed at `{}`",
                inputs[0].len(),
                node.id
            ));
        }

        let start = Instant::now();
        let mut out = eval(node, &inputs, &shapes[&node.id], kernels, faults);
        let mut ms = match capture.timing {
            TimingMode::Off => None,
            TimingMode::Modeled => Some(modeled_ns(node, &inputs, &out) * 1e-6),
            TimingMode::Measured { reps } => {
                let mut samples = vec![start.elapsed().as_secs_f64() * 1e3];
                for _ in 1..reps.max(1) {
                    let t = Instant::now();
                    out = eval(node, &inputs, &shapes[&node.id], kernels, faults);
                    samples.push(t.elapsed().as_secs_f64() * 1e3);
                }
                samples.sort_by(f64::total_cmp);
                Some(samples[samples.len() / 2])
            }
        };
        if node.kind == LayerKind::Flatten {
            if let (Some(factor), Some(t)) = (faults.flatten_slowdown, ms.as_mut()) {
                *t *= factor;
            }
        }
        if let Some(ms) = ms {
            trace.layer_times.push(LayerTime {
                node: node.id.clone(),
                ms,
            });
        }
        if capture.per_layer {
            trace.layer_outputs.push(LayerOutput {
                node: node.id.clone(),
                tensor: out.clone(),
            });
        }
        values.insert(node.id.as_str(), out);
    }
    trace.outputs = model
        .outputs
        .iter()
        .map(|o| LayerOutput {
            node: o.clone(),
            tensor: values[o.as_str()].clone(),
        })
        .collect();
    Ok(())
}

fn eval(
    node: &LayerNode,
    inputs: &[&Tensor],
    out_shape: &[usize],
    kernels: &dyn Kernels,
    faults: &FaultSpec,
) -> Tensor {
    let x = inputs[0];
    let int = |name: &str| node.int_attr(name).unwrap_or(0) as usize;
    let w = &node.weights;
    match node.kind {
        LayerKind::Conv2D => {
            let mut y = kernels.conv2d(x, &w[0], &w[1], int("stride"), int("padding"));
            if faults.conv_nan_emit && y.data.iter().any(|v| v.abs() > CONV_NAN_THRESHOLD) {
                y.data.fill(f32::NAN);
            }
            y
        }
        LayerKind::Dense => kernels.dense(x, &w[0], &w[1]),
        LayerKind::BatchNorm => kernels.batch_norm(
            x,
            [&w[0], &w[1], &w[2], &w[3]],
            node.float_attr("epsilon").unwrap_or(1e-5),
        ),
        LayerKind::ReLU => kernels::map(x, kernels::relu),
        LayerKind::ReLU6 if faults.relu6_nan_mishandle => {
            kernels::map(x, |v| if v.is_nan() { 6.0 } else { kernels::relu6(v) })
        }
        LayerKind::ReLU6 => kernels::map(x, kernels::relu6),
        LayerKind::Sigmoid => kernels::map(x, kernels::sigmoid),
        LayerKind::Tanh => kernels::map(x, f32::tanh),
        LayerKind::MaxPool => kernels::max_pool(x, int("pool"), int("stride")),
        LayerKind::AvgPool => kernels.avg_pool(x, int("pool"), int("stride")),
        LayerKind::Flatten | LayerKind::Reshape => kernels::reshape(x, &out_shape.to_vec()),
        LayerKind::Pad => kernels::pad(x, node.ints_attr("pads").unwrap_or(&[]), &out_shape.to_vec()),
        LayerKind::Add => kernels::zip_with(x, inputs[1], |a, b| a + b),
        LayerKind::Mul => {
            let scale = 1.0 + faults.mul_inconsistency.unwrap_or(0.0);
            kernels::zip_with(x, inputs[1], |a, b| {
                let p = a * b;
                if scale == 1.0 {
                    p
                } else {
                    (p as f64 * scale) as f32
                }
            })
        }
        LayerKind::Concat => kernels::concat(inputs, int("axis"), &out_shape.to_vec()),
        LayerKind::Softmax => kernels.softmax(x),
    }
}
