//! Structure (LA, LR, LC, LS, ARFm, ARFp), input (SM, DM) and parameter (PM)
//! operators.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::ir::schema::MUTABLE_ATTRIBUTES;
use crate::ir::{infer_shapes, AttrValue, GraphModel, LayerKind, LayerNode, ShapeMap};
use crate::tensor::{element_count, Shape, Tensor};

use super::repair::repair_in_place;
use super::{skeleton, MutationOperator, MutationOutcome, MutationSite, OperatorCode};

/// Axes SM may grow: everything after the channel axis, or the feature axis
/// of a rank-2 tensor.
pub(crate) fn spatial_axes(rank: usize) -> Vec<usize> {
    match rank {
        0 | 1 => Vec::new(),
        2 => vec![1],
        r => (2..r).collect(),
    }
}

fn inapplicable(op: &MutationOperator) -> Error {
    Error::Inapplicable {
        op: op.code.to_string(),
    }
}

fn shape_of(model: &GraphModel, shapes: &ShapeMap, id: &str) -> Shape {
    if id == model.input.name {
        model.input.shape.clone()
    } else {
        shapes[id].clone()
    }
}

pub(super) fn apply<R: Rng + ?Sized>(
    model: &GraphModel,
    op: &MutationOperator,
    site: &MutationSite,
    rng: &mut R,
) -> Result<MutationOutcome> {
    use OperatorCode::*;
    let id = site.node_id.as_str();
    let node = model.node(id).ok_or_else(|| {
        Error::Precondition(format!("site `{id}` is not a node of the model"))
    })?;
    let is_output = model.is_output(id);
    let mut m = model.clone();
    // operators whose effect law forbids adapters
    let mut exact = false;
    match op.code {
        LA => {
            if is_output {
                return Err(inapplicable(op));
            }
            let shapes = infer_shapes(model)?;
            let new = identity_node(&m, id, &shapes[id], rng);
            insert_after(&mut m, id, new);
        }
        LR => remove_node(&mut m, id).ok_or_else(|| inapplicable(op))?,
        ARFm => {
            if !node.kind.is_activation() {
                return Err(inapplicable(op));
            }
            remove_node(&mut m, id).ok_or_else(|| inapplicable(op))?;
            exact = true;
        }
        ARFp => {
            if !node.kind.is_activation() {
                return Err(inapplicable(op));
            }
            let others: Vec<LayerKind> = LayerKind::ACTIVATIONS
                .into_iter()
                .filter(|k| *k != node.kind)
                .collect();
            let kind = others[rng.random_range(0..others.len())];
            m.node_mut(id).expect("site exists").kind = kind;
            exact = true;
        }
        LC => {
            if is_output {
                return Err(inapplicable(op));
            }
            let mut copy = node.clone();
            copy.id = m.fresh_id(&format!("{id}_copy"));
            copy.inputs[0] = id.to_string();
            insert_after(&mut m, id, copy);
        }
        LS => {
            let other = site
                .detail
                .as_deref()
                .ok_or_else(|| Error::Precondition("LS needs a second node as site detail".into()))?;
            if other == id || !model.contains(other) || is_output || model.is_output(other) {
                return Err(inapplicable(op));
            }
            swap_nodes(&mut m, id, other)?;
            exact = true;
        }
        SM | DM => {
            if is_output {
                return Err(inapplicable(op));
            }
            let shapes = infer_shapes(model)?;
            let first = shape_of(model, &shapes, &node.inputs[0]);
            let axis = if op.code == SM {
                let axes = spatial_axes(first.len());
                match &site.detail {
                    Some(d) => {
                        let a: usize = d.parse().map_err(|_| {
                            Error::Precondition(format!("SM axis `{d}` is not an integer"))
                        })?;
                        if !axes.contains(&a) {
                            return Err(inapplicable(op));
                        }
                        a
                    }
                    None if axes.is_empty() => return Err(inapplicable(op)),
                    None => axes[rng.random_range(0..axes.len())],
                }
            } else {
                0
            };
            grow_inputs(&mut m, &shapes, id, op, axis)?;
        }
        PM => {
            parameter_mutation(&mut m, id, site.detail.as_deref(), rng)
                .ok_or_else(|| inapplicable(op))?;
            exact = true;
        }
        WS | NS | GF | NAI | NEB => {
            return Err(Error::Precondition(format!(
                "{} is a weight operator",
                op.code
            )))
        }
    }
    if exact {
        infer_shapes(&m).map_err(|e| Error::RepairFailed {
            node: id.to_string(),
            reason: format!("{} must not need shape repair: {e}", op.code),
        })?;
        return Ok(MutationOutcome {
            model: m,
            repair_log: Vec::new(),
        });
    }
    let repair_log = repair_in_place(&mut m)?;
    Ok(MutationOutcome {
        model: m,
        repair_log,
    })
}

/// Inserts `node` (already reading `site`) right after `site` and moves every
/// other consumer of `site` onto it.
fn insert_after(m: &mut GraphModel, site: &str, node: LayerNode) {
    let new_id = node.id.clone();
    for n in &mut m.nodes {
        for inp in &mut n.inputs {
            if inp == site {
                *inp = new_id.clone();
            }
        }
    }
    for o in &mut m.outputs {
        if o == site {
            *o = new_id.clone();
        }
    }
    let pos = m.position(site).expect("site exists");
    let region = m.region_of(site);
    m.regions.insert(new_id, region);
    m.nodes.insert(pos + 1, node);
}

/// Removes `id`, wiring its consumers to its first input. `None` when the
/// removal would leave the model without nodes or with the graph input as an
/// output.
fn remove_node(m: &mut GraphModel, id: &str) -> Option<()> {
    let pos = m.position(id)?;
    let replacement = m.nodes[pos].inputs[0].clone();
    if m.nodes.len() == 1 || (m.is_output(id) && replacement == m.input.name) {
        return None;
    }
    m.nodes.remove(pos);
    m.regions.remove(id);
    for n in &mut m.nodes {
        for inp in &mut n.inputs {
            if inp == id {
                *inp = replacement.clone();
            }
        }
    }
    let mut outputs = Vec::new();
    for o in m.outputs.drain(..) {
        let o = if o == id { replacement.clone() } else { o };
        if !outputs.contains(&o) {
            outputs.push(o);
        }
    }
    m.outputs = outputs;
    Some(())
}

/// Exchanges the positions of two nodes: each takes over the other's inputs
/// and consumers.
fn swap_nodes(m: &mut GraphModel, a: &str, b: &str) -> Result<()> {
    let (i, j) = (m.position(a).expect("a exists"), m.position(b).expect("b exists"));
    let swap = |s: &String| -> String {
        if s == a {
            b.to_string()
        } else if s == b {
            a.to_string()
        } else {
            s.clone()
        }
    };
    let a_inputs: Vec<String> = m.nodes[i].inputs.iter().map(swap).collect();
    let b_inputs: Vec<String> = m.nodes[j].inputs.iter().map(swap).collect();
    for (k, n) in m.nodes.iter_mut().enumerate() {
        if k != i && k != j {
            n.inputs = n.inputs.iter().map(swap).collect();
        }
    }
    m.nodes[i].inputs = b_inputs;
    m.nodes[j].inputs = a_inputs;
    m.nodes.swap(i, j);
    m.outputs = m.outputs.iter().map(swap).collect();
    m.sort_topologically()
}

/// A node that reproduces its input exactly (or, for BatchNorm, to within
/// float rounding) and keeps its shape.
fn identity_node<R: Rng + ?Sized>(
    m: &GraphModel,
    site: &str,
    shape: &[usize],
    rng: &mut R,
) -> LayerNode {
    let id = m.fresh_id(&format!("{site}_identity"));
    let input = vec![site.to_string()];
    let rank = shape.len();
    let mut options = vec![
        LayerNode::new(&id, LayerKind::Pad, input.clone())
            .with_attr("pads", AttrValue::Ints(vec![0; 2 * rank])),
        LayerNode::new(&id, LayerKind::Reshape, input.clone()).with_attr(
            "shape",
            AttrValue::Ints(shape.iter().map(|&d| d as i64).collect()),
        ),
    ];
    if rank >= 2 {
        let c = shape[1];
        let eps = 1e-5f32;
        options.push(
            LayerNode::new(&id, LayerKind::BatchNorm, input.clone())
                .with_attr("epsilon", AttrValue::Float(eps))
                .with_weights(vec![
                    Tensor::filled(vec![c], 1.0),
                    Tensor::zeros(vec![c]),
                    Tensor::zeros(vec![c]),
                    Tensor::filled(vec![c], 1.0 - eps),
                ]),
        );
    }
    if rank == 4 && shape[1] <= 256 {
        let c = shape[1];
        let mut w = Tensor::zeros(vec![c, c, 1, 1]);
        for k in 0..c {
            w.data[k * c + k] = 1.0;
        }
        options.push(
            LayerNode::new(&id, LayerKind::Conv2D, input.clone())
                .with_attr("filters", AttrValue::Int(c as i64))
                .with_attr("kernel", AttrValue::Int(1))
                .with_attr("stride", AttrValue::Int(1))
                .with_attr("padding", AttrValue::Int(0))
                .with_weights(vec![w, Tensor::zeros(vec![c])]),
        );
    }
    if rank >= 2 && shape[rank - 1] <= 1024 {
        let d = shape[rank - 1];
        let mut w = Tensor::zeros(vec![d, d]);
        for k in 0..d {
            w.data[k * d + k] = 1.0;
        }
        options.push(
            LayerNode::new(&id, LayerKind::Dense, input)
                .with_attr("units", AttrValue::Int(d as i64))
                .with_weights(vec![w, Tensor::zeros(vec![d])]),
        );
    }
    let k = rng.random_range(0..options.len());
    options.swap_remove(k)
}

/// SM/DM: puts a growing chain in front of every distinct input of `site`.
/// SM pads `axis` to `scale` times its extent; DM reshapes in a unit axis
/// after the channels and pads it to `scale`.
fn grow_inputs(
    m: &mut GraphModel,
    shapes: &ShapeMap,
    site: &str,
    op: &MutationOperator,
    axis: usize,
) -> Result<()> {
    let scale = op.scale();
    let mut producers: Vec<String> = Vec::new();
    for p in &m.node(site).expect("site exists").inputs {
        if !producers.contains(p) {
            producers.push(p.clone());
        }
    }
    let region = m.region_of(site);
    for p in producers {
        let s = shape_of(m, shapes, &p);
        let mut chain = Vec::new();
        if op.code == OperatorCode::SM {
            if axis >= s.len() {
                return Err(inapplicable(op));
            }
            let r = s.len();
            let mut pads = vec![0i64; 2 * r];
            pads[r + axis] = (s[axis] * (scale - 1)) as i64;
            let id = m.fresh_id(&format!("{site}_sm_pad"));
            chain.push(
                LayerNode::new(&id, LayerKind::Pad, vec![p.clone()])
                    .with_attr("pads", AttrValue::Ints(pads)),
            );
        } else {
            let at = if s.len() == 2 { 1 } else { 2 };
            let mut grown: Vec<i64> = s.iter().map(|&d| d as i64).collect();
            grown.insert(at, 1);
            let r = grown.len();
            let mut pads = vec![0i64; 2 * r];
            pads[r + at] = scale as i64 - 1;
            let rid = m.fresh_id(&format!("{site}_dm_reshape"));
            let pid = m.fresh_id(&format!("{site}_dm_pad"));
            chain.push(
                LayerNode::new(&rid, LayerKind::Reshape, vec![p.clone()])
                    .with_attr("shape", AttrValue::Ints(grown)),
            );
            chain.push(
                LayerNode::new(&pid, LayerKind::Pad, vec![rid])
                    .with_attr("pads", AttrValue::Ints(pads)),
            );
        }
        let end = chain.last().expect("non-empty chain").id.clone();
        let pos = m.position(site).expect("site exists");
        for inp in &mut m.nodes[pos].inputs {
            if *inp == p {
                *inp = end.clone();
            }
        }
        for (k, n) in chain.into_iter().enumerate() {
            m.regions.insert(n.id.clone(), region);
            m.nodes.insert(pos + k, n);
        }
    }
    Ok(())
}

fn candidates(node: &LayerNode, attr: &str) -> Vec<AttrValue> {
    let current = node.attributes.get(attr);
    let mut out: Vec<AttrValue> = match attr {
        "stride" | "pool" => (1..=3).map(AttrValue::Int).collect(),
        "padding" => (0..=2).map(AttrValue::Int).collect(),
        "units" => {
            let u = node.int_attr("units").unwrap_or(1);
            let mut v = vec![(u / 2).max(1), u + 1, u * 2];
            v.dedup();
            v.into_iter().map(AttrValue::Int).collect()
        }
        "epsilon" => [1e-5f32, 1e-3, 1e-1, 1.0]
            .into_iter()
            .map(AttrValue::Float)
            .collect(),
        _ => Vec::new(),
    };
    out.retain(|v| match (v, current) {
        (AttrValue::Float(a), Some(AttrValue::Float(b))) => a.to_bits() != b.to_bits(),
        (v, Some(c)) => v != c,
        (_, None) => true,
    });
    out
}

/// Resizes a `[rows, cols]` or `[cols]` tensor along its last axis, keeping
/// the overlap and zero-filling new entries. Shape-only tensors stay so.
fn resize_last(t: &Tensor, cols: usize) -> Tensor {
    let old = *t.shape.last().expect("non-scalar weight");
    let mut shape = t.shape.clone();
    *shape.last_mut().unwrap() = cols;
    if t.data.len() != element_count(&t.shape) {
        return Tensor {
            shape,
            data: Vec::new(),
        };
    }
    let rows = t.data.len() / old;
    let mut data = vec![0.0f32; rows * cols];
    for r in 0..rows {
        let n = old.min(cols);
        data[r * cols..r * cols + n].copy_from_slice(&t.data[r * old..r * old + n]);
    }
    Tensor { shape, data }
}

fn variant(node: &LayerNode, attr: &str, value: &AttrValue) -> LayerNode {
    let mut n = node.clone();
    n.attributes.insert(attr.to_string(), value.clone());
    if let ("units", AttrValue::Int(u)) = (attr, value) {
        n.weights = node.weights.iter().map(|w| resize_last(w, *u as usize)).collect();
    }
    n
}

/// PM: rewrites one whitelisted attribute to the first value, in random
/// order, that keeps every downstream shape intact.
fn parameter_mutation<R: Rng + ?Sized>(
    m: &mut GraphModel,
    id: &str,
    detail: Option<&str>,
    rng: &mut R,
) -> Option<()> {
    let pos = m.position(id)?;
    let node = &m.nodes[pos];
    let mut attrs: Vec<&str> = MUTABLE_ATTRIBUTES
        .iter()
        .copied()
        .filter(|a| node.attributes.contains_key(*a))
        .filter(|a| detail.is_none_or(|d| d == *a))
        .collect();
    attrs.shuffle(rng);
    let skel = skeleton(m);
    for attr in attrs {
        let mut values = candidates(&m.nodes[pos], attr);
        values.shuffle(rng);
        for v in values {
            let mut trial = skel.clone();
            trial.nodes[pos] = variant(&skel.nodes[pos], attr, &v);
            if infer_shapes(&trial).is_ok() {
                m.nodes[pos] = variant(&m.nodes[pos], attr, &v);
                return Some(());
            }
        }
    }
    None
}
