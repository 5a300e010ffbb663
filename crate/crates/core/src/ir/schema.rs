//! Per-kind attribute schemas, shape rules and repair targets.

use super::{AttrValue, LayerKind, LayerNode};
use crate::tensor::{element_count, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttrType {
    Int,
    Float,
    Ints,
}

/// Attribute names and types each kind carries. All are required.
pub fn attribute_schema(kind: LayerKind) -> &'static [(&'static str, AttrType)] {
    use AttrType::*;
    match kind {
        LayerKind::Conv2D => &[
            ("filters", Int),
            ("kernel", Int),
            ("padding", Int),
            ("stride", Int),
        ],
        LayerKind::Dense => &[("units", Int)],
        LayerKind::BatchNorm => &[("epsilon", Float)],
        LayerKind::MaxPool | LayerKind::AvgPool => &[("pool", Int), ("stride", Int)],
        LayerKind::Reshape => &[("shape", Ints)],
        LayerKind::Pad => &[("pads", Ints)],
        LayerKind::Concat => &[("axis", Int)],
        _ => &[],
    }
}

pub fn weight_count(kind: LayerKind) -> usize {
    match kind {
        LayerKind::Conv2D | LayerKind::Dense => 2,
        LayerKind::BatchNorm => 4,
        _ => 0,
    }
}

/// `(min, max)` number of inputs.
pub fn arity(kind: LayerKind) -> (usize, usize) {
    match kind {
        LayerKind::Add | LayerKind::Mul => (2, 2),
        LayerKind::Concat => (2, usize::MAX),
        _ => (1, 1),
    }
}

/// Attributes the parameter-mutation operator may rewrite.
pub const MUTABLE_ATTRIBUTES: [&str; 5] = ["stride", "padding", "pool", "units", "epsilon"];

pub fn check_attributes(node: &LayerNode) -> Result<(), String> {
    let schema = attribute_schema(node.kind);
    for (name, ty) in schema {
        match (node.attributes.get(*name), ty) {
            (Some(AttrValue::Int(_)), AttrType::Int)
            | (Some(AttrValue::Float(_)), AttrType::Float)
            | (Some(AttrValue::Ints(_)), AttrType::Ints) => {}
            // integral epsilon values may come back from text formats as ints
            (Some(AttrValue::Int(_)), AttrType::Float) => {}
            (Some(other), _) => {
                return Err(format!("attribute `{name}` has wrong type: {other:?}"));
            }
            (None, _) => return Err(format!("missing attribute `{name}`")),
        }
    }
    if let Some(extra) = node
        .attributes
        .keys()
        .find(|k| !schema.iter().any(|(n, _)| n == k))
    {
        return Err(format!("unexpected attribute `{extra}` for {}", node.kind));
    }
    let positive = |name: &str| -> Result<(), String> {
        match node.int_attr(name) {
            Some(v) if v >= 1 => Ok(()),
            Some(v) => Err(format!("attribute `{name}` must be >= 1, got {v}")),
            None => Ok(()),
        }
    };
    match node.kind {
        LayerKind::Conv2D => {
            positive("filters")?;
            positive("kernel")?;
            positive("stride")?;
            if node.int_attr("padding").unwrap_or(0) < 0 {
                return Err("attribute `padding` must be >= 0".into());
            }
        }
        LayerKind::Dense => positive("units")?,
        LayerKind::MaxPool | LayerKind::AvgPool => {
            positive("pool")?;
            positive("stride")?;
        }
        LayerKind::BatchNorm => {
            let eps = node.float_attr("epsilon").unwrap_or(0.0);
            if eps.is_nan() || eps <= 0.0 {
                return Err(format!("attribute `epsilon` must be > 0, got {eps}"));
            }
        }
        LayerKind::Reshape => {
            let shape = node.ints_attr("shape").unwrap_or(&[]);
            if shape.is_empty() {
                return Err("reshape target is empty".into());
            }
            if shape.iter().filter(|&&d| d == -1).count() > 1 {
                return Err("reshape target has more than one -1".into());
            }
            if shape.iter().any(|&d| d == 0 || d < -1) {
                return Err(format!("reshape target {shape:?} has invalid extents"));
            }
        }
        LayerKind::Pad => {
            let pads = node.ints_attr("pads").unwrap_or(&[]);
            if pads.is_empty() || !pads.len().is_multiple_of(2) {
                return Err(format!("pads {pads:?} must have even, nonzero length"));
            }
        }
        _ => {}
    }
    Ok(())
}

fn want_rank(shape: &Shape, rank: usize) -> Result<(), String> {
    if shape.len() != rank {
        Err(format!("expected rank {rank} input, got {shape:?}"))
    } else {
        Ok(())
    }
}

fn want_weight(node: &LayerNode, index: usize, shape: &[usize]) -> Result<(), String> {
    match node.weights.get(index) {
        Some(w) if w.shape == shape => Ok(()),
        Some(w) => Err(format!(
            "weight {index} has shape {:?}, expected {shape:?}",
            w.shape
        )),
        None => Err(format!("missing weight {index}")),
    }
}

/// Output shape of `node` given its input shapes, checking weights as well.
pub fn infer_node(node: &LayerNode, inputs: &[Shape]) -> Result<Shape, String> {
    check_attributes(node)?;
    let (lo, hi) = arity(node.kind);
    if inputs.len() < lo || inputs.len() > hi {
        return Err(format!(
            "{} takes {lo}..={hi} inputs, got {}",
            node.kind,
            inputs.len()
        ));
    }
    if node.weights.len() != weight_count(node.kind) {
        return Err(format!(
            "{} needs {} weight tensors, got {}",
            node.kind,
            weight_count(node.kind),
            node.weights.len()
        ));
    }
    let x = &inputs[0];
    if x.is_empty() {
        return Err("scalar inputs are not supported".into());
    }
    let int = |name: &str| node.int_attr(name).unwrap_or(0) as usize;
    match node.kind {
        LayerKind::Conv2D => {
            want_rank(x, 4)?;
            let (f, k, s) = (int("filters"), int("kernel"), int("stride"));
            let p = int("padding");
            let c = x[1];
            want_weight(node, 0, &[f, c, k, k])?;
            want_weight(node, 1, &[f])?;
            if x[2] + 2 * p < k || x[3] + 2 * p < k {
                return Err(format!(
                    "spatial extent {:?} too small for kernel {k} with padding {p}",
                    &x[2..]
                ));
            }
            let h = (x[2] + 2 * p - k) / s + 1;
            let w = (x[3] + 2 * p - k) / s + 1;
            Ok(vec![x[0], f, h, w])
        }
        LayerKind::Dense => {
            if x.len() < 2 {
                return Err(format!("Dense needs rank >= 2 input, got {x:?}"));
            }
            let units = int("units");
            let inp = *x.last().unwrap();
            want_weight(node, 0, &[inp, units])?;
            want_weight(node, 1, &[units])?;
            let mut out = x.clone();
            *out.last_mut().unwrap() = units;
            Ok(out)
        }
        LayerKind::BatchNorm => {
            if x.len() < 2 {
                return Err(format!("BatchNorm needs rank >= 2 input, got {x:?}"));
            }
            for i in 0..4 {
                want_weight(node, i, &[x[1]])?;
            }
            Ok(x.clone())
        }
        LayerKind::MaxPool | LayerKind::AvgPool => {
            want_rank(x, 4)?;
            let (k, s) = (int("pool"), int("stride"));
            if x[2] < k || x[3] < k {
                return Err(format!("spatial extent {:?} smaller than pool {k}", &x[2..]));
            }
            Ok(vec![x[0], x[1], (x[2] - k) / s + 1, (x[3] - k) / s + 1])
        }
        LayerKind::Flatten => {
            if x.len() < 2 {
                return Err(format!("Flatten needs rank >= 2 input, got {x:?}"));
            }
            Ok(vec![x[0], element_count(&x[1..])])
        }
        LayerKind::Reshape => {
            let target = node.ints_attr("shape").unwrap_or(&[]);
            resolve_reshape(target, element_count(x))
                .ok_or_else(|| format!("cannot reshape {x:?} into {target:?}"))
        }
        LayerKind::Pad => {
            let pads = node.ints_attr("pads").unwrap_or(&[]);
            if pads.len() != 2 * x.len() {
                return Err(format!("pads {pads:?} do not match rank of {x:?}"));
            }
            let r = x.len();
            let mut out = Vec::with_capacity(r);
            for (i, &d) in x.iter().enumerate() {
                let v = d as i64 + pads[i] + pads[r + i];
                if v < 1 {
                    return Err(format!("padding {pads:?} empties axis {i} of {x:?}"));
                }
                out.push(v as usize);
            }
            Ok(out)
        }
        LayerKind::Add | LayerKind::Mul => {
            if inputs[1] != *x {
                return Err(format!("operand shapes differ: {x:?} vs {:?}", inputs[1]));
            }
            Ok(x.clone())
        }
        LayerKind::Concat => {
            let axis = node.int_attr("axis").unwrap_or(0);
            if axis < 0 || axis as usize >= x.len() {
                return Err(format!("concat axis {axis} out of range for {x:?}"));
            }
            let axis = axis as usize;
            let mut out = x.clone();
            for other in &inputs[1..] {
                let compatible = other.len() == x.len()
                    && other
                        .iter()
                        .zip(x)
                        .enumerate()
                        .all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(format!("cannot concat {x:?} with {other:?} on axis {axis}"));
                }
                out[axis] += other[axis];
            }
            Ok(out)
        }
        LayerKind::ReLU
        | LayerKind::ReLU6
        | LayerKind::Sigmoid
        | LayerKind::Tanh
        | LayerKind::Softmax => Ok(x.clone()),
    }
}

/// Resolves a reshape target (with at most one `-1`) against an element count.
pub fn resolve_reshape(target: &[i64], count: usize) -> Option<Shape> {
    let known: i64 = target.iter().filter(|&&d| d > 0).product();
    if known <= 0 {
        return None;
    }
    let holes = target.iter().filter(|&&d| d == -1).count();
    match holes {
        0 if known as usize == count => Some(target.iter().map(|&d| d as usize).collect()),
        1 if count.is_multiple_of(known as usize) => {
            let fill = count / known as usize;
            Some(
                target
                    .iter()
                    .map(|&d| if d == -1 { fill } else { d as usize })
                    .collect(),
            )
        }
        _ => None,
    }
}

/// A single shape adapter inserted on an edge by shape repair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Adapter {
    /// ONNX-style `[begins..., ends...]`; negative values crop.
    Pad(Vec<i64>),
    Reshape(Shape),
}

impl Adapter {
    pub fn kind(&self) -> LayerKind {
        match self {
            Adapter::Pad(_) => LayerKind::Pad,
            Adapter::Reshape(_) => LayerKind::Reshape,
        }
    }
}

/// One adapter turning `from` into `to`: reshape when element counts agree,
/// otherwise an end-side pad or crop when ranks agree.
pub fn adapter_between(from: &[usize], to: &[usize]) -> Option<Adapter> {
    if from == to {
        return None;
    }
    if element_count(from) == element_count(to) {
        return Some(Adapter::Reshape(to.to_vec()));
    }
    if from.len() == to.len() {
        let r = from.len();
        let mut pads = vec![0i64; 2 * r];
        for i in 0..r {
            pads[r + i] = to[i] as i64 - from[i] as i64;
        }
        return Some(Adapter::Pad(pads));
    }
    None
}

pub enum Fit {
    /// One entry per input; `None` leaves the edge untouched.
    Adapt(Vec<Option<Adapter>>),
    Impossible(String),
}

/// Target shapes that would make `node` accept its inputs.
pub fn fit_inputs(node: &LayerNode, inputs: &[Shape]) -> Fit {
    let targets = match target_shapes(node, inputs) {
        Ok(t) => t,
        Err(reason) => return Fit::Impossible(reason),
    };
    let mut adapters = Vec::with_capacity(inputs.len());
    for (fed, want) in inputs.iter().zip(&targets) {
        if fed == want {
            adapters.push(None);
            continue;
        }
        match adapter_between(fed, want) {
            Some(a) => adapters.push(Some(a)),
            None => {
                return Fit::Impossible(format!(
                    "no single Pad or Reshape maps {fed:?} to {want:?}"
                ))
            }
        }
    }
    Fit::Adapt(adapters)
}

fn target_shapes(node: &LayerNode, inputs: &[Shape]) -> Result<Vec<Shape>, String> {
    let int = |name: &str| node.int_attr(name).unwrap_or(0).max(0) as usize;
    let x = inputs.first().ok_or("node has no inputs")?;
    let n = x.first().copied().unwrap_or(1);
    let count = element_count(x);
    let single = |s: Shape| Ok(vec![s]);
    match node.kind {
        LayerKind::Conv2D => {
            let c = node.weights.first().map(|w| w.shape[1]).unwrap_or(x[1]);
            let k = int("kernel");
            let min_spatial = k.saturating_sub(2 * int("padding")).max(1);
            let target = if x.len() == 4 {
                vec![n, c, x[2].max(min_spatial), x[3].max(min_spatial)]
            } else {
                fold_to_rank4(x, c).ok_or_else(|| format!("cannot fold {x:?} into {c} channels"))?
            };
            if target[2] < min_spatial || target[3] < min_spatial {
                return Err(format!("folded shape {target:?} too small for kernel {k}"));
            }
            single(target)
        }
        LayerKind::Dense => {
            let want = node.weights.first().map(|w| w.shape[0]).unwrap_or(0);
            if x.len() != 2 && count == n * want {
                single(vec![n, want])
            } else if x.len() >= 2 {
                let mut t = x.clone();
                *t.last_mut().unwrap() = want;
                single(t)
            } else {
                Err(format!("Dense cannot consume {x:?}"))
            }
        }
        LayerKind::BatchNorm => {
            let c = node.weights.first().map(|w| w.shape[0]).unwrap_or(0);
            if x.len() < 2 {
                return Err(format!("BatchNorm cannot consume {x:?}"));
            }
            let mut t = x.clone();
            t[1] = c;
            single(t)
        }
        LayerKind::MaxPool | LayerKind::AvgPool => {
            let k = int("pool");
            let mut target = if x.len() == 4 {
                x.clone()
            } else if x.len() >= 3 {
                fold_to_rank4(x, x[1]).ok_or_else(|| format!("cannot fold {x:?} to rank 4"))?
            } else {
                return Err(format!("pooling cannot consume {x:?}"));
            };
            if x.len() == 4 {
                target[2] = target[2].max(k);
                target[3] = target[3].max(k);
            } else if target[2] < k || target[3] < k {
                return Err(format!("folded shape {target:?} smaller than pool {k}"));
            }
            single(target)
        }
        LayerKind::Flatten => {
            if x.len() < 2 {
                Err(format!("Flatten cannot consume {x:?}"))
            } else {
                single(x.clone())
            }
        }
        LayerKind::Reshape => {
            let target = node.ints_attr("shape").unwrap_or(&[]);
            if target.contains(&-1) {
                return Err(format!("cannot adapt {x:?} for open reshape {target:?}"));
            }
            let want: usize = target.iter().map(|&d| d.max(0) as usize).product();
            let last = *x.last().unwrap();
            let rest = count / last;
            if want.is_multiple_of(rest) {
                let mut t = x.clone();
                *t.last_mut().unwrap() = want / rest;
                single(t)
            } else {
                Err(format!("no last-axis pad turns {x:?} into {want} elements"))
            }
        }
        LayerKind::Pad => {
            let pads = node.ints_attr("pads").unwrap_or(&[]);
            if pads.len() != 2 * x.len() {
                return Err(format!("pads {pads:?} do not match rank of {x:?}"));
            }
            let r = x.len();
            let t = x
                .iter()
                .enumerate()
                .map(|(i, &d)| (d as i64).max(1 - pads[i] - pads[r + i]) as usize)
                .collect();
            single(t)
        }
        LayerKind::Add | LayerKind::Mul | LayerKind::Concat => {
            let axis = if node.kind == LayerKind::Concat {
                Some(node.int_attr("axis").unwrap_or(0).max(0) as usize)
            } else {
                None
            };
            let same_rank = inputs.iter().all(|s| s.len() == x.len());
            if same_rank {
                let mut max = x.clone();
                for s in inputs {
                    for (m, &d) in max.iter_mut().zip(s) {
                        *m = (*m).max(d);
                    }
                }
                Ok(inputs
                    .iter()
                    .map(|s| {
                        let mut t = max.clone();
                        if let Some(a) = axis {
                            if a < t.len() {
                                t[a] = s[a];
                            }
                        }
                        t
                    })
                    .collect())
            } else if axis.is_none() {
                Ok(inputs.iter().map(|_| x.clone()).collect())
            } else {
                Err("concat operands differ in rank".into())
            }
        }
        LayerKind::ReLU
        | LayerKind::ReLU6
        | LayerKind::Sigmoid
        | LayerKind::Tanh
        | LayerKind::Softmax => single(x.clone()),
    }
}

/// `[N, channels, rest / last, last]`, the fold used to bring higher or lower
/// rank tensors back to NCHW.
fn fold_to_rank4(x: &[usize], channels: usize) -> Option<Shape> {
    let n = *x.first()?;
    let count = element_count(x);
    if channels == 0 || !count.is_multiple_of(n * channels) {
        return None;
    }
    let rest = count / (n * channels);
    let last = if x.len() >= 3 { *x.last()? } else { 1 };
    if rest.is_multiple_of(last) {
        Some(vec![n, channels, rest / last, last])
    } else {
        Some(vec![n, channels, rest, 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn conv(filters: usize, c: usize, k: usize, pad: i64) -> LayerNode {
        LayerNode::new("c", LayerKind::Conv2D, vec!["x".into()])
            .with_attr("filters", AttrValue::Int(filters as i64))
            .with_attr("kernel", AttrValue::Int(k as i64))
            .with_attr("stride", AttrValue::Int(1))
            .with_attr("padding", AttrValue::Int(pad))
            .with_weights(vec![
                Tensor::zeros(vec![filters, c, k, k]),
                Tensor::zeros(vec![filters]),
            ])
    }

    #[test]
    fn conv_same_padding_keeps_spatial_extent() {
        let out = infer_node(&conv(4, 3, 3, 1), &[vec![1, 3, 8, 8]]).unwrap();
        assert_eq!(out, vec![1, 4, 8, 8]);
    }

    #[test]
    fn flatten_multiplies_trailing_dims() {
        let f = LayerNode::new("f", LayerKind::Flatten, vec!["x".into()]);
        assert_eq!(infer_node(&f, &[vec![1, 4, 8, 8]]).unwrap(), vec![1, 256]);
    }

    #[test]
    fn add_rejects_mismatched_operands() {
        let a = LayerNode::new("a", LayerKind::Add, vec!["x".into(), "y".into()]);
        assert!(infer_node(&a, &[vec![1, 4, 8, 8], vec![1, 4, 4, 4]]).is_err());
    }

    #[test]
    fn unknown_attribute_is_rejected() {
        let r = LayerNode::new("r", LayerKind::ReLU, vec!["x".into()])
            .with_attr("alpha", AttrValue::Float(0.1));
        assert!(check_attributes(&r).is_err());
    }

    #[test]
    fn reshape_with_hole() {
        assert_eq!(resolve_reshape(&[1, -1], 12), Some(vec![1, 12]));
        assert_eq!(resolve_reshape(&[5, -1], 12), None);
        assert_eq!(resolve_reshape(&[3, 4], 12), Some(vec![3, 4]));
    }

    #[test]
    fn adapters_prefer_reshape_on_equal_counts() {
        assert_eq!(
            adapter_between(&[1, 4, 8, 8], &[1, 256]),
            Some(Adapter::Reshape(vec![1, 256]))
        );
        assert_eq!(
            adapter_between(&[1, 4, 6, 6], &[1, 4, 8, 8]),
            Some(Adapter::Pad(vec![0, 0, 0, 0, 0, 0, 2, 2]))
        );
        assert_eq!(adapter_between(&[1, 4, 6], &[1, 4, 8, 8]), None);
    }

    #[test]
    fn conv_folds_rank5_input() {
        let c = conv(4, 3, 3, 1);
        match fit_inputs(&c, &[vec![1, 3, 2, 8, 8]]) {
            Fit::Adapt(a) => assert_eq!(a[0], Some(Adapter::Reshape(vec![1, 3, 16, 8]))),
            Fit::Impossible(r) => panic!("{r}"),
        }
    }
}
