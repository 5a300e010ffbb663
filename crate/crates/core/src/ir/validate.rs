use std::collections::HashSet;

use serde::Serialize;

use super::schema::{check_attributes, infer_node};
use super::shape::input_shapes;
use super::{GraphModel, ShapeMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    EmptyGraph,
    DuplicateId,
    InputNameClash,
    UnresolvedInput,
    Acyclicity,
    Arity,
    AttributeSchema,
    ShapeInference,
    NoOutputs,
    UnknownOutput,
    MissingRegion,
    StaleRegion,
    InvalidInputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub node: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    /// True when only region tags are missing or stale.
    pub fn structurally_valid(&self) -> bool {
        self.violations
            .iter()
            .all(|v| matches!(v.kind, ViolationKind::MissingRegion | ViolationKind::StaleRegion))
    }

    fn push(&mut self, kind: ViolationKind, node: Option<&str>, message: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            node: node.map(str::to_string),
            message: message.into(),
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "0 violations");
        }
        for v in &self.violations {
            match &v.node {
                Some(n) => writeln!(f, "{:?} at `{n}`: {}", v.kind, v.message)?,
                None => writeln!(f, "{:?}: {}", v.kind, v.message)?,
            }
        }
        Ok(())
    }
}

/// Checks every model invariant without modifying the model.
pub fn validate_graph(model: &GraphModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    if model.nodes.is_empty() {
        report.push(ViolationKind::EmptyGraph, None, "model has no nodes");
    }
    if model.input.shape.is_empty() || model.input.shape.contains(&0) {
        report.push(
            ViolationKind::InvalidInputSpec,
            None,
            format!("input shape {:?} is not a positive shape", model.input.shape),
        );
    }

    let mut seen = HashSet::new();
    for n in &model.nodes {
        if !seen.insert(n.id.as_str()) {
            report.push(ViolationKind::DuplicateId, Some(&n.id), "duplicate node id");
        }
        if n.id == model.input.name {
            report.push(
                ViolationKind::InputNameClash,
                Some(&n.id),
                "node id equals the graph input name",
            );
        }
    }

    let mut structural_ok = true;
    for n in &model.nodes {
        for inp in &n.inputs {
            if *inp != model.input.name && !seen.contains(inp.as_str()) {
                structural_ok = false;
                report.push(
                    ViolationKind::UnresolvedInput,
                    Some(&n.id),
                    format!("unresolved input `{inp}`"),
                );
            }
        }
        let (lo, hi) = super::schema::arity(n.kind);
        if n.inputs.len() < lo || n.inputs.len() > hi {
            report.push(
                ViolationKind::Arity,
                Some(&n.id),
                format!("{} takes {lo}..={hi} inputs, got {}", n.kind, n.inputs.len()),
            );
        }
        if let Err(e) = check_attributes(n) {
            report.push(ViolationKind::AttributeSchema, Some(&n.id), e);
        }
    }

    let order = match model.topo_order() {
        Ok(o) => Some(o),
        Err(e) => {
            report.push(ViolationKind::Acyclicity, None, e.to_string());
            None
        }
    };

    if let (Some(order), true) = (order, structural_ok) {
        let mut shapes = ShapeMap::new();
        for i in order {
            let n = &model.nodes[i];
            let Ok(inputs) = input_shapes(model, &shapes, &n.inputs) else {
                // a producer failed earlier; that failure is already reported
                continue;
            };
            match infer_node(n, &inputs) {
                Ok(s) => {
                    shapes.insert(n.id.clone(), s);
                }
                Err(e) => report.push(ViolationKind::ShapeInference, Some(&n.id), e),
            }
        }
    }

    if model.outputs.is_empty() {
        report.push(ViolationKind::NoOutputs, None, "model declares no outputs");
    }
    for o in &model.outputs {
        if !seen.contains(o.as_str()) {
            report.push(
                ViolationKind::UnknownOutput,
                Some(o),
                "output id does not name a node",
            );
        }
    }
    for n in &model.nodes {
        if !model.regions.contains_key(&n.id) {
            report.push(ViolationKind::MissingRegion, Some(&n.id), "node has no region tag");
        }
    }
    for id in model.regions.keys() {
        if !seen.contains(id.as_str()) {
            report.push(
                ViolationKind::StaleRegion,
                Some(id),
                "region tag for a node that does not exist",
            );
        }
    }
    report
}
