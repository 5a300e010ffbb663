//! Computation-graph IR: layer nodes, schemas, shape inference, validation,
//! region tagging, seed generators and the native/ONNX file formats.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub mod native;
pub mod onnx;
pub mod region;
pub mod schema;
pub mod seeds;
pub mod shape;
pub mod validate;

pub use region::{tag_regions, RegionPolicy};
pub use seeds::{generate_seed, SeedKind};
pub use shape::{infer_shapes, ShapeMap};
pub use validate::{validate_graph, ValidationReport, Violation, ViolationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2D,
    Dense,
    ReLU,
    ReLU6,
    Sigmoid,
    Tanh,
    BatchNorm,
    MaxPool,
    AvgPool,
    Flatten,
    Reshape,
    Pad,
    Add,
    Mul,
    Concat,
    Softmax,
}

impl LayerKind {
    pub const ALL: [LayerKind; 16] = [
        LayerKind::Conv2D,
        LayerKind::Dense,
        LayerKind::ReLU,
        LayerKind::ReLU6,
        LayerKind::Sigmoid,
        LayerKind::Tanh,
        LayerKind::BatchNorm,
        LayerKind::MaxPool,
        LayerKind::AvgPool,
        LayerKind::Flatten,
        LayerKind::Reshape,
        LayerKind::Pad,
        LayerKind::Add,
        LayerKind::Mul,
        LayerKind::Concat,
        LayerKind::Softmax,
    ];

    pub const ACTIVATIONS: [LayerKind; 5] = [
        LayerKind::ReLU,
        LayerKind::ReLU6,
        LayerKind::Sigmoid,
        LayerKind::Tanh,
        LayerKind::Softmax,
    ];

    pub fn is_activation(self) -> bool {
        Self::ACTIVATIONS.contains(&self)
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2D => "Conv2D",
            LayerKind::Dense => "Dense",
            LayerKind::ReLU => "ReLU",
            LayerKind::ReLU6 => "ReLU6",
            LayerKind::Sigmoid => "Sigmoid",
            LayerKind::Tanh => "Tanh",
            LayerKind::BatchNorm => "BatchNorm",
            LayerKind::MaxPool => "MaxPool",
            LayerKind::AvgPool => "AvgPool",
            LayerKind::Flatten => "Flatten",
            LayerKind::Reshape => "Reshape",
            LayerKind::Pad => "Pad",
            LayerKind::Add => "Add",
            LayerKind::Mul => "Mul",
            LayerKind::Concat => "Concat",
            LayerKind::Softmax => "Softmax",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Float(f32),
    Ints(Vec<i64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionTag {
    Backbone,
    TaskHead,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerNode {
    pub id: String,
    pub kind: LayerKind,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttrValue>,
    #[serde(default)]
    pub weights: Vec<Tensor>,
    pub inputs: Vec<String>,
}

impl LayerNode {
    pub fn new(id: impl Into<String>, kind: LayerKind, inputs: Vec<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            attributes: BTreeMap::new(),
            weights: Vec::new(),
            inputs,
        }
    }

    pub fn with_attr(mut self, name: &str, value: AttrValue) -> Self {
        self.attributes.insert(name.to_string(), value);
        self
    }

    pub fn with_weights(mut self, weights: Vec<Tensor>) -> Self {
        self.weights = weights;
        self
    }

    pub fn int_attr(&self, name: &str) -> Option<i64> {
        match self.attributes.get(name) {
            Some(AttrValue::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn float_attr(&self, name: &str) -> Option<f32> {
        match self.attributes.get(name) {
            Some(AttrValue::Float(v)) => Some(*v),
            Some(AttrValue::Int(v)) => Some(*v as f32),
            _ => None,
        }
    }

    pub fn ints_attr(&self, name: &str) -> Option<&[i64]> {
        match self.attributes.get(name) {
            Some(AttrValue::Ints(v)) => Some(v),
            _ => None,
        }
    }

    /// Structural and numeric equality, comparing weights bit for bit.
    pub fn bit_eq(&self, other: &LayerNode) -> bool {
        self.id == other.id
            && self.kind == other.kind
            && self.inputs == other.inputs
            && attrs_bit_eq(&self.attributes, &other.attributes)
            && self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.bit_eq(b))
    }
}

fn attrs_bit_eq(a: &BTreeMap<String, AttrValue>, b: &BTreeMap<String, AttrValue>) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|((ka, va), (kb, vb))| {
            ka == kb
                && match (va, vb) {
                    (AttrValue::Float(x), AttrValue::Float(y)) => x.to_bits() == y.to_bits(),
                    (x, y) => x == y,
                }
        })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub name: String,
    pub shape: Shape,
}

/// A DAG of layers fed by one named input tensor.
///
/// `nodes` is kept in a topological order; every mutation preserves it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphModel {
    pub name: String,
    pub input: InputSpec,
    pub nodes: Vec<LayerNode>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub regions: BTreeMap<String, RegionTag>,
}

impl GraphModel {
    pub fn new(name: impl Into<String>, input: InputSpec) -> Self {
        Self {
            name: name.into(),
            input,
            nodes: Vec::new(),
            outputs: Vec::new(),
            regions: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut LayerNode> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.position(id).is_some()
    }

    pub fn is_output(&self, id: &str) -> bool {
        self.outputs.iter().any(|o| o == id)
    }

    pub fn region_of(&self, id: &str) -> RegionTag {
        self.regions.get(id).copied().unwrap_or(RegionTag::Backbone)
    }

    /// Ids of nodes that read `id`, in node order.
    pub fn consumers(&self, id: &str) -> Vec<String> {
        self.nodes
            .iter()
            .filter(|n| n.inputs.iter().any(|i| i == id))
            .map(|n| n.id.clone())
            .collect()
    }

    /// Returns `base` if unused, otherwise `base_2`, `base_3`, ...
    pub fn fresh_id(&self, base: &str) -> String {
        if !self.contains(base) && base != self.input.name {
            return base.to_string();
        }
        (2..)
            .map(|k| format!("{base}_{k}"))
            .find(|c| !self.contains(c) && *c != self.input.name)
            .expect("unbounded id search")
    }

    /// Kahn ordering with ties broken by storage position.
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let index: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let mut indegree = vec![0usize; self.nodes.len()];
        let mut users: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for inp in &n.inputs {
                if let Some(&p) = index.get(inp.as_str()) {
                    indegree[i] += 1;
                    users[p].push(i);
                }
            }
        }
        let mut ready: std::collections::BTreeSet<usize> =
            (0..self.nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(&i) = ready.iter().next() {
            ready.remove(&i);
            order.push(i);
            for &u in &users[i] {
                indegree[u] -= 1;
                if indegree[u] == 0 {
                    ready.insert(u);
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck: Vec<&str> = (0..self.nodes.len())
                .filter(|i| !order.contains(i))
                .map(|i| self.nodes[i].id.as_str())
                .collect();
            return Err(Error::InvalidGraph(format!(
                "graph contains a cycle through {stuck:?}"
            )));
        }
        Ok(order)
    }

    /// Reorders `nodes` into topological order (stable for already-sorted graphs).
    pub fn sort_topologically(&mut self) -> Result<()> {
        let order = self.topo_order()?;
        let mut old: Vec<Option<LayerNode>> = self.nodes.drain(..).map(Some).collect();
        self.nodes = order
            .into_iter()
            .map(|i| old[i].take().expect("each index once"))
            .collect();
        Ok(())
    }

    /// Bit-exact equality on everything serialized.
    pub fn bit_eq(&self, other: &GraphModel) -> bool {
        self.name == other.name
            && self.input == other.input
            && self.outputs == other.outputs
            && self.regions == other.regions
            && self.nodes.len() == other.nodes.len()
            && self.nodes.iter().zip(&other.nodes).all(|(a, b)| a.bit_eq(b))
    }

    /// Longest path length counted in layers.
    pub fn depth(&self) -> usize {
        let Ok(order) = self.topo_order() else {
            return self.nodes.len();
        };
        let mut depth: HashMap<&str, usize> = HashMap::new();
        let mut best = 0;
        for i in order {
            let n = &self.nodes[i];
            let d = 1 + n
                .inputs
                .iter()
                .filter_map(|p| depth.get(p.as_str()).copied())
                .max()
                .unwrap_or(0);
            best = best.max(d);
            depth.insert(n.id.as_str(), d);
        }
        best
    }

    pub fn weight_node_ids(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter(|n| !n.weights.is_empty())
            .map(|n| n.id.clone())
            .collect()
    }
}
