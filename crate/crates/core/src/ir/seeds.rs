//! Built-in desk-scale seed models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::region::{tag_regions, RegionPolicy};
use super::{AttrValue, GraphModel, InputSpec, LayerKind, LayerNode};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedKind {
    TinyCnn,
    TinyMlp,
    TinyResblock,
}

impl SeedKind {
    pub const ALL: [SeedKind; 3] = [SeedKind::TinyCnn, SeedKind::TinyMlp, SeedKind::TinyResblock];

    pub fn name(self) -> &'static str {
        match self {
            SeedKind::TinyCnn => "tiny-cnn",
            SeedKind::TinyMlp => "tiny-mlp",
            SeedKind::TinyResblock => "tiny-resblock",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// Builds a valid, region-tagged seed whose weights come from `rng_seed`.
pub fn generate_seed(kind: SeedKind, rng_seed: u64) -> GraphModel {
    let mut b = Builder::new(kind, rng_seed);
    match kind {
        SeedKind::TinyCnn => {
            // the 1x1 widening keeps the flattened activation just under 1e5
            // elements, so one spatial doubling pushes it past that
            let x = b.conv("conv1", "input", 3, 16, 3, 1);
            let x = b.batch_norm("bn1", &x, 16);
            let x = b.unary("relu6_1", LayerKind::ReLU6, &x);
            let x = b.conv("conv2", &x, 16, 16, 3, 1);
            let x = b.batch_norm("bn2", &x, 16);
            let x = b.unary("relu6_2", LayerKind::ReLU6, &x);
            let x = b.conv("conv3", &x, 16, 64, 1, 0);
            let x = b.unary("relu3", LayerKind::ReLU, &x);
            let x = b.unary("flatten", LayerKind::Flatten, &x);
            let x = b.dense("dense1", &x, 64 * 32 * 32, 16);
            let x = b.unary("tanh1", LayerKind::Tanh, &x);
            let x = b.dense("dense2", &x, 16, 10);
            let x = b.unary("softmax", LayerKind::Softmax, &x);
            b.finish(vec![1, 3, 32, 32], x)
        }
        SeedKind::TinyMlp => {
            let x = b.dense("dense1", "input", 16, 32);
            let x = b.unary("relu1", LayerKind::ReLU, &x);
            let x = b.dense("dense2", &x, 32, 32);
            let x = b.unary("sigmoid1", LayerKind::Sigmoid, &x);
            let x = b.dense("dense3", &x, 32, 16);
            let x = b.unary("tanh1", LayerKind::Tanh, &x);
            let x = b.dense("dense4", &x, 16, 8);
            let x = b.unary("relu6_1", LayerKind::ReLU6, &x);
            let x = b.dense("dense5", &x, 8, 4);
            let x = b.unary("softmax", LayerKind::Softmax, &x);
            b.finish(vec![1, 16], x)
        }
        SeedKind::TinyResblock => {
            let stem = b.conv("stem", "input", 3, 16, 3, 1);
            let stem = b.batch_norm("stem_bn", &stem, 16);
            let stem = b.unary("stem_relu", LayerKind::ReLU6, &stem);
            let y = b.conv("res_conv1", &stem, 16, 16, 3, 1);
            let y = b.batch_norm("res_bn", &y, 16);
            let y = b.unary("res_relu", LayerKind::ReLU6, &y);
            let y = b.conv("res_conv2", &y, 16, 16, 3, 1);
            let x = b.binary("res_add", LayerKind::Add, &stem, &y);
            let x = b.unary("add_relu", LayerKind::ReLU, &x);
            let g = b.conv("gate_conv", &x, 16, 16, 1, 0);
            let g = b.unary("gate_sigmoid", LayerKind::Sigmoid, &g);
            let x = b.binary("gate_mul", LayerKind::Mul, &x, &g);
            let x = b.pool("pool", LayerKind::AvgPool, &x, 2, 2);
            let x = b.unary("flatten", LayerKind::Flatten, &x);
            let x = b.dense("dense", &x, 16 * 8 * 8, 10);
            let x = b.unary("softmax", LayerKind::Softmax, &x);
            b.finish(vec![1, 3, 16, 16], x)
        }
    }
}

struct Builder {
    kind: SeedKind,
    rng: ChaCha8Rng,
    nodes: Vec<LayerNode>,
}

impl Builder {
    fn new(kind: SeedKind, seed: u64) -> Self {
        Self {
            kind,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: Vec::new(),
        }
    }

    fn normal(&mut self, shape: Shape, std: f32) -> Tensor {
        let dist = Normal::new(0.0f32, std).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor { shape, data }
    }

    fn uniform(&mut self, shape: Shape, lo: f32, hi: f32) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(lo..hi)).collect();
        Tensor { shape, data }
    }

    fn push(&mut self, node: LayerNode) -> String {
        let id = node.id.clone();
        self.nodes.push(node);
        id
    }

    fn conv(&mut self, id: &str, x: &str, c: usize, f: usize, k: usize, pad: i64) -> String {
        let std = (2.0 / (c * k * k) as f32).sqrt();
        let w = self.normal(vec![f, c, k, k], std);
        let b = self.normal(vec![f], 0.05);
        self.push(
            LayerNode::new(id, LayerKind::Conv2D, vec![x.into()])
                .with_attr("filters", AttrValue::Int(f as i64))
                .with_attr("kernel", AttrValue::Int(k as i64))
                .with_attr("stride", AttrValue::Int(1))
                .with_attr("padding", AttrValue::Int(pad))
                .with_weights(vec![w, b]),
        )
    }

    fn dense(&mut self, id: &str, x: &str, inp: usize, units: usize) -> String {
        let std = (2.0 / inp as f32).sqrt();
        let w = self.normal(vec![inp, units], std);
        let b = self.normal(vec![units], 0.05);
        self.push(
            LayerNode::new(id, LayerKind::Dense, vec![x.into()])
                .with_attr("units", AttrValue::Int(units as i64))
                .with_weights(vec![w, b]),
        )
    }

    fn batch_norm(&mut self, id: &str, x: &str, c: usize) -> String {
        let scale = self.uniform(vec![c], 0.8, 1.2);
        let bias = self.normal(vec![c], 0.1);
        let mean = self.normal(vec![c], 0.1);
        // running variances spread over three decades, as in trained models
        // with a few nearly dead channels
        let log_var = self.uniform(vec![c], (1e-3f32).ln(), (1.5f32).ln());
        let var = Tensor {
            shape: log_var.shape,
            data: log_var.data.into_iter().map(f32::exp).collect(),
        };
        self.push(
            LayerNode::new(id, LayerKind::BatchNorm, vec![x.into()])
                .with_attr("epsilon", AttrValue::Float(1e-5))
                .with_weights(vec![scale, bias, mean, var]),
        )
    }

    fn pool(&mut self, id: &str, kind: LayerKind, x: &str, k: i64, s: i64) -> String {
        self.push(
            LayerNode::new(id, kind, vec![x.into()])
                .with_attr("pool", AttrValue::Int(k))
                .with_attr("stride", AttrValue::Int(s)),
        )
    }

    fn unary(&mut self, id: &str, kind: LayerKind, x: &str) -> String {
        self.push(LayerNode::new(id, kind, vec![x.into()]))
    }

    fn binary(&mut self, id: &str, kind: LayerKind, a: &str, b: &str) -> String {
        self.push(LayerNode::new(id, kind, vec![a.into(), b.into()]))
    }

    fn finish(self, input_shape: Shape, output: String) -> GraphModel {
        let mut m = GraphModel::new(
            self.kind.name(),
            InputSpec {
                name: "input".into(),
                shape: input_shape,
            },
        );
        m.nodes = self.nodes;
        m.outputs = vec![output];
        tag_regions(&m, &RegionPolicy::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::native::to_native;
    use crate::ir::validate::validate_graph;

    #[test]
    fn seeds_are_valid_and_sized() {
        for kind in SeedKind::ALL {
            let m = generate_seed(kind, 3);
            let report = validate_graph(&m);
            assert!(report.is_valid(), "{}: {report}", kind.name());
            assert!((8..=20).contains(&m.len()), "{} has {} nodes", kind.name(), m.len());
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        for kind in SeedKind::ALL {
            let a = to_native(&generate_seed(kind, 11));
            let b = to_native(&generate_seed(kind, 11));
            assert_eq!(a, b);
            let c = to_native(&generate_seed(kind, 12));
            assert_ne!(a, c);
        }
    }

    #[test]
    fn resblock_has_a_real_join() {
        let m = generate_seed(SeedKind::TinyResblock, 0);
        let add = m
            .nodes
            .iter()
            .find(|n| n.kind == LayerKind::Add)
            .expect("an Add node");
        assert_eq!(add.inputs.len(), 2);
        assert_ne!(add.inputs[0], add.inputs[1]);
    }
}
