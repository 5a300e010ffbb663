//! Weight operators: WS, NS, GF, NAI, NEB. All act on the weights of one
//! node and leave the topology alone.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{MutationOperator, MutationOutcome, MutationSite, OperatorCode};
use crate::ir::GraphModel;

/// `ceil(len * fraction)`, at least one and at most `len`.
pub(crate) fn affected(len: usize, fraction: f64) -> usize {
    ((len as f64 * fraction).ceil() as usize).clamp(1, len.max(1))
}

pub(super) fn apply<R: Rng + ?Sized>(
    model: &GraphModel,
    op: &MutationOperator,
    site: &MutationSite,
    rng: &mut R,
) -> Result<MutationOutcome> {
    let node = model
        .node(&site.node_id)
        .ok_or_else(|| Error::Precondition(format!("no node `{}`", site.node_id)))?;
    if node.weights.is_empty() {
        return Err(Error::Inapplicable {
            op: op.code.to_string(),
        });
    }
    // A named tensor narrows every operator to it. Otherwise WS and NS
    // pick one tensor, while GF, NAI and NEB act on the whole layer.
    let targets: Vec<usize> = match &site.detail {
        Some(d) => {
            let i: usize = d
                .parse()
                .map_err(|_| Error::Precondition(format!("weight index `{d}` is not an integer")))?;
            if i >= node.weights.len() {
                return Err(Error::Precondition(format!(
                    "node `{}` has {} weight tensors, index {i} requested",
                    node.id,
                    node.weights.len()
                )));
            }
            vec![i]
        }
        None if matches!(op.code, OperatorCode::WS | OperatorCode::NS) => {
            vec![rng.random_range(0..node.weights.len())]
        }
        None => (0..node.weights.len()).collect(),
    };

    let mut m = model.clone();
    let weights = &mut m.node_mut(&site.node_id).expect("node exists").weights;
    for index in targets {
        let t = &mut weights[index];
        match op.code {
            OperatorCode::WS => shuffle_subset(t, op.param("block"), rng),
            OperatorCode::NS => swap_blocks(t, op.param("block"), rng),
            OperatorCode::GF => gaussian_fuzz(t, op.param("sigma"), rng),
            OperatorCode::NAI => {
                for i in pick(t.len(), op.param("fraction"), rng) {
                    t.data[i] = -t.data[i];
                }
            }
            OperatorCode::NEB => {
                for i in pick(t.len(), op.param("fraction"), rng) {
                    t.data[i] = 0.0;
                }
            }
            other => {
                return Err(Error::Precondition(format!("{other} is not a weight operator")));
            }
        }
    }
    Ok(MutationOutcome {
        model: m,
        repair_log: Vec::new(),
    })
}

fn pick<R: Rng + ?Sized>(len: usize, fraction: f64, rng: &mut R) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    let mut v = index::sample(rng, len, affected(len, fraction)).into_vec();
    v.sort_unstable();
    v
}

/// Permutes the values found at a random subset of positions.
fn shuffle_subset<R: Rng + ?Sized>(t: &mut Tensor, block: f64, rng: &mut R) {
    let positions = pick(t.len(), block, rng);
    let mut values: Vec<f32> = positions.iter().map(|&i| t.data[i]).collect();
    values.shuffle(rng);
    for (&i, v) in positions.iter().zip(values) {
        t.data[i] = v;
    }
}

/// Swaps two disjoint contiguous blocks that together cover `block` of the
/// tensor.
fn swap_blocks<R: Rng + ?Sized>(t: &mut Tensor, block: f64, rng: &mut R) {
    let len = t.len();
    if len < 2 {
        return;
    }
    let size = ((len as f64 * block / 2.0).floor() as usize).clamp(1, len / 2);
    let a = rng.random_range(0..=len - 2 * size);
    let b = rng.random_range(a + size..=len - size);
    let (head, tail) = t.data.split_at_mut(b);
    head[a..a + size].swap_with_slice(&mut tail[..size]);
}

fn gaussian_fuzz<R: Rng + ?Sized>(t: &mut Tensor, sigma: f64, rng: &mut R) {
    let dist = Normal::new(0.0f64, sigma).expect("sigma checked positive");
    for x in &mut t.data {
        *x = (*x as f64 + dist.sample(rng)) as f32;
    }
}
