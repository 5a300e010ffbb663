use crate::error::{Error, Result};
use crate::ir::schema::{fit_inputs, infer_node, Adapter, Fit};
use crate::ir::shape::input_shapes;
use crate::ir::{AttrValue, GraphModel, LayerKind, LayerNode, ShapeMap};

use super::{MutationOutcome, RepairEntry};

/// Inserts Pad/Reshape adapters on every edge whose shape a consumer rejects,
/// walking nodes in topological order. Valid models come back unchanged.
pub fn repair_shapes(model: &GraphModel) -> Result<MutationOutcome> {
    let mut m = model.clone();
    let repair_log = repair_in_place(&mut m)?;
    Ok(MutationOutcome { model: m, repair_log })
}

pub(super) fn adapter_node(id: &str, producer: &str, adapter: &Adapter) -> LayerNode {
    let node = LayerNode::new(id, adapter.kind(), vec![producer.to_string()]);
    match adapter {
        Adapter::Pad(pads) => node.with_attr("pads", AttrValue::Ints(pads.clone())),
        Adapter::Reshape(shape) => node.with_attr(
            "shape",
            AttrValue::Ints(shape.iter().map(|&d| d as i64).collect()),
        ),
    }
}

pub(super) fn repair_in_place(m: &mut GraphModel) -> Result<Vec<RepairEntry>> {
    m.sort_topologically()?;
    let mut log = Vec::new();
    let mut shapes = ShapeMap::new();
    let mut i = 0;
    while i < m.nodes.len() {
        let consumer = m.nodes[i].id.clone();
        let fail = |reason: String| Error::RepairFailed {
            node: consumer.clone(),
            reason,
        };
        let inputs = input_shapes(m, &shapes, &m.nodes[i].inputs).map_err(&fail)?;
        let reason = match infer_node(&m.nodes[i], &inputs) {
            Ok(out) => {
                shapes.insert(consumer, out);
                i += 1;
                continue;
            }
            Err(reason) => reason,
        };
        let adapters = match fit_inputs(&m.nodes[i], &inputs) {
            Fit::Adapt(a) => a,
            Fit::Impossible(why) => return Err(fail(format!("{reason}; {why}"))),
        };
        let region = m.region_of(&consumer);
        for (k, adapter) in adapters.into_iter().enumerate() {
            let Some(adapter) = adapter else { continue };
            let producer = m.nodes[i].inputs[k].clone();
            let suffix = match adapter.kind() {
                LayerKind::Pad => "fit_pad",
                _ => "fit_reshape",
            };
            let id = m.fresh_id(&format!("{consumer}_{suffix}"));
            let node = adapter_node(&id, &producer, &adapter);
            let out = infer_node(&node, &inputs[k..=k]).map_err(&fail)?;
            log.push(RepairEntry {
                node_id: id.clone(),
                kind: node.kind,
                producer,
                consumer: consumer.clone(),
                from: inputs[k].clone(),
                to: out.clone(),
                reason: reason.clone(),
            });
            shapes.insert(id.clone(), out);
            m.regions.insert(id.clone(), region);
            m.nodes.insert(i, node);
            i += 1;
            m.nodes[i].inputs[k] = id;
        }
        let inputs = input_shapes(m, &shapes, &m.nodes[i].inputs).map_err(&fail)?;
        let out = infer_node(&m.nodes[i], &inputs).map_err(&fail)?;
        shapes.insert(consumer, out);
        i += 1;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{validate_graph, InputSpec, RegionTag};
    use crate::tensor::Tensor;

    fn conv(id: &str, input: &str, c: usize) -> LayerNode {
        LayerNode::new(id, LayerKind::Conv2D, vec![input.into()])
            .with_attr("filters", AttrValue::Int(c as i64))
            .with_attr("kernel", AttrValue::Int(1))
            .with_attr("stride", AttrValue::Int(1))
            .with_attr("padding", AttrValue::Int(0))
            .with_weights(vec![Tensor::zeros(vec![c, c, 1, 1]), Tensor::zeros(vec![c])])
    }

    fn tagged(mut m: GraphModel) -> GraphModel {
        for n in &m.nodes {
            m.regions.insert(n.id.clone(), RegionTag::Backbone);
        }
        m
    }

    #[test]
    fn valid_model_is_untouched() {
        let m = crate::ir::generate_seed(crate::ir::SeedKind::TinyResblock, 1);
        let out = repair_shapes(&m).unwrap();
        assert!(out.repair_log.is_empty());
        assert!(out.model.bit_eq(&m));
    }

    #[test]
    fn smaller_spatial_input_gets_one_pad() {
        // `a` and `b` feed an Add; `b` is 6x6 where 8x8 is expected
        let mut m = GraphModel::new(
            "t",
            InputSpec {
                name: "x".into(),
                shape: vec![1, 4, 8, 8],
            },
        );
        let crop = LayerNode::new("crop", LayerKind::Pad, vec!["x".into()])
            .with_attr("pads", AttrValue::Ints(vec![0, 0, 0, 0, 0, 0, -2, -2]));
        m.nodes = vec![
            conv("a", "x", 4),
            crop,
            LayerNode::new("sum", LayerKind::Add, vec!["a".into(), "crop".into()]),
        ];
        m.outputs = vec!["sum".into()];
        let out = repair_shapes(&tagged(m)).unwrap();
        assert_eq!(out.repair_log.len(), 1);
        let fix = &out.repair_log[0];
        assert_eq!(fix.kind, LayerKind::Pad);
        assert_eq!(fix.from, vec![1, 4, 6, 6]);
        assert_eq!(fix.to, vec![1, 4, 8, 8]);
        assert!(validate_graph(&out.model).is_valid());
    }

    #[test]
    fn equal_counts_get_one_reshape() {
        let mut m = GraphModel::new(
            "t",
            InputSpec {
                name: "x".into(),
                shape: vec![1, 4, 8, 8],
            },
        );
        m.nodes = vec![LayerNode::new("d", LayerKind::Dense, vec!["x".into()])
            .with_attr("units", AttrValue::Int(3))
            .with_weights(vec![Tensor::zeros(vec![256, 3]), Tensor::zeros(vec![3])])];
        m.outputs = vec!["d".into()];
        let out = repair_shapes(&tagged(m)).unwrap();
        assert_eq!(out.repair_log.len(), 1);
        assert_eq!(out.repair_log[0].kind, LayerKind::Reshape);
        assert_eq!(out.repair_log[0].to, vec![1, 256]);
        assert!(validate_graph(&out.model).is_valid());
    }

    #[test]
    fn irreconcilable_ranks_fail() {
        let mut m = GraphModel::new(
            "t",
            InputSpec {
                name: "x".into(),
                shape: vec![1, 4, 8, 8],
            },
        );
        m.nodes = vec![
            LayerNode::new("f", LayerKind::Flatten, vec!["x".into()]),
            LayerNode::new("crop", LayerKind::Pad, vec!["f".into()])
                .with_attr("pads", AttrValue::Ints(vec![0, 0, 0, -1])),
            LayerNode::new("sum", LayerKind::Add, vec!["x".into(), "crop".into()]),
        ];
        m.outputs = vec!["sum".into()];
        assert!(matches!(
            repair_shapes(&tagged(m)),
            Err(Error::RepairFailed { .. })
        ));
    }
}
