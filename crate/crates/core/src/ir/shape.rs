use std::collections::BTreeMap;

use super::schema::infer_node;
use super::GraphModel;
use crate::error::{Error, Result};
use crate::tensor::Shape;

/// Output shape of every node, keyed by node id.
pub type ShapeMap = BTreeMap<String, Shape>;

pub fn infer_shapes(model: &GraphModel) -> Result<ShapeMap> {
    let order = model.topo_order()?;
    let mut shapes = ShapeMap::new();
    for i in order {
        let node = &model.nodes[i];
        let inputs = input_shapes(model, &shapes, &node.inputs).map_err(|reason| {
            Error::ShapeMismatch {
                node: node.id.clone(),
                reason,
            }
        })?;
        let out = infer_node(node, &inputs).map_err(|reason| Error::ShapeMismatch {
            node: node.id.clone(),
            reason,
        })?;
        shapes.insert(node.id.clone(), out);
    }
    Ok(shapes)
}

pub(crate) fn input_shapes(
    model: &GraphModel,
    shapes: &ShapeMap,
    inputs: &[String],
) -> std::result::Result<Vec<Shape>, String> {
    inputs
        .iter()
        .map(|id| {
            if *id == model.input.name {
                Ok(model.input.shape.clone())
            } else {
                shapes
                    .get(id)
                    .cloned()
                    .ok_or_else(|| format!("input `{id}` is unresolved"))
            }
        })
        .collect()
}
