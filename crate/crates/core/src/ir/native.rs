//! Native model file: pretty JSON with base64 little-endian weight blobs.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AttrValue, GraphModel, InputSpec, LayerKind, LayerNode, RegionTag};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const FORMAT_TAG: &str = "graphmut-model/1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    name: String,
    input: InputSpec,
    outputs: Vec<String>,
    nodes: Vec<NodeFile>,
}

#[derive(Serialize, Deserialize)]
struct NodeFile {
    id: String,
    kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    region: Option<RegionTag>,
    inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    attributes: BTreeMap<String, AttrValue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    weights: Vec<BlobFile>,
}

#[derive(Serialize, Deserialize)]
struct BlobFile {
    shape: Shape,
    data: String,
}

pub fn to_native(model: &GraphModel) -> String {
    let file = ModelFile {
        format: FORMAT_TAG.into(),
        name: model.name.clone(),
        input: model.input.clone(),
        outputs: model.outputs.clone(),
        nodes: model
            .nodes
            .iter()
            .map(|n| NodeFile {
                id: n.id.clone(),
                kind: n.kind,
                region: model.regions.get(&n.id).copied(),
                inputs: n.inputs.clone(),
                attributes: n.attributes.clone(),
                weights: n
                    .weights
                    .iter()
                    .map(|w| BlobFile {
                        shape: w.shape.clone(),
                        data: B64.encode(w.to_le_bytes()),
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
    s.push('\n');
    s
}

pub fn from_native(text: &str) -> Result<GraphModel> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("invalid model file: {e}")))?;
    if file.format != FORMAT_TAG {
        return Err(Error::Format(format!(
            "unknown model format `{}` (expected `{FORMAT_TAG}`)",
            file.format
        )));
    }
    let mut model = GraphModel::new(file.name, file.input);
    model.outputs = file.outputs;
    for n in file.nodes {
        let weights = n
            .weights
            .into_iter()
            .map(|b| {
                let bytes = B64
                    .decode(b.data.as_bytes())
                    .map_err(|e| Error::Format(format!("node `{}`: bad base64: {e}", n.id)))?;
                Tensor::from_le_bytes(b.shape, &bytes)
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(r) = n.region {
            model.regions.insert(n.id.clone(), r);
        }
        model.nodes.push(LayerNode {
            id: n.id,
            kind: n.kind,
            attributes: n.attributes,
            weights,
            inputs: n.inputs,
        });
    }
    Ok(model)
}

/// Hex SHA-256 of the native serialization.
pub fn model_hash(model: &GraphModel) -> String {
    let digest = Sha256::digest(to_native(model).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_model(path: &std::path::Path) -> Result<GraphModel> {
    let bytes = std::fs::read(path)?;
    if path.extension().is_some_and(|e| e == "onnx") {
        return super::onnx::import_onnx(&bytes);
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Format(format!("{} is not UTF-8", path.display())))?;
    from_native(&text)
}

pub fn write_model(path: &std::path::Path, model: &GraphModel) -> Result<()> {
    if path.extension().is_some_and(|e| e == "onnx") {
        std::fs::write(path, super::onnx::export_onnx(model)?)?;
    } else {
        std::fs::write(path, to_native(model))?;
    }
    Ok(())
}
