//! ONNX import/export for the supported layer subset (opset 13).
//!
//! Mapping notes: Dense is emitted as `MatMul` + `Add` (bias) and fused back on
//! import; ReLU6 is `Clip(0, 6)`; region tags and the model name travel in
//! `metadata_props`. Weights are stored as little-endian `raw_data`.

use std::collections::{BTreeMap, HashMap, HashSet};

use prost::Message;

use super::region::{tag_regions, RegionPolicy};
use super::{AttrValue, GraphModel, InputSpec, LayerKind, LayerNode, RegionTag};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const OPSET_VERSION: i64 = 13;
const IR_VERSION: i64 = 8;
const REGION_PREFIX: &str = "graphmut.region.";
const NAME_KEY: &str = "graphmut.name";

const DT_FLOAT: i32 = 1;
const DT_INT64: i32 = 7;

const AT_FLOAT: i32 = 1;
const AT_INT: i32 = 2;
const AT_STRING: i32 = 3;
const AT_INTS: i32 = 7;

pub mod proto {
    //! Hand-written subset of `onnx.proto3`; field tags match upstream.

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct ModelProto {
        #[prost(int64, tag = "1")]
        pub ir_version: i64,
        #[prost(string, tag = "2")]
        pub producer_name: String,
        #[prost(string, tag = "3")]
        pub producer_version: String,
        #[prost(message, optional, tag = "7")]
        pub graph: Option<GraphProto>,
        #[prost(message, repeated, tag = "8")]
        pub opset_import: Vec<OperatorSetIdProto>,
        #[prost(message, repeated, tag = "14")]
        pub metadata_props: Vec<StringStringEntryProto>,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct OperatorSetIdProto {
        #[prost(string, tag = "1")]
        pub domain: String,
        #[prost(int64, tag = "2")]
        pub version: i64,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct StringStringEntryProto {
        #[prost(string, tag = "1")]
        pub key: String,
        #[prost(string, tag = "2")]
        pub value: String,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct GraphProto {
        #[prost(message, repeated, tag = "1")]
        pub node: Vec<NodeProto>,
        #[prost(string, tag = "2")]
        pub name: String,
        #[prost(message, repeated, tag = "5")]
        pub initializer: Vec<TensorProto>,
        #[prost(message, repeated, tag = "11")]
        pub input: Vec<ValueInfoProto>,
        #[prost(message, repeated, tag = "12")]
        pub output: Vec<ValueInfoProto>,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct NodeProto {
        #[prost(string, repeated, tag = "1")]
        pub input: Vec<String>,
        #[prost(string, repeated, tag = "2")]
        pub output: Vec<String>,
        #[prost(string, tag = "3")]
        pub name: String,
        #[prost(string, tag = "4")]
        pub op_type: String,
        #[prost(message, repeated, tag = "5")]
        pub attribute: Vec<AttributeProto>,
        #[prost(string, tag = "7")]
        pub domain: String,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct AttributeProto {
        #[prost(string, tag = "1")]
        pub name: String,
        #[prost(float, tag = "2")]
        pub f: f32,
        #[prost(int64, tag = "3")]
        pub i: i64,
        #[prost(bytes = "vec", tag = "4")]
        pub s: Vec<u8>,
        #[prost(float, repeated, tag = "7")]
        pub floats: Vec<f32>,
        #[prost(int64, repeated, tag = "8")]
        pub ints: Vec<i64>,
        #[prost(int32, tag = "20")]
        pub r#type: i32,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct TensorProto {
        #[prost(int64, repeated, tag = "1")]
        pub dims: Vec<i64>,
        #[prost(int32, tag = "2")]
        pub data_type: i32,
        #[prost(float, repeated, tag = "4")]
        pub float_data: Vec<f32>,
        #[prost(int64, repeated, tag = "7")]
        pub int64_data: Vec<i64>,
        #[prost(string, tag = "8")]
        pub name: String,
        #[prost(bytes = "vec", tag = "9")]
        pub raw_data: Vec<u8>,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct ValueInfoProto {
        #[prost(string, tag = "1")]
        pub name: String,
        #[prost(message, optional, tag = "2")]
        pub r#type: Option<TypeProto>,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct TypeProto {
        #[prost(message, optional, tag = "1")]
        pub tensor_type: Option<TypeTensor>,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct TypeTensor {
        #[prost(int32, tag = "1")]
        pub elem_type: i32,
        #[prost(message, optional, tag = "2")]
        pub shape: Option<TensorShapeProto>,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct TensorShapeProto {
        #[prost(message, repeated, tag = "1")]
        pub dim: Vec<Dimension>,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct Dimension {
        #[prost(int64, optional, tag = "1")]
        pub dim_value: Option<i64>,
        #[prost(string, optional, tag = "2")]
        pub dim_param: Option<String>,
    }
}

use proto::*;

fn attr_ints(name: &str, v: Vec<i64>) -> AttributeProto {
    AttributeProto {
        name: name.into(),
        ints: v,
        r#type: AT_INTS,
        ..Default::default()
    }
}

fn attr_int(name: &str, v: i64) -> AttributeProto {
    AttributeProto {
        name: name.into(),
        i: v,
        r#type: AT_INT,
        ..Default::default()
    }
}

fn attr_float(name: &str, v: f32) -> AttributeProto {
    AttributeProto {
        name: name.into(),
        f: v,
        r#type: AT_FLOAT,
        ..Default::default()
    }
}

fn attr_string(name: &str, v: &str) -> AttributeProto {
    AttributeProto {
        name: name.into(),
        s: v.as_bytes().to_vec(),
        r#type: AT_STRING,
        ..Default::default()
    }
}

fn float_init(name: String, t: &Tensor) -> TensorProto {
    TensorProto {
        dims: t.shape.iter().map(|&d| d as i64).collect(),
        data_type: DT_FLOAT,
        name,
        raw_data: t.to_le_bytes(),
        ..Default::default()
    }
}

fn scalar_init(name: String, v: f32) -> TensorProto {
    TensorProto {
        dims: vec![],
        data_type: DT_FLOAT,
        name,
        raw_data: v.to_le_bytes().to_vec(),
        ..Default::default()
    }
}

fn int64_init(name: String, v: &[i64]) -> TensorProto {
    TensorProto {
        dims: vec![v.len() as i64],
        data_type: DT_INT64,
        name,
        raw_data: v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        ..Default::default()
    }
}

fn value_info(name: &str, shape: &[usize]) -> ValueInfoProto {
    ValueInfoProto {
        name: name.into(),
        r#type: Some(TypeProto {
            tensor_type: Some(TypeTensor {
                elem_type: DT_FLOAT,
                shape: Some(TensorShapeProto {
                    dim: shape
                        .iter()
                        .map(|&d| Dimension {
                            dim_value: Some(d as i64),
                            dim_param: None,
                        })
                        .collect(),
                }),
            }),
        }),
    }
}

fn node(op: &str, name: &str, inputs: Vec<String>, output: &str) -> NodeProto {
    NodeProto {
        input: inputs,
        output: vec![output.into()],
        name: name.into(),
        op_type: op.into(),
        ..Default::default()
    }
}

/// Serializes the model to ONNX bytes. Deterministic for a fixed model.
pub fn export_onnx(model: &GraphModel) -> Result<Vec<u8>> {
    let report = super::validate::validate_graph(model);
    if !report.structurally_valid() {
        return Err(Error::Precondition(format!(
            "cannot export an invalid model: {report}"
        )));
    }
    let shapes = super::shape::infer_shapes(model)?;

    let mut graph = GraphProto {
        name: model.name.clone(),
        input: vec![value_info(&model.input.name, &model.input.shape)],
        ..Default::default()
    };
    for n in &model.nodes {
        let x = n.inputs.clone();
        let id = n.id.as_str();
        let int = |k: &str| n.int_attr(k).unwrap_or(0);
        match n.kind {
            LayerKind::Conv2D => {
                let (k, s, p) = (int("kernel"), int("stride"), int("padding"));
                let mut nd = node(
                    "Conv",
                    id,
                    vec![x[0].clone(), format!("{id}.weight"), format!("{id}.bias")],
                    id,
                );
                nd.attribute = vec![
                    attr_ints("kernel_shape", vec![k, k]),
                    attr_ints("pads", vec![p, p, p, p]),
                    attr_ints("strides", vec![s, s]),
                ];
                graph.node.push(nd);
                graph.initializer.push(float_init(format!("{id}.weight"), &n.weights[0]));
                graph.initializer.push(float_init(format!("{id}.bias"), &n.weights[1]));
            }
            LayerKind::Dense => {
                let mm = format!("{id}.matmul");
                graph.node.push(node(
                    "MatMul",
                    id,
                    vec![x[0].clone(), format!("{id}.weight")],
                    &mm,
                ));
                graph.node.push(node(
                    "Add",
                    &format!("{id}/bias_add"),
                    vec![mm, format!("{id}.bias")],
                    id,
                ));
                graph.initializer.push(float_init(format!("{id}.weight"), &n.weights[0]));
                graph.initializer.push(float_init(format!("{id}.bias"), &n.weights[1]));
            }
            LayerKind::BatchNorm => {
                let names = ["scale", "bias", "mean", "var"];
                let mut inputs = vec![x[0].clone()];
                for (w, suffix) in n.weights.iter().zip(names) {
                    let name = format!("{id}.{suffix}");
                    graph.initializer.push(float_init(name.clone(), w));
                    inputs.push(name);
                }
                let mut nd = node("BatchNormalization", id, inputs, id);
                nd.attribute = vec![attr_float("epsilon", n.float_attr("epsilon").unwrap_or(1e-5))];
                graph.node.push(nd);
            }
            LayerKind::ReLU6 => {
                graph.initializer.push(scalar_init(format!("{id}.min"), 0.0));
                graph.initializer.push(scalar_init(format!("{id}.max"), 6.0));
                graph.node.push(node(
                    "Clip",
                    id,
                    vec![x[0].clone(), format!("{id}.min"), format!("{id}.max")],
                    id,
                ));
            }
            LayerKind::MaxPool | LayerKind::AvgPool => {
                let op = if n.kind == LayerKind::MaxPool {
                    "MaxPool"
                } else {
                    "AveragePool"
                };
                let (k, s) = (int("pool"), int("stride"));
                let mut nd = node(op, id, x, id);
                nd.attribute = vec![
                    attr_ints("kernel_shape", vec![k, k]),
                    attr_ints("strides", vec![s, s]),
                ];
                graph.node.push(nd);
            }
            LayerKind::Flatten => {
                let mut nd = node("Flatten", id, x, id);
                nd.attribute = vec![attr_int("axis", 1)];
                graph.node.push(nd);
            }
            LayerKind::Reshape => {
                let shape = n.ints_attr("shape").unwrap_or(&[]);
                graph.initializer.push(int64_init(format!("{id}.shape"), shape));
                graph.node.push(node(
                    "Reshape",
                    id,
                    vec![x[0].clone(), format!("{id}.shape")],
                    id,
                ));
            }
            LayerKind::Pad => {
                let pads = n.ints_attr("pads").unwrap_or(&[]);
                graph.initializer.push(int64_init(format!("{id}.pads"), pads));
                let mut nd = node("Pad", id, vec![x[0].clone(), format!("{id}.pads")], id);
                nd.attribute = vec![attr_string("mode", "constant")];
                graph.node.push(nd);
            }
            LayerKind::Concat => {
                let mut nd = node("Concat", id, x, id);
                nd.attribute = vec![attr_int("axis", int("axis"))];
                graph.node.push(nd);
            }
            LayerKind::Softmax => {
                let mut nd = node("Softmax", id, x, id);
                nd.attribute = vec![attr_int("axis", -1)];
                graph.node.push(nd);
            }
            LayerKind::ReLU => graph.node.push(node("Relu", id, x, id)),
            LayerKind::Sigmoid => graph.node.push(node("Sigmoid", id, x, id)),
            LayerKind::Tanh => graph.node.push(node("Tanh", id, x, id)),
            LayerKind::Add => graph.node.push(node("Add", id, x, id)),
            LayerKind::Mul => graph.node.push(node("Mul", id, x, id)),
        }
    }
    for o in &model.outputs {
        graph.output.push(value_info(o, &shapes[o]));
    }

    let mut metadata = vec![StringStringEntryProto {
        key: NAME_KEY.into(),
        value: model.name.clone(),
    }];
    for (id, tag) in &model.regions {
        metadata.push(StringStringEntryProto {
            key: format!("{REGION_PREFIX}{id}"),
            value: match tag {
                RegionTag::Backbone => "backbone".into(),
                RegionTag::TaskHead => "task_head".into(),
            },
        });
    }

    let proto = ModelProto {
        ir_version: IR_VERSION,
        producer_name: "graphmut".into(),
        producer_version: env!("CARGO_PKG_VERSION").into(),
        graph: Some(graph),
        opset_import: vec![OperatorSetIdProto {
            domain: String::new(),
            version: OPSET_VERSION,
        }],
        metadata_props: metadata,
    };
    Ok(proto.encode_to_vec())
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::OnnxParse(msg.into())
}

fn tensor_floats(t: &TensorProto) -> Result<Tensor> {
    if t.data_type != DT_FLOAT {
        return Err(Error::UnsupportedOperator(format!(
            "initializer `{}` with data type {}",
            t.name, t.data_type
        )));
    }
    let shape: Vec<usize> = t.dims.iter().map(|&d| d.max(0) as usize).collect();
    if !t.raw_data.is_empty() {
        Tensor::from_le_bytes(shape, &t.raw_data).map_err(|e| parse_err(e.to_string()))
    } else {
        // scalars have an empty dims list
        let shape = if shape.is_empty() { vec![1] } else { shape };
        Tensor::new(shape, t.float_data.clone()).map_err(|e| parse_err(e.to_string()))
    }
}

fn tensor_ints(t: &TensorProto) -> Result<Vec<i64>> {
    if t.data_type != DT_INT64 {
        return Err(parse_err(format!("initializer `{}` is not int64", t.name)));
    }
    if !t.raw_data.is_empty() {
        if !t.raw_data.len().is_multiple_of(8) {
            return Err(parse_err(format!("initializer `{}` has ragged raw data", t.name)));
        }
        Ok(t.raw_data
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    } else {
        Ok(t.int64_data.clone())
    }
}

fn find_attr<'a>(n: &'a NodeProto, name: &str) -> Option<&'a AttributeProto> {
    n.attribute.iter().find(|a| a.name == name)
}

fn square(n: &NodeProto, name: &str, default: i64) -> Result<i64> {
    match find_attr(n, name) {
        None => Ok(default),
        Some(a) if !a.ints.is_empty() && a.ints.iter().all(|&v| v == a.ints[0]) => Ok(a.ints[0]),
        Some(a) => Err(Error::UnsupportedOperator(format!(
            "{} with non-uniform {name} {:?}",
            n.op_type, a.ints
        ))),
    }
}

/// Parses ONNX bytes into a model. Only the supported subset is accepted.
pub fn import_onnx(bytes: &[u8]) -> Result<GraphModel> {
    let proto = ModelProto::decode(bytes).map_err(|e| parse_err(e.to_string()))?;
    let graph = proto
        .graph
        .ok_or_else(|| parse_err("model has no graph"))?;
    if graph.node.is_empty() {
        return Err(parse_err("graph has no nodes"));
    }

    let inits: HashMap<&str, &TensorProto> = graph
        .initializer
        .iter()
        .map(|t| (t.name.as_str(), t))
        .collect();
    let float_init = |name: &str| -> Result<Tensor> {
        let t = inits
            .get(name)
            .ok_or_else(|| parse_err(format!("missing initializer `{name}`")))?;
        tensor_floats(t)
    };

    let input_vi = graph
        .input
        .iter()
        .find(|vi| !inits.contains_key(vi.name.as_str()))
        .ok_or_else(|| parse_err("graph declares no data input"))?;
    let dims = input_vi
        .r#type
        .as_ref()
        .and_then(|t| t.tensor_type.as_ref())
        .and_then(|t| t.shape.as_ref())
        .ok_or_else(|| parse_err("graph input has no static shape"))?;
    let input_shape = dims
        .dim
        .iter()
        .map(|d| match d.dim_value {
            Some(v) if v > 0 => Ok(v as usize),
            _ => Err(parse_err("graph input has a dynamic or empty dimension")),
        })
        .collect::<Result<Vec<_>>>()?;

    let metadata: BTreeMap<&str, &str> = proto
        .metadata_props
        .iter()
        .map(|e| (e.key.as_str(), e.value.as_str()))
        .collect();
    let name = metadata
        .get(NAME_KEY)
        .map(|s| s.to_string())
        .unwrap_or_else(|| graph.name.clone());

    let mut model = GraphModel::new(
        name,
        InputSpec {
            name: input_vi.name.clone(),
            shape: input_shape,
        },
    );

    // MatMul outputs fused into a following bias Add
    let mut fused: HashMap<String, usize> = HashMap::new();
    for (i, n) in graph.node.iter().enumerate() {
        if n.op_type == "Add" && n.input.len() == 2 && inits.contains_key(n.input[1].as_str()) {
            fused.insert(n.input[0].clone(), i);
        }
    }
    let mut skip: HashSet<usize> = HashSet::new();

    for (i, n) in graph.node.iter().enumerate() {
        if skip.contains(&i) {
            continue;
        }
        if !n.domain.is_empty() && n.domain != "ai.onnx" {
            return Err(Error::UnsupportedOperator(format!("{}:{}", n.domain, n.op_type)));
        }
        let out = n
            .output
            .first()
            .ok_or_else(|| parse_err(format!("node `{}` has no output", n.name)))?
            .clone();
        let data_inputs: Vec<String> = n
            .input
            .iter()
            .filter(|s| !s.is_empty() && !inits.contains_key(s.as_str()))
            .cloned()
            .collect();
        let need_input = |k: usize| -> Result<String> {
            n.input
                .get(k)
                .cloned()
                .ok_or_else(|| parse_err(format!("{} node `{out}` lacks input {k}", n.op_type)))
        };
        let layer = match n.op_type.as_str() {
            "Conv" => {
                if find_attr(n, "group").is_some_and(|a| a.i != 1)
                    || find_attr(n, "dilations").is_some_and(|a| a.ints.iter().any(|&d| d != 1))
                {
                    return Err(Error::UnsupportedOperator(
                        "Conv with groups or dilation".into(),
                    ));
                }
                let w = float_init(&need_input(1)?)?;
                if w.rank() != 4 || w.shape[2] != w.shape[3] {
                    return Err(Error::UnsupportedOperator("non-square Conv kernel".into()));
                }
                let b = match n.input.get(2) {
                    Some(name) if !name.is_empty() => float_init(name)?,
                    _ => Tensor::zeros(vec![w.shape[0]]),
                };
                LayerNode::new(&out, LayerKind::Conv2D, vec![need_input(0)?])
                    .with_attr("filters", AttrValue::Int(w.shape[0] as i64))
                    .with_attr("kernel", AttrValue::Int(w.shape[2] as i64))
                    .with_attr("padding", AttrValue::Int(square(n, "pads", 0)?))
                    .with_attr("stride", AttrValue::Int(square(n, "strides", 1)?))
                    .with_weights(vec![w, b])
            }
            "MatMul" => {
                let w = float_init(&need_input(1)?)?;
                if w.rank() != 2 {
                    return Err(Error::UnsupportedOperator("MatMul with non-matrix weight".into()));
                }
                let (id, b) = match fused.get(&out) {
                    Some(&j) => {
                        skip.insert(j);
                        let add = &graph.node[j];
                        (add.output[0].clone(), float_init(&add.input[1])?)
                    }
                    None => (out.clone(), Tensor::zeros(vec![w.shape[1]])),
                };
                LayerNode::new(&id, LayerKind::Dense, vec![need_input(0)?])
                    .with_attr("units", AttrValue::Int(w.shape[1] as i64))
                    .with_weights(vec![w, b])
            }
            "BatchNormalization" => {
                let weights = (1..=4)
                    .map(|k| float_init(&need_input(k)?))
                    .collect::<Result<Vec<_>>>()?;
                let eps = find_attr(n, "epsilon").map(|a| a.f).unwrap_or(1e-5);
                LayerNode::new(&out, LayerKind::BatchNorm, vec![need_input(0)?])
                    .with_attr("epsilon", AttrValue::Float(eps))
                    .with_weights(weights)
            }
            "Clip" => {
                let bound = |k: usize, attr: &str| -> Result<Option<f32>> {
                    match n.input.get(k) {
                        Some(name) if !name.is_empty() => {
                            Ok(float_init(name)?.data.first().copied())
                        }
                        _ => Ok(find_attr(n, attr).map(|a| a.f)),
                    }
                };
                let (lo, hi) = (bound(1, "min")?, bound(2, "max")?);
                if lo != Some(0.0) || hi != Some(6.0) {
                    return Err(Error::UnsupportedOperator(format!(
                        "Clip({lo:?}, {hi:?}); only Clip(0, 6) is supported"
                    )));
                }
                LayerNode::new(&out, LayerKind::ReLU6, vec![need_input(0)?])
            }
            "MaxPool" | "AveragePool" => {
                if find_attr(n, "pads").is_some_and(|a| a.ints.iter().any(|&p| p != 0)) {
                    return Err(Error::UnsupportedOperator(format!("padded {}", n.op_type)));
                }
                let kind = if n.op_type == "MaxPool" {
                    LayerKind::MaxPool
                } else {
                    LayerKind::AvgPool
                };
                let k = square(n, "kernel_shape", 1)?;
                LayerNode::new(&out, kind, vec![need_input(0)?])
                    .with_attr("pool", AttrValue::Int(k))
                    .with_attr("stride", AttrValue::Int(square(n, "strides", 1)?))
            }
            "Flatten" => {
                if find_attr(n, "axis").is_some_and(|a| a.i != 1) {
                    return Err(Error::UnsupportedOperator("Flatten with axis != 1".into()));
                }
                LayerNode::new(&out, LayerKind::Flatten, vec![need_input(0)?])
            }
            "Reshape" => {
                let shape = inits
                    .get(need_input(1)?.as_str())
                    .ok_or_else(|| Error::UnsupportedOperator("Reshape with dynamic shape".into()))
                    .and_then(|t| tensor_ints(t))?;
                LayerNode::new(&out, LayerKind::Reshape, vec![need_input(0)?])
                    .with_attr("shape", AttrValue::Ints(shape))
            }
            "Pad" => {
                if find_attr(n, "mode").is_some_and(|a| a.s != b"constant") {
                    return Err(Error::UnsupportedOperator("non-constant Pad".into()));
                }
                let pads = inits
                    .get(need_input(1)?.as_str())
                    .ok_or_else(|| Error::UnsupportedOperator("Pad with dynamic pads".into()))
                    .and_then(|t| tensor_ints(t))?;
                LayerNode::new(&out, LayerKind::Pad, vec![need_input(0)?])
                    .with_attr("pads", AttrValue::Ints(pads))
            }
            "Concat" => {
                let axis = find_attr(n, "axis").map(|a| a.i).unwrap_or(0);
                if axis < 0 {
                    return Err(Error::UnsupportedOperator("Concat with negative axis".into()));
                }
                LayerNode::new(&out, LayerKind::Concat, data_inputs)
                    .with_attr("axis", AttrValue::Int(axis))
            }
            "Softmax" => {
                if find_attr(n, "axis").is_some_and(|a| a.i != -1) {
                    return Err(Error::UnsupportedOperator("Softmax on a non-final axis".into()));
                }
                LayerNode::new(&out, LayerKind::Softmax, data_inputs)
            }
            "Relu" => LayerNode::new(&out, LayerKind::ReLU, data_inputs),
            "Sigmoid" => LayerNode::new(&out, LayerKind::Sigmoid, data_inputs),
            "Tanh" => LayerNode::new(&out, LayerKind::Tanh, data_inputs),
            "Add" | "Mul" => {
                if data_inputs.len() != 2 {
                    return Err(Error::UnsupportedOperator(format!(
                        "{} with a constant operand",
                        n.op_type
                    )));
                }
                let kind = if n.op_type == "Add" {
                    LayerKind::Add
                } else {
                    LayerKind::Mul
                };
                LayerNode::new(&out, kind, data_inputs)
            }
            other => return Err(Error::UnsupportedOperator(other.to_string())),
        };
        model.nodes.push(layer);
    }

    model.outputs = graph.output.iter().map(|vi| vi.name.clone()).collect();

    let mut regions = BTreeMap::new();
    for n in &model.nodes {
        match metadata.get(format!("{REGION_PREFIX}{}", n.id).as_str()) {
            Some(&"backbone") => {
                regions.insert(n.id.clone(), RegionTag::Backbone);
            }
            Some(&"task_head") => {
                regions.insert(n.id.clone(), RegionTag::TaskHead);
            }
            _ => {}
        }
    }
    if regions.len() == model.nodes.len() {
        model.regions = regions;
    } else {
        model = tag_regions(&model, &RegionPolicy::default());
    }
    Ok(model)
}
