//! JSON-lines messages exchanged with runtime adapters.
//!
//! Non-finite floats are written as the strings `"NaN"`, `"Infinity"` and
//! `"-Infinity"`. On input the bare tokens `NaN`, `Infinity` and
//! `-Infinity` (as emitted by Python's `json` module) and `null` are also
//! accepted; `null` reads as NaN.

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Hello {
    pub cmd: String,
}

impl Hello {
    pub fn new() -> Self {
        Self { cmd: "hello".into() }
    }
}

impl Default for Hello {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HelloReply {
    pub name: String,
    pub runtime: String,
    pub version: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireInput {
    pub shape: Shape,
    #[serde(with = "floats")]
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct WireOptions {
    pub per_layer: bool,
    pub timing: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExecuteRequest {
    pub id: u64,
    pub cmd: String,
    pub model_b64: String,
    pub input: WireInput,
    pub options: WireOptions,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum WireStatus {
    Ok,
    Crash,
    Nan,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireOutput {
    pub name: String,
    pub shape: Shape,
    #[serde(with = "floats")]
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExecuteResponse {
    pub id: u64,
    pub status: WireStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub outputs: Vec<WireOutput>,
    pub total_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_mem_bytes: Option<u64>,
}

impl WireInput {
    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            shape: t.shape.clone(),
            data: t.data.clone(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.data.clone())
    }
}

impl WireOutput {
    pub fn from_tensor(name: &str, t: &Tensor) -> Self {
        Self {
            name: name.to_string(),
            shape: t.shape.clone(),
            data: t.data.clone(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.data.clone())
    }
}

/// Quotes bare `NaN`, `Infinity` and `-Infinity` tokens outside strings so
/// a standard JSON parser accepts the line.
pub fn normalize_line(line: &str) -> String {
    let mut out = String::with_capacity(line.len() + 16);
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
            out.push(c);
            rest = &rest[1..];
            continue;
        }
        let token = ["-Infinity", "Infinity", "NaN"]
            .into_iter()
            .find(|t| rest.starts_with(t));
        match token {
            Some(t) => {
                out.push('"');
                out.push_str(t);
                out.push('"');
                rest = &rest[t.len()..];
            }
            None => {
                out.push(c);
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    out
}

/// Parses one message line, attaching the raw text to any failure.
pub fn parse_line<T: for<'de> Deserialize<'de>>(line: &str) -> Result<T> {
    serde_json::from_str(&normalize_line(line)).map_err(|e| Error::Protocol {
        reason: e.to_string(),
        raw: line.to_string(),
    })
}

pub fn to_line<T: Serialize>(msg: &T) -> Result<String> {
    let mut s = serde_json::to_string(msg)?;
    s.push('\n');
    Ok(s)
}

mod floats {
    use super::*;

    pub fn serialize<S: Serializer>(data: &[f32], s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(data.len()))?;
        for &v in data {
            if v.is_nan() {
                seq.serialize_element("NaN")?;
            } else if v == f32::INFINITY {
                seq.serialize_element("Infinity")?;
            } else if v == f32::NEG_INFINITY {
                seq.serialize_element("-Infinity")?;
            } else {
                seq.serialize_element(&v)?;
            }
        }
        seq.end()
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Float {
        Num(f64),
        Text(String),
        Null(()),
    }

    struct FloatsVisitor;

    impl<'de> Visitor<'de> for FloatsVisitor {
        type Value = Vec<f32>;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("an array of numbers")
        }

        fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Vec<f32>, A::Error> {
            let mut out = Vec::with_capacity(seq.size_hint().unwrap_or(0));
            while let Some(v) = seq.next_element::<Float>()? {
                out.push(match v {
                    Float::Num(x) => x as f32,
                    Float::Null(()) => f32::NAN,
                    Float::Text(t) => match t.as_str() {
                        "NaN" | "nan" => f32::NAN,
                        "Infinity" | "inf" => f32::INFINITY,
                        "-Infinity" | "-inf" => f32::NEG_INFINITY,
                        other => {
                            return Err(de::Error::custom(format!("`{other}` is not a number")))
                        }
                    },
                });
            }
            Ok(out)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f32>, D::Error> {
        d.deserialize_seq(FloatsVisitor)
    }
}
