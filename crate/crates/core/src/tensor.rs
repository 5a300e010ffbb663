//! Dense float32 tensors in row-major layout.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Shape = Vec<usize>;

/// Serialized as `{"shape": [...], "data_b64": "..."}` with little-endian
/// bytes, so NaN and infinities survive text formats bit for bit.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct TensorRepr {
    shape: Shape,
    data_b64: String,
}

impl Serialize for Tensor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TensorRepr {
            shape: self.shape.clone(),
            data_b64: B64.encode(self.to_le_bytes()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Tensor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = TensorRepr::deserialize(d)?;
        let bytes = B64.decode(&repr.data_b64).map_err(D::Error::custom)?;
        Tensor::from_le_bytes(repr.shape, &bytes).map_err(D::Error::custom)
    }
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        let expected = element_count(&shape);
        if shape.contains(&0) {
            return Err(Error::Precondition(format!(
                "tensor shape {shape:?} has a zero extent"
            )));
        }
        if expected != data.len() {
            return Err(Error::Precondition(format!(
                "tensor shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = element_count(&shape);
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        let n = element_count(&shape);
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| {
            if v.is_nan() {
                m
            } else {
                m.max(v.abs())
            }
        })
    }

    /// Equality on shape and raw bit patterns, so NaN payloads compare equal.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(shape: Shape, bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(4) {
            return Err(Error::Format(format!(
                "tensor byte length {} is not a multiple of 4",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn bit_eq_treats_nan_payloads_as_equal() {
        let a = Tensor::new(vec![2], vec![f32::NAN, 1.0]).unwrap();
        let b = a.clone();
        assert!(a.bit_eq(&b));
        assert!(a.has_non_finite());
        assert_eq!(a.max_abs(), 1.0);
    }

    #[test]
    fn json_keeps_non_finite_values() {
        let t = Tensor::new(vec![3], vec![f32::NAN, f32::INFINITY, -0.0]).unwrap();
        let text = serde_json::to_string(&t).unwrap();
        let back: Tensor = serde_json::from_str(&text).unwrap();
        assert!(t.bit_eq(&back));
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[5]), vec![1]);
    }

    #[test]
    fn byte_round_trip() {
        let t = Tensor::new(vec![3], vec![1.5, -0.0, f32::INFINITY]).unwrap();
        let back = Tensor::from_le_bytes(vec![3], &t.to_le_bytes()).unwrap();
        assert!(t.bit_eq(&back));
    }
}
