//! Canonical JSON encoding of [`ParameterValue`].
//!
//! * non-negative integers: `{"t":"nni","v":"<decimal>"}`; decimal strings
//!   because field elements exceed the 2^53 range of JSON numbers.
//! * float scalars: `{"t":"f64","v":"<shortest round-trip decimal>"}`
//! * float arrays: `{"t":"f64a","shape":[..],"data":"<base64>"}` where the
//!   payload is little-endian binary64, row-major.
//!
//! Encoding is deterministic, so equal values always produce equal bytes.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::Error as _;
use serde::ser::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::ParameterValue;
use crate::masking::RealVector;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("encoding error: {0}")]
pub struct EncodingError(pub String);

#[derive(Serialize, Deserialize)]
#[serde(tag = "t", deny_unknown_fields)]
enum Wire {
    #[serde(rename = "nni")]
    Nni { v: String },
    #[serde(rename = "f64")]
    F64 { v: String },
    #[serde(rename = "f64a")]
    F64a { shape: Vec<usize>, data: String },
}

fn to_wire(value: &ParameterValue) -> Result<Wire, EncodingError> {
    match value {
        ParameterValue::NonNegInt(v) => {
            if *v < 0 {
                return Err(EncodingError(format!("negative integer {v}")));
            }
            Ok(Wire::Nni { v: v.to_string() })
        }
        ParameterValue::Float(v) => {
            if !v.is_finite() {
                return Err(EncodingError("non-finite float".into()));
            }
            // Debug prints the shortest decimal that parses back to the same bits.
            Ok(Wire::F64 { v: format!("{v:?}") })
        }
        ParameterValue::FloatArray(a) => {
            if a.values().iter().any(|x| !x.is_finite()) {
                return Err(EncodingError("non-finite float in array".into()));
            }
            let mut bytes = Vec::with_capacity(a.len() * 8);
            for x in a.values() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            Ok(Wire::F64a { shape: a.shape().to_vec(), data: STANDARD.encode(bytes) })
        }
    }
}

fn from_wire(wire: Wire) -> Result<ParameterValue, EncodingError> {
    match wire {
        Wire::Nni { v } => {
            if v.is_empty() || !v.bytes().all(|b| b.is_ascii_digit()) {
                return Err(EncodingError(format!("not a non-negative decimal: {v:?}")));
            }
            let n: i64 = v.parse().map_err(|e| EncodingError(format!("{v:?}: {e}")))?;
            Ok(ParameterValue::NonNegInt(n))
        }
        Wire::F64 { v } => {
            let x: f64 = v.parse().map_err(|e| EncodingError(format!("{v:?}: {e}")))?;
            if !x.is_finite() {
                return Err(EncodingError("non-finite float".into()));
            }
            Ok(ParameterValue::Float(x))
        }
        Wire::F64a { shape, data } => {
            let bytes = STANDARD.decode(data).map_err(|e| EncodingError(e.to_string()))?;
            if bytes.len() % 8 != 0 {
                return Err(EncodingError("array payload is not a whole number of binary64 values".into()));
            }
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let array = RealVector::new(values, shape).map_err(|e| EncodingError(e.to_string()))?;
            Ok(ParameterValue::FloatArray(array))
        }
    }
}

impl Serialize for ParameterValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        to_wire(self).map_err(S::Error::custom)?.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ParameterValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        from_wire(Wire::deserialize(deserializer)?).map_err(D::Error::custom)
    }
}

pub fn encode_parameter(value: &ParameterValue) -> Result<serde_json::Value, EncodingError> {
    serde_json::to_value(to_wire(value)?).map_err(|e| EncodingError(e.to_string()))
}

pub fn decode_parameter(wire: &serde_json::Value) -> Result<ParameterValue, EncodingError> {
    let wire = Wire::deserialize(wire).map_err(|e| EncodingError(e.to_string()))?;
    from_wire(wire)
}

/// Compact JSON bytes of any serializable message.
pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, EncodingError> {
    serde_json::to_vec(value).map_err(|e| EncodingError(e.to_string()))
}
