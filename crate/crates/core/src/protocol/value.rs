use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::masking::RealVector;

/// The data-type tag clients attach to compensator-flagged parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataType {
    NonNegativeInteger,
    FloatScalar,
    FloatArray,
}

/// One named parameter: the unit that is masked, shipped and aggregated.
#[derive(Debug, Clone, PartialEq)]
pub enum ParameterValue {
    /// A field element; must be below the project's modulus.
    NonNegInt(i64),
    Float(f64),
    FloatArray(RealVector),
}

impl ParameterValue {
    pub fn data_type(&self) -> DataType {
        match self {
            ParameterValue::NonNegInt(_) => DataType::NonNegativeInteger,
            ParameterValue::Float(_) => DataType::FloatScalar,
            ParameterValue::FloatArray(_) => DataType::FloatArray,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            ParameterValue::NonNegInt(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            ParameterValue::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&RealVector> {
        match self {
            ParameterValue::FloatArray(v) => Some(v),
            _ => None,
        }
    }

    /// Equality on the bit patterns of floats, so `-0.0 != 0.0`.
    pub fn bit_eq(&self, other: &ParameterValue) -> bool {
        match (self, other) {
            (ParameterValue::NonNegInt(a), ParameterValue::NonNegInt(b)) => a == b,
            (ParameterValue::Float(a), ParameterValue::Float(b)) => a.to_bits() == b.to_bits(),
            (ParameterValue::FloatArray(a), ParameterValue::FloatArray(b)) => {
                a.shape() == b.shape()
                    && a.values().len() == b.values().len()
                    && a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

/// Named parameters, iterated in lexicographic name order.
pub type ParameterMap = BTreeMap<String, ParameterValue>;

/// Parameters a client asked to be split into noise and masked shares.
pub type CompensatorFlagMap = BTreeMap<String, DataType>;
