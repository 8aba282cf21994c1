use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_shape, MaskingError, RngHandle};
use crate::par::{self, Strategy};

/// Default Gaussian noise variance, `10^12`.
pub const DEFAULT_NOISE_VARIANCE: f64 = 1e12;

/// Finite 64-bit floats with a shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealVector {
    values: Vec<f64>,
    shape: Vec<usize>,
}

impl RealVector {
    pub fn new(values: Vec<f64>, shape: Vec<usize>) -> Result<Self, MaskingError> {
        check_shape(values.len(), &shape)?;
        check_finite(&values)?;
        Ok(RealVector { values, shape })
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self, MaskingError> {
        let shape = vec![values.len()];
        Self::new(values, shape)
    }

    pub fn scalar(value: f64) -> Result<Self, MaskingError> {
        Self::new(vec![value], Vec::new())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn check_same_shape(&self, other: &RealVector) -> Result<(), MaskingError> {
        if self.shape != other.shape {
            return Err(MaskingError::ShapeMismatch {
                expected: self.shape.clone(),
                found: other.shape.clone(),
            });
        }
        Ok(())
    }
}

fn check_finite(values: &[f64]) -> Result<(), MaskingError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(MaskingError::NonFiniteInput { index }),
        None => Ok(()),
    }
}

/// Zero-mean Gaussian noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GaussianSpec {
    variance: f64,
}

impl GaussianSpec {
    pub fn new(variance: f64) -> Result<Self, MaskingError> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(MaskingError::InvalidVariance);
        }
        Ok(GaussianSpec { variance })
    }

    pub fn variance(self) -> f64 {
        self.variance
    }

    pub fn std_dev(self) -> f64 {
        self.variance.sqrt()
    }
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec { variance: DEFAULT_NOISE_VARIANCE }
    }
}

impl TryFrom<f64> for GaussianSpec {
    type Error = MaskingError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        GaussianSpec::new(v)
    }
}

impl From<GaussianSpec> for f64 {
    fn from(g: GaussianSpec) -> f64 {
        g.variance
    }
}

/// `values + noise` elementwise for a given noise vector.
pub fn real_mask(values: &RealVector, noise: &RealVector) -> Result<RealVector, MaskingError> {
    values.check_same_shape(noise)?;
    let masked: Vec<f64> = values.values.iter().zip(&noise.values).map(|(v, n)| v + n).collect();
    // Two finite values can still sum to infinity.
    check_finite(&masked)?;
    Ok(RealVector { values: masked, shape: values.shape.clone() })
}

/// Splits `values` into i.i.d. Gaussian noise and the masked share.
pub fn real_share(
    values: &RealVector,
    spec: GaussianSpec,
    rng: &mut RngHandle,
) -> Result<(RealVector, RealVector), MaskingError> {
    check_finite(&values.values)?;
    let normal = Normal::new(0.0, spec.std_dev()).map_err(|_| MaskingError::InvalidVariance)?;
    let noise = RealVector {
        values: (0..values.len()).map(|_| normal.sample(rng)).collect(),
        shape: values.shape.clone(),
    };
    let masked = real_mask(values, &noise)?;
    Ok((noise, masked))
}

/// Elementwise sum, always accumulated in list order.
pub fn real_aggregate(vectors: &[RealVector]) -> Result<RealVector, MaskingError> {
    let len = vectors.first().map_or(0, RealVector::len);
    real_aggregate_with(vectors, Strategy::auto(len))
}

pub fn real_aggregate_with(vectors: &[RealVector], strategy: Strategy) -> Result<RealVector, MaskingError> {
    let first = vectors.first().ok_or(MaskingError::EmptyInput)?;
    for v in vectors {
        first.check_same_shape(v)?;
        check_finite(&v.values)?;
    }
    let values = par::map_indices(first.len(), strategy, |i| {
        vectors.iter().fold(0.0, |acc, v| acc + v.values[i])
    });
    check_finite(&values)?;
    Ok(RealVector { values, shape: first.shape.clone() })
}

/// `masked_sum - noise_sum` elementwise.
pub fn real_unmask(masked_sum: &RealVector, noise_sum: &RealVector) -> Result<RealVector, MaskingError> {
    masked_sum.check_same_shape(noise_sum)?;
    let values = masked_sum.values.iter().zip(&noise_sum.values).map(|(m, n)| m - n).collect();
    Ok(RealVector { values, shape: masked_sum.shape.clone() })
}
