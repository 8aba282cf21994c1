//! Splits flagged local parameters into a noise share and a masked share.

use maskfed_core::masking::{field_share, real_share, FieldVector, GaussianSpec, PrimeModulus, RealVector, RngHandle};
use maskfed_core::{CompensatorFlagMap, DataType, ParameterMap, ParameterValue};

use super::ClientError;

/// Returns `(server-bound map, noise map)`. Unflagged parameters pass
/// through unchanged. Integers are range-checked against `p` first, since
/// this is the only place raw values exist.
pub fn mask_parameters(
    locals: &ParameterMap,
    flags: &CompensatorFlagMap,
    p: PrimeModulus,
    noise: GaussianSpec,
    rng: &mut RngHandle,
) -> Result<(ParameterMap, ParameterMap), ClientError> {
    for (name, value) in locals {
        if let ParameterValue::NonNegInt(v) = value {
            if *v < 0 || *v >= p.value() {
                return Err(ClientError::ValueOutOfRange { name: name.clone(), value: *v, modulus: p.value() });
            }
        }
    }
    let mut masked = locals.clone();
    let mut noise_map = ParameterMap::new();
    for (name, dtype) in flags {
        let value = locals
            .get(name)
            .ok_or_else(|| maskfed_core::algorithms::AlgorithmError::UnknownParameter(name.clone()))?;
        let mismatch = || maskfed_core::algorithms::AlgorithmError::TypeMismatch(name.clone());
        let (n, m) = match (dtype, value) {
            (DataType::NonNegativeInteger, ParameterValue::NonNegInt(v)) => {
                let (n, m) = field_share(&FieldVector::scalar(*v), p, rng)?;
                (ParameterValue::NonNegInt(n.values()[0]), ParameterValue::NonNegInt(m.values()[0]))
            }
            (DataType::FloatScalar, ParameterValue::Float(v)) => {
                let (n, m) = real_share(&RealVector::scalar(*v)?, noise, rng)?;
                (ParameterValue::Float(n.values()[0]), ParameterValue::Float(m.values()[0]))
            }
            (DataType::FloatArray, ParameterValue::FloatArray(v)) => {
                let (n, m) = real_share(v, noise, rng)?;
                (ParameterValue::FloatArray(n), ParameterValue::FloatArray(m))
            }
            _ => return Err(mismatch().into()),
        };
        noise_map.insert(name.clone(), n);
        masked.insert(name.clone(), m);
    }
    Ok((masked, noise_map))
}
