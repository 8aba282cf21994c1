//! Additive secret sharing of local parameters.
//!
//! Two mechanisms are provided:
//!
//! * **Field sharing** for non-negative integers. Values and noise live in
//!   `Z_p`; masking, aggregation and unmasking are modular additions and
//!   subtractions. Reconstruction is exact as long as the true sum stays
//!   below `p` (a caller responsibility, since only clients see raw values)
//!   and `K * (p - 1)` fits a signed 64-bit integer, which
//!   [`validate_modulus`] checks.
//! * **Real sharing** for floats and negative integers. Noise is drawn from
//!   a zero-mean Gaussian; reconstruction is exact up to float rounding.
//!
//! Everything here is pure: no I/O, no knowledge of who holds which share.

mod bound;
mod field;
mod modulus;
mod real;
mod rng;

pub use bound::mi_upper_bound;
pub use field::{
    field_aggregate, field_aggregate_with, field_mask, field_share, field_unmask,
    sample_field_element, FieldVector,
};
pub use modulus::{is_prime, validate_modulus, PrimeModulus, DEFAULT_MODULUS};
pub use real::{
    real_aggregate, real_aggregate_with, real_mask, real_share, real_unmask, GaussianSpec,
    RealVector, DEFAULT_NOISE_VARIANCE,
};
pub use rng::{RngHandle, RngKind};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaskingError {
    #[error("{0} is not prime")]
    NotPrime(i64),
    #[error("modulus must be at most {max_bit_width} bits wide for this many clients")]
    ModulusTooLarge { max_bit_width: u32 },
    #[error("client count must be at least 1")]
    InvalidClientCount,
    #[error("element {index} = {value} is outside the field [0, {modulus})")]
    ValueOutOfField { index: usize, value: i64, modulus: i64 },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("element {index} is not finite")]
    NonFiniteInput { index: usize },
    #[error("invalid variance")]
    InvalidVariance,
    #[error("nothing to aggregate")]
    EmptyInput,
}

fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(len: usize, shape: &[usize]) -> Result<(), MaskingError> {
    if element_count(shape) != len {
        return Err(MaskingError::ShapeMismatch {
            expected: shape.to_vec(),
            found: vec![len],
        });
    }
    Ok(())
}
