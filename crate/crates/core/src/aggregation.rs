//! Server-side reconstruction of aggregated parameters from one round's
//! masked submissions and the compensator's aggregated noise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::CompensatorIdentity;
use crate::masking::{
    field_aggregate, field_unmask, real_aggregate, real_unmask, FieldVector, MaskingError,
    PrimeModulus, RealVector,
};
use crate::protocol::{CompensatorFlagMap, DataType, ParameterMap, ParameterValue, SyncState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error("no submissions to aggregate")]
    NoSubmissions,
    #[error("parameter {0:?} missing from a submission")]
    MissingParameter(String),
    #[error("parameter {0:?} is flagged but no compensation is available")]
    MissingCompensation(String),
    #[error("clients disagree on the compensator flag for {0:?}")]
    FlagDisagreement(String),
    #[error("parameter {0:?} has the wrong data type")]
    TypeMismatch(String),
    #[error(transparent)]
    Masking(#[from] MaskingError),
}

/// One client's contribution to a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub sync: SyncState,
    pub parameters: ParameterMap,
    pub flags: CompensatorFlagMap,
}

/// The compensator's aggregated noise for a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compensation {
    pub identity: CompensatorIdentity,
    pub sync: SyncState,
    pub noise: ParameterMap,
}

/// Everything received for one round. Submissions are keyed by username,
/// which also fixes the summation order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundBuffer {
    pub round: u64,
    pub submissions: BTreeMap<String, Submission>,
    pub compensation: Option<Compensation>,
}

impl RoundBuffer {
    pub fn new(round: u64) -> Self {
        RoundBuffer { round, ..Default::default() }
    }

    /// True once any submission carries a compensator flag.
    pub fn expects_compensation(&self) -> bool {
        self.submissions.values().any(|s| !s.flags.is_empty())
    }

    /// All `participants` submitted, and compensation is present exactly
    /// when flags were set.
    pub fn is_complete(&self, participants: usize) -> bool {
        self.submissions.len() == participants
            && self.expects_compensation() == self.compensation.is_some()
    }
}

/// Aggregates parameter `name` across every submission in `buffer`.
///
/// Flagged parameters are unmasked with the compensator's noise: modular
/// for integers, float subtraction otherwise. Unflagged ones are summed
/// directly.
pub fn compute_aggregated_parameter(
    name: &str,
    dtype: DataType,
    buffer: &RoundBuffer,
    p: PrimeModulus,
) -> Result<ParameterValue, AggregationError> {
    if buffer.submissions.is_empty() {
        return Err(AggregationError::NoSubmissions);
    }
    let mut flag: Option<Option<DataType>> = None;
    let mut values = Vec::with_capacity(buffer.submissions.len());
    for submission in buffer.submissions.values() {
        let this_flag = submission.flags.get(name).copied();
        match flag {
            None => flag = Some(this_flag),
            Some(f) if f != this_flag => return Err(AggregationError::FlagDisagreement(name.into())),
            Some(_) => {}
        }
        let value = submission
            .parameters
            .get(name)
            .ok_or_else(|| AggregationError::MissingParameter(name.into()))?;
        if value.data_type() != dtype {
            return Err(AggregationError::TypeMismatch(name.into()));
        }
        values.push(value);
    }
    let flagged = match flag.flatten() {
        Some(d) if d != dtype => return Err(AggregationError::TypeMismatch(name.into())),
        Some(_) => true,
        None => false,
    };
    let noise = if flagged {
        let noise = buffer
            .compensation
            .as_ref()
            .and_then(|c| c.noise.get(name))
            .ok_or_else(|| AggregationError::MissingCompensation(name.into()))?;
        if noise.data_type() != dtype {
            return Err(AggregationError::TypeMismatch(name.into()));
        }
        Some(noise)
    } else {
        None
    };

    let mismatch = || AggregationError::TypeMismatch(name.into());
    match dtype {
        DataType::NonNegativeInteger => {
            let vectors: Vec<FieldVector> =
                values.iter().map(|v| v.as_int().map(FieldVector::scalar).ok_or_else(mismatch)).collect::<Result<_, _>>()?;
            let mut sum = field_aggregate(&vectors, p)?;
            if let Some(noise) = noise {
                let noise = FieldVector::scalar(noise.as_int().ok_or_else(mismatch)?);
                sum = field_unmask(&sum, &noise, p)?;
            }
            Ok(ParameterValue::NonNegInt(sum.values()[0]))
        }
        DataType::FloatScalar => {
            let vectors: Vec<RealVector> = values
                .iter()
                .map(|v| v.as_float().ok_or_else(mismatch).and_then(|x| Ok(RealVector::scalar(x)?)))
                .collect::<Result<_, _>>()?;
            let mut sum = real_aggregate(&vectors)?;
            if let Some(noise) = noise {
                let noise = RealVector::scalar(noise.as_float().ok_or_else(mismatch)?)?;
                sum = real_unmask(&sum, &noise)?;
            }
            Ok(ParameterValue::Float(sum.values()[0]))
        }
        DataType::FloatArray => {
            let vectors: Vec<RealVector> =
                values.iter().map(|v| v.as_array().cloned().ok_or_else(mismatch)).collect::<Result<_, _>>()?;
            let mut sum = real_aggregate(&vectors)?;
            if let Some(noise) = noise {
                sum = real_unmask(&sum, noise.as_array().ok_or_else(mismatch)?)?;
            }
            Ok(ParameterValue::FloatArray(sum))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::sha256_hex;
    use crate::masking::{field_share, real_share, GaussianSpec, RngHandle};

    fn p() -> PrimeModulus {
        PrimeModulus::default()
    }

    fn identity() -> CompensatorIdentity {
        CompensatorIdentity {
            project_hash: sha256_hex("p"),
            username_hash: sha256_hex("u"),
            token_hash: sha256_hex("t"),
        }
    }

    fn submission(params: ParameterMap, flags: CompensatorFlagMap) -> Submission {
        Submission { sync: SyncState::new("Sum", 1), parameters: params, flags }
    }

    /// Masks `counts` and `sums` like honest clients would.
    fn masked_buffer(counts: &[i64], sums: &[Vec<f64>]) -> RoundBuffer {
        let mut rng = RngHandle::deterministic(4);
        let mut buffer = RoundBuffer::new(1);
        let mut noise_counts = Vec::new();
        let mut noise_sums = Vec::new();
        for (i, (&c, s)) in counts.iter().zip(sums).enumerate() {
            let (nc, mc) = field_share(&FieldVector::scalar(c), p(), &mut rng).unwrap();
            let (ns, ms) = real_share(&RealVector::from_vec(s.clone()).unwrap(), GaussianSpec::default(), &mut rng).unwrap();
            noise_counts.push(nc);
            noise_sums.push(ns);
            let params = ParameterMap::from([
                ("local-count".into(), ParameterValue::NonNegInt(mc.values()[0])),
                ("local-sum".into(), ParameterValue::FloatArray(ms)),
            ]);
            let flags = CompensatorFlagMap::from([
                ("local-count".into(), DataType::NonNegativeInteger),
                ("local-sum".into(), DataType::FloatArray),
            ]);
            buffer.submissions.insert(format!("user{i}"), submission(params, flags));
        }
        let noise = ParameterMap::from([
            ("local-count".into(), ParameterValue::NonNegInt(field_aggregate(&noise_counts, p()).unwrap().values()[0])),
            ("local-sum".into(), ParameterValue::FloatArray(real_aggregate(&noise_sums).unwrap())),
        ]);
        buffer.compensation = Some(Compensation { identity: identity(), sync: SyncState::new("Sum", 1), noise });
        buffer
    }

    #[test]
    fn flagged_count_is_exact() {
        let b = masked_buffer(&[2, 2, 1], &[vec![3.0], vec![7.0], vec![5.0]]);
        assert!(b.is_complete(3));
        let count = compute_aggregated_parameter("local-count", DataType::NonNegativeInteger, &b, p()).unwrap();
        assert_eq!(count, ParameterValue::NonNegInt(5));
        let sum = compute_aggregated_parameter("local-sum", DataType::FloatArray, &b, p()).unwrap();
        assert!((sum.as_array().unwrap().values()[0] - 15.0).abs() <= 1e-6);
    }

    #[test]
    fn zero_vectors_with_zero_noise() {
        let mut b = RoundBuffer::new(0);
        for i in 0..3 {
            let params = ParameterMap::from([(
                "v".into(),
                ParameterValue::FloatArray(RealVector::from_vec(vec![0.0; 4]).unwrap()),
            )]);
            let flags = CompensatorFlagMap::from([("v".into(), DataType::FloatArray)]);
            b.submissions.insert(format!("u{i}"), submission(params, flags));
        }
        let zero = ParameterMap::from([("v".into(), ParameterValue::FloatArray(RealVector::from_vec(vec![0.0; 4]).unwrap()))]);
        b.compensation = Some(Compensation { identity: identity(), sync: SyncState::new("Sum", 1), noise: zero });
        let got = compute_aggregated_parameter("v", DataType::FloatArray, &b, p()).unwrap();
        assert_eq!(got.as_array().unwrap().values(), &[0.0; 4]);
    }

    #[test]
    fn unflagged_values_are_summed_plainly() {
        let mut b = RoundBuffer::new(0);
        for (i, x) in [1.5, 2.5, -1.0].iter().enumerate() {
            let params = ParameterMap::from([
                ("x".into(), ParameterValue::Float(*x)),
                ("n".into(), ParameterValue::NonNegInt(16)),
            ]);
            b.submissions.insert(format!("u{i}"), submission(params, CompensatorFlagMap::new()));
        }
        assert!(b.is_complete(3));
        assert_eq!(compute_aggregated_parameter("x", DataType::FloatScalar, &b, p()).unwrap(), ParameterValue::Float(3.0));
        let small = PrimeModulus::new(17).unwrap();
        assert_eq!(
            compute_aggregated_parameter("n", DataType::NonNegativeInteger, &b, small),
            Ok(ParameterValue::NonNegInt(48 % 17))
        );
    }

    #[test]
    fn missing_compensation() {
        let mut b = masked_buffer(&[1, 1, 1], &[vec![1.0], vec![1.0], vec![1.0]]);
        b.compensation = None;
        assert!(!b.is_complete(3));
        assert_eq!(
            compute_aggregated_parameter("local-count", DataType::NonNegativeInteger, &b, p()),
            Err(AggregationError::MissingCompensation("local-count".into()))
        );
    }

    #[test]
    fn flag_disagreement() {
        let mut b = masked_buffer(&[1, 1, 1], &[vec![1.0], vec![1.0], vec![1.0]]);
        b.submissions.get_mut("user1").unwrap().flags.remove("local-sum");
        assert_eq!(
            compute_aggregated_parameter("local-sum", DataType::FloatArray, &b, p()),
            Err(AggregationError::FlagDisagreement("local-sum".into()))
        );
    }

    #[test]
    fn type_mismatch() {
        let b = masked_buffer(&[1, 1, 1], &[vec![1.0], vec![1.0], vec![1.0]]);
        assert_eq!(
            compute_aggregated_parameter("local-count", DataType::FloatScalar, &b, p()),
            Err(AggregationError::TypeMismatch("local-count".into()))
        );
        assert_eq!(
            compute_aggregated_parameter("absent", DataType::FloatScalar, &b, p()),
            Err(AggregationError::MissingParameter("absent".into()))
        );
        assert_eq!(
            compute_aggregated_parameter("x", DataType::FloatScalar, &RoundBuffer::new(0), p()),
            Err(AggregationError::NoSubmissions)
        );
    }
}
