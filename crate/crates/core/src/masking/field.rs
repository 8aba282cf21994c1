use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{check_shape, MaskingError, PrimeModulus, RngHandle};
use crate::par::{self, Strategy};

/// Integers in `[0, p)` with a shape. The range invariant depends on the
/// modulus, so it is checked by each operation rather than at construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldVector {
    values: Vec<i64>,
    shape: Vec<usize>,
}

impl FieldVector {
    pub fn new(values: Vec<i64>, shape: Vec<usize>) -> Result<Self, MaskingError> {
        check_shape(values.len(), &shape)?;
        Ok(FieldVector { values, shape })
    }

    pub fn from_vec(values: Vec<i64>) -> Self {
        let shape = vec![values.len()];
        FieldVector { values, shape }
    }

    /// A rank-0 vector holding one element.
    pub fn scalar(value: i64) -> Self {
        FieldVector { values: vec![value], shape: Vec::new() }
    }

    pub fn values(&self) -> &[i64] {
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

    pub fn into_values(self) -> Vec<i64> {
        self.values
    }

    fn check_in_field(&self, p: PrimeModulus) -> Result<(), MaskingError> {
        let modulus = p.value();
        match self.values.iter().position(|&v| v < 0 || v >= modulus) {
            Some(index) => Err(MaskingError::ValueOutOfField {
                index,
                value: self.values[index],
                modulus,
            }),
            None => Ok(()),
        }
    }

    fn check_same_shape(&self, other: &FieldVector) -> Result<(), MaskingError> {
        if self.shape != other.shape {
            return Err(MaskingError::ShapeMismatch {
                expected: self.shape.clone(),
                found: other.shape.clone(),
            });
        }
        Ok(())
    }
}

/// Uniform draw from `[0, p)`.
///
/// 64-bit words at or above the largest multiple of `p` are rejected so the
/// final reduction carries no modulo bias.
pub fn sample_field_element<R: RngCore + ?Sized>(rng: &mut R, p: PrimeModulus) -> i64 {
    let p = p.value() as u64;
    // 2^64 mod p, computed without u128.
    let excess = (u64::MAX % p + 1) % p;
    let zone = u64::MAX - excess;
    loop {
        let x = rng.next_u64();
        if x <= zone {
            return (x % p) as i64;
        }
    }
}

/// `masked[i] = (values[i] + noise[i]) mod p` for a given noise vector.
pub fn field_mask(
    values: &FieldVector,
    noise: &FieldVector,
    p: PrimeModulus,
) -> Result<FieldVector, MaskingError> {
    values.check_same_shape(noise)?;
    values.check_in_field(p)?;
    noise.check_in_field(p)?;
    let modulus = p.value();
    let masked = values
        .values
        .iter()
        .zip(&noise.values)
        .map(|(&v, &n)| add_mod(v, n, modulus))
        .collect();
    Ok(FieldVector { values: masked, shape: values.shape.clone() })
}

/// Splits `values` into a uniform noise share and the masked share.
pub fn field_share(
    values: &FieldVector,
    p: PrimeModulus,
    rng: &mut RngHandle,
) -> Result<(FieldVector, FieldVector), MaskingError> {
    values.check_in_field(p)?;
    let noise = FieldVector {
        values: (0..values.len()).map(|_| sample_field_element(rng, p)).collect(),
        shape: values.shape.clone(),
    };
    let masked = field_mask(values, &noise, p)?;
    Ok((noise, masked))
}

/// Elementwise `(sum_j vectors[j]) mod p`.
pub fn field_aggregate(vectors: &[FieldVector], p: PrimeModulus) -> Result<FieldVector, MaskingError> {
    let len = vectors.first().map_or(0, FieldVector::len);
    field_aggregate_with(vectors, p, Strategy::auto(len))
}

pub fn field_aggregate_with(
    vectors: &[FieldVector],
    p: PrimeModulus,
    strategy: Strategy,
) -> Result<FieldVector, MaskingError> {
    let first = vectors.first().ok_or(MaskingError::EmptyInput)?;
    for v in vectors {
        first.check_same_shape(v)?;
        v.check_in_field(p)?;
    }
    let modulus = p.value();
    let values = par::map_indices(first.len(), strategy, |i| {
        // Plain signed sum, reduced once at the end. With a validated
        // modulus this never overflows; if the caller skipped validation we
        // fold the accumulator and keep going.
        let mut acc: i64 = 0;
        for v in vectors {
            let x = v.values[i];
            acc = match acc.checked_add(x) {
                Some(s) => s,
                None => ((acc as i128 + x as i128) % modulus as i128) as i64,
            };
        }
        acc % modulus
    });
    Ok(FieldVector { values, shape: first.shape.clone() })
}

/// Elementwise `(masked_sum - noise_sum) mod p`, normalized into `[0, p)`.
pub fn field_unmask(
    masked_sum: &FieldVector,
    noise_sum: &FieldVector,
    p: PrimeModulus,
) -> Result<FieldVector, MaskingError> {
    masked_sum.check_same_shape(noise_sum)?;
    masked_sum.check_in_field(p)?;
    noise_sum.check_in_field(p)?;
    let modulus = p.value();
    let values = masked_sum
        .values
        .iter()
        .zip(&noise_sum.values)
        .map(|(&m, &n)| (m - n).rem_euclid(modulus))
        .collect();
    Ok(FieldVector { values, shape: masked_sum.shape.clone() })
}

fn add_mod(a: i64, b: i64, m: i64) -> i64 {
    // a, b < m < 2^63, so the sum fits in u64.
    ((a as u64 + b as u64) % m as u64) as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::DEFAULT_MODULUS;
    use num_bigint::BigInt;
    use proptest::prelude::*;

    fn p(v: i64) -> PrimeModulus {
        PrimeModulus::new(v).unwrap()
    }

    #[test]
    fn mask_small_example() {
        let m = field_mask(&FieldVector::from_vec(vec![5]), &FieldVector::from_vec(vec![13]), p(17));
        assert_eq!(m.unwrap().values(), &[1]);
    }

    #[test]
    fn zero_values_mask_to_noise() {
        let mut rng = RngHandle::deterministic(3);
        let (noise, masked) = field_share(&FieldVector::from_vec(vec![0, 0]), p(101), &mut rng).unwrap();
        assert_eq!(noise, masked);
    }

    #[test]
    fn mask_top_of_field() {
        let q = p(DEFAULT_MODULUS);
        let top = FieldVector::from_vec(vec![DEFAULT_MODULUS - 1]);
        let masked = field_mask(&top, &top, q).unwrap();
        let oracle = (BigInt::from(2) * BigInt::from(DEFAULT_MODULUS - 1)) % BigInt::from(DEFAULT_MODULUS);
        assert_eq!(BigInt::from(masked.values()[0]), oracle);
        assert_eq!(masked.values(), &[DEFAULT_MODULUS - 2]);
    }

    #[test]
    fn share_rejects_out_of_field() {
        let mut rng = RngHandle::deterministic(0);
        let err = field_share(&FieldVector::from_vec(vec![1, 17]), p(17), &mut rng).unwrap_err();
        assert_eq!(err, MaskingError::ValueOutOfField { index: 1, value: 17, modulus: 17 });
        let err = field_share(&FieldVector::from_vec(vec![-1]), p(17), &mut rng).unwrap_err();
        assert!(matches!(err, MaskingError::ValueOutOfField { index: 0, .. }));
    }

    #[test]
    fn aggregate_examples() {
        let vs: Vec<_> = [3, 4, 5].iter().map(|&x| FieldVector::from_vec(vec![x])).collect();
        assert_eq!(field_aggregate(&vs, p(7)).unwrap().values(), &[5]);
        let zeros = vec![FieldVector::from_vec(vec![0]); 9];
        assert_eq!(field_aggregate(&zeros, p(7)).unwrap().values(), &[0]);
    }

    #[test]
    fn aggregate_500_maximal_values() {
        let q = p(DEFAULT_MODULUS);
        let top = FieldVector::from_vec(vec![DEFAULT_MODULUS - 1]);
        let vs = vec![top; 500];
        let got = field_aggregate(&vs, q).unwrap();
        let raw = BigInt::from(500) * BigInt::from(DEFAULT_MODULUS - 1);
        assert!(raw <= BigInt::from(i64::MAX));
        let oracle = raw % BigInt::from(DEFAULT_MODULUS);
        assert_eq!(BigInt::from(got.values()[0]), oracle);
    }

    #[test]
    fn aggregate_without_validation_still_reduces_correctly() {
        // 4 * (p - 1) overflows i64 for a 63-bit prime.
        let big = 9223372036854775783i64;
        let q = p(big);
        let vs = vec![FieldVector::from_vec(vec![big - 1]); 4];
        let got = field_aggregate(&vs, q).unwrap();
        let oracle = (BigInt::from(4) * BigInt::from(big - 1)) % BigInt::from(big);
        assert_eq!(BigInt::from(got.values()[0]), oracle);
    }

    #[test]
    fn aggregate_errors() {
        assert_eq!(field_aggregate(&[], p(7)), Err(MaskingError::EmptyInput));
        let vs = vec![FieldVector::from_vec(vec![1]), FieldVector::from_vec(vec![1, 2])];
        assert!(matches!(field_aggregate(&vs, p(7)), Err(MaskingError::ShapeMismatch { .. })));
        let vs = vec![FieldVector::from_vec(vec![1]), FieldVector::from_vec(vec![7])];
        assert!(matches!(field_aggregate(&vs, p(7)), Err(MaskingError::ValueOutOfField { .. })));
    }

    #[test]
    fn unmask_examples() {
        let got = field_unmask(&FieldVector::from_vec(vec![1]), &FieldVector::from_vec(vec![13]), p(17));
        assert_eq!(got.unwrap().values(), &[5]);
        let same = FieldVector::from_vec(vec![4, 9, 0]);
        assert_eq!(field_unmask(&same, &same, p(17)).unwrap().values(), &[0, 0, 0]);
        let err = field_unmask(&FieldVector::from_vec(vec![1]), &FieldVector::scalar(1), p(17));
        assert!(matches!(err, Err(MaskingError::ShapeMismatch { .. })));
    }

    #[test]
    fn pipeline_k5_p101_matches_plain_sum() {
        let q = p(101);
        let mut rng = RngHandle::deterministic(11);
        let raws: Vec<FieldVector> =
            (0..5).map(|j| FieldVector::from_vec(vec![j * 7 % 101, 100 - j, 3])).collect();
        let (noise, masked): (Vec<_>, Vec<_>) =
            raws.iter().map(|r| field_share(r, q, &mut rng).unwrap()).unzip();
        let got = field_unmask(
            &field_aggregate(&masked, q).unwrap(),
            &field_aggregate(&noise, q).unwrap(),
            q,
        )
        .unwrap();
        let oracle: Vec<i64> = (0..3)
            .map(|i| raws.iter().map(|r| r.values()[i]).sum::<i64>() % 101)
            .collect();
        assert_eq!(got.values(), oracle.as_slice());
    }

    #[test]
    fn strategies_are_bit_identical() {
        let q = p(DEFAULT_MODULUS);
        let mut rng = RngHandle::deterministic(5);
        let vs: Vec<FieldVector> = (0..8)
            .map(|_| FieldVector::from_vec((0..10_000).map(|_| sample_field_element(&mut rng, q)).collect()))
            .collect();
        assert_eq!(
            field_aggregate_with(&vs, q, par::Strategy::Sequential).unwrap(),
            field_aggregate_with(&vs, q, par::Strategy::Parallel).unwrap()
        );
    }

    #[test]
    fn noise_is_uniform_chi_square() {
        // 16 degrees of freedom; the 0.999 quantile of chi^2(16) is 39.252.
        const CRITICAL: f64 = 39.252;
        let q = p(17);
        let mut rng = RngHandle::deterministic(2024);
        let draws = 100_000;
        let mut counts = [0u64; 17];
        for _ in 0..draws {
            counts[sample_field_element(&mut rng, q) as usize] += 1;
        }
        let expected = draws as f64 / 17.0;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(stat < CRITICAL, "chi-square statistic {stat}");
    }

    #[test]
    fn same_seed_same_shares() {
        let q = p(DEFAULT_MODULUS);
        let v = FieldVector::from_vec(vec![1, 2, 3]);
        let a = field_share(&v, q, &mut RngHandle::deterministic(9)).unwrap();
        let b = field_share(&v, q, &mut RngHandle::deterministic(9)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn exact_reconstruction(
            k in 1usize..=512,
            prime in prop::sample::select(vec![2i64, 17, 101, 65537, DEFAULT_MODULUS]),
            seed in any::<u64>(),
            len in 1usize..4,
        ) {
            let q = p(prime);
            prop_assume!(validate_modulus_ok(q, k));
            let mut rng = RngHandle::deterministic(seed);
            let raws: Vec<FieldVector> = (0..k)
                .map(|_| FieldVector::from_vec((0..len).map(|_| sample_field_element(&mut rng, q)).collect()))
                .collect();
            let (noise, masked): (Vec<_>, Vec<_>) =
                raws.iter().map(|r| field_share(r, q, &mut rng).unwrap()).unzip();

            // Shadow the unreduced sums in i128: they must fit i64.
            for vs in [&noise, &masked] {
                for i in 0..len {
                    let s: i128 = vs.iter().map(|v| v.values()[i] as i128).sum();
                    prop_assert!(s <= i64::MAX as i128);
                }
            }

            let got = field_unmask(
                &field_aggregate(&masked, q).unwrap(),
                &field_aggregate(&noise, q).unwrap(),
                q,
            ).unwrap();
            for i in 0..len {
                let oracle = raws.iter().map(|r| r.values()[i] as i128).sum::<i128>() % prime as i128;
                prop_assert_eq!(got.values()[i] as i128, oracle);
            }
        }
    }

    fn validate_modulus_ok(q: PrimeModulus, k: usize) -> bool {
        crate::masking::validate_modulus(q, k as u64).is_ok()
    }
}
