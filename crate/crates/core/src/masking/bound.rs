use super::MaskingError;

/// Upper bound, in bits, on the mutual information between a local model
/// with variance `sigma2_model` and its Gaussian-masked counterpart:
/// `0.5 * log2(1 + sigma2_model / sigma2_noise)`.
pub fn mi_upper_bound(sigma2_model: f64, sigma2_noise: f64) -> Result<f64, MaskingError> {
    if !(sigma2_noise.is_finite() && sigma2_noise > 0.0) {
        return Err(MaskingError::InvalidVariance);
    }
    if !(sigma2_model.is_finite() && sigma2_model >= 0.0) {
        return Err(MaskingError::InvalidVariance);
    }
    Ok(0.5 * (1.0 + sigma2_model / sigma2_noise).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_points() {
        let s = 1e12;
        assert!((mi_upper_bound(s, s).unwrap() - 0.5).abs() <= 1e-12);
        assert!((mi_upper_bound(3.0 * s, s).unwrap() - 1.0).abs() <= 1e-12);
        assert_eq!(mi_upper_bound(0.0, s).unwrap(), 0.0);
    }

    #[test]
    fn invalid_variances() {
        assert_eq!(mi_upper_bound(1.0, 0.0), Err(MaskingError::InvalidVariance));
        assert_eq!(mi_upper_bound(1.0, -2.0), Err(MaskingError::InvalidVariance));
        assert_eq!(mi_upper_bound(-1.0, 1.0), Err(MaskingError::InvalidVariance));
        assert_eq!(mi_upper_bound(f64::NAN, 1.0), Err(MaskingError::InvalidVariance));
    }

    proptest! {
        #[test]
        fn scale_invariant(s in 0.0f64..1e6, t in 1e-3f64..1e6, a in 1e-3f64..1e3) {
            let base = mi_upper_bound(s, t).unwrap();
            let scaled = mi_upper_bound(a * s, a * t).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1.0));
        }

        #[test]
        fn monotone(s in 0.0f64..1e6, ds in 1e-3f64..1e6, t in 1e-3f64..1e6, dt in 1e-3f64..1e6) {
            prop_assert!(mi_upper_bound(s + ds, t).unwrap() >= mi_upper_bound(s, t).unwrap());
            prop_assert!(mi_upper_bound(s, t + dt).unwrap() <= mi_upper_bound(s, t).unwrap());
        }
    }
}
