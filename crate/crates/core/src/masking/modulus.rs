use serde::{Deserialize, Serialize};

use super::MaskingError;

/// `2^54 - 33`, the largest prime below `2^54`.
pub const DEFAULT_MODULUS: i64 = (1 << 54) - 33;

/// A prime field size, stored signed so every field element and every
/// admissible sum of elements fits an `i64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PrimeModulus(i64);

impl PrimeModulus {
    pub fn new(p: i64) -> Result<Self, MaskingError> {
        if p < 2 || !is_prime(p as u64) {
            return Err(MaskingError::NotPrime(p));
        }
        // p < 2^63 holds by type, so bit_width <= 63.
        Ok(PrimeModulus(p))
    }

    pub fn value(self) -> i64 {
        self.0
    }

    /// `ceil(log2 p)`.
    pub fn bit_width(self) -> u32 {
        ceil_log2(self.0 as u64)
    }
}

impl Default for PrimeModulus {
    fn default() -> Self {
        PrimeModulus(DEFAULT_MODULUS)
    }
}

impl std::fmt::Display for PrimeModulus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl TryFrom<String> for PrimeModulus {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let p: i64 = s.parse().map_err(|e| format!("modulus {s:?}: {e}"))?;
        PrimeModulus::new(p).map_err(|e| e.to_string())
    }
}

impl From<PrimeModulus> for String {
    fn from(p: PrimeModulus) -> String {
        p.0.to_string()
    }
}

fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// Checks that `max_clients` sums of `p - 1` cannot overflow a signed 64-bit
/// accumulator, i.e. `bit_width(p) <= 63 - ceil(log2 K)`.
pub fn validate_modulus(p: PrimeModulus, max_clients: u64) -> Result<(), MaskingError> {
    if max_clients == 0 {
        return Err(MaskingError::InvalidClientCount);
    }
    let max_bit_width = 63u32.saturating_sub(ceil_log2(max_clients));
    if p.bit_width() > max_bit_width {
        return Err(MaskingError::ModulusTooLarge { max_bit_width });
    }
    Ok(())
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin; the first twelve prime bases are sufficient
/// for every `n < 2^64`.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &b in &BASES {
        if n.is_multiple_of(b) {
            return n == b;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
