//! Fixed-point encoding of reals into the ring Z_2^64.
//!
//! A real `x` is stored as `round(x * 2^frac_bits)` in two's complement, so
//! addition in the ring is addition of the encoded reals and a product of two
//! encodings carries `2 * frac_bits` fractional bits until it is truncated.

use serde::{Deserialize, Serialize};

use crate::error::{MpcError, Result};

/// Width of the ring. Fixed; other widths are not supported.
pub const RING_BITS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedPointConfig {
    frac_bits: u32,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig { frac_bits: 16 }
    }
}

impl FixedPointConfig {
    pub fn new(frac_bits: u32) -> Result<Self> {
        if !(1..=32).contains(&frac_bits) {
            return Err(MpcError::Config(format!(
                "frac_bits must be in 1..=32, got {frac_bits}"
            )));
        }
        Ok(FixedPointConfig { frac_bits })
    }

    pub fn ring_bits(&self) -> u32 {
        RING_BITS
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    /// `2^frac_bits` as a float.
    pub fn scale(&self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    /// Exclusive magnitude bound `B = 2^(ring_bits - frac_bits - 1)` on encodable reals.
    pub fn bound(&self) -> f64 {
        2f64.powi((RING_BITS - self.frac_bits - 1) as i32)
    }

    /// Encoding of 1.0.
    pub fn one(&self) -> u64 {
        1u64 << self.frac_bits
    }

    /// Smallest representable increment, `2^-frac_bits`.
    pub fn ulp(&self) -> f64 {
        1.0 / self.scale()
    }
}

/// Encodes `x`, rounding half away from zero.
pub fn encode(x: f64, cfg: FixedPointConfig) -> Result<u64> {
    let bound = cfg.bound();
    if !x.is_finite() || x.abs() >= bound {
        return Err(MpcError::Overflow { value: x, bound });
    }
    // f64::round is half-away-from-zero.
    let scaled = (x * cfg.scale()).round() as i64;
    Ok(scaled as u64)
}

/// Interprets `r` as a signed two's-complement integer and rescales it.
pub fn decode(r: u64, cfg: FixedPointConfig) -> f64 {
    (r as i64) as f64 / cfg.scale()
}

/// Fixed-point product: full-width multiply, then arithmetic shift by `frac_bits`.
///
/// The representable-bound check on the result only runs with debug assertions on.
pub fn fx_mul(a: u64, b: u64, cfg: FixedPointConfig) -> Result<u64> {
    let wide = (a as i64 as i128) * (b as i64 as i128);
    let shifted = wide >> cfg.frac_bits;
    if cfg!(debug_assertions) {
        let limit = 1i128 << (RING_BITS - 1);
        if shifted >= limit || shifted < -limit {
            return Err(MpcError::Overflow {
                value: shifted as f64 / cfg.scale(),
                bound: cfg.bound(),
            });
        }
    }
    Ok(shifted as i64 as u64)
}

/// A plaintext tensor of ring elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingTensor {
    shape: Vec<usize>,
    data: Vec<u64>,
    cfg: FixedPointConfig,
}

impl RingTensor {
    pub fn new(shape: Vec<usize>, data: Vec<u64>, cfg: FixedPointConfig) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(MpcError::ShapeMismatch(shape, vec![data.len()]));
        }
        Ok(RingTensor { shape, data, cfg })
    }

    pub fn zeros(shape: Vec<usize>, cfg: FixedPointConfig) -> Self {
        let len = shape.iter().product();
        RingTensor {
            shape,
            data: vec![0; len],
            cfg,
        }
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64], cfg: FixedPointConfig) -> Result<Self> {
        let data = values
            .iter()
            .map(|&x| encode(x, cfg))
            .collect::<Result<Vec<_>>>()?;
        RingTensor::new(shape, data, cfg)
    }

    pub fn scalar(x: f64, cfg: FixedPointConfig) -> Result<Self> {
        RingTensor::from_f64(vec![1], &[x], cfg)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&r| decode(r, self.cfg)).collect()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u64> {
        self.data
    }

    pub fn cfg(&self) -> FixedPointConfig {
        self.cfg
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
