//! Round-to-nearest symmetric quantizer.
//!
//! `Δ = max|W| / 2^(N-1)` and `W_q = Δ · round(W / Δ)`. Rounding is half
//! away from zero. Codes are clamped to `[-2^(N-1), 2^(N-1)]`; the upper
//! code is reached only by the positive maximum element, which keeps the
//! reconstruction error within `Δ/2` everywhere.

use serde::{Deserialize, Serialize};

use super::BsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub n_bits: u32,
    pub delta: f64,
}

impl QuantParams {
    pub fn min_code(&self) -> i32 {
        -(1i32 << (self.n_bits - 1))
    }

    pub fn max_code(&self) -> i32 {
        1i32 << (self.n_bits - 1)
    }
}

/// Quantizes `w`. An all-zero input yields zero codes and the sentinel
/// `Δ = 1`.
pub fn quantize(w: &[f64], n_bits: u32) -> Result<(Vec<i32>, QuantParams), BsError> {
    if w.is_empty() {
        return Err(BsError::Shape("cannot quantize an empty tensor".into()));
    }
    if !(2..=31).contains(&n_bits) {
        return Err(BsError::Quant(format!("n_bits must be in 2..=31, got {n_bits}")));
    }
    if let Some(v) = w.iter().find(|v| !v.is_finite()) {
        return Err(BsError::Quant(format!("non-finite weight {v}")));
    }
    let max_abs = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Ok((vec![0; w.len()], QuantParams { n_bits, delta: 1.0 }));
    }
    let params = QuantParams { n_bits, delta: max_abs / f64::from(1u32 << (n_bits - 1)) };
    let (lo, hi) = (params.min_code(), params.max_code());
    let codes = w.iter().map(|v| ((v / params.delta).round() as i32).clamp(lo, hi)).collect();
    Ok((codes, params))
}

pub fn dequantize(codes: &[i32], params: QuantParams) -> Vec<f64> {
    codes.iter().map(|&q| f64::from(q) * params.delta).collect()
}

/// Binary point position of the power-of-two scale for `delta`: the
/// largest `p` with `2^-p >= delta`.
pub fn scale_position(delta: f64) -> i32 {
    if delta <= 0.0 || !delta.is_finite() {
        return 0;
    }
    (-delta.log2()).floor() as i32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let (q, p) = quantize(&[-1.0, 0.3, 1.0], 8).unwrap();
        assert_eq!(p.delta, 0.0078125);
        assert_eq!(q, vec![-128, 38, 128]);
        assert_eq!(dequantize(&q, p)[1], 0.296875);
    }

    #[test]
    fn max_is_fixed_point() {
        let (q, p) = quantize(&[0.5], 8).unwrap();
        assert_eq!(p.delta, 0.5 / 128.0);
        assert_eq!(q, vec![128]);
        assert_eq!(dequantize(&q, p), vec![0.5]);
    }

    #[test]
    fn zeros_use_sentinel() {
        let (q, p) = quantize(&[0.0; 5], 8).unwrap();
        assert_eq!(q, vec![0; 5]);
        assert_eq!(p.delta, 1.0);
    }

    #[test]
    fn half_rounds_away_from_zero() {
        // Δ = 1/128 for max 1.0; 2.5Δ and -2.5Δ.
        let (q, _) = quantize(&[1.0, 2.5 / 128.0, -2.5 / 128.0], 8).unwrap();
        assert_eq!(&q[1..], &[3, -3]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(quantize(&[], 8).is_err());
        assert!(quantize(&[1.0], 1).is_err());
        assert!(quantize(&[f64::NAN], 8).is_err());
    }

    #[test]
    fn pow2_position() {
        assert_eq!(scale_position(1.0 / 128.0), 7);
        assert_eq!(scale_position(0.01), 6);
    }
}
