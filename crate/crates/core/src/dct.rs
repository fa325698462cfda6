//! Orthonormal type-II DCT and its inverse along one (temporal) axis.
//!
//! Trajectories in this crate are short (a handful to a few dozen frames),
//! so the transform is evaluated directly against a cached cosine basis
//! rather than through an FFT.

use std::f64::consts::PI;

/// Cosine basis for one transform length. Row `k` holds
/// `s_k * cos(pi * (2n + 1) * k / 2L)` for `n in 0..L`.
#[derive(Debug, Clone)]
pub struct Dct2 {
    len: usize,
    basis: Vec<f64>,
}

impl Dct2 {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "DCT length must be at least 1");
        let l = len as f64;
        let dc = (1.0 / l).sqrt();
        let ac = (2.0 / l).sqrt();
        let mut basis = Vec::with_capacity(len * len);
        for k in 0..len {
            let scale = if k == 0 { dc } else { ac };
            for n in 0..len {
                let angle = PI * ((2 * n + 1) * k) as f64 / (2.0 * l);
                basis.push(scale * angle.cos());
            }
        }
        Self { len, basis }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn row(&self, k: usize) -> &[f64] {
        &self.basis[k * self.len..(k + 1) * self.len]
    }

    /// First `out.len()` coefficients of the forward transform of `x`.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.len, "input length must match the plan");
        assert!(out.len() <= self.len);
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.row(k).iter().zip(x).map(|(b, v)| b * v).sum();
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        self.forward_into(x, &mut out);
        out
    }

    /// Inverse transform. `coeffs` may be shorter than the plan length, in
    /// which case the missing high-frequency coefficients are taken as zero.
    pub fn inverse_into(&self, coeffs: &[f64], out: &mut [f64]) {
        assert!(coeffs.len() <= self.len);
        assert_eq!(out.len(), self.len);
        out.fill(0.0);
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, b) in out.iter_mut().zip(self.row(k)) {
                *o += c * b;
            }
        }
    }

    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        self.inverse_into(coeffs, &mut out);
        out
    }
}

/// Orthonormal DCT-II of `x`.
pub fn dct2(x: &[f64]) -> Vec<f64> {
    Dct2::new(x.len()).forward(x)
}

/// Inverse of [`dct2`].
pub fn idct2(coeffs: &[f64]) -> Vec<f64> {
    Dct2::new(coeffs.len()).inverse(coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // Term-by-term evaluation of the defining sum, kept separate from the
    // cached-basis path above.
    fn definition(x: &[f64]) -> Vec<f64> {
        let l = x.len() as f64;
        (0..x.len())
            .map(|k| {
                let s = if k == 0 {
                    (1.0 / l).sqrt()
                } else {
                    (2.0 / l).sqrt()
                };
                let mut acc = 0.0;
                for (n, v) in x.iter().enumerate() {
                    acc += v * (PI * (2.0 * n as f64 + 1.0) * k as f64 / (2.0 * l)).cos();
                }
                s * acc
            })
            .collect()
    }

    #[test]
    fn constant_is_dc_only() {
        for len in 1..=12 {
            let c = 2.5;
            let out = dct2(&vec![c; len]);
            assert_relative_eq!(out[0], c * (len as f64).sqrt(), epsilon = 1e-12);
            for v in &out[1..] {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_definition_on_ramp() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let got = dct2(&x);
        let want = definition(&x);
        // X_0 = 10 / 2 = 5 exactly.
        assert_relative_eq!(want[0], 5.0, epsilon = 1e-12);
        for (g, w) in got.iter().zip(&want) {
            assert_relative_eq!(g, w, epsilon = 1e-12);
        }
        // Symmetric ramp has no even AC terms.
        assert!(got[2].abs() < 1e-12);
    }

    #[test]
    fn pure_dc_inverts_to_constant() {
        for len in 1..=9 {
            let mut coeffs = vec![0.0; len];
            coeffs[0] = (len as f64).sqrt();
            for v in idct2(&coeffs) {
                assert_relative_eq!(v, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn truncated_reconstruction_loses_energy() {
        let x: Vec<f64> = (0..16).map(|n| ((n * 7 % 5) as f64) - 1.3).collect();
        let plan = Dct2::new(x.len());
        let full = plan.forward(&x);
        let e_orig: f64 = x.iter().map(|v| v * v).sum();
        let back = plan.inverse(&full);
        for (a, b) in back.iter().zip(&x) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        for keep in 1..x.len() {
            let approx = plan.inverse(&full[..keep]);
            let e: f64 = approx.iter().map(|v| v * v).sum();
            let kept: f64 = full[..keep].iter().map(|v| v * v).sum();
            assert!(e <= e_orig + 1e-9);
            assert_relative_eq!(e, kept, epsilon = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn round_trip_and_parseval(x in prop::collection::vec(-100.0f64..100.0, 1..33)) {
            let coeffs = dct2(&x);
            let back = idct2(&coeffs);
            let scale = x.iter().map(|v| v.abs()).fold(1.0, f64::max);
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() <= 1e-9 * scale);
            }
            let ex: f64 = x.iter().map(|v| v * v).sum();
            let ec: f64 = coeffs.iter().map(|v| v * v).sum();
            prop_assert!((ex - ec).abs() <= 1e-9 * ex.max(1.0));
        }

        #[test]
        fn linear(
            x in prop::collection::vec(-10.0f64..10.0, 8),
            y in prop::collection::vec(-10.0f64..10.0, 8),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
            let lhs = dct2(&mix);
            let (dx, dy) = (dct2(&x), dct2(&y));
            for k in 0..8 {
                prop_assert!((lhs[k] - (a * dx[k] + b * dy[k])).abs() < 1e-6);
            }
        }

        #[test]
        fn agrees_with_definition(x in prop::collection::vec(-5.0f64..5.0, 1..20)) {
            for (g, w) in dct2(&x).iter().zip(definition(&x)) {
                prop_assert!((g - w).abs() < 1e-9);
            }
        }
    }
}
