//! Spatial-guided absorber: single-head masked cross-attention from anchor
//! tokens (queries) onto nearby P-tokens (keys/values), followed by a
//! residual LayerNorm. Output row count always equals the number of anchors.

use crate::error::{FreresError, Result};

pub const DEFAULT_RADIUS: f64 = 6.0;
pub const DEFAULT_LN_EPS: f32 = 1e-5;

/// Projection and normalisation parameters. Matrices are `d x d`, row-major,
/// and act on row vectors (`q = h W_Q`).
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorberWeights {
    pub dim: usize,
    pub w_q: Vec<f32>,
    pub w_k: Vec<f32>,
    pub w_v: Vec<f32>,
    pub ln_scale: Vec<f32>,
    pub ln_shift: Vec<f32>,
    pub ln_eps: f32,
}

pub(crate) fn identity_matrix(dim: usize) -> Vec<f32> {
    let mut m = vec![0.0; dim * dim];
    for i in 0..dim {
        m[i * dim + i] = 1.0;
    }
    m
}

impl AbsorberWeights {
    /// Identity projections with a plain (scale 1, shift 0) LayerNorm.
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            w_q: identity_matrix(dim),
            w_k: identity_matrix(dim),
            w_v: identity_matrix(dim),
            ln_scale: vec![1.0; dim],
            ln_shift: vec![0.0; dim],
            ln_eps: DEFAULT_LN_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        for (name, m, len) in [
            ("W_Q", &self.w_q, d * d),
            ("W_K", &self.w_k, d * d),
            ("W_V", &self.w_v, d * d),
            ("ln_scale", &self.ln_scale, d),
            ("ln_shift", &self.ln_shift, d),
        ] {
            if m.len() != len {
                return Err(FreresError::shape(format!(
                    "{name} holds {} values, expected {len} for d = {d}",
                    m.len()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(FreresError::InvalidParameter(format!(
                    "{name} has non-finite entries"
                )));
            }
        }
        if !(self.ln_eps > 0.0 && self.ln_eps.is_finite()) {
            return Err(FreresError::InvalidParameter(
                "ln_eps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `rows x dim` times `dim x dim`, in f64.
fn project(rows: &[f32], w: &[f32], dim: usize) -> Vec<f64> {
    let n = rows.len() / dim;
    let mut out = vec![0.0; n * dim];
    for i in 0..n {
        let x = &rows[i * dim..(i + 1) * dim];
        let o = &mut out[i * dim..(i + 1) * dim];
        for (a, &xa) in x.iter().enumerate() {
            if xa == 0.0 {
                continue;
            }
            let w_row = &w[a * dim..(a + 1) * dim];
            for (ob, &wb) in o.iter_mut().zip(w_row) {
                *ob += f64::from(xa) * f64::from(wb);
            }
        }
    }
    out
}

/// LayerNorm over one vector with biased variance.
pub fn layer_norm(x: &[f64], scale: &[f32], shift: &[f32], eps: f32) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + f64::from(eps)).sqrt();
    x.iter()
        .zip(scale.iter().zip(shift))
        .map(|(v, (&s, &b))| (v - mean) * inv * f64::from(s) + f64::from(b))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodMask {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub allowed: Vec<bool>,
    pub radius: f64,
}

impl NeighborhoodMask {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// `allowed[i][j]` iff the Chebyshev distance between anchor `i` and P-token
/// `j` is at most `radius`. P-token coordinates are expected already mapped
/// to token-grid positions (see [`crate::freres::pool_cell_center`]).
pub fn build_mask(
    anchors: &[(usize, usize)],
    p_tokens: &[(usize, usize)],
    radius: f64,
) -> Result<NeighborhoodMask> {
    if radius.is_nan() || radius < 0.0 {
        return Err(FreresError::InvalidParameter(format!(
            "radius {radius} must be >= 0"
        )));
    }
    let allowed = anchors
        .iter()
        .flat_map(|&a| {
            p_tokens
                .iter()
                .map(move |&p| chebyshev(a, p) as f64 <= radius)
        })
        .collect();
    Ok(NeighborhoodMask {
        rows: anchors.len(),
        cols: p_tokens.len(),
        allowed,
        radius,
    })
}

fn check_shapes(
    h_i: &[f32],
    h_p: &[f32],
    w: &AbsorberWeights,
    mask: &NeighborhoodMask,
) -> Result<(usize, usize)> {
    let d = w.dim;
    w.validate()?;
    if d == 0 || !h_i.len().is_multiple_of(d) || !h_p.len().is_multiple_of(d) {
        return Err(FreresError::shape(format!(
            "token buffers ({} and {} values) are not multiples of d = {d}",
            h_i.len(),
            h_p.len()
        )));
    }
    let (n_i, n_p) = (h_i.len() / d, h_p.len() / d);
    if mask.rows != n_i || mask.cols != n_p {
        return Err(FreresError::shape(format!(
            "mask is {}x{}, tokens are {n_i}x{n_p}",
            mask.rows, mask.cols
        )));
    }
    Ok((n_i, n_p))
}

/// Row-wise masked softmax of `Q K^T / sqrt(d)`, `n_i x n_p`. Rows with no
/// allowed entry are all zero.
pub fn attention_weights(
    h_i: &[f32],
    h_p: &[f32],
    w: &AbsorberWeights,
    mask: &NeighborhoodMask,
) -> Result<Vec<f64>> {
    let (n_i, n_p) = check_shapes(h_i, h_p, w, mask)?;
    let d = w.dim;
    let q = project(h_i, &w.w_q, d);
    let k = project(h_p, &w.w_k, d);
    let scale = 1.0 / (d as f64).sqrt();

    let mut attn = vec![0.0; n_i * n_p];
    for i in 0..n_i {
        let qi = &q[i * d..(i + 1) * d];
        let row = &mut attn[i * n_p..(i + 1) * n_p];
        let mut max = f64::NEG_INFINITY;
        for (j, a) in row.iter_mut().enumerate() {
            if mask.get(i, j) {
                let kj = &k[j * d..(j + 1) * d];
                *a = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                max = max.max(*a);
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        for (j, a) in row.iter_mut().enumerate() {
            if mask.get(i, j) {
                *a = (*a - max).exp();
                sum += *a;
            } else {
                *a = 0.0;
            }
        }
        row.iter_mut().for_each(|a| *a /= sum);
    }
    Ok(attn)
}

/// Motion-aware anchors `LayerNorm(H_I + A V)`, `n_i x d` row-major.
pub fn absorb(
    h_i: &[f32],
    h_p: &[f32],
    w: &AbsorberWeights,
    mask: &NeighborhoodMask,
) -> Result<Vec<f32>> {
    let attn = attention_weights(h_i, h_p, w, mask)?;
    let d = w.dim;
    let (n_i, n_p) = (mask.rows, mask.cols);
    let v = project(h_p, &w.w_v, d);

    let mut out = Vec::with_capacity(n_i * d);
    let mut mixed = vec![0.0f64; d];
    for i in 0..n_i {
        for (m, &x) in mixed.iter_mut().zip(&h_i[i * d..(i + 1) * d]) {
            *m = f64::from(x);
        }
        for j in 0..n_p {
            let a = attn[i * n_p + j];
            if a == 0.0 {
                continue;
            }
            for (m, vj) in mixed.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                *m += a * vj;
            }
        }
        out.extend(
            layer_norm(&mixed, &w.ln_scale, &w.ln_shift, w.ln_eps)
                .into_iter()
                .map(|x| x as f32),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ln_plain(x: &[f64], eps: f64) -> Vec<f64> {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n;
        x.iter().map(|a| (a - m) / (v + eps).sqrt()).collect()
    }

    #[test]
    fn mask_boundaries() {
        let anchors = [(10, 10), (0, 0)];
        let ps = [(8, 8), (10, 10), (23, 23)];
        let m0 = build_mask(&anchors, &ps, 0.0).unwrap();
        assert_eq!(m0.allowed, vec![false, true, false, false, false, false]);
        let m2 = build_mask(&anchors, &ps, 2.0).unwrap();
        assert!(m2.get(0, 0));
        assert!(!build_mask(&anchors, &ps, 1.0).unwrap().get(0, 0));
        let all = build_mask(&anchors, &ps, 34.0).unwrap();
        assert!(all.allowed.iter().all(|&a| a));
        assert!(build_mask(&anchors, &ps, -1.0).is_err());
    }

    #[test]
    fn single_key_returns_value() {
        let d = 3;
        let w = AbsorberWeights::identity(d);
        let h_i = [1.0, -2.0, 0.5];
        let h_p = [0.3, 0.1, -0.4, 7.0, 7.0, 7.0];
        let mask = NeighborhoodMask {
            rows: 1,
            cols: 2,
            allowed: vec![true, false],
            radius: 0.0,
        };
        let attn = attention_weights(&h_i, &h_p, &w, &mask).unwrap();
        assert_eq!(attn, vec![1.0, 0.0]);
        let out = absorb(&h_i, &h_p, &w, &mask).unwrap();
        let want = ln_plain(&[1.3, -1.9, 0.1], 1e-5);
        for (o, w) in out.iter().zip(want) {
            assert!((f64::from(*o) - w).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_p_tokens_pass_through() {
        let w = AbsorberWeights::identity(2);
        let h_i = [1.0, 3.0, -1.0, -1.0];
        let mask = build_mask(&[(0, 0), (1, 1)], &[], 6.0).unwrap();
        let out = absorb(&h_i, &[], &w, &mask).unwrap();
        // LayerNorm of [1,3] -> [-1, 1] (up to eps), of [-1,-1] -> [0, 0]
        assert!((out[0] + 1.0).abs() < 1e-5 && (out[1] - 1.0).abs() < 1e-5);
        assert_eq!(&out[2..], &[0.0, 0.0]);
    }

    #[test]
    fn hand_computed_two_by_three() {
        // d = 2, identity projections. Anchor 0 sees P0 and P1, anchor 1 sees
        // P1 and P2.
        let h_i = [1.0f32, 0.0, 0.0, 2.0];
        let h_p = [1.0f32, 1.0, 2.0, 0.0, 0.0, -1.0];
        let mask = NeighborhoodMask {
            rows: 2,
            cols: 3,
            allowed: vec![true, true, false, false, true, true],
            radius: 1.0,
        };
        let w = AbsorberWeights::identity(2);
        let s = 1.0 / 2f64.sqrt();

        // anchor 0: logits q.k / sqrt2 = [1*s, 2*s]
        let (e0, e1) = ((1.0 * s).exp(), (2.0 * s).exp());
        let (a00, a01) = (e0 / (e0 + e1), e1 / (e0 + e1));
        let mix0 = [1.0 + a00 * 1.0 + a01 * 2.0, 0.0 + a00 * 1.0 + a01 * 0.0];
        // anchor 1: logits [0, -2*s]
        let (f1, f2) = (1.0f64, (-2.0 * s).exp());
        let (a11, a12) = (f1 / (f1 + f2), f2 / (f1 + f2));
        let mix1 = [0.0 + a11 * 2.0, 2.0 + a12 * -1.0];

        let attn = attention_weights(&h_i, &h_p, &w, &mask).unwrap();
        for (got, want) in attn.iter().zip([a00, a01, 0.0, 0.0, a11, a12]) {
            assert!((got - want).abs() < 1e-12);
        }
        let out = absorb(&h_i, &h_p, &w, &mask).unwrap();
        let want: Vec<f64> = ln_plain(&mix0, 1e-5)
            .into_iter()
            .chain(ln_plain(&mix1, 1e-5))
            .collect();
        for (o, w) in out.iter().zip(want) {
            assert!((f64::from(*o) - w).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_values_mean_no_absorption() {
        let d = 4;
        let mut w = AbsorberWeights::identity(d);
        w.w_v = vec![0.0; d * d];
        let h_i: Vec<f32> = (0..8).map(|i| i as f32 * 0.7 - 2.0).collect();
        let h_p: Vec<f32> = (0..12).map(|i| (i as f32).sin()).collect();
        let mask = build_mask(&[(0, 0), (3, 3)], &[(0, 1), (2, 2), (9, 9)], 6.0).unwrap();
        let out = absorb(&h_i, &h_p, &w, &mask).unwrap();
        let none = build_mask(&[(0, 0), (3, 3)], &[], 6.0).unwrap();
        assert_eq!(out, absorb(&h_i, &[], &w, &none).unwrap());
    }

    #[test]
    fn shape_errors() {
        let w = AbsorberWeights::identity(2);
        let mask = build_mask(&[(0, 0)], &[(0, 0)], 1.0).unwrap();
        assert!(matches!(
            absorb(&[1.0, 2.0, 3.0], &[1.0, 1.0], &w, &mask),
            Err(FreresError::ShapeMismatch(_))
        ));
        assert!(matches!(
            absorb(&[1.0, 2.0], &[1.0, 1.0, 2.0, 2.0], &w, &mask),
            Err(FreresError::ShapeMismatch(_))
        ));
        let mut bad = w.clone();
        bad.w_q.pop();
        assert!(absorb(&[1.0, 2.0], &[1.0, 1.0], &bad, &mask).is_err());
    }

    fn coords(n: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
        prop::collection::vec((0usize..24, 0usize..24), n)
    }

    proptest! {
        #[test]
        fn rows_are_stochastic(
            h_i in prop::collection::vec(-3.0f32..3.0, 5 * 3),
            h_p in prop::collection::vec(-3.0f32..3.0, 7 * 3),
            ci in coords(5),
            cp in coords(7),
            r in 0.0f64..12.0,
        ) {
            let w = AbsorberWeights::identity(3);
            let mask = build_mask(&ci, &cp, r).unwrap();
            let attn = attention_weights(&h_i, &h_p, &w, &mask).unwrap();
            for i in 0..5 {
                let row = &attn[i * 7..(i + 1) * 7];
                let sum: f64 = row.iter().sum();
                if mask.row(i).iter().any(|&a| a) {
                    prop_assert!((sum - 1.0).abs() < 1e-6);
                } else {
                    prop_assert_eq!(sum, 0.0);
                }
                for j in 0..7 {
                    if !mask.get(i, j) { prop_assert_eq!(row[j], 0.0); }
                }
            }
            prop_assert_eq!(absorb(&h_i, &h_p, &w, &mask).unwrap().len(), 5 * 3);
        }

        #[test]
        fn mask_monotone_in_radius(ci in coords(6), cp in coords(6), r1 in 0.0f64..20.0, dr in 0.0f64..10.0) {
            let small = build_mask(&ci, &cp, r1).unwrap();
            let large = build_mask(&ci, &cp, r1 + dr).unwrap();
            for (s, l) in small.allowed.iter().zip(&large.allowed) {
                prop_assert!(!s || *l);
            }
        }

        #[test]
        fn softmax_shift_invariant(
            h_i in prop::collection::vec(-2.0f32..2.0, 2),
            h_p in prop::collection::vec(-2.0f32..2.0, 4 * 2),
            shift in -3.0f32..3.0,
        ) {
            // Appending a constant column c to every key and a matching query
            // column of 1 adds c / sqrt(d) to all logits of a row.
            let w3 = AbsorberWeights::identity(3);
            let w2 = AbsorberWeights::identity(2);
            let mask2 = build_mask(&[(0, 0)], &[(0, 0); 4], 1.0).unwrap();
            let base = attention_weights(&h_i, &h_p, &w2, &mask2).unwrap();
            // sqrt(3) vs sqrt(2) scaling differs, so compare against d = 3
            // with and without the shift column.
            let q3: Vec<f32> = vec![h_i[0], h_i[1], 1.0];
            let k_plain: Vec<f32> = h_p.chunks(2).flat_map(|c| [c[0], c[1], 0.0]).collect();
            let k_shift: Vec<f32> = h_p.chunks(2).flat_map(|c| [c[0], c[1], shift]).collect();
            let a = attention_weights(&q3, &k_plain, &w3, &mask2).unwrap();
            let b = attention_weights(&q3, &k_shift, &w3, &mask2).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-6);
            }
            prop_assert!((base.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
