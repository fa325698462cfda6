//! Hybrid token fusion: raw adapter, absorber, branch gates, type
//! embeddings and stream ordering, plus the ablation fusion modes.

use std::str::FromStr;

use crate::absorber::{absorb, build_mask, identity_matrix, AbsorberWeights, DEFAULT_RADIUS};
use crate::error::{FreresError, Result};
use crate::freres::{pool_cell_center, Gop};
use crate::latent::{Grid, Token, TokenKind, TokenOrigin, TokenStream};
use crate::prng::XorShift64Star;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// Raw anchor stream only.
    SpatialOnly,
    /// Residual-frequency stream only.
    TemporalOnly,
    /// Both streams appended without interaction.
    Concat,
    /// P-tokens replaced by inverse-DCT reconstructions, then concatenated.
    IdctReconstruct,
    /// Anchors absorb nearby P-tokens before both streams are appended.
    Absorber,
}

impl FusionMode {
    pub const ALL: [FusionMode; 5] = [
        FusionMode::SpatialOnly,
        FusionMode::TemporalOnly,
        FusionMode::Concat,
        FusionMode::IdctReconstruct,
        FusionMode::Absorber,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::SpatialOnly => "spatial-only",
            FusionMode::TemporalOnly => "temporal-only",
            FusionMode::Concat => "concat",
            FusionMode::IdctReconstruct => "idct",
            FusionMode::Absorber => "absorber",
        }
    }

    pub fn uses_raw(self) -> bool {
        self != FusionMode::TemporalOnly
    }

    pub fn uses_temporal(self) -> bool {
        self != FusionMode::SpatialOnly
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = FreresError;

    /// Accepts mode names and the ablation letters `a`..`f`
    /// (`c` and `f` are both the full dual-track absorber).
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "spatial-only" | "spatial" | "a" => FusionMode::SpatialOnly,
            "temporal-only" | "temporal" | "b" => FusionMode::TemporalOnly,
            "concat" | "d" => FusionMode::Concat,
            "idct" | "idct-reconstruct" | "e" => FusionMode::IdctReconstruct,
            "absorber" | "dual" | "c" | "f" => FusionMode::Absorber,
            other => {
                return Err(FreresError::InvalidParameter(format!(
                    "unknown fusion mode {other:?}"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub g_raw: f32,
    pub g_freq: f32,
    /// Absorber neighbourhood radius, in token-grid units.
    pub radius: f64,
}

impl FusionConfig {
    /// Config taking its gates from `weights`.
    pub fn from_weights(mode: FusionMode, weights: &ModelWeights) -> Self {
        Self {
            mode,
            g_raw: weights.g_raw,
            g_freq: weights.g_freq,
            radius: DEFAULT_RADIUS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.g_raw.is_finite() || !self.g_freq.is_finite() {
            return Err(FreresError::InvalidParameter(
                "branch gates must be finite".into(),
            ));
        }
        if self.radius.is_nan() || self.radius < 0.0 {
            return Err(FreresError::InvalidParameter("radius must be >= 0".into()));
        }
        Ok(())
    }
}

/// Everything the fusion stage loads from a weights file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub absorber: AbsorberWeights,
    /// `d x d`, row-major, applied as `x A`.
    pub adapter: Vec<f32>,
    /// One `d`-vector per [`TokenKind`], indexed by [`TokenKind::index`].
    pub type_embeddings: [Vec<f32>; 4],
    pub g_raw: f32,
    pub g_freq: f32,
}

impl ModelWeights {
    pub fn dim(&self) -> usize {
        self.absorber.dim
    }

    /// Identity projections and adapter, zero type embeddings, unit gates.
    pub fn identity(dim: usize) -> Self {
        Self {
            absorber: AbsorberWeights::identity(dim),
            adapter: identity_matrix(dim),
            type_embeddings: std::array::from_fn(|_| vec![0.0; dim]),
            g_raw: 1.0,
            g_freq: 1.0,
        }
    }

    /// Deterministic weights: `W_Q`, `W_K`, `W_V`, then the adapter, each
    /// filled row-major with xorshift64* uniforms in `[-1, 1)` divided by
    /// `sqrt(d)`. Type embeddings are zero, gates 1, LayerNorm plain.
    pub fn seeded(seed: u64, dim: usize) -> Self {
        let mut rng = XorShift64Star::new(seed);
        let scale = (dim as f64).sqrt();
        let mut matrix = || -> Vec<f32> {
            (0..dim * dim)
                .map(|_| (rng.next_signed() / scale) as f32)
                .collect()
        };
        let w_q = matrix();
        let w_k = matrix();
        let w_v = matrix();
        let adapter = matrix();
        let mut w = Self::identity(dim);
        w.absorber.w_q = w_q;
        w.absorber.w_k = w_k;
        w.absorber.w_v = w_v;
        w.adapter = adapter;
        w
    }

    pub fn validate(&self) -> Result<()> {
        self.absorber.validate()?;
        let d = self.dim();
        if self.adapter.len() != d * d {
            return Err(FreresError::shape(format!("adapter is not {d}x{d}")));
        }
        if self.type_embeddings.iter().any(|e| e.len() != d) {
            return Err(FreresError::shape(format!(
                "type embeddings must have length {d}"
            )));
        }
        let finite = self
            .adapter
            .iter()
            .chain(self.type_embeddings.iter().flatten())
            .chain([&self.g_raw, &self.g_freq])
            .all(|v| v.is_finite());
        if !finite {
            return Err(FreresError::InvalidParameter(
                "weights contain non-finite values".into(),
            ));
        }
        Ok(())
    }
}

fn check_dim(tokens: &[Token], dim: usize) -> Result<()> {
    if let Some(t) = tokens.iter().find(|t| t.embedding.len() != dim) {
        return Err(FreresError::shape(format!(
            "token {:?} has dimension {}, weights expect {dim}",
            t.origin,
            t.embedding.len()
        )));
    }
    Ok(())
}

/// Applies the adapter matrix to every embedding; coordinates are kept.
pub fn raw_adapter(tokens: &[Token], weights: &ModelWeights) -> Result<Vec<Token>> {
    let d = weights.dim();
    check_dim(tokens, d)?;
    Ok(tokens
        .iter()
        .map(|t| {
            let mut out = vec![0.0f64; d];
            for (a, &x) in t.embedding.iter().enumerate() {
                for (o, &m) in out.iter_mut().zip(&weights.adapter[a * d..(a + 1) * d]) {
                    *o += f64::from(x) * f64::from(m);
                }
            }
            Token {
                embedding: out.into_iter().map(|v| v as f32).collect(),
                ..t.clone()
            }
        })
        .collect())
}

/// Spatial layout the absorber needs to pair anchors with P-tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGeometry {
    pub grid: Grid,
    pub pool: Grid,
    pub gops: Vec<Gop>,
}

impl FusionGeometry {
    /// Group whose span holds `frame`: the last group anchored at or before it.
    pub fn containing_gop(&self, frame: usize) -> Option<usize> {
        self.gops
            .iter()
            .take_while(|g| g.anchor <= frame)
            .last()
            .map(|g| g.index)
    }
}

/// Runs the absorber once per anchor frame, each frame attending only to the
/// coefficient P-tokens of the group that contains it.
fn absorb_anchors(
    raw: &mut [Token],
    freres: &[Token],
    weights: &ModelWeights,
    radius: f64,
    geometry: &FusionGeometry,
) -> Result<()> {
    let d = weights.dim();
    let mut start = 0;
    while start < raw.len() {
        let frame = raw[start].origin.frame().expect("raw tokens carry a frame");
        let end = start
            + raw[start..]
                .iter()
                .take_while(|t| t.origin.frame() == Some(frame))
                .count();
        let anchors = &mut raw[start..end];

        let gop = geometry.containing_gop(frame);
        let p: Vec<&Token> = freres
            .iter()
            .filter(
                |t| matches!(t.origin, TokenOrigin::Coefficient { gop: g, .. } if Some(g) == gop),
            )
            .collect();
        let c_i: Vec<(usize, usize)> = anchors
            .iter()
            .map(|t| t.origin.row_col().expect("grid token"))
            .collect();
        let c_p: Vec<(usize, usize)> = p
            .iter()
            .map(|t| {
                let (r, c) = t.origin.row_col().expect("coefficient token");
                pool_cell_center(geometry.grid, geometry.pool, r, c)
            })
            .collect();
        let mask = build_mask(&c_i, &c_p, radius)?;
        let h_i: Vec<f32> = anchors
            .iter()
            .flat_map(|t| t.embedding.iter().copied())
            .collect();
        let h_p: Vec<f32> = p.iter().flat_map(|t| t.embedding.iter().copied()).collect();
        let h_dyn = absorb(&h_i, &h_p, &weights.absorber, &mask)?;
        for (t, row) in anchors.iter_mut().zip(h_dyn.chunks_exact(d)) {
            t.embedding.copy_from_slice(row);
        }
        start = end;
    }
    Ok(())
}

fn gate_and_mark(tokens: &mut [Token], gate: f32, weights: &ModelWeights) {
    for t in tokens {
        let ty = &weights.type_embeddings[t.kind.index()];
        for (e, &b) in t.embedding.iter_mut().zip(ty) {
            *e = gate * *e + b;
        }
    }
}

/// Stream order key: statics last, otherwise by group with P-tokens before
/// the group's summary, then by origin coordinates.
fn freres_key(t: &Token) -> (bool, usize, u8, TokenOrigin) {
    let rank = match t.kind {
        TokenKind::DynamicP => 0,
        TokenKind::Summary => 1,
        _ => 2,
    };
    (
        t.kind == TokenKind::Static,
        t.gop().unwrap_or(usize::MAX),
        rank,
        t.origin,
    )
}

/// Assembles the final token stream.
///
/// Raw tokens go through the adapter (and, in absorber mode, the absorber),
/// then every token becomes `gate * embedding + type_embedding(kind)`. Raw
/// anchors come first in (frame, row, col) order, followed per group by its
/// P-tokens and summary, and finally the static tokens.
pub fn fuse(
    raw: Vec<Token>,
    freres: Vec<Token>,
    cfg: &FusionConfig,
    weights: Option<&ModelWeights>,
    geometry: Option<&FusionGeometry>,
) -> Result<TokenStream> {
    cfg.validate()?;
    let weights = weights.ok_or_else(|| {
        FreresError::MissingWeights("fusion needs adapter and gate weights".into())
    })?;
    weights.validate()?;
    let d = weights.dim();

    let mut raw = if cfg.mode.uses_raw() { raw } else { Vec::new() };
    let mut freres = if cfg.mode.uses_temporal() {
        freres
    } else {
        Vec::new()
    };
    if let Some(t) = raw.iter().find(|t| t.kind != TokenKind::RawAnchor) {
        return Err(FreresError::InvalidParameter(format!(
            "{:?} token in the raw stream",
            t.kind
        )));
    }
    if let Some(t) = freres.iter().find(|t| t.kind == TokenKind::RawAnchor) {
        return Err(FreresError::InvalidParameter(format!(
            "raw token {:?} in the temporal stream",
            t.origin
        )));
    }
    check_dim(&raw, d)?;
    check_dim(&freres, d)?;

    raw.sort_by_key(|t| t.origin);
    let mut raw = raw_adapter(&raw, weights)?;
    if cfg.mode == FusionMode::Absorber && !raw.is_empty() {
        let geometry = geometry.ok_or_else(|| {
            FreresError::InvalidParameter("absorber mode needs the group layout".into())
        })?;
        absorb_anchors(&mut raw, &freres, weights, cfg.radius, geometry)?;
    }
    gate_and_mark(&mut raw, cfg.g_raw, weights);

    freres.sort_by_key(freres_key);
    gate_and_mark(&mut freres, cfg.g_freq, weights);

    Ok(raw.into_iter().chain(freres).collect())
}
