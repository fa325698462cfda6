//! Latent sequences, grid coordinates and typed output tokens.
//!
//! A [`LatentSequence`] holds `T` frames of `H_g x W_g` tokens, each a
//! `d`-dimensional `f32` embedding stored row-major as `[row][col][dim]`.
//! Everything downstream (anchor selection, residual coding, fusion) reads
//! from this type and never mutates it.

use crate::error::{FreresError, Result};

/// Token grid shape of a single frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub const fn cells(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    grid: Grid,
    dim: usize,
    fps: Option<f32>,
    frames: Vec<Vec<f32>>,
}

impl LatentSequence {
    /// Builds and validates a sequence.
    pub fn new(grid: Grid, dim: usize, frames: Vec<Vec<f32>>, fps: Option<f32>) -> Result<Self> {
        let seq = Self::from_parts(grid, dim, frames, fps);
        seq.validate()?;
        Ok(seq)
    }

    /// Assembles a sequence without checking it. Call [`validate`](Self::validate)
    /// before handing the result to the codec.
    pub fn from_parts(grid: Grid, dim: usize, frames: Vec<Vec<f32>>, fps: Option<f32>) -> Self {
        Self {
            grid,
            dim,
            fps,
            frames,
        }
    }

    /// Builds a sequence from a flat `[t][row][col][dim]` buffer.
    pub fn from_flat(
        num_frames: usize,
        grid: Grid,
        dim: usize,
        data: &[f32],
        fps: Option<f32>,
    ) -> Result<Self> {
        let per_frame = grid.cells() * dim;
        if data.len() != num_frames * per_frame {
            return Err(FreresError::shape(format!(
                "flat buffer holds {} values, expected {num_frames}x{}x{}x{dim}",
                data.len(),
                grid.height,
                grid.width
            )));
        }
        let frames = if per_frame == 0 {
            vec![Vec::new(); num_frames]
        } else {
            data.chunks(per_frame).map(<[f32]>::to_vec).collect()
        };
        Self::new(grid, dim, frames, fps)
    }

    pub fn validate(&self) -> Result<()> {
        let Grid { height, width } = self.grid;
        if self.frames.is_empty() {
            return Err(FreresError::shape("sequence has no frames"));
        }
        if height == 0 || width == 0 || self.dim == 0 {
            return Err(FreresError::shape(format!(
                "grid {}x{} with dim {} has an empty axis",
                height, width, self.dim
            )));
        }
        let per_frame = self.grid.cells() * self.dim;
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.len() != per_frame {
                return Err(FreresError::shape(format!(
                    "frame {t} holds {} values, expected {height}x{width}x{}",
                    frame.len(),
                    self.dim
                )));
            }
        }
        for (t, frame) in self.frames.iter().enumerate() {
            if let Some(i) = frame.iter().position(|v| !v.is_finite()) {
                let token = i / self.dim;
                return Err(FreresError::NonFiniteValue {
                    frame: t,
                    row: token / width,
                    col: token % width,
                    dim: i % self.dim,
                });
            }
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fps(&self) -> Option<f32> {
        self.fps
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.frames.iter().map(Vec::as_slice)
    }

    pub fn token(&self, t: usize, row: usize, col: usize) -> &[f32] {
        let start = (row * self.grid.width + col) * self.dim;
        &self.frames[t][start..start + self.dim]
    }

    /// Total number of full-resolution tokens, `T * H_g * W_g`.
    pub fn dense_token_count(&self) -> usize {
        self.num_frames() * self.grid.cells()
    }
}

/// Free-function form of [`LatentSequence::validate`].
pub fn validate(seq: &LatentSequence) -> Result<()> {
    seq.validate()
}

/// Squared L2 norm, accumulated in `f64`. This is what "energy" means for a
/// token throughout the crate.
pub fn energy(embedding: &[f32]) -> f64 {
    embedding.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridCoord {
    pub frame: usize,
    pub row: usize,
    pub col: usize,
}

impl GridCoord {
    pub const fn new(frame: usize, row: usize, col: usize) -> Self {
        Self { frame, row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenKind {
    RawAnchor,
    DynamicP,
    Summary,
    Static,
}

impl TokenKind {
    pub const ALL: [TokenKind; 4] = [
        TokenKind::RawAnchor,
        TokenKind::DynamicP,
        TokenKind::Summary,
        TokenKind::Static,
    ];

    /// Position of this kind in the type-embedding table.
    pub const fn index(self) -> usize {
        match self {
            TokenKind::RawAnchor => 0,
            TokenKind::DynamicP => 1,
            TokenKind::Summary => 2,
            TokenKind::Static => 3,
        }
    }

    pub const fn tag(self) -> &'static str {
        match self {
            TokenKind::RawAnchor => "raw",
            TokenKind::DynamicP => "dyn",
            TokenKind::Summary => "sum",
            TokenKind::Static => "static",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

/// Where a token came from. The variant is fixed by the token kind, except
/// for `DynamicP` which is either a retained coefficient or, in the
/// reconstruction fusion mode, an inverse-transformed residual frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenOrigin {
    /// Full-resolution anchor token.
    Grid(GridCoord),
    /// Retained DCT coefficient `coeff` at pooled cell `(row, col)` of a group.
    Coefficient {
        gop: usize,
        row: usize,
        col: usize,
        coeff: usize,
    },
    /// Residual reconstructed back to frame `frame` at pooled cell `(row, col)`.
    Reconstructed {
        gop: usize,
        frame: usize,
        row: usize,
        col: usize,
    },
    /// Whole-group summary.
    Group { gop: usize },
    /// Pooled cell `(row, col)` of the group's anchor frame `frame`.
    Pooled {
        gop: usize,
        frame: usize,
        row: usize,
        col: usize,
    },
}

impl TokenOrigin {
    pub fn gop(&self) -> Option<usize> {
        match *self {
            TokenOrigin::Grid(_) => None,
            TokenOrigin::Coefficient { gop, .. }
            | TokenOrigin::Reconstructed { gop, .. }
            | TokenOrigin::Group { gop }
            | TokenOrigin::Pooled { gop, .. } => Some(gop),
        }
    }

    pub fn frame(&self) -> Option<usize> {
        match *self {
            TokenOrigin::Grid(c) => Some(c.frame),
            TokenOrigin::Reconstructed { frame, .. } | TokenOrigin::Pooled { frame, .. } => {
                Some(frame)
            }
            _ => None,
        }
    }

    pub fn row_col(&self) -> Option<(usize, usize)> {
        match *self {
            TokenOrigin::Grid(c) => Some((c.row, c.col)),
            TokenOrigin::Coefficient { row, col, .. }
            | TokenOrigin::Reconstructed { row, col, .. }
            | TokenOrigin::Pooled { row, col, .. } => Some((row, col)),
            TokenOrigin::Group { .. } => None,
        }
    }

    pub fn coeff(&self) -> Option<usize> {
        match *self {
            TokenOrigin::Coefficient { coeff, .. } => Some(coeff),
            _ => None,
        }
    }

    fn matches(&self, kind: TokenKind) -> bool {
        matches!(
            (kind, self),
            (TokenKind::RawAnchor, TokenOrigin::Grid(_))
                | (TokenKind::DynamicP, TokenOrigin::Coefficient { .. })
                | (TokenKind::DynamicP, TokenOrigin::Reconstructed { .. })
                | (TokenKind::Summary, TokenOrigin::Group { .. })
                | (TokenKind::Static, TokenOrigin::Pooled { .. })
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub embedding: Vec<f32>,
    pub origin: TokenOrigin,
}

impl Token {
    /// Panics if `origin` is not a valid variant for `kind`.
    pub fn new(kind: TokenKind, embedding: Vec<f32>, origin: TokenOrigin) -> Self {
        assert!(
            origin.matches(kind),
            "origin {origin:?} does not fit token kind {kind:?}"
        );
        Self {
            kind,
            embedding,
            origin,
        }
    }

    pub fn gop(&self) -> Option<usize> {
        self.origin.gop()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KindCounts {
    pub raw_anchor: usize,
    pub dynamic_p: usize,
    pub summary: usize,
    pub static_: usize,
}

impl KindCounts {
    pub fn get(&self, kind: TokenKind) -> usize {
        match kind {
            TokenKind::RawAnchor => self.raw_anchor,
            TokenKind::DynamicP => self.dynamic_p,
            TokenKind::Summary => self.summary,
            TokenKind::Static => self.static_,
        }
    }

    fn bump(&mut self, kind: TokenKind) {
        match kind {
            TokenKind::RawAnchor => self.raw_anchor += 1,
            TokenKind::DynamicP => self.dynamic_p += 1,
            TokenKind::Summary => self.summary += 1,
            TokenKind::Static => self.static_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.raw_anchor + self.dynamic_p + self.summary + self.static_
    }

    /// Tokens contributed by the temporal branch.
    pub fn temporal(&self) -> usize {
        self.dynamic_p + self.summary + self.static_
    }
}

/// Ordered output of the codec. Counts are derived from the tokens and can
/// not drift out of sync with them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenStream {
    tokens: Vec<Token>,
    counts: KindCounts,
}

impl TokenStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, token: Token) {
        self.counts.bump(token.kind);
        self.tokens.push(token);
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn counts(&self) -> KindCounts {
        self.counts
    }

    pub fn budget_used(&self) -> usize {
        self.tokens.len()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Token> {
        self.tokens.iter()
    }
}

impl FromIterator<Token> for TokenStream {
    fn from_iter<I: IntoIterator<Item = Token>>(iter: I) -> Self {
        let mut stream = TokenStream::new();
        for t in iter {
            stream.push(t);
        }
        stream
    }
}

impl Extend<Token> for TokenStream {
    fn extend<I: IntoIterator<Item = Token>>(&mut self, iter: I) {
        for t in iter {
            self.push(t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(t: usize, grid: Grid, dim: usize, v: f32) -> Vec<Vec<f32>> {
        vec![vec![v; grid.cells() * dim]; t]
    }

    #[test]
    fn well_formed_sequence_validates() {
        let g = Grid::new(24, 24);
        let seq = LatentSequence::new(g, 64, frames(16, g, 64, 0.5), None).unwrap();
        assert_eq!(seq.num_frames(), 16);
        assert!(validate(&seq).is_ok());
        // idempotent
        assert!(validate(&seq).is_ok());
    }

    #[test]
    fn ragged_frame_is_shape_mismatch() {
        let g = Grid::new(24, 24);
        let mut f = frames(16, g, 4, 1.0);
        f[3] = vec![1.0; 23 * 24 * 4];
        let seq = LatentSequence::from_parts(g, 4, f, None);
        assert!(matches!(seq.validate(), Err(FreresError::ShapeMismatch(_))));
    }

    #[test]
    fn nan_is_reported_with_position() {
        let g = Grid::new(3, 3);
        let mut f = frames(2, g, 2, 1.0);
        f[0][(4 * 2) + 1] = f32::NAN;
        let err = LatentSequence::new(g, 2, f, None).unwrap_err();
        match err {
            FreresError::NonFiniteValue {
                frame,
                row,
                col,
                dim,
            } => assert_eq!((frame, row, col, dim), (0, 1, 1, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let g = Grid::new(2, 2);
        let seq = LatentSequence::from_parts(g, 1, Vec::new(), None);
        assert!(seq.validate().is_err());
        let seq = LatentSequence::from_parts(Grid::new(0, 2), 1, vec![vec![]], None);
        assert!(seq.validate().is_err());
    }

    #[test]
    fn stream_counts_follow_tokens() {
        let mut s = TokenStream::new();
        s.push(Token::new(
            TokenKind::RawAnchor,
            vec![0.0],
            TokenOrigin::Grid(GridCoord::new(0, 0, 0)),
        ));
        s.push(Token::new(
            TokenKind::Summary,
            vec![0.0],
            TokenOrigin::Group { gop: 0 },
        ));
        assert_eq!(s.counts().total(), s.len());
        assert_eq!(s.budget_used(), 2);
        assert_eq!(s.counts().get(TokenKind::Summary), 1);
    }

    #[test]
    #[should_panic]
    fn mismatched_origin_panics() {
        Token::new(
            TokenKind::Summary,
            vec![],
            TokenOrigin::Grid(GridCoord::new(0, 0, 0)),
        );
    }
}
