//! Temporal-frequency residual branch.
//!
//! Frames between two anchors form a group (GoP). Each P-frame is reduced to
//! its residual against the group's anchor, pooled onto a coarse grid, and
//! the resulting per-cell trajectories are DCT-II transformed along time.
//! Only the first `K` coefficients survive; cells whose retained energy is
//! negligible are dropped before tokens are emitted.

use crate::anchor::AnchorSet;
use crate::dct::Dct2;
use crate::error::{FreresError, Result};
use crate::latent::{Grid, LatentSequence, Token, TokenKind, TokenOrigin};

/// Default pooled grid for residual trajectories.
pub const DEFAULT_POOL: Grid = Grid::new(4, 4);
/// Default relative energy threshold for dropping pooled cells.
pub const DEFAULT_EPS_REL: f64 = 0.05;
/// Default number of static background tokens.
pub const DEFAULT_STATIC_CAP: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gop {
    pub index: usize,
    pub anchor: usize,
    pub p_frames: Vec<usize>,
}

impl Gop {
    pub fn is_empty(&self) -> bool {
        self.p_frames.is_empty()
    }

    /// Frames covered by this group, anchor included.
    pub fn span(&self) -> std::ops::RangeInclusive<usize> {
        self.anchor..=self.p_frames.last().copied().unwrap_or(self.anchor)
    }
}

/// Splits `[0, T)` at the anchors. Every non-anchor frame lands in the group
/// of its nearest preceding anchor; groups without P-frames are kept.
pub fn group_frames(anchors: &AnchorSet) -> Vec<Gop> {
    let idx = &anchors.indices;
    idx.iter()
        .enumerate()
        .map(|(g, &a)| {
            let end = idx.get(g + 1).copied().unwrap_or(anchors.num_frames);
            Gop {
                index: g,
                anchor: a,
                p_frames: (a + 1..end).collect(),
            }
        })
        .collect()
}

fn check_pool(grid: Grid, pool: Grid) -> Result<()> {
    if pool.height == 0
        || pool.width == 0
        || !grid.height.is_multiple_of(pool.height)
        || !grid.width.is_multiple_of(pool.width)
    {
        return Err(FreresError::shape(format!(
            "pool grid {pool} does not tile token grid {grid}"
        )));
    }
    Ok(())
}

/// Centre token of pooled cell `(row, col)`, rounding down on even patches.
/// On a 24x24 grid pooled 4x4, cell (1, 1) maps to (8, 8).
pub fn pool_cell_center(grid: Grid, pool: Grid, row: usize, col: usize) -> (usize, usize) {
    let ph = grid.height / pool.height;
    let pw = grid.width / pool.width;
    (row * ph + (ph - 1) / 2, col * pw + (pw - 1) / 2)
}

/// Accumulates patch means of `frame` into `out`
/// (`[cell][dim]`, pre-sized to `pool.cells() * dim`).
fn pool_into(seq: &LatentSequence, frame: usize, pool: Grid, out: &mut [f64]) {
    let grid = seq.grid();
    let dim = seq.dim();
    let ph = grid.height / pool.height;
    let pw = grid.width / pool.width;
    let scale = 1.0 / (ph * pw) as f64;
    for r in 0..grid.height {
        let cell_row = r / ph;
        for c in 0..grid.width {
            let cell = cell_row * pool.width + c / pw;
            let dst = &mut out[cell * dim..(cell + 1) * dim];
            for (o, &v) in dst.iter_mut().zip(seq.token(frame, r, c)) {
                *o += scale * f64::from(v);
            }
        }
    }
}

/// Patch means of one frame, `[cell][dim]`.
pub fn pooled_frame(seq: &LatentSequence, frame: usize, pool: Grid) -> Result<Vec<f64>> {
    check_pool(seq.grid(), pool)?;
    let mut out = vec![0.0; pool.cells() * seq.dim()];
    pool_into(seq, frame, pool, &mut out);
    Ok(out)
}

/// Pooled residuals `mean_patch(F_t - F_anchor)` for each P-frame of a group.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTrajectory {
    pub gop: usize,
    pub pool: Grid,
    pub dim: usize,
    pub len: usize,
    /// `[l][cell][dim]`
    pub pooled: Vec<f64>,
}

impl ResidualTrajectory {
    pub fn frame(&self, l: usize) -> &[f64] {
        let stride = self.pool.cells() * self.dim;
        &self.pooled[l * stride..(l + 1) * stride]
    }

    /// Values over time at one `(cell, dim)` slot.
    pub fn series(&self, cell: usize, d: usize) -> impl Iterator<Item = f64> + '_ {
        let stride = self.pool.cells() * self.dim;
        (0..self.len).map(move |l| self.pooled[l * stride + cell * self.dim + d])
    }

    /// Sum of squared residuals per cell over all frames and dims.
    pub fn cell_energy(&self) -> Vec<f64> {
        let cells = self.pool.cells();
        let mut out = vec![0.0; cells];
        for l in 0..self.len {
            for (cell, chunk) in self.frame(l).chunks_exact(self.dim).enumerate() {
                out[cell] += chunk.iter().map(|v| v * v).sum::<f64>();
            }
        }
        out
    }
}

pub fn residual_trajectory(
    seq: &LatentSequence,
    gop: &Gop,
    pool: Grid,
) -> Result<ResidualTrajectory> {
    check_pool(seq.grid(), pool)?;
    let stride = pool.cells() * seq.dim();
    // pool before subtracting so identical frames give exact zeros
    let anchor = pooled_frame(seq, gop.anchor, pool)?;
    let mut pooled = vec![0.0; gop.p_frames.len() * stride];
    for (l, &t) in gop.p_frames.iter().enumerate() {
        let out = &mut pooled[l * stride..(l + 1) * stride];
        pool_into(seq, t, pool, out);
        for (o, a) in out.iter_mut().zip(&anchor) {
            *o -= a;
        }
    }
    Ok(ResidualTrajectory {
        gop: gop.index,
        pool,
        dim: seq.dim(),
        len: gop.p_frames.len(),
        pooled,
    })
}

/// Retained low-frequency coefficients of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyBlock {
    pub gop: usize,
    pub anchor: usize,
    pub p_frames: Vec<usize>,
    pub pool: Grid,
    pub dim: usize,
    /// Retained coefficient count `K`.
    pub k: usize,
    /// Transform length, `max(L, K)`.
    pub padded_len: usize,
    /// `[k][cell][dim]`
    pub coeffs: Vec<f64>,
    /// Retained energy per cell, summed over coefficients and dims.
    pub position_energy: Vec<f64>,
    /// Untruncated residual energy per cell.
    pub residual_energy: Vec<f64>,
}

impl FrequencyBlock {
    /// All-zero stand-in for a group without P-frames.
    pub fn empty(gop: &Gop, pool: Grid, dim: usize, k: usize) -> Self {
        Self {
            gop: gop.index,
            anchor: gop.anchor,
            p_frames: Vec::new(),
            pool,
            dim,
            k,
            padded_len: k,
            coeffs: vec![0.0; k * pool.cells() * dim],
            position_energy: vec![0.0; pool.cells()],
            residual_energy: vec![0.0; pool.cells()],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.p_frames.is_empty()
    }

    pub fn coeff(&self, k: usize, cell: usize) -> &[f64] {
        let start = (k * self.pool.cells() + cell) * self.dim;
        &self.coeffs[start..start + self.dim]
    }

    pub fn candidate_count(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            self.k * self.pool.cells()
        }
    }
}

/// Residual, pool, zero-pad to `max(L, K)` and DCT one group, keeping the
/// first `k` coefficients of every `(cell, dim)` trajectory.
pub fn compress_gop(
    gop: &Gop,
    seq: &LatentSequence,
    pool: Grid,
    k: usize,
) -> Result<FrequencyBlock> {
    if k == 0 {
        return Err(FreresError::InvalidParameter(
            "retained coefficient count must be >= 1".into(),
        ));
    }
    if gop.is_empty() {
        return Err(FreresError::EmptyGop(gop.index));
    }
    let traj = residual_trajectory(seq, gop, pool)?;
    let dim = seq.dim();
    let cells = pool.cells();
    let padded_len = traj.len.max(k);
    let plan = Dct2::new(padded_len);

    let mut coeffs = vec![0.0; k * cells * dim];
    let mut series = vec![0.0; padded_len];
    let mut retained = vec![0.0; k];
    for cell in 0..cells {
        for d in 0..dim {
            series.fill(0.0);
            for (s, v) in series.iter_mut().zip(traj.series(cell, d)) {
                *s = v;
            }
            plan.forward_into(&series, &mut retained);
            for (ki, &c) in retained.iter().enumerate() {
                coeffs[(ki * cells + cell) * dim + d] = c;
            }
        }
    }

    let mut position_energy = vec![0.0; cells];
    for ki in 0..k {
        for (cell, e) in position_energy.iter_mut().enumerate() {
            let start = (ki * cells + cell) * dim;
            *e += coeffs[start..start + dim]
                .iter()
                .map(|v| v * v)
                .sum::<f64>();
        }
    }

    Ok(FrequencyBlock {
        gop: gop.index,
        anchor: gop.anchor,
        p_frames: gop.p_frames.clone(),
        pool,
        dim,
        k,
        padded_len,
        coeffs,
        position_energy,
        residual_energy: traj.cell_energy(),
    })
}

/// One candidate P-token: coefficient `coeff` at pooled `cell` of group `gop`.
/// `block` indexes the block slice the candidate was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Candidate {
    pub block: usize,
    pub gop: usize,
    pub cell: usize,
    pub coeff: usize,
}

/// Number of P-token candidates before filtering.
pub fn candidate_count(blocks: &[FrequencyBlock]) -> usize {
    blocks.iter().map(FrequencyBlock::candidate_count).sum()
}

/// Drops cells whose retained energy is zero or below `eps_rel` times the
/// mean cell energy; every coefficient of a surviving cell is kept. Blocks of
/// empty groups contribute no candidates. Output is in (block, cell, coeff)
/// order.
pub fn energy_filter(blocks: &[FrequencyBlock], eps_rel: f64) -> Result<Vec<Candidate>> {
    if !(eps_rel >= 0.0 && eps_rel.is_finite()) {
        return Err(FreresError::InvalidParameter(format!(
            "eps_rel {eps_rel} must be >= 0"
        )));
    }
    let energies: Vec<f64> = blocks
        .iter()
        .filter(|b| !b.is_empty())
        .flat_map(|b| b.position_energy.iter().copied())
        .collect();
    if energies.is_empty() {
        return Ok(Vec::new());
    }
    let mean = energies.iter().sum::<f64>() / energies.len() as f64;
    let threshold = eps_rel * mean;

    let mut out = Vec::new();
    for (bi, b) in blocks.iter().enumerate().filter(|(_, b)| !b.is_empty()) {
        for (cell, &e) in b.position_energy.iter().enumerate() {
            if e == 0.0 || e < threshold {
                continue;
            }
            out.extend((0..b.k).map(|coeff| Candidate {
                block: bi,
                gop: b.gop,
                cell,
                coeff,
            }));
        }
    }
    Ok(out)
}

/// Trims survivors to at most `max_tokens`, removing whole cells in order of
/// increasing retained energy (ties remove the later cell first).
pub fn cap_survivors(
    blocks: &[FrequencyBlock],
    survivors: Vec<Candidate>,
    max_tokens: usize,
) -> Vec<Candidate> {
    if survivors.len() <= max_tokens {
        return survivors;
    }
    let mut cells: Vec<(usize, usize)> = survivors.iter().map(|c| (c.block, c.cell)).collect();
    cells.dedup();
    cells.sort_by(|a, b| {
        let ea = blocks[a.0].position_energy[a.1];
        let eb = blocks[b.0].position_energy[b.1];
        eb.total_cmp(&ea).then(a.cmp(b))
    });
    let mut keep = std::collections::HashSet::new();
    let mut used = 0;
    for (bi, cell) in cells {
        let cost = blocks[bi].k;
        if used + cost > max_tokens {
            break;
        }
        used += cost;
        keep.insert((bi, cell));
    }
    survivors
        .into_iter()
        .filter(|c| keep.contains(&(c.block, c.cell)))
        .collect()
}

fn cell_row_col(pool: Grid, cell: usize) -> (usize, usize) {
    (cell / pool.width, cell % pool.width)
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Dynamic P-tokens for the surviving candidates, in candidate order.
pub fn p_tokens(blocks: &[FrequencyBlock], survivors: &[Candidate]) -> Vec<Token> {
    survivors
        .iter()
        .map(|c| {
            let b = &blocks[c.block];
            let (row, col) = cell_row_col(b.pool, c.cell);
            Token::new(
                TokenKind::DynamicP,
                to_f32(b.coeff(c.coeff, c.cell)),
                TokenOrigin::Coefficient {
                    gop: b.gop,
                    row,
                    col,
                    coeff: c.coeff,
                },
            )
        })
        .collect()
}

/// Summary token of one group: mean of its retained coefficient vectors over
/// cells and coefficient indices.
pub fn summary_token(block: &FrequencyBlock) -> Token {
    let mut acc = vec![0.0f64; block.dim];
    let cells = block.pool.cells();
    for k in 0..block.k {
        for cell in 0..cells {
            for (a, v) in acc.iter_mut().zip(block.coeff(k, cell)) {
                *a += v;
            }
        }
    }
    let n = (block.k * cells) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Token::new(
        TokenKind::Summary,
        to_f32(&acc),
        TokenOrigin::Group { gop: block.gop },
    )
}

pub fn summary_tokens(blocks: &[FrequencyBlock]) -> Vec<Token> {
    blocks.iter().map(summary_token).collect()
}

/// Up to `cap` static background tokens. Candidates are every (group, cell)
/// pair ranked by untruncated residual energy, lowest first, ties broken by
/// (group, cell). Each token carries the pooled anchor-frame embedding of its
/// group. Output is ordered by (group, cell).
pub fn static_tokens(
    seq: &LatentSequence,
    blocks: &[FrequencyBlock],
    cap: usize,
) -> Result<Vec<Token>> {
    let mut ranked: Vec<(f64, usize, usize)> = blocks
        .iter()
        .enumerate()
        .flat_map(|(bi, b)| {
            b.residual_energy
                .iter()
                .enumerate()
                .map(move |(cell, &e)| (e, bi, cell))
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    ranked.truncate(cap);
    ranked.sort_by_key(|&(_, bi, cell)| (bi, cell));

    let mut pooled_cache: Option<(usize, Vec<f64>)> = None;
    let dim = seq.dim();
    let mut out = Vec::with_capacity(ranked.len());
    for (_, bi, cell) in ranked {
        let b = &blocks[bi];
        if pooled_cache.as_ref().is_none_or(|(a, _)| *a != b.anchor) {
            pooled_cache = Some((b.anchor, pooled_frame(seq, b.anchor, b.pool)?));
        }
        let pooled = &pooled_cache.as_ref().expect("cache filled").1;
        let (row, col) = cell_row_col(b.pool, cell);
        out.push(Token::new(
            TokenKind::Static,
            to_f32(&pooled[cell * dim..(cell + 1) * dim]),
            TokenOrigin::Pooled {
                gop: b.gop,
                frame: b.anchor,
                row,
                col,
            },
        ));
    }
    Ok(out)
}

/// Re-densified P-tokens: for every surviving cell, the truncated spectrum is
/// inverted back to each P-frame and added to the pooled anchor embedding.
pub fn reconstructed_tokens(
    seq: &LatentSequence,
    blocks: &[FrequencyBlock],
    survivors: &[Candidate],
) -> Result<Vec<Token>> {
    let mut cells: Vec<(usize, usize)> = survivors.iter().map(|c| (c.block, c.cell)).collect();
    cells.dedup();
    let dim = seq.dim();
    let mut out = Vec::new();
    let mut anchor_cache: Option<(usize, Vec<f64>)> = None;
    for (bi, cell) in cells {
        let b = &blocks[bi];
        if anchor_cache.as_ref().is_none_or(|(a, _)| *a != b.anchor) {
            anchor_cache = Some((b.anchor, pooled_frame(seq, b.anchor, b.pool)?));
        }
        let anchor = &anchor_cache.as_ref().expect("cache filled").1[cell * dim..(cell + 1) * dim];
        let plan = Dct2::new(b.padded_len);
        // [frame][dim]
        let mut rec = vec![0.0; b.p_frames.len() * dim];
        let mut spectrum = vec![0.0; b.k];
        let mut series = vec![0.0; b.padded_len];
        for d in 0..dim {
            for (ki, s) in spectrum.iter_mut().enumerate() {
                *s = b.coeff(ki, cell)[d];
            }
            plan.inverse_into(&spectrum, &mut series);
            for l in 0..b.p_frames.len() {
                rec[l * dim + d] = series[l];
            }
        }
        let (row, col) = cell_row_col(b.pool, cell);
        for (l, &frame) in b.p_frames.iter().enumerate() {
            let emb: Vec<f32> = rec[l * dim..(l + 1) * dim]
                .iter()
                .zip(anchor)
                .map(|(r, a)| (r + a) as f32)
                .collect();
            out.push(Token::new(
                TokenKind::DynamicP,
                emb,
                TokenOrigin::Reconstructed {
                    gop: b.gop,
                    frame,
                    row,
                    col,
                },
            ));
        }
    }
    Ok(out)
}
