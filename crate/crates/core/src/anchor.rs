//! I-frame anchor selection and parameter-free 3x3 block pruning.

use crate::error::{FreresError, Result};
use crate::latent::{energy, Grid, GridCoord, LatentSequence};

/// Default event-promotion threshold on cosine distance between frames.
pub const DEFAULT_TAU: f64 = 0.3;

/// Side length of the pruning neighbourhood.
pub const BLOCK: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    /// Sorted, unique anchor frame indices (uniform backbone plus events).
    pub indices: Vec<usize>,
    /// Evenly spaced backbone, `floor(i * T / M)` for `i in 0..M`.
    pub uniform: Vec<usize>,
    /// Every frame promoted by the distance threshold, whether or not it was
    /// already on the backbone.
    pub events: Vec<usize>,
    pub tau: f64,
    pub num_frames: usize,
}

impl AnchorSet {
    /// Builds an anchor set from explicit indices, for callers that choose
    /// I-frames themselves. Indices are sorted and deduplicated; frame 0 is
    /// always added.
    pub fn from_indices(mut indices: Vec<usize>, num_frames: usize) -> Result<Self> {
        if num_frames == 0 {
            return Err(FreresError::InvalidParameter(
                "anchor set over zero frames".into(),
            ));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= num_frames) {
            return Err(FreresError::InvalidParameter(format!(
                "anchor {bad} outside [0, {num_frames})"
            )));
        }
        indices.push(0);
        indices.sort_unstable();
        indices.dedup();
        Ok(Self {
            uniform: indices.clone(),
            indices,
            events: Vec::new(),
            tau: 2.0,
            num_frames,
        })
    }

    pub fn uniform_count(&self) -> usize {
        self.uniform.len()
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.indices.binary_search(&frame).is_ok()
    }
}

/// Evenly spaced backbone of `count` frames over `num_frames`.
pub fn uniform_anchors(num_frames: usize, count: usize) -> Result<Vec<usize>> {
    if count < 1 || count > num_frames {
        return Err(FreresError::InvalidBudget(format!(
            "anchor count {count} must lie in [1, {num_frames}]"
        )));
    }
    // i*T/M is strictly increasing in i whenever M <= T, so no dedup is needed.
    Ok((0..count).map(|i| i * num_frames / count).collect())
}

/// Mean of all token embeddings of a frame.
pub fn frame_vector(seq: &LatentSequence, t: usize) -> Vec<f64> {
    let dim = seq.dim();
    let mut acc = vec![0.0f64; dim];
    for token in seq.frame(t).chunks_exact(dim) {
        for (a, &v) in acc.iter_mut().zip(token) {
            *a += f64::from(v);
        }
    }
    let n = seq.grid().cells() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// `1 - cos(a, b)`; a zero vector is at distance 1 from everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Uniform backbone of `m` I-frames plus every frame whose mean-pooled
/// vector is farther than `tau` (cosine distance) from the previous frame's.
pub fn select_anchors(seq: &LatentSequence, m: usize, tau: f64) -> Result<AnchorSet> {
    let t_len = seq.num_frames();
    let uniform = uniform_anchors(t_len, m)?;
    if !(0.0..=2.0).contains(&tau) {
        return Err(FreresError::InvalidParameter(format!(
            "tau {tau} outside [0, 2]"
        )));
    }

    let vectors: Vec<Vec<f64>> = (0..t_len).map(|t| frame_vector(seq, t)).collect();
    let events: Vec<usize> = (1..t_len)
        .filter(|&t| cosine_distance(&vectors[t], &vectors[t - 1]) > tau)
        .collect();

    let mut indices: Vec<usize> = uniform.iter().chain(&events).copied().collect();
    indices.sort_unstable();
    indices.dedup();

    Ok(AnchorSet {
        indices,
        uniform,
        events,
        tau,
        num_frames: t_len,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrunedFrame {
    pub frame: usize,
    /// Surviving tokens in row-major grid order.
    pub kept: Vec<(GridCoord, Vec<f32>)>,
    /// `true` where a token was removed, row-major over the grid.
    pub dropped_mask: Vec<bool>,
    pub grid: Grid,
}

impl PrunedFrame {
    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// Keeps the `k_raw` highest-energy survivors, leaving the result in
    /// grid order. Equal energies favour the earlier grid position.
    pub fn retain_top(mut self, k_raw: usize) -> Self {
        if self.kept.len() <= k_raw {
            return self;
        }
        let mut order: Vec<(usize, f64)> = self
            .kept
            .iter()
            .enumerate()
            .map(|(i, (_, e))| (i, energy(e)))
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut keep = vec![false; self.kept.len()];
        for &(i, _) in &order[..k_raw] {
            keep[i] = true;
        }
        let width = self.grid.width;
        let mut idx = 0;
        let mask = &mut self.dropped_mask;
        self.kept.retain(|(c, _)| {
            let k = keep[idx];
            idx += 1;
            if !k {
                mask[c.row * width + c.col] = true;
            }
            k
        });
        self
    }
}

/// Drops the single lowest-energy token in every 3x3 block of one frame.
/// Ties go to the lowest row-major position inside the block.
pub fn block_prune(seq: &LatentSequence, frame: usize) -> Result<PrunedFrame> {
    let grid = seq.grid();
    if !grid.height.is_multiple_of(BLOCK) || !grid.width.is_multiple_of(BLOCK) {
        return Err(FreresError::shape(format!(
            "grid {grid} is not divisible into {BLOCK}x{BLOCK} blocks"
        )));
    }
    let mut dropped_mask = vec![false; grid.cells()];
    for br in (0..grid.height).step_by(BLOCK) {
        for bc in (0..grid.width).step_by(BLOCK) {
            let mut best: Option<(usize, usize, f64)> = None;
            for r in br..br + BLOCK {
                for c in bc..bc + BLOCK {
                    let e = energy(seq.token(frame, r, c));
                    // strict comparison keeps the first minimum in row-major order
                    if best.is_none_or(|(_, _, be)| e < be) {
                        best = Some((r, c, e));
                    }
                }
            }
            let (r, c, _) = best.expect("block is non-empty");
            dropped_mask[r * grid.width + c] = true;
        }
    }
    let kept = (0..grid.height)
        .flat_map(|r| (0..grid.width).map(move |c| (r, c)))
        .filter(|&(r, c)| !dropped_mask[r * grid.width + c])
        .map(|(r, c)| (GridCoord::new(frame, r, c), seq.token(frame, r, c).to_vec()))
        .collect();
    Ok(PrunedFrame {
        frame,
        kept,
        dropped_mask,
        grid,
    })
}
