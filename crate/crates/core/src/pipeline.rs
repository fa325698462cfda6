//! End-to-end encoder: anchors, pruning, budget, residual frequencies and
//! fusion, with an accounting report.

use std::fmt;

use crate::absorber::DEFAULT_RADIUS;
use crate::anchor::{block_prune, select_anchors, uniform_anchors, DEFAULT_TAU};
use crate::budget::{
    allocate, allocate_spatial_only, compression_ratio, BudgetRequest, CompressionPlan,
};
use crate::error::{FreresError, Result};
use crate::freres::{
    candidate_count, cap_survivors, compress_gop, energy_filter, group_frames, p_tokens,
    reconstructed_tokens, static_tokens, summary_tokens, FrequencyBlock, DEFAULT_EPS_REL,
    DEFAULT_POOL, DEFAULT_STATIC_CAP,
};
use crate::fusion::{fuse, FusionConfig, FusionGeometry, FusionMode, ModelWeights};
use crate::latent::{Grid, KindCounts, LatentSequence, Token, TokenKind, TokenOrigin, TokenStream};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub budget: usize,
    /// Uniform anchor frames for the raw branch (`M`).
    pub anchors: usize,
    pub kraw: usize,
    /// Uniform I-frames seeding the groups; `None` reuses `anchors`.
    pub groups: Option<usize>,
    pub kmax: usize,
    /// Effective trajectory length; `None` uses the longest group, but never
    /// less than `kmax` (trajectories are zero-padded up to `K`).
    pub lgroup: Option<usize>,
    pub tau: f64,
    pub radius: f64,
    pub mode: FusionMode,
    pub eps_rel: f64,
    pub static_cap: usize,
    pub pool: Grid,
    /// Gate overrides; `None` takes the gates stored with the weights.
    pub g_raw: Option<f32>,
    pub g_freq: Option<f32>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            budget: 4512,
            anchors: 8,
            kraw: 512,
            groups: None,
            kmax: 5,
            lgroup: None,
            tau: DEFAULT_TAU,
            radius: DEFAULT_RADIUS,
            mode: FusionMode::Absorber,
            eps_rel: DEFAULT_EPS_REL,
            static_cap: DEFAULT_STATIC_CAP,
            pool: DEFAULT_POOL,
            g_raw: None,
            g_freq: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanReport {
    pub mode: FusionMode,
    pub plan: CompressionPlan,
    pub frames: usize,
    pub groups: usize,
    pub event_anchors: usize,
    pub candidates: usize,
    pub survivors: usize,
    pub counts: KindCounts,
    /// Multiply-adds spent in forward transforms.
    pub dct_work: usize,
    pub baseline_tokens: usize,
    pub ratio: f64,
    pub within_budget: bool,
}

impl PlanReport {
    pub fn total(&self) -> usize {
        self.counts.total()
    }
}

impl fmt::Display for PlanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode {}", self.mode)?;
        writeln!(f, "frames {}", self.frames)?;
        writeln!(f, "gops {}", self.groups)?;
        writeln!(f, "event_anchors {}", self.event_anchors)?;
        write!(f, "{}", self.plan)?;
        writeln!(f, "candidates {}", self.candidates)?;
        writeln!(f, "survivors {}", self.survivors)?;
        writeln!(f, "raw_tokens {}", self.counts.raw_anchor)?;
        writeln!(f, "p_tokens {}", self.counts.dynamic_p)?;
        writeln!(f, "summary_tokens {}", self.counts.summary)?;
        writeln!(f, "static_tokens {}", self.counts.static_)?;
        writeln!(f, "total_tokens {}", self.total())?;
        writeln!(f, "dct_work {}", self.dct_work)?;
        writeln!(f, "baseline_tokens {}", self.baseline_tokens)?;
        writeln!(f, "compression_ratio {:.4}", self.ratio)?;
        writeln!(f, "within_budget {}", self.within_budget)
    }
}

fn raw_branch(seq: &LatentSequence, cfg: &PipelineConfig) -> Result<Vec<Token>> {
    let mut out = Vec::with_capacity(cfg.anchors * cfg.kraw);
    for a in uniform_anchors(seq.num_frames(), cfg.anchors)? {
        let pruned = block_prune(seq, a)?.retain_top(cfg.kraw);
        out.extend(
            pruned
                .kept
                .into_iter()
                .map(|(coord, e)| Token::new(TokenKind::RawAnchor, e, TokenOrigin::Grid(coord))),
        );
    }
    Ok(out)
}

/// Runs the whole encoder on one clip.
///
/// The raw branch prunes the `M` uniform anchors. Groups start at the
/// uniform I-frames plus any event frames; the budget is resolved for the
/// actual number of groups before any temporal work happens. A clip with no
/// P-frames at all, or the spatial-only mode, skips the temporal branch.
pub fn run_pipeline(
    seq: &LatentSequence,
    cfg: &PipelineConfig,
    weights: &ModelWeights,
) -> Result<(TokenStream, PlanReport)> {
    seq.validate()?;
    if weights.dim() != seq.dim() {
        return Err(FreresError::ShapeMismatch(format!(
            "weights have d={}, latents have d={}",
            weights.dim(),
            seq.dim()
        )));
    }
    if cfg.budget < 1 {
        return Err(FreresError::InvalidBudget(
            "total budget must be >= 1".into(),
        ));
    }
    let mode = cfg.mode;
    let t_len = seq.num_frames();

    let anchor_set = select_anchors(seq, cfg.groups.unwrap_or(cfg.anchors), cfg.tau)?;
    let gops = group_frames(&anchor_set);
    let temporal = mode.uses_temporal() && gops.iter().any(|g| !g.is_empty());
    if mode == FusionMode::TemporalOnly && !temporal {
        return Err(FreresError::InvalidParameter(
            "temporal-only mode needs at least one P-frame".into(),
        ));
    }

    let raw_anchors = if mode.uses_raw() { cfg.anchors } else { 0 };
    let longest = gops.iter().map(|g| g.p_frames.len()).max().unwrap_or(0);
    let request = BudgetRequest {
        total: cfg.budget,
        anchors: raw_anchors,
        raw_per_anchor: cfg.kraw,
        summary_reserve: gops.len(),
        static_reserve: cfg.static_cap,
        groups: gops.len(),
        pool_cells: cfg.pool.cells(),
        k_max: cfg.kmax,
        group_len: cfg.lgroup.unwrap_or(longest.max(cfg.kmax)),
    };
    let plan = if temporal {
        allocate(&request)?
    } else {
        allocate_spatial_only(&request)?
    };

    let raw = if mode.uses_raw() {
        raw_branch(seq, cfg)?
    } else {
        Vec::new()
    };

    let mut freres = Vec::new();
    let mut candidates = 0;
    let mut survivors = 0;
    let mut dct_work = 0;
    if temporal {
        let blocks = gops
            .iter()
            .map(|g| {
                if g.is_empty() {
                    Ok(FrequencyBlock::empty(g, cfg.pool, seq.dim(), plan.k))
                } else {
                    compress_gop(g, seq, cfg.pool, plan.k)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        dct_work = blocks
            .iter()
            .filter(|b| !b.is_empty())
            .map(|b| b.pool.cells() * b.dim * b.padded_len * b.k)
            .sum();
        candidates = candidate_count(&blocks);
        let kept = cap_survivors(&blocks, energy_filter(&blocks, cfg.eps_rel)?, plan.freq);
        survivors = kept.len();
        if mode == FusionMode::IdctReconstruct {
            freres.extend(reconstructed_tokens(seq, &blocks, &kept)?);
        } else {
            freres.extend(p_tokens(&blocks, &kept));
        }
        freres.extend(summary_tokens(&blocks));
        freres.extend(static_tokens(seq, &blocks, cfg.static_cap)?);
    }

    let mut fusion = FusionConfig::from_weights(mode, weights);
    fusion.radius = cfg.radius;
    if let Some(g) = cfg.g_raw {
        fusion.g_raw = g;
    }
    if let Some(g) = cfg.g_freq {
        fusion.g_freq = g;
    }
    let geometry = FusionGeometry {
        grid: seq.grid(),
        pool: cfg.pool,
        gops,
    };
    let stream = fuse(raw, freres, &fusion, Some(weights), Some(&geometry))?;

    let counts = stream.counts();
    let baseline = seq.dense_token_count();
    let report = PlanReport {
        mode,
        plan,
        frames: t_len,
        groups: if temporal { geometry.gops.len() } else { 0 },
        event_anchors: anchor_set.event_count(),
        candidates,
        survivors,
        counts,
        dct_work,
        baseline_tokens: baseline,
        ratio: compression_ratio(baseline as u64, counts.total() as u64)?,
        within_budget: counts.total() <= cfg.budget,
    };
    Ok((stream, report))
}
