//! Hierarchical token-budget allocation and context-length accounting.
//!
//! The total visual budget `B` is split top-down: spatial anchors first
//! (`M * K_raw`), then the fixed summary and static reserves, and whatever is
//! left funds temporal coefficients. The number of retained coefficients is
//! a hard minimum of the coefficient cap, the group length, and what the
//! leftover budget can pay for across every group and pooled cell.

use std::fmt;

use crate::error::{FreresError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetRequest {
    /// Total visual-token budget.
    pub total: usize,
    pub anchors: usize,
    pub raw_per_anchor: usize,
    pub summary_reserve: usize,
    pub static_reserve: usize,
    pub groups: usize,
    pub pool_cells: usize,
    pub k_max: usize,
    pub group_len: usize,
}

impl BudgetRequest {
    /// Request with one summary per group and 24 statics reserved.
    pub fn new(
        total: usize,
        anchors: usize,
        raw_per_anchor: usize,
        groups: usize,
        pool_cells: usize,
        k_max: usize,
        group_len: usize,
    ) -> Self {
        Self {
            total,
            anchors,
            raw_per_anchor,
            summary_reserve: groups,
            static_reserve: crate::freres::DEFAULT_STATIC_CAP,
            groups,
            pool_cells,
            k_max,
            group_len,
        }
    }

    pub fn spatial(&self) -> usize {
        self.anchors * self.raw_per_anchor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompressionPlan {
    pub request: BudgetRequest,
    pub spatial: usize,
    pub freq: usize,
    /// Retained coefficients per trajectory; 0 for spatial-only plans.
    pub k: usize,
    pub predicted_max_tokens: usize,
}

impl CompressionPlan {
    /// Upper bound on temporal P-tokens, `N_group * K * N_pool`.
    pub fn p_token_capacity(&self) -> usize {
        self.request.groups * self.k * self.request.pool_cells
    }

    pub fn is_spatial_only(&self) -> bool {
        self.k == 0
    }
}

/// Resolves a request into sub-budgets.
pub fn allocate(req: &BudgetRequest) -> Result<CompressionPlan> {
    if req.total < 1 {
        return Err(FreresError::InvalidBudget(
            "total budget must be >= 1".into(),
        ));
    }
    let slots = req.groups * req.pool_cells;
    if slots == 0 {
        return Err(FreresError::InvalidBudget(
            "temporal branch needs at least one group and one pooled cell".into(),
        ));
    }
    let spatial = req.spatial();
    let reserved = spatial + req.summary_reserve + req.static_reserve;
    let freq = req
        .total
        .checked_sub(reserved)
        .filter(|&f| f > 0)
        .ok_or_else(|| {
            FreresError::BudgetTooSmall(format!(
                "budget {} leaves nothing for coefficients after reserving {reserved}",
                req.total
            ))
        })?;
    let k = req.k_max.min(req.group_len).min(freq / slots);
    if k < 1 {
        return Err(FreresError::BudgetTooSmall(format!(
            "temporal budget {freq} over {slots} slots (K_max {}, L_group {}) yields K = 0",
            req.k_max, req.group_len
        )));
    }
    Ok(CompressionPlan {
        request: *req,
        spatial,
        freq,
        k,
        predicted_max_tokens: spatial + req.summary_reserve + req.static_reserve + slots * k,
    })
}

/// Plan for runs without a temporal branch. Only the spatial reserve has to
/// fit the budget.
pub fn allocate_spatial_only(req: &BudgetRequest) -> Result<CompressionPlan> {
    let spatial = req.spatial();
    if req.total < 1 || spatial > req.total {
        return Err(FreresError::BudgetTooSmall(format!(
            "spatial anchors need {spatial} tokens, budget is {}",
            req.total
        )));
    }
    let request = BudgetRequest {
        summary_reserve: 0,
        static_reserve: 0,
        groups: 0,
        ..*req
    };
    Ok(CompressionPlan {
        request,
        spatial,
        freq: req.total - spatial,
        k: 0,
        predicted_max_tokens: spatial,
    })
}

/// Context length seen by the language model: visual plus text tokens.
pub fn account_context(frames: u64, tokens_per_frame: u64, text_tokens: u64) -> u64 {
    frames * tokens_per_frame + text_tokens
}

pub fn compression_ratio(baseline_tokens: u64, compressed_tokens: u64) -> Result<f64> {
    if compressed_tokens == 0 {
        return Err(FreresError::DivisionDomain);
    }
    Ok(baseline_tokens as f64 / compressed_tokens as f64)
}

impl fmt::Display for CompressionPlan {
    /// `key value` lines, one per field.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.request;
        writeln!(f, "budget {}", r.total)?;
        writeln!(f, "anchors {}", r.anchors)?;
        writeln!(f, "raw_per_anchor {}", r.raw_per_anchor)?;
        writeln!(f, "groups {}", r.groups)?;
        writeln!(f, "pool_cells {}", r.pool_cells)?;
        writeln!(f, "k_max {}", r.k_max)?;
        writeln!(f, "group_len {}", r.group_len)?;
        writeln!(f, "b_spatial {}", self.spatial)?;
        writeln!(f, "b_summary {}", r.summary_reserve)?;
        writeln!(f, "b_static {}", r.static_reserve)?;
        writeln!(f, "b_freq {}", self.freq)?;
        writeln!(f, "k {}", self.k)?;
        writeln!(f, "p_token_capacity {}", self.p_token_capacity())?;
        writeln!(f, "predicted_max_tokens {}", self.predicted_max_tokens)
    }
}
