//! Temporal DCT energy spectra: how much trajectory energy the first few
//! coefficients capture.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::anchor::AnchorSet;
use crate::dct::Dct2;
use crate::error::Result;
use crate::freres::{group_frames, pooled_frame, residual_trajectory};
use crate::latent::{Grid, LatentSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Mean squared coefficient at each index over the trajectories long
    /// enough to have it.
    pub per_coeff_energy: Vec<f64>,
    /// Running share of the total energy; empty when `degenerate`.
    pub cumulative: Vec<f64>,
    pub total: f64,
    pub trajectories: usize,
    /// No energy at all, so shares are undefined.
    pub degenerate: bool,
}

impl SpectrumReport {
    /// Share of energy in the first `k` coefficients.
    pub fn topk_ratio(&self, k: usize) -> Option<f64> {
        if self.degenerate || k == 0 {
            return None;
        }
        Some(self.cumulative[k.min(self.cumulative.len()) - 1])
    }

    /// `index,energy,cumulative` rows after `#` comment lines.
    pub fn to_csv(&self, comments: &[&str]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "# trajectories {}", self.trajectories);
        let _ = writeln!(out, "# total_energy {}", self.total);
        out.push_str("index,energy,cumulative\n");
        for (i, e) in self.per_coeff_energy.iter().enumerate() {
            let cum = self
                .cumulative
                .get(i)
                .map_or_else(|| "nan".to_owned(), |c| c.to_string());
            let _ = writeln!(out, "{i},{e},{cum}");
        }
        out
    }
}

/// Accumulates squared DCT coefficients of trajectories of any length.
#[derive(Default)]
struct Accumulator {
    plans: HashMap<usize, Dct2>,
    sums: Vec<f64>,
    counts: Vec<usize>,
    trajectories: usize,
    scratch: Vec<f64>,
}

impl Accumulator {
    fn add(&mut self, series: &[f64]) {
        let len = series.len();
        if len == 0 {
            return;
        }
        let plan = self.plans.entry(len).or_insert_with(|| Dct2::new(len));
        self.scratch.resize(len, 0.0);
        plan.forward_into(series, &mut self.scratch);
        if self.sums.len() < len {
            self.sums.resize(len, 0.0);
            self.counts.resize(len, 0);
        }
        for (i, c) in self.scratch.iter().enumerate() {
            self.sums[i] += c * c;
            self.counts[i] += 1;
        }
        self.trajectories += 1;
    }

    fn finish(self) -> SpectrumReport {
        let total: f64 = self.sums.iter().sum();
        let degenerate = total.is_nan() || total <= 0.0;
        let cumulative = if degenerate {
            Vec::new()
        } else {
            let mut run = 0.0;
            let mut c: Vec<f64> = self
                .sums
                .iter()
                .map(|e| {
                    run += e;
                    run / total
                })
                .collect();
            // rounding can leave the tail a hair off 1
            if let Some(last) = c.last_mut() {
                *last = 1.0;
            }
            c
        };
        SpectrumReport {
            per_coeff_energy: self
                .sums
                .iter()
                .zip(&self.counts)
                .map(|(s, &n)| s / n as f64)
                .collect(),
            cumulative,
            total,
            trajectories: self.trajectories,
            degenerate,
        }
    }
}

/// Spectrum of arbitrary trajectories, each transformed at its own length.
pub fn trajectory_spectrum<S: AsRef<[f64]>>(trajectories: &[S]) -> SpectrumReport {
    let mut acc = Accumulator::default();
    for t in trajectories {
        acc.add(t.as_ref());
    }
    acc.finish()
}

/// Full-length (untruncated) spectra of the pooled residual trajectories of
/// every group, pooled over cells, dims and groups. Groups without P-frames
/// contribute nothing; if no group has any, the report is degenerate.
pub fn energy_spectrum(
    seq: &LatentSequence,
    anchors: &AnchorSet,
    pool: Grid,
) -> Result<SpectrumReport> {
    let mut acc = Accumulator::default();
    let mut series = Vec::new();
    for gop in group_frames(anchors).iter().filter(|g| !g.is_empty()) {
        let traj = residual_trajectory(seq, gop, pool)?;
        for cell in 0..pool.cells() {
            for d in 0..seq.dim() {
                series.clear();
                series.extend(traj.series(cell, d));
                acc.add(&series);
            }
        }
    }
    Ok(acc.finish())
}

/// Spectra of the pooled latents themselves over the whole clip, with no
/// anchor subtracted.
pub fn raw_spectrum(seq: &LatentSequence, pool: Grid) -> Result<SpectrumReport> {
    let pooled = (0..seq.num_frames())
        .map(|t| pooled_frame(seq, t, pool))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = Accumulator::default();
    let mut series = vec![0.0; seq.num_frames()];
    for i in 0..pool.cells() * seq.dim() {
        for (s, frame) in series.iter_mut().zip(&pooled) {
            *s = frame[i];
        }
        acc.add(&series);
    }
    Ok(acc.finish())
}
