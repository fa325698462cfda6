//! Seeded synthetic latent clips with known temporal structure.
//!
//! Every kind starts from Gaussian frames drawn with ChaCha8. Motion kinds
//! add a sinusoidal drift `sin(2 pi rate t / T) * u` where `u` is a Gaussian
//! direction drawn independently for every token, so all tokens share the
//! same temporal shape at different amplitudes.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{FreresError, Result};
use crate::latent::{Grid, LatentSequence};

/// Flicker rate of the static kind's jitter, in cycles per clip.
const STATIC_FLICKER_RATE: f64 = 0.25;
pub const DEFAULT_JITTER: f64 = 1e-3;
pub const DEFAULT_SLOW_RATE: f64 = 0.5;
pub const DEFAULT_FAST_RATE: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SyntheticKind {
    Noise,
    Static,
    SlowMotion,
    FastMotion,
    SceneCut,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 5] = [
        SyntheticKind::Static,
        SyntheticKind::SlowMotion,
        SyntheticKind::FastMotion,
        SyntheticKind::SceneCut,
        SyntheticKind::Noise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Noise => "noise",
            SyntheticKind::Static => "static",
            SyntheticKind::SlowMotion => "slow",
            SyntheticKind::FastMotion => "fast",
            SyntheticKind::SceneCut => "cut",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticKind {
    type Err = FreresError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "noise" => SyntheticKind::Noise,
            "static" => SyntheticKind::Static,
            "slow" | "slow-motion" | "slowmotion" => SyntheticKind::SlowMotion,
            "fast" | "fast-motion" | "fastmotion" => SyntheticKind::FastMotion,
            "cut" | "scene-cut" | "scenecut" => SyntheticKind::SceneCut,
            other => {
                return Err(FreresError::InvalidSpec(format!(
                    "unknown synthetic kind {other:?}"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub frames: usize,
    pub grid: Grid,
    pub dim: usize,
    /// Drift cycles over the clip; `None` picks the kind's default.
    pub motion_rate: Option<f64>,
    /// First frame of the second segment; `None` means `frames / 2`.
    pub cut_at: Option<usize>,
    /// Static flicker amplitude; `None` means 1e-3.
    pub jitter: Option<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 16 frames of 24x24x8 latents with every optional field defaulted.
    pub fn new(kind: SyntheticKind, seed: u64) -> Self {
        Self {
            kind,
            frames: 16,
            grid: Grid::new(24, 24),
            dim: 8,
            motion_rate: None,
            cut_at: None,
            jitter: None,
            seed,
        }
    }

    pub fn rate(&self) -> f64 {
        self.motion_rate.unwrap_or(match self.kind {
            SyntheticKind::FastMotion => DEFAULT_FAST_RATE,
            _ => DEFAULT_SLOW_RATE,
        })
    }

    pub fn cut(&self) -> usize {
        self.cut_at.unwrap_or(self.frames / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FreresError::InvalidSpec(msg));
        if self.frames == 0 || self.grid.cells() == 0 || self.dim == 0 {
            return bad(format!(
                "frames, grid and dim must be non-zero (got {} frames, grid {}, d={})",
                self.frames, self.grid, self.dim
            ));
        }
        let rate = self.rate();
        if !(rate.is_finite() && rate >= 0.0) {
            return bad(format!("motion rate {rate} must be finite and >= 0"));
        }
        if let Some(j) = self.jitter {
            if !(j.is_finite() && j >= 0.0) {
                return bad(format!("jitter {j} must be finite and >= 0"));
            }
        }
        if self.kind == SyntheticKind::SceneCut {
            let cut = self.cut();
            if self.frames < 2 || cut == 0 || cut >= self.frames {
                return bad(format!("cut_at {cut} must lie in 1..{}", self.frames));
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn drift_frame(base: &[f64], dir: &[f64], amp: f64) -> Vec<f32> {
    base.iter()
        .zip(dir)
        .map(|(b, u)| (b + amp * u) as f32)
        .collect()
}

fn wave(rate: f64, t: usize, frames: usize) -> f64 {
    (2.0 * PI * rate * t as f64 / frames as f64).sin()
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<LatentSequence> {
    spec.validate()?;
    let n = spec.grid.cells() * spec.dim;
    let t_len = spec.frames;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = spec.jitter.unwrap_or(DEFAULT_JITTER);

    let frames: Vec<Vec<f32>> = match spec.kind {
        SyntheticKind::Noise => (0..t_len)
            .map(|_| {
                gaussian(&mut rng, n)
                    .into_iter()
                    .map(|v| v as f32)
                    .collect()
            })
            .collect(),
        SyntheticKind::Static => {
            let base = gaussian(&mut rng, n);
            let dir = gaussian(&mut rng, n);
            (0..t_len)
                .map(|t| drift_frame(&base, &dir, jitter * wave(STATIC_FLICKER_RATE, t, t_len)))
                .collect()
        }
        SyntheticKind::SlowMotion | SyntheticKind::FastMotion => {
            let base = gaussian(&mut rng, n);
            let dir = gaussian(&mut rng, n);
            let rate = spec.rate();
            (0..t_len)
                .map(|t| drift_frame(&base, &dir, wave(rate, t, t_len)))
                .collect()
        }
        SyntheticKind::SceneCut => {
            let segments: Vec<(Vec<f64>, Vec<f64>)> = (0..2)
                .map(|_| (gaussian(&mut rng, n), gaussian(&mut rng, n)))
                .collect();
            let cut = spec.cut();
            (0..t_len)
                .map(|t| {
                    let (base, dir) = &segments[usize::from(t >= cut)];
                    drift_frame(base, dir, jitter * wave(STATIC_FLICKER_RATE, t, t_len))
                })
                .collect()
        }
    };
    LatentSequence::new(spec.grid, spec.dim, frames, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: SyntheticKind, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            frames: 8,
            grid: Grid::new(3, 3),
            dim: 2,
            ..SyntheticSpec::new(kind, seed)
        }
    }

    #[test]
    fn deterministic() {
        for kind in SyntheticKind::ALL {
            let a = gen_synthetic(&small(kind, 7)).unwrap();
            assert_eq!(a, gen_synthetic(&small(kind, 7)).unwrap());
            assert_ne!(a, gen_synthetic(&small(kind, 8)).unwrap());
        }
    }

    #[test]
    fn static_without_jitter_repeats() {
        let spec = SyntheticSpec {
            jitter: Some(0.0),
            ..small(SyntheticKind::Static, 3)
        };
        let s = gen_synthetic(&spec).unwrap();
        assert!(s.frames().all(|f| f == s.frame(0)));
    }

    #[test]
    fn scene_cut_segments() {
        let spec = SyntheticSpec {
            jitter: Some(0.0),
            cut_at: Some(3),
            ..small(SyntheticKind::SceneCut, 1)
        };
        let s = gen_synthetic(&spec).unwrap();
        assert_eq!(s.frame(0), s.frame(2));
        assert_eq!(s.frame(3), s.frame(7));
        assert_ne!(s.frame(2), s.frame(3));
    }

    #[test]
    fn slow_motion_half_cycle() {
        let spec = small(SyntheticKind::SlowMotion, 5);
        let s = gen_synthetic(&spec).unwrap();
        // drift is zero at t = 0 and peaks at T/2 for half a cycle
        let d = |t: usize| {
            s.frame(t)
                .iter()
                .zip(s.frame(0))
                .map(|(a, b)| (a - b).abs())
                .sum::<f32>()
        };
        assert_eq!(d(0), 0.0);
        assert!(d(4) > d(2) && d(4) > d(6));
    }

    #[test]
    fn invalid_specs() {
        let mut s = small(SyntheticKind::Noise, 0);
        s.frames = 0;
        assert!(matches!(
            gen_synthetic(&s),
            Err(FreresError::InvalidSpec(_))
        ));
        let mut s = small(SyntheticKind::SceneCut, 0);
        s.cut_at = Some(8);
        assert!(gen_synthetic(&s).is_err());
        let mut s = small(SyntheticKind::FastMotion, 0);
        s.motion_rate = Some(f64::NAN);
        assert!(gen_synthetic(&s).is_err());
        assert!("wobble".parse::<SyntheticKind>().is_err());
        assert_eq!(
            "cut".parse::<SyntheticKind>().unwrap(),
            SyntheticKind::SceneCut
        );
    }
}
