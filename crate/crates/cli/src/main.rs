use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use freres_core::anchor::{select_anchors, uniform_anchors, AnchorSet};
use freres_core::budget::{account_context, allocate, BudgetRequest};
use freres_core::freres::{DEFAULT_EPS_REL, DEFAULT_STATIC_CAP};
use freres_core::io::{
    load_weights, read_latents, token_stream_to_string, write_latents, write_weights,
};
use freres_core::spectrum::{energy_spectrum, raw_spectrum};
use freres_core::synthetic::{gen_synthetic, SyntheticKind, SyntheticSpec};
use freres_core::{ErrorCategory, FreresError, FusionMode, Grid, ModelWeights, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "freres",
    version,
    about = "Dual-track latent video token compression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a latent sequence into a token stream.
    Encode(EncodeArgs),
    /// Resolve a token budget without touching any data.
    Plan(PlanArgs),
    /// Temporal DCT energy spectrum of a clip, as CSV.
    Analyze(AnalyzeArgs),
    /// Context length for a frames x tokens-per-frame layout plus text.
    Account(AccountArgs),
    /// Write a synthetic latent sequence.
    Gen(GenArgs),
    /// Write a weights file.
    InitWeights(InitWeightsArgs),
}

fn parse_grid(s: &str) -> std::result::Result<Grid, String> {
    let (h, w) = match s.split_once(['x', 'X']) {
        Some((h, w)) => (h, w),
        None => (s, s),
    };
    let h: usize = h.trim().parse().map_err(|_| format!("bad grid {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad grid {s:?}"))?;
    if h == 0 || w == 0 {
        return Err(format!("grid {s:?} has a zero side"));
    }
    Ok(Grid::new(h, w))
}

fn parse_mode(s: &str) -> std::result::Result<FusionMode, String> {
    s.parse().map_err(|e: FreresError| e.to_string())
}

fn parse_kind(s: &str) -> std::result::Result<SyntheticKind, String> {
    s.parse().map_err(|e: FreresError| e.to_string())
}

#[derive(Args)]
struct EncodeArgs {
    /// Input `.frl` latent file.
    input: PathBuf,
    #[arg(long, default_value_t = 4512)]
    budget: usize,
    /// Uniform anchor frames for the raw branch.
    #[arg(long, default_value_t = 8)]
    anchors: usize,
    /// Raw tokens kept per anchor.
    #[arg(long, default_value_t = 512)]
    kraw: usize,
    /// Uniform I-frames seeding the groups (defaults to --anchors).
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long, default_value_t = 5)]
    kmax: usize,
    /// Effective group length (defaults to the longest group, at least --kmax).
    #[arg(long)]
    lgroup: Option<usize>,
    /// Event threshold on frame-to-frame cosine distance.
    #[arg(long, default_value_t = 0.3)]
    tau: f64,
    /// Absorber neighbourhood radius in token-grid units.
    #[arg(long, default_value_t = 6.0)]
    radius: f64,
    /// spatial-only, temporal-only, concat, idct, absorber (or a-f).
    #[arg(long, default_value = "absorber", value_parser = parse_mode)]
    mode: FusionMode,
    #[arg(long, default_value_t = DEFAULT_EPS_REL)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_STATIC_CAP)]
    statics: usize,
    /// Pooled grid for residual trajectories, e.g. 4 or 4x4.
    #[arg(long, default_value = "4x4", value_parser = parse_grid)]
    pool: Grid,
    #[arg(long)]
    g_raw: Option<f32>,
    #[arg(long)]
    g_freq: Option<f32>,
    /// Weights file; without it weights are generated from --seed.
    #[arg(long, conflicts_with = "seed")]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Token stream output.
    #[arg(short, long)]
    output: PathBuf,
    /// Accounting report output (stdout when omitted).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    budget: usize,
    #[arg(long)]
    anchors: usize,
    #[arg(long, default_value_t = 512)]
    kraw: usize,
    /// Number of groups (defaults to --anchors).
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long, default_value = "4x4", value_parser = parse_grid)]
    pool: Grid,
    #[arg(long, default_value_t = 5)]
    kmax: usize,
    /// Effective group length (defaults to --kmax).
    #[arg(long)]
    lgroup: Option<usize>,
    /// Summary tokens reserved (defaults to one per group).
    #[arg(long)]
    summaries: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_STATIC_CAP)]
    statics: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input `.frl` latent file.
    #[arg(required_unless_present = "synthetic", conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    /// Analyse a generated clip instead of a file.
    #[arg(long, value_parser = parse_kind)]
    synthetic: Option<SyntheticKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    shape: SyntheticShape,
    /// Uniform I-frames splitting the clip into groups.
    #[arg(long, default_value_t = 1)]
    anchors: usize,
    /// Also promote event frames above this cosine distance.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value = "4x4", value_parser = parse_grid)]
    pool: Grid,
    /// Analyse raw latent trajectories instead of anchor residuals.
    #[arg(long)]
    raw: bool,
    /// Coefficient count for the printed top-k share.
    #[arg(long, default_value_t = 5)]
    topk: usize,
    /// CSV output (stdout when omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SyntheticShape {
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value = "24x24", value_parser = parse_grid)]
    grid: Grid,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Drift cycles over the clip for slow/fast motion.
    #[arg(long)]
    rate: Option<f64>,
    /// First frame of the second scene.
    #[arg(long)]
    cut_at: Option<usize>,
    /// Static flicker amplitude.
    #[arg(long)]
    jitter: Option<f64>,
}

impl SyntheticShape {
    fn spec(&self, kind: SyntheticKind, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            kind,
            frames: self.frames,
            grid: self.grid,
            dim: self.dim,
            motion_rate: self.rate,
            cut_at: self.cut_at,
            jitter: self.jitter,
            seed,
        }
    }
}

#[derive(Args)]
struct AccountArgs {
    #[arg(long)]
    frames: u64,
    #[arg(long)]
    per_frame: u64,
    #[arg(long, default_value_t = 22)]
    text: u64,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: SyntheticKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    shape: SyntheticShape,
    #[arg(long)]
    fps: Option<f32>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct InitWeightsArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long, conflicts_with = "identity")]
    seed: Option<u64>,
    /// Identity projections and adapter.
    #[arg(long)]
    identity: bool,
    #[arg(short, long)]
    output: PathBuf,
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)
            .map_err(FreresError::from)
            .with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(FreresError::from)?;
            Ok(())
        }
    }
}

fn encode(a: EncodeArgs) -> Result<()> {
    let seq = read_latents(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let weights = match &a.weights {
        Some(p) => {
            load_weights(p, seq.dim()).with_context(|| format!("loading {}", p.display()))?
        }
        None => ModelWeights::seeded(a.seed, seq.dim()),
    };
    let cfg = PipelineConfig {
        budget: a.budget,
        anchors: a.anchors,
        kraw: a.kraw,
        groups: a.groups,
        kmax: a.kmax,
        lgroup: a.lgroup,
        tau: a.tau,
        radius: a.radius,
        mode: a.mode,
        eps_rel: a.eps,
        static_cap: a.statics,
        pool: a.pool,
        g_raw: a.g_raw,
        g_freq: a.g_freq,
    };
    let (stream, report) = freres_core::run_pipeline(&seq, &cfg, &weights)?;
    write_out(Some(&a.output), &token_stream_to_string(&stream)?)?;
    write_out(a.report.as_deref(), &report.to_string())
}

fn plan(a: PlanArgs) -> Result<()> {
    let groups = a.groups.unwrap_or(a.anchors);
    let req = BudgetRequest {
        total: a.budget,
        anchors: a.anchors,
        raw_per_anchor: a.kraw,
        summary_reserve: a.summaries.unwrap_or(groups),
        static_reserve: a.statics,
        groups,
        pool_cells: a.pool.cells(),
        k_max: a.kmax,
        group_len: a.lgroup.unwrap_or(a.kmax),
    };
    let plan = allocate(&req)?;
    write_out(None, &plan.to_string())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let (seq, source) = match (&a.input, a.synthetic) {
        (Some(p), _) => (
            read_latents(p).with_context(|| format!("reading {}", p.display()))?,
            format!("source {}", p.display()),
        ),
        (None, Some(kind)) => (
            gen_synthetic(&a.shape.spec(kind, a.seed))?,
            format!("source synthetic {kind} seed {}", a.seed),
        ),
        (None, None) => unreachable!("clap requires an input or --synthetic"),
    };
    let (report, method) = if a.raw {
        (
            raw_spectrum(&seq, a.pool)?,
            "raw pooled latent trajectories over the whole clip".to_owned(),
        )
    } else {
        let anchors = match a.tau {
            Some(tau) => select_anchors(&seq, a.anchors, tau)?,
            None => AnchorSet::from_indices(
                uniform_anchors(seq.num_frames(), a.anchors)?,
                seq.num_frames(),
            )?,
        };
        (
            energy_spectrum(&seq, &anchors, a.pool)?,
            format!(
                "pooled residual trajectories over {} groups, pool {}",
                anchors.len(),
                a.pool
            ),
        )
    };
    let topk = report
        .topk_ratio(a.topk)
        .map_or_else(|| "undefined".to_owned(), |r| format!("{r:.6}"));
    let topk_line = format!("top{}_ratio {topk}", a.topk);
    let csv = report.to_csv(&[
        "temporal DCT-II energy spectrum",
        &source,
        &method,
        "synthetic latents substitute for encoder latents; only the ordering across clip kinds is meaningful",
        &topk_line,
    ]);
    match &a.output {
        Some(p) => {
            write_out(Some(p), &csv)?;
            println!("{topk_line}");
            Ok(())
        }
        None => write_out(None, &csv),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let mut seq = gen_synthetic(&a.shape.spec(a.kind, a.seed))?;
    if let Some(fps) = a.fps {
        seq = freres_core::LatentSequence::new(
            seq.grid(),
            seq.dim(),
            seq.frames().map(<[f32]>::to_vec).collect(),
            Some(fps),
        )?;
    }
    write_latents(&seq, &a.output).with_context(|| format!("writing {}", a.output.display()))
}

fn init_weights(a: InitWeightsArgs) -> Result<()> {
    if a.dim == 0 {
        return Err(FreresError::InvalidParameter("--dim must be >= 1".into()).into());
    }
    let w = if a.identity {
        ModelWeights::identity(a.dim)
    } else {
        ModelWeights::seeded(a.seed.unwrap_or(0), a.dim)
    };
    write_weights(&w, &a.output).with_context(|| format!("writing {}", a.output.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Encode(a) => encode(a),
        Command::Plan(a) => plan(a),
        Command::Analyze(a) => analyze(a),
        Command::Account(a) => {
            println!("{}", account_context(a.frames, a.per_frame, a.text));
            Ok(())
        }
        Command::Gen(a) => gen(a),
        Command::InitWeights(a) => init_weights(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<FreresError>().map(FreresError::category) {
        Some(ErrorCategory::Budget) => 3,
        Some(ErrorCategory::Io) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
