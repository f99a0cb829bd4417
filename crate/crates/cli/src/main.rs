//! `occscene`: command-line front end for occupancy-centric scene synthesis.

mod commands;
mod manifest;
mod voxply;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

#[derive(Debug, Parser)]
#[command(name = "occscene", version, about = "Occupancy grids to camera, latent and LiDAR views")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "OCCSCENE_THREADS")]
    pub threads: Option<usize>,
    /// Print the report as JSON instead of key=value lines.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert between SVO grids and voxel-centre PLY.
    Convert(ConvertArgs),
    /// Splat a grid into depth and semantic maps, one pair per camera.
    Render(RenderArgs),
    /// Warp a reference latent into a target view and build its noise prior.
    Warp(WarpArgs),
    /// Simulate a LiDAR sweep over a grid.
    Lidar(LidarArgs),
    /// Voxel-traversal depth for every ray of a rig.
    RaycastOracle(RaycastArgs),
    /// Edit a grid by inverting under one layout and sampling under another.
    Edit(EditArgs),
    /// Compare grids (IoU) or LiDAR point sets (MMD, JSD).
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// SVO or voxel PLY; the direction follows the input format.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub cams: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.99)]
    pub opacity: f64,
    /// Gaussian standard deviation as a fraction of the voxel edge.
    #[arg(long, default_value_t = 0.5)]
    pub scale_factor: f64,
    /// Divide accumulated depth by accumulated opacity.
    #[arg(long)]
    pub normalize_depth: bool,
    /// Layout whose lane-line cells are projected onto the ground first.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// Grid label given to projected line voxels.
    #[arg(long, default_value_t = 1)]
    pub line_label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorMode {
    Vanilla,
    Geometric,
}

#[derive(Debug, Args)]
pub struct WarpArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub cams: PathBuf,
    /// Camera name of the conditional reference frame.
    #[arg(long = "ref")]
    pub reference: String,
    /// Camera name of the target frame.
    #[arg(long)]
    pub target: String,
    /// Reference latent as a 1- or 3-channel PFM at latent resolution.
    #[arg(long)]
    pub latent: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub downsample: usize,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = PriorMode::Geometric)]
    pub mode: PriorMode,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DropArg {
    Threshold,
    Bernoulli,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Prior,
    Uniform,
}

#[derive(Debug, Args)]
pub struct LidarArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub rig: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// LHED head weights; defaults to the analytic heads.
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub presamples: usize,
    #[arg(long, default_value_t = 32)]
    pub resamples: usize,
    #[arg(long, value_enum, default_value_t = DropArg::Threshold)]
    pub drop_mode: DropArg,
    #[arg(long, value_enum, default_value_t = StrategyArg::Prior)]
    pub strategy: StrategyArg,
}

#[derive(Debug, Args)]
pub struct RaycastArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub rig: PathBuf,
    /// Range image (PFM, beams x azimuth steps, 0 for misses).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional label image (PGM, 255 for misses).
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenoiserArg {
    Zero,
    Linear,
    Condition,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub layout_ori: PathBuf,
    #[arg(long)]
    pub layout_new: PathBuf,
    #[arg(long, value_enum, default_value_t = DenoiserArg::Condition)]
    pub denoiser: DenoiserArg,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub guidance: f64,
    /// CEMB class-embedding table; defaults to signed axes with 8 dimensions.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Edited grid (SVO).
    #[arg(long)]
    pub out: PathBuf,
    /// Edited latent (LTNT); defaults to the output path with `.ltnt`.
    #[arg(long)]
    pub latent_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Predicted grid (SVO), compared against --gt.
    #[arg(long, requires = "gt")]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    /// First LiDAR point set (PLY files).
    #[arg(long, num_args = 1.., requires = "set_b")]
    pub set_a: Vec<PathBuf>,
    #[arg(long, num_args = 1.., requires = "set_a")]
    pub set_b: Vec<PathBuf>,
    /// Histogram bins per axis.
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    /// Histogram half extent in metres.
    #[arg(long, default_value_t = 50.0)]
    pub extent: f64,
    /// Kernel bandwidth; the median pairwise distance when omitted.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Also write the report and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Invalid flag combinations detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "none".into(),
        other => other.to_string(),
    }
}

pub fn format_report(report: &BTreeMap<String, Value>, json: bool) -> String {
    if json {
        let mut s = serde_json::to_string_pretty(report).expect("report is serializable");
        s.push('\n');
        s
    } else {
        report.iter().map(|(k, v)| format!("{k}={}\n", value_text(v))).collect()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let pool = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(1);
        }
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| commands::run(&cli)) {
        Ok(report) => {
            print!("{}", format_report(&report, cli.json));
            ExitCode::SUCCESS
        }
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            eprintln!("Usage: occscene [OPTIONS] <COMMAND>; see `occscene --help`");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
