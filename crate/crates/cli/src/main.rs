//! `splitvie` command-line front end.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use splitvie::{Grid2D, KrylovMethod, PhysicsConfig, ReceiverRing, SolverOptions};

#[derive(Debug, Parser)]
#[command(name = "splitvie", version, about = "2-D TM volume-integral scattering with split contrast profiles")]
pub struct Cli {
    /// Worker threads for sample- and trial-level parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the forward problem for a contrast file or preset.
    Forward(ForwardArgs),
    /// Check the split-field identities on random trials.
    SplitCheck(SplitCheckArgs),
    /// Closed-form estimate of the unknown contrast.
    EstimateChi2(EstimateArgs),
    /// Iterative retrieval of the unknown contrast.
    Invert(InvertArgs),
    /// Generate a dataset directory.
    GenDataset(GenDatasetArgs),
    /// Relative-error report for predicted arrays against labels.
    EvalMetrics(EvalMetricsArgs),
    /// Write the receiver matrix G_S.
    ExportOperators(ExportArgs),
    /// Compare a rasterized cylinder against the analytic series.
    MieCheck(MieCheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PhysArgs {
    /// Grid size in cells.
    #[arg(long, num_args = 2, value_names = ["NX", "NY"])]
    pub grid: Option<Vec<usize>>,
    /// Cell side length in metres.
    #[arg(long)]
    pub cell: Option<f64>,
    /// Frequency in Hz.
    #[arg(long, default_value_t = 1.0e9)]
    pub freq: f64,
    #[arg(long, default_value_t = 5.0)]
    pub ring_radius: f64,
    #[arg(long, default_value_t = 32)]
    pub ring_count: usize,
    /// Incidence angle in degrees.
    #[arg(long, default_value_t = 0.0)]
    pub angle: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative residual tolerance of the Krylov solver.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_enum, default_value_t = MethodArg::Gmres)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Gmres,
    Bicgstab,
}

impl PhysArgs {
    pub fn grid_or(&self, nx: usize, ny: usize, cell: f64) -> splitvie::Result<Grid2D> {
        let (nx, ny) = match self.grid.as_deref() {
            Some([x, y]) => (*x, *y),
            _ => (nx, ny),
        };
        Grid2D::centered(nx, ny, self.cell.unwrap_or(cell))
    }

    pub fn phys(&self) -> splitvie::Result<PhysicsConfig> {
        PhysicsConfig::new(self.freq)
    }

    pub fn ring(&self) -> splitvie::Result<ReceiverRing> {
        ReceiverRing::new(self.ring_radius, self.ring_count)
    }

    pub fn solver(&self, default_tol: f64) -> splitvie::Result<SolverOptions> {
        let method = match self.method {
            MethodArg::Gmres => KrylovMethod::Gmres,
            MethodArg::Bicgstab => KrylovMethod::Bicgstab,
        };
        let opts = SolverOptions { rel_tol: self.tol.unwrap_or(default_tol), max_iters: self.max_iters, method, ..SolverOptions::default() };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ForwardPreset {
    /// Procedural digits in the four quadrants, drawn from `--seed`.
    Digits,
    /// Homogeneous dielectric cylinder, compared against the analytic series.
    Mie,
    /// Empty domain.
    Zero,
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    #[command(flatten)]
    pub phys: PhysArgs,
    /// Contrast as an NY×NX `.vsf` array; overrides `--preset`.
    #[arg(long)]
    pub contrast: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ForwardPreset::Digits)]
    pub preset: ForwardPreset,
    #[arg(long, default_value = "forward-out")]
    pub out: PathBuf,
    /// Also write |E^tot| as a PGM heatmap.
    #[arg(long)]
    pub heatmap: bool,
}

#[derive(Debug, Args)]
pub struct SplitCheckArgs {
    #[command(flatten)]
    pub phys: PhysArgs,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Tolerance of the inner solves inside the nested path.
    #[arg(long, default_value_t = 1e-13)]
    pub inner_tol: f64,
    /// Perturb the unknown contrast on the split path; the check must fail.
    #[arg(long)]
    pub corrupt: bool,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CasePreset {
    /// 1×1 grid, nothing known.
    Isolated,
    /// 5×5 grid, unknown centre cell.
    SingleCell,
    /// 16×16 grid, 5×5 unknown block.
    Block,
}

#[derive(Debug, Clone, Args)]
pub struct CaseArgs {
    /// Dataset directory to take the sample from.
    #[arg(long, requires = "sample")]
    pub dataset: Option<PathBuf>,
    /// Sample id within `--dataset`.
    #[arg(long)]
    pub sample: Option<String>,
    #[arg(long, value_enum, default_value_t = CasePreset::SingleCell)]
    pub preset: CasePreset,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub phys: PhysArgs,
    #[command(flatten)]
    pub case: CaseArgs,
    /// Relative singular-value cutoff for the pseudo-inverse of G_S.
    #[arg(long, default_value_t = 1e-12)]
    pub pinv_threshold: f64,
    /// Largest number of cells for which A is formed densely.
    #[arg(long, default_value_t = 4096)]
    pub cap: usize,
    #[arg(long, default_value = "estimate-out")]
    pub out: PathBuf,
    #[arg(long)]
    pub heatmap: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Zero,
    ClosedForm,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[command(flatten)]
    pub phys: PhysArgs,
    #[command(flatten)]
    pub case: CaseArgs,
    #[arg(long, value_enum, default_value_t = InitArg::Zero)]
    pub init: InitArg,
    #[arg(long, default_value_t = 500)]
    pub max_outer_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Box on the unknown contrast: RE_MIN RE_MAX IM_MIN IM_MAX.
    #[arg(long, num_args = 4, value_names = ["RE_MIN", "RE_MAX", "IM_MIN", "IM_MAX"], allow_negative_numbers = true)]
    pub bounds: Option<Vec<f64>>,
    #[arg(long, default_value = "invert-out")]
    pub out: PathBuf,
    #[arg(long)]
    pub heatmap: bool,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[command(flatten)]
    pub phys: PhysArgs,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// Directory of PGM rasters; procedural digits are used otherwise.
    #[arg(long)]
    pub shapes: Option<PathBuf>,
    /// Incidence angles cycled over samples; defaults to `--angle`.
    #[arg(long, num_args = 1.., allow_negative_numbers = true)]
    pub incidences: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Also export G_S into the dataset.
    #[arg(long)]
    pub export_gs: bool,
    #[arg(long, default_value = "dataset")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalMetricsArgs {
    /// Dataset directory with labels.
    #[arg(long, requires = "pred")]
    pub dataset: Option<PathBuf>,
    /// Prediction directory: `samples/<id>/{chi,etot[,esca]}.vsf`.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Single prediction array, paired in order with `--label-file`.
    #[arg(long)]
    pub pred_file: Vec<PathBuf>,
    #[arg(long)]
    pub label_file: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub phys: PhysArgs,
    /// Take grid, ring and frequency from this dataset and register the
    /// export in its manifest.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "operators-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MieCheckArgs {
    #[command(flatten)]
    pub phys: PhysArgs,
    #[arg(long, default_value_t = 0.15)]
    pub radius: f64,
    #[arg(long, default_value_t = 1.5)]
    pub eps_r: f64,
    /// Sub-samples per cell side for the area-fraction raster.
    #[arg(long, default_value_t = 16)]
    pub sub: usize,
    /// Largest acceptable relative L2 error.
    #[arg(long, default_value_t = 0.03)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code_for(&err))
        }
    }
}
