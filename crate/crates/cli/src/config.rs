//! Command-line arguments. Every numeric knob can also be set through a
//! `WEYLINV_*` environment variable.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use weyl_inverse::Settings;

#[derive(Parser, Debug)]
#[command(name = "weylinv", version, about = "Forward and inverse spectral problems for matrix Sturm-Liouville operators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub config: RunConfig,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Weyl matrix at a list of spectral parameters.
    Forward {
        #[arg(long, env = "WEYLINV_PROBLEM")]
        problem: PathBuf,
        /// CSV rows `re,im[,side]` with side one of `+`, `-`, `auto`.
        #[arg(long, env = "WEYLINV_LAMBDAS")]
        lambdas: PathBuf,
        /// Output CSV; standard output when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[command(flatten)]
        plots: PlotArgs,
    },
    /// Eigenvalues, residues and the continuous density of a self-adjoint problem.
    Spectrum {
        #[arg(long, env = "WEYLINV_PROBLEM")]
        problem: PathBuf,
        /// Spectral-data JSON; standard output when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// CSV of the density samples.
        #[arg(long)]
        density_csv: Option<PathBuf>,
        #[command(flatten)]
        plots: PlotArgs,
    },
    /// Edit a pole prescription or spectral-data file.
    Perturb {
        #[arg(value_enum)]
        action: PerturbAction,
        /// File to edit; an empty prescription when omitted.
        #[arg(long, short)]
        input: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Real part of the pole position (new position for `move`).
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<f64>,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        lambda_im: f64,
        /// A number (times the identity) or comma-separated real entries in row-major order.
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<String>,
        #[arg(long, default_value_t = 1)]
        nu: usize,
        /// Pole to move or remove.
        #[arg(long)]
        index: Option<usize>,
        /// Matrix dimension when it cannot be inferred.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Reconstruct `(Q, h)` from a model problem and a pole prescription.
    InvertFinite {
        /// Model problem; the zero problem when omitted.
        #[arg(long, env = "WEYLINV_MODEL")]
        model: Option<PathBuf>,
        #[arg(long, env = "WEYLINV_PRESCRIPTION")]
        prescription: PathBuf,
        #[arg(long)]
        m: Option<usize>,
        #[command(flatten)]
        out: InvertOutputs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        plots: PlotArgs,
    },
    /// Reconstruct `(Q, h)` from self-adjoint spectral data.
    InvertSd {
        #[arg(long, env = "WEYLINV_DATA")]
        data: PathBuf,
        /// Model problem; the zero problem when omitted.
        #[arg(long, env = "WEYLINV_MODEL")]
        model: Option<PathBuf>,
        #[command(flatten)]
        out: InvertOutputs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        plots: PlotArgs,
    },
    /// Invert, solve the forward problem for the result and compare.
    Roundtrip {
        /// Bundled fixture instead of input files.
        #[arg(long, value_enum)]
        fixture: Option<Fixture>,
        #[arg(long, env = "WEYLINV_MODEL")]
        model: Option<PathBuf>,
        /// Pole prescription for a finite round trip.
        #[arg(long, env = "WEYLINV_PRESCRIPTION", conflicts_with = "truth")]
        prescription: Option<PathBuf>,
        /// True problem for a spectral-data round trip.
        #[arg(long, env = "WEYLINV_TRUTH")]
        truth: Option<PathBuf>,
        #[arg(long, env = "WEYLINV_CONTOUR_POINTS", default_value_t = 16)]
        contour_points: usize,
        /// JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Text report; also printed to standard output.
        #[arg(long)]
        text: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerturbAction {
    Add,
    Move,
    Remove,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fixture {
    Bargmann,
}

#[derive(Args, Debug)]
pub struct InvertOutputs {
    /// Reconstructed problem JSON; standard output when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// CSV of `x`, `Q` and `ε` on the grid.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Diagnostics JSON.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Right end of the reconstruction grid.
    #[arg(long, env = "WEYLINV_X_MAX", default_value_t = 10.0)]
    pub x_max: f64,
    /// Grid spacing, rounded so that the grid ends exactly at `x_max`.
    #[arg(long, env = "WEYLINV_DX", default_value_t = 0.01)]
    pub dx: f64,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Write gnuplot data files next to the CSV output.
    #[arg(long, env = "WEYLINV_EMIT_PLOTS")]
    pub emit_plots: bool,
}

#[derive(Args, Debug)]
pub struct RunConfig {
    #[arg(long, global = true, env = "WEYLINV_ODE_TOL", default_value_t = Settings::default().ode_tol)]
    pub ode_tol: f64,
    #[arg(long, global = true, env = "WEYLINV_TOL_HERM", default_value_t = Settings::default().tol_herm)]
    pub tol_herm: f64,
    #[arg(long, global = true, env = "WEYLINV_COND_MAX", default_value_t = Settings::default().cond_max)]
    pub cond_max: f64,
    /// Contour points per residue.
    #[arg(long, global = true, env = "WEYLINV_N_RES", default_value_t = Settings::default().n_res)]
    pub n_res: usize,
    /// Density quadrature nodes.
    #[arg(long, global = true, env = "WEYLINV_N_QUAD", default_value_t = Settings::default().n_quad)]
    pub n_quad: usize,
    #[arg(long, global = true, env = "WEYLINV_RHO_MAX", default_value_t = Settings::default().rho_max)]
    pub rho_max: f64,
    /// Eigenvalue scan range in `Im ρ`; chosen from the data when omitted.
    #[arg(long, global = true, env = "WEYLINV_TAU_MIN", requires = "tau_max")]
    pub tau_min: Option<f64>,
    #[arg(long, global = true, env = "WEYLINV_TAU_MAX", requires = "tau_min")]
    pub tau_max: Option<f64>,
    #[arg(long, global = true, env = "WEYLINV_SCAN_STEPS", default_value_t = Settings::default().scan_steps)]
    pub scan_steps: usize,
    #[arg(long, global = true, env = "WEYLINV_TAU_TOL", default_value_t = Settings::default().tau_tol)]
    pub tau_tol: f64,
    #[arg(long, global = true, env = "WEYLINV_QUAD_TOL", default_value_t = Settings::default().quad_tol)]
    pub quad_tol: f64,
    #[arg(long, global = true, env = "WEYLINV_JOST_TOL", default_value_t = Settings::default().jost_tol)]
    pub jost_tol: f64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, env = "WEYLINV_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[arg(long, global = true, env = "WEYLINV_SEED", default_value_t = 0)]
    pub seed: u64,
}

impl RunConfig {
    pub fn settings(&self) -> Settings {
        Settings {
            ode_tol: self.ode_tol,
            tol_herm: self.tol_herm,
            cond_max: self.cond_max,
            n_res: self.n_res,
            n_quad: self.n_quad,
            rho_max: self.rho_max,
            tau_range: self.tau_min.zip(self.tau_max),
            scan_steps: self.scan_steps,
            tau_tol: self.tau_tol,
            quad_tol: self.quad_tol,
            jost_tol: self.jost_tol,
            threads: self.threads,
            seed: self.seed,
        }
    }
}

impl GridArgs {
    pub fn grid(&self) -> Result<Vec<f64>, String> {
        if !(self.x_max > 0.0 && self.x_max.is_finite()) || !(self.dx > 0.0 && self.dx <= self.x_max) {
            return Err("need 0 < dx <= x_max".into());
        }
        let n = (self.x_max / self.dx).round().max(1.0) as usize;
        Ok((0..=n).map(|k| self.x_max * k as f64 / n as f64).collect())
    }
}
