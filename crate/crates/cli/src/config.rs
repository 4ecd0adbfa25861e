use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(
    author,
    version,
    about = "Covariance smoothing for sparsely observed functional data"
)]
pub struct Cli {
    /// Worker threads for the block-parallel kernels (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a dataset and write it as CSV with a JSON sidecar.
    Simulate {
        #[command(flatten)]
        data: DataArgs,

        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Fit the smoothed tensor and write residuals, surface and report.
    Smooth {
        #[command(flatten)]
        data: DataArgs,

        #[command(flatten)]
        fit: FitArgs,

        /// Dataset CSV to smooth instead of simulating one.
        #[arg(long = "data")]
        dataset: Option<PathBuf>,

        /// Exit with an error when the solver does not converge.
        #[arg(long)]
        strict: bool,

        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Eigendecomposition of a saved fit.
    Fpca {
        /// Grid resolution; defaults to the one the fit was run with.
        #[arg(long)]
        m: Option<usize>,

        /// Keep only positive eigenvalues.
        #[arg(long)]
        truncate_negative: bool,

        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-evaluate the surface of a saved fit.
    Eval {
        #[arg(long)]
        m: Option<usize>,

        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DataArgs {
    /// bm, bb, ibm or ou:<theta>:<sigma>.
    #[arg(long, default_value = "bm")]
    pub process: String,

    /// Number of functions.
    #[arg(long, default_value_t = 20)]
    pub n: usize,

    /// Observations per function.
    #[arg(long, default_value_t = 100)]
    pub r: usize,

    /// Observation noise standard deviation.
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FitArgs {
    /// gaussian:<gamma>, laplacian:<gamma>, linear or poly:<d>:<c>.
    #[arg(long, default_value = "gaussian:200")]
    pub kernel: String,

    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,

    /// Ridge of the mean fit.
    #[arg(long, default_value_t = 0.05)]
    pub nu: f64,

    /// Absolute threshold on the squared projected residual norm.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,

    #[arg(long, default_value_t = 500)]
    pub maxiter: usize,

    #[arg(long, value_enum, default_value_t = Mode::SecondMoment)]
    pub mode: Mode,

    /// Grid resolution of the evaluated surface.
    #[arg(long, default_value_t = 500)]
    pub m: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Raw second moment.
    SecondMoment,
    /// Covariance of mean-centered observations.
    Centered,
    /// Second moment minus the outer product of the fitted mean.
    Plugin,
}
