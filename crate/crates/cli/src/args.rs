use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::{CliResult, Failure};

#[derive(Debug, Parser)]
#[command(name = "koopmankit", version, about = "Koopman-invariant lifts, identification, spectra and optimal control")]
pub struct Cli {
    #[command(flatten)]
    pub io: IoArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct IoArgs {
    /// Output directory
    #[arg(long, global = true, env = "KOOPMANKIT_OUT", default_value = "koopmankit-out")]
    pub out: PathBuf,
    /// Also write a gnuplot script next to the data
    #[arg(long, global = true)]
    pub gnuplot: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a registry system and write trajectories and derived data
    Simulate(SimulateArgs),
    /// Identify a sparse model and a refined Koopman model from data
    Identify(IdentifyArgs),
    /// Eigenvalues and eigenfunctions of a Koopman model
    Spectral(SpectralArgs),
    /// Compare LQR and Koopman optimal control on an actuated system
    Control(ControlArgs),
}

#[derive(Debug, Args, Clone)]
pub struct SystemArgs {
    /// Registry system name (see the list below)
    #[arg(long)]
    pub system: String,
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<f64>,
}

impl SystemArgs {
    pub fn overrides(&self) -> BTreeMap<String, f64> {
        [("mu", self.mu), ("lambda", self.lambda), ("r", self.r)]
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
            .collect()
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Initial condition as comma-separated values; repeat for several
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Vec<String>,
    /// Truncation ranks (comma-separated) for Carleman comparisons
    #[arg(long, value_delimiter = ',')]
    pub rank: Vec<usize>,
    /// Final time (continuous) or number of steps (discrete)
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// Grid spacing of the surface data written for quad-manifold
    #[arg(long, default_value_t = 0.05)]
    pub grid_step: f64,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    /// Registry system used to generate data (and to check the result)
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<f64>,
    /// Trajectory CSV files to fit instead of generated data; repeatable
    #[arg(long)]
    pub input: Vec<PathBuf>,
    /// Time semantics of --input data: continuous or discrete
    #[arg(long)]
    pub time_kind: Option<String>,
    /// Maximum monomial degree of the library
    #[arg(long, default_value_t = 2)]
    pub degree: u32,
    #[arg(long, default_value_t = koopmankit::identification::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = koopmankit::identification::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Linear library and plain least squares (dynamic mode decomposition)
    #[arg(long)]
    pub dmd: bool,
    /// Initial conditions for generated data; default is a grid
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Vec<String>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, default_value_t = 8)]
    pub max_rounds: usize,
}

impl IdentifyArgs {
    pub fn system_args(&self) -> Option<SystemArgs> {
        self.system.as_ref().map(|s| SystemArgs {
            system: s.clone(),
            mu: self.mu,
            lambda: self.lambda,
            r: self.r,
        })
    }
}

#[derive(Debug, Args)]
pub struct SpectralArgs {
    /// Registry system whose closed-form lift is analysed
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<f64>,
    /// Koopman model JSON (as written by `identify`) instead of a closed form
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Check a named observable as an eigenfunction: exp-neg-inv
    #[arg(long)]
    pub named_observable: Option<String>,
    /// Initial conditions for the verification trajectories
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Vec<String>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// Carleman rank used for center-manifold
    #[arg(long, default_value_t = 8)]
    pub rank: usize,
}

impl SpectralArgs {
    pub fn system_args(&self) -> Option<SystemArgs> {
        self.system.as_ref().map(|s| SystemArgs {
            system: s.clone(),
            mu: self.mu,
            lambda: self.lambda,
            r: self.r,
        })
    }
}

#[derive(Debug, Args)]
pub struct ControlArgs {
    #[arg(long, default_value = "kooc-demo")]
    pub system: String,
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_hyphen_values = true, default_value = "-5,5")]
    pub x0: String,
    #[arg(long, default_value_t = 50.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// State weight: Q = q I
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
    /// Input weight: R = r I
    #[arg(long = "input-weight", default_value_t = 1.0)]
    pub input_weight: f64,
}

impl ControlArgs {
    pub fn system_args(&self) -> SystemArgs {
        SystemArgs {
            system: self.system.clone(),
            mu: self.mu,
            lambda: self.lambda,
            r: None,
        }
    }
}

pub fn parse_vector(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| Failure::Config(format!("bad number {p:?} in {s:?}: {e}")))
        })
        .collect()
}

pub fn parse_vectors(list: &[String], dim: usize) -> CliResult<Vec<Vec<f64>>> {
    list.iter()
        .map(|s| {
            let v = parse_vector(s)?;
            if v.len() != dim {
                return Err(Failure::Config(format!("--x0 {s:?} has {} entries, system has {dim}", v.len())));
            }
            Ok(v)
        })
        .collect()
}
