use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use roughvol_core::gaussian::VolFn;
use roughvol_core::moments::ModelSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// E[X_T^N] of the continuous model
    Moment,
    /// E[(X_T^n)^N] of the left-point scheme
    DiscreteMoment,
    /// E[X_T^N] − E[(X_T^n)^N] at one grid size
    WeakError,
    /// Weak errors over --n-list with a log-log rate fit
    Rate,
    /// Monte Carlo estimate of E[(X_T^n)^N]
    Simulate,
    /// Lower-bound constants (--sweep) or rescaled third-moment errors
    LowerBound,
    /// Quick property and oracle checks
    Selfcheck,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Moment => "moment",
            Command::DiscreteMoment => "discrete-moment",
            Command::WeakError => "weak-error",
            Command::Rate => "rate",
            Command::Simulate => "simulate",
            Command::LowerBound => "lower-bound",
            Command::Selfcheck => "selfcheck",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Discrete-moment evaluation route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    /// Wick pairings when within budget, quadrature otherwise
    Auto,
    Quadrature,
    Wick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingArg {
    Antithetic,
    Plain,
}

/// Volatility function given as `linear:c1`, `exp:c2,c3` or `tanh`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelArg(pub VolFn);

impl FromStr for ModelArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let (family, params) = s.split_once(':').unwrap_or((s, ""));
        let nums: Result<Vec<f64>, _> =
            params.split(',').filter(|p| !p.trim().is_empty()).map(|p| p.trim().parse::<f64>()).collect();
        let nums = nums.map_err(|e| format!("bad number in model spec '{s}': {e}"))?;
        let f = match (family, nums.as_slice()) {
            ("linear", [c1]) => VolFn::Linear { c1: *c1 },
            ("exp", [c2, c3]) => VolFn::Exponential { c2: *c2, c3: *c3 },
            ("tanh", []) => VolFn::ShiftedTanh,
            _ => return Err(format!("model spec '{s}' is not one of linear:c1, exp:c2,c3, tanh")),
        };
        Ok(ModelArg(f))
    }
}

impl fmt::Display for ModelArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            VolFn::Linear { c1 } => write!(f, "linear:{c1}"),
            VolFn::Exponential { c2, c3 } => write!(f, "exp:{c2},{c3}"),
            VolFn::ShiftedTanh => write!(f, "tanh"),
        }
    }
}

impl TryFrom<String> for ModelArg {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<ModelArg> for String {
    fn from(m: ModelArg) -> String {
        m.to_string()
    }
}

/// `lo:hi:count`, inclusive of both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SweepArg {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl FromStr for SweepArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, count] = parts.as_slice() else {
            return Err(format!("sweep '{s}' is not of the form lo:hi:count"));
        };
        let lo: f64 = lo.parse().map_err(|e| format!("sweep lower end: {e}"))?;
        let hi: f64 = hi.parse().map_err(|e| format!("sweep upper end: {e}"))?;
        let count: usize = count.parse().map_err(|e| format!("sweep count: {e}"))?;
        if !(lo < hi) || count < 2 {
            return Err(format!("sweep '{s}' needs lo < hi and count ≥ 2"));
        }
        Ok(SweepArg { lo, hi, count })
    }
}

impl fmt::Display for SweepArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.count)
    }
}

impl TryFrom<String> for SweepArg {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<SweepArg> for String {
    fn from(s: SweepArg) -> String {
        s.to_string()
    }
}

/// Weak-error laboratory for the left-point scheme of X_t = ∫ f(Ŵ_s) dB_s.
#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[command(name = "roughvol", version)]
pub struct RunConfig {
    #[arg(value_enum)]
    pub command: Command,
    /// Hurst parameter in (0, 1/2]
    #[arg(long, default_value_t = 0.1)]
    pub hurst: f64,
    /// Correlation between the driving noises, in [−1, 1]
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub rho: f64,
    /// Horizon T
    #[arg(long = "T", default_value_t = 1.0)]
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Volatility function: linear:c1 | exp:c2,c3 | tanh
    #[arg(long, default_value = "linear:1")]
    pub model: ModelArg,
    /// Moment order N
    #[arg(long = "N", default_value_t = 3)]
    #[serde(rename = "N")]
    pub order: usize,
    /// Grid size n (steps per unit time)
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated grid sizes
    #[arg(long = "n-list", value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    /// Quadrature tolerance, relative to max(1, |value|)
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Monte Carlo paths
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SamplingArg::Antithetic)]
    pub sampling: SamplingArg,
    /// Discrete-moment route
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,
    /// Output file (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Acceptance mode: exit with status 2 when a check fails
    #[arg(long)]
    pub check: bool,
    /// Worker threads
    #[arg(long, env = "ROUGHVOL_THREADS")]
    pub threads: Option<usize>,
    /// Hurst sweep lo:hi:count for lower-bound constants
    #[arg(long)]
    pub sweep: Option<SweepArg>,
    /// List the expanded integrand terms of every word
    #[arg(long)]
    pub dump_terms: bool,
    /// Write sampled paths (binary) to this file
    #[arg(long)]
    pub dump_paths: Option<PathBuf>,
    /// Number of paths written by --dump-paths
    #[arg(long, default_value_t = 1000)]
    pub dump_count: usize,
}

pub const DEFAULT_RATE_GRID: [usize; 6] = [8, 16, 32, 64, 128, 256];
pub const DEFAULT_LOWER_BOUND_GRID: [usize; 5] = [32, 64, 128, 256, 512];

impl RunConfig {
    pub fn parse_from_args<I, T>(args: I) -> Result<Self, clap::Error>
    where
        I: IntoIterator<Item = T>,
        T: Into<std::ffi::OsString> + Clone,
    {
        Self::try_parse_from(args)
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        Ok(ModelSpec::new(self.hurst, self.rho, self.horizon, self.model.0)?)
    }

    pub fn require_n(&self) -> Result<usize, CliError> {
        self.n.ok_or_else(|| CliError::Usage(format!("{} needs --n", self.command.as_str())))
    }

    pub fn n_list_or(&self, default: &[usize]) -> Vec<usize> {
        self.n_list.clone().unwrap_or_else(|| default.to_vec())
    }

    /// The config as written into output headers: everything that affects
    /// the numbers, without the output path and thread count.
    pub fn header_value(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out");
            obj.remove("threads");
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_specs() {
        assert_eq!("linear:2".parse::<ModelArg>().unwrap().0, VolFn::Linear { c1: 2.0 });
        assert_eq!("exp:1,0.5".parse::<ModelArg>().unwrap().0, VolFn::Exponential { c2: 1.0, c3: 0.5 });
        assert_eq!("tanh".parse::<ModelArg>().unwrap().0, VolFn::ShiftedTanh);
        for bad in ["linear", "exp:1", "cubic:1", "linear:x", "tanh:1"] {
            assert!(bad.parse::<ModelArg>().is_err(), "{bad}");
        }
        for s in ["linear:1.5", "exp:0.8,-0.3", "tanh"] {
            assert_eq!(s.parse::<ModelArg>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn sweep_spec() {
        let s: SweepArg = "0.001:0.125:50".parse().unwrap();
        assert_eq!(s, SweepArg { lo: 0.001, hi: 0.125, count: 50 });
        assert!("0.2:0.1:5".parse::<SweepArg>().is_err());
        assert!("0.1:0.2".parse::<SweepArg>().is_err());
    }

    #[test]
    fn defaults() {
        let c = RunConfig::parse_from_args(["roughvol", "moment"]).unwrap();
        assert_eq!(c.tol, 1e-6);
        assert_eq!(c.horizon, 1.0);
        assert_eq!(c.seed, 42);
        assert_eq!(c.format, Format::Csv);
    }

    #[test]
    fn config_round_trips() {
        let c = RunConfig::parse_from_args([
            "roughvol", "rate", "--hurst", "0.1", "--rho", "-0.5", "--T", "2", "--model", "exp:1,0.3", "--N", "4",
            "--n-list", "8,16,32", "--tol", "1e-8", "--format", "json", "--check", "--sweep", "0.01:0.1:5",
        ])
        .unwrap();
        assert_eq!(c.rho, -0.5);
        assert_eq!(c.n_list, Some(vec![8, 16, 32]));
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
