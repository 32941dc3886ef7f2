//! Experiment configuration: one declarative TOML file per experiment.
//! Unknown keys are rejected; every run embeds the SHA-256 of the raw
//! config bytes in its outputs so results are traceable to their inputs.
//!
//! ```toml
//! [problem]
//! potential = { form = "triple_well" }
//! domain = [[-5.0, 5.0]]
//! epsilon = 0.5
//! target = [[[-3.6, -3.2]]]          # union of boxes, one [lo,hi] per axis
//! cost = { form = "constant", sigma = 0.08 }
//!
//! [method]
//! basis = "committor"                 # or "indicator"
//! cores = [[[-0.2, 0.2]], [[3.2, 3.6]], [[-3.6, -3.2]]]   # target core last
//! # cells_per_axis = [50]             # indicator basis
//! h = 0.01
//! h_ref = 0.01
//! # sigma_sweep = [0.02, 0.04]        # optional Ŵ-vs-σ table for `solve`
//!
//! [sampling]                          # required by `sample`
//! n_paths = 100000
//! dt = 0.001
//! t_max = 20000.0
//! output_stride = 10
//! seed = 42
//! tau_list = [0.5, 1.0, 1.5, 2.0]
//! n_batches = 20
//! # fk_start = [-3.4]                 # optional Feynman-Kac start point
//!
//! [mca]                               # optional lattice sweep for `mca`
//! h_values = [0.2, 0.1, 0.05]
//!
//! [output]
//! directory = "out"
//! formats = ["csv", "json"]
//! ```

use serde::Deserialize;

use kramers::model::{ControlProblem, Domain, Potential, Region, RunningCost};
use kramers::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub method: MethodConfig,
    pub sampling: Option<SamplingConfig>,
    pub mca: Option<McaConfig>,
    pub output: OutputConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub potential: PotentialConfig,
    pub domain: Vec<[f64; 2]>,
    pub epsilon: f64,
    /// Union of boxes; each box lists one `[lo, hi]` interval per axis.
    pub target: Vec<Vec<[f64; 2]>>,
    pub cost: CostConfig,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "form", deny_unknown_fields)]
pub enum PotentialConfig {
    #[serde(rename = "triple_well")]
    TripleWell,
    #[serde(rename = "double_well")]
    DoubleWell,
    #[serde(rename = "polynomial")]
    Polynomial { per_axis: Vec<Vec<f64>> },
    #[serde(rename = "tabulated")]
    Tabulated { lo: f64, hi: f64, values: Vec<f64> },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "form", deny_unknown_fields)]
pub enum CostConfig {
    #[serde(rename = "constant")]
    Constant { sigma: f64 },
    #[serde(rename = "quadratic")]
    Quadratic { f0: f64, f1: f64, center: Vec<f64> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub basis: BasisConfig,
    /// Core sets for the committor basis, target core last.
    pub cores: Option<Vec<Vec<[f64; 2]>>>,
    /// Cell counts per axis for the indicator basis.
    pub cells_per_axis: Option<Vec<usize>>,
    /// Grid spacing for assembly and solution output.
    pub h: f64,
    /// Grid spacing of the reference solve (also used by `bounds`).
    pub h_ref: f64,
    /// Optional constant-cost sweep for the Ŵ-vs-σ table.
    pub sigma_sweep: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum BasisConfig {
    #[serde(rename = "indicator")]
    Indicator,
    #[serde(rename = "committor")]
    Committor,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    #[serde(default = "default_stride")]
    pub output_stride: usize,
    pub seed: u64,
    pub tau_list: Vec<f64>,
    #[serde(default = "default_batches")]
    pub n_batches: usize,
    /// Optional start point for a direct Feynman-Kac estimate of φ.
    pub fk_start: Option<Vec<f64>>,
    /// Dump the simulated trajectory (binary frames and CSV).
    #[serde(default)]
    pub dump_trajectory: bool,
}

fn default_stride() -> usize {
    10
}

fn default_batches() -> usize {
    20
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McaConfig {
    pub h_values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

impl OutputConfig {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

impl ExperimentConfig {
    /// Parse and schema-validate; TOML errors carry line/column spans.
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        match self.method.basis {
            BasisConfig::Committor if self.method.cores.is_none() => {
                return Err(Error::InvalidArgument(
                    "committor basis requires [method] cores".into(),
                ))
            }
            BasisConfig::Indicator if self.method.cells_per_axis.is_none() => {
                return Err(Error::InvalidArgument(
                    "indicator basis requires [method] cells_per_axis".into(),
                ))
            }
            _ => {}
        }
        if !(self.method.h > 0.0) || !(self.method.h_ref > 0.0) {
            return Err(Error::InvalidArgument("grid spacings must be positive".into()));
        }
        if let Some(s) = &self.sampling {
            if s.n_paths == 0 {
                return Err(Error::InvalidArgument("sampling.n_paths must be positive".into()));
            }
            if !(s.dt > 0.0) || !(s.t_max > 0.0) {
                return Err(Error::InvalidArgument("sampling.dt and t_max must be positive".into()));
            }
            if s.tau_list.is_empty() {
                return Err(Error::InvalidArgument("sampling.tau_list must not be empty".into()));
            }
        }
        for fmt in &self.output.formats {
            if fmt != "csv" && fmt != "json" {
                return Err(Error::InvalidArgument(format!("unknown output format {fmt:?}")));
            }
        }
        Ok(())
    }

    /// Build the problem instance the config describes.
    pub fn problem(&self) -> Result<ControlProblem> {
        let potential = match &self.problem.potential {
            PotentialConfig::TripleWell => Potential::triple_well(),
            PotentialConfig::DoubleWell => Potential::double_well(),
            PotentialConfig::Polynomial { per_axis } => {
                Potential::Polynomial { per_axis: per_axis.clone() }
            }
            PotentialConfig::Tabulated { lo, hi, values } => {
                Potential::Tabulated { lo: *lo, hi: *hi, values: values.clone() }
            }
        };
        let domain = Domain::new(self.problem.domain.clone())?;
        let target = Region::new(self.problem.target.clone())?;
        let cost = match &self.problem.cost {
            CostConfig::Constant { sigma } => RunningCost::Constant(*sigma),
            CostConfig::Quadratic { f0, f1, center } => RunningCost::Quadratic {
                f0: *f0,
                f1: *f1,
                center: center.clone(),
            },
        };
        ControlProblem::new(potential, domain, self.problem.epsilon, target, cost)
    }

    /// Core regions (committor basis), target core last.
    pub fn core_regions(&self) -> Result<Vec<Region>> {
        self.method
            .cores
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("no cores configured".into()))?
            .iter()
            .map(|boxes| Region::new(vec![boxes.clone()]))
            .collect()
    }
}
