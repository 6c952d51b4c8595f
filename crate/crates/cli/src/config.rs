//! TOML run configuration.
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//!
//! [grid]
//! dim = 4
//! n = 16
//! side = 8.0
//!
//! [data]                      # or: data_file = "base.nlwp"
//! profile = "gaussian-bump"
//! s = 0.75
//! pos_norm = 1.0
//!
//! [distribution]
//! kind = "gaussian"
//! variance = 1.0
//!
//! [experiment]
//! kind = "strichartz-mc"
//! samples = 10000
//! ...
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nlwlab_core::grid::Grid;
use nlwlab_core::harness::{NormRequest, Pipeline, PicardSettings};
use nlwlab_core::randomization::{CoefficientDistribution, CutoffKind};
use nlwlab_core::solver::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::data::DataSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub dim: usize,
    pub n: usize,
    pub side: f64,
}

impl GridBlock {
    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(self.dim, self.n, self.side)?)
    }
}

fn default_distribution() -> CoefficientDistribution {
    CoefficientDistribution::Gaussian { variance: 1.0 }
}

fn default_cutoff() -> CutoffKind {
    CutoffKind::Smooth
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Master seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub grid: GridBlock,
    /// NLWP file with the base pair, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_file: Option<PathBuf>,
    /// Base pair generated in place.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSpec>,
    #[serde(default = "default_cutoff")]
    pub cutoff: CutoffKind,
    #[serde(default = "default_distribution")]
    pub distribution: CoefficientDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    pub experiment: Experiment,
}

fn one_usize() -> usize {
    1
}

fn nine() -> usize {
    9
}

fn default_p_list() -> Vec<f64> {
    vec![2.0, 4.0, 8.0, 16.0]
}

fn default_quantiles() -> [f64; 2] {
    [0.5, 0.995]
}

fn default_min_r2() -> f64 {
    0.95
}

fn default_drift() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// Randomize the base pair for `samples` indices and store the results.
    Randomize {
        #[serde(default = "one_usize")]
        samples: usize,
        #[serde(default)]
        s: f64,
    },
    /// Free evolution of the base pair at the given times.
    LinearEvolve { times: Vec<f64> },
    /// Nonlinear evolution of the base pair; with `sample` set, of
    /// randomized data split as `z + v`.
    Solve {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sample: Option<u64>,
        #[serde(default = "default_drift")]
        max_drift: f64,
    },
    StrichartzMc {
        samples: usize,
        #[serde(default)]
        s: f64,
        norm: NormRequest,
        #[serde(default)]
        hs_tail: bool,
        #[serde(default = "default_quantiles")]
        quantiles: [f64; 2],
        #[serde(default)]
        gammas: Vec<f64>,
        #[serde(default = "default_min_r2")]
        min_r2: f64,
        #[serde(default = "nine")]
        time_samples: usize,
        /// Rerun with the base pair halved (fresh seed) and require the
        /// slope to scale by 4 within this relative tolerance.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        halving_tolerance: Option<f64>,
    },
    Khintchine {
        samples: usize,
        #[serde(default = "default_p_list")]
        p_list: Vec<f64>,
        /// Flat grid index where the cube pieces are evaluated.
        #[serde(default)]
        point: usize,
        /// Distributions to test; the top-level one when empty.
        #[serde(default)]
        distributions: Vec<CoefficientDistribution>,
    },
    EnergyBound {
        samples: usize,
        #[serde(default)]
        s: f64,
        horizon: f64,
    },
    Smalldata {
        samples: usize,
        #[serde(default)]
        s: f64,
        eps: Vec<f64>,
        horizon: f64,
        threshold: f64,
    },
    Continuity {
        samples: usize,
        #[serde(default)]
        s: f64,
        eta: Vec<f64>,
        horizon: f64,
        #[serde(default)]
        pipeline: Pipeline,
        #[serde(default = "nine")]
        time_samples: usize,
        /// Profile of the perturbation, normalized to unit `H^s x H^{s-1}` norm.
        perturbation: DataSpec,
    },
    CalibrateTau {
        energy_scales: Vec<f64>,
        forcing_scales: Vec<f64>,
        steps: Vec<f64>,
        picard: PicardSettings,
        /// Profile of the `z` data; the base pair is the `v` data.
        forcing: DataSpec,
    },
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Randomize { .. } => "randomize",
            Self::LinearEvolve { .. } => "linear-evolve",
            Self::Solve { .. } => "solve",
            Self::StrichartzMc { .. } => "strichartz-mc",
            Self::Khintchine { .. } => "khintchine",
            Self::EnergyBound { .. } => "energy-bound",
            Self::Smalldata { .. } => "smalldata",
            Self::Continuity { .. } => "continuity",
            Self::CalibrateTau { .. } => "calibrate-tau",
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("invalid run configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Schema checks that do not touch the file system.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            );
        }
        let grid = self.grid.grid()?;
        match (&self.data_file, &self.data) {
            (Some(_), Some(_)) => bail!("give either data_file or [data], not both"),
            (None, None) => bail!("missing base data: set data_file or a [data] block"),
            _ => {}
        }
        self.distribution.validate()?;
        if let Experiment::StrichartzMc { norm, .. } = &self.experiment {
            norm.validate(grid.dim())?;
        }
        let needs_solver = match &self.experiment {
            Experiment::Solve { .. } | Experiment::EnergyBound { .. } | Experiment::Smalldata { .. } => true,
            Experiment::Continuity { pipeline, .. } => *pipeline == Pipeline::FullSolve,
            _ => false,
        };
        if needs_solver {
            match &self.solver {
                Some(cfg) => {
                    cfg.steps()?;
                }
                None => bail!("experiment {} needs a [solver] block", self.experiment.name()),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
schema_version = 1
seed = 3

[grid]
dim = 4
n = 8
side = 8.0

[data]
profile = "gaussian-bump"
s = 0.75
pos_norm = 1.0
"#;

    fn with(experiment: &str) -> String {
        format!("{BASE}\n[experiment]\n{experiment}\n")
    }

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::from_toml(&with(
            "kind = \"strichartz-mc\"\nsamples = 100\nnorm = { q = 3.0, r = 6.0, interval = [0.0, 1.0], admissible = 1.0 }",
        ))
        .unwrap();
        assert_eq!(cfg.experiment.name(), "strichartz-mc");
        assert_eq!(cfg.distribution, CoefficientDistribution::Gaussian { variance: 1.0 });
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn infinite_exponents_parse() {
        let cfg = RunConfig::from_toml(&with(
            "kind = \"strichartz-mc\"\nsamples = 100\nnorm = { q = \"inf\", r = 2.0, interval = [0.0, 1.0], admissible = 0.0 }",
        ))
        .unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let top = format!("colour = 1\n{}", with("kind = \"linear-evolve\"\ntimes = [1.0]"));
        assert!(RunConfig::from_toml(&top).is_err());
        assert!(RunConfig::from_toml(&with("kind = \"linear-evolve\"\ntimes = [1.0]\nextra = 2")).is_err());
        assert!(RunConfig::from_toml(&with("kind = \"no-such-experiment\"")).is_err());
        let grid = BASE.replace("side = 8.0", "side = 8.0\nlength = 3");
        assert!(RunConfig::from_toml(&format!("{grid}\n[experiment]\nkind = \"linear-evolve\"\ntimes = [1.0]\n")).is_err());
    }

    #[test]
    fn inadmissible_tagged_pair_is_rejected() {
        let r = RunConfig::from_toml(&with(
            "kind = \"strichartz-mc\"\nsamples = 100\nnorm = { q = 3.0, r = 7.0, interval = [0.0, 1.0], admissible = 1.0 }",
        ));
        assert!(format!("{:#}", r.unwrap_err()).contains("tagged admissible"));
    }

    #[test]
    fn schema_and_data_rules() {
        let wrong = with("kind = \"linear-evolve\"\ntimes = [1.0]").replace("schema_version = 1", "schema_version = 2");
        assert!(RunConfig::from_toml(&wrong).is_err());
        let both = with("kind = \"linear-evolve\"\ntimes = [1.0]").replace("seed = 3", "seed = 3\ndata_file = \"x.nlwp\"");
        assert!(RunConfig::from_toml(&both).is_err());
        assert!(RunConfig::from_toml(&with("kind = \"solve\"")).is_err());
    }
}
