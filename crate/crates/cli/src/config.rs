//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hsfem::correct::Functional;
use hsfem::field::{CoefficientModel, Forcing};
use hsfem::mesh::Mesh;
use hsfem::offline::OfflineParams;
use hsfem::stochastic::{mc_sample, smolyak_capped, Measure, SampleSet, DEFAULT_SMOLYAK_CAP};
use hsfem::{HsfemError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemConfig,
    pub stochastic: StochasticConfig,
    pub offline: OfflineConfig,
    #[serde(default)]
    pub online: OnlineConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub correction: Option<CorrectionConfig>,
    #[serde(default)]
    pub tmatrix: Option<TmatrixConfig>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("hsfem-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dim: usize,
    /// Fine mesh size; must be `1/cells`.
    pub h: f64,
    /// Mesh size for the offline sampling solves.
    #[serde(default)]
    pub coarse_h: Option<f64>,
    pub model: CoefficientModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StochasticConfig {
    MonteCarlo {
        samples: usize,
        seed: u64,
        #[serde(default)]
        measure: Option<Measure>,
    },
    Smolyak {
        order: usize,
        #[serde(default)]
        measure: Option<Measure>,
        #[serde(default)]
        cap: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineConfig {
    pub k: usize,
    pub r: usize,
    /// Probe threshold `epsilon / (10 sqrt(2/pi))`.
    pub probe_tolerance: f64,
    pub seed: u64,
    #[serde(default)]
    pub allow_growth: bool,
    #[serde(default)]
    pub max_sketch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ForcingSpec {
    Preset(String),
    Explicit(Forcing),
}

impl ForcingSpec {
    pub fn resolve(&self) -> Result<Forcing> {
        match self {
            ForcingSpec::Preset(name) => Forcing::preset(name),
            ForcingSpec::Explicit(f) => Ok(f.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineConfig {
    /// Forcings solved in one batch; empty means the dimension's default.
    #[serde(default)]
    pub forcings: Vec<ForcingSpec>,
    /// Compute the reference ensemble and the relative error.
    #[serde(default = "yes")]
    pub reference: bool,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            forcings: Vec::new(),
            reference: true,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default = "yes")]
    pub kl: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { kl: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionConfig {
    pub functional: Functional,
    pub epsilon: f64,
    pub n_mc: usize,
    pub max_rounds: usize,
    pub seed: u64,
    /// Draws used to estimate the variance ratio; 0 skips it.
    #[serde(default)]
    pub variance_probe: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TmatrixConfig {
    /// Point whose nearest interior node is analysed.
    pub x: Vec<f64>,
    /// Tolerances at which the numerical rank is reported.
    pub epsilon: Vec<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HsfemError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HsfemError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        self.mesh()?;
        if let Some(hc) = p.coarse_h {
            Mesh::build_uniform(p.dim, hc)?;
        }
        let m = p.model.m().unwrap_or(1);
        p.model.validate(p.dim, m)?;
        match self.stochastic {
            StochasticConfig::MonteCarlo { samples, .. } if samples < 2 => {
                return Err(HsfemError::Config("Monte Carlo needs at least 2 samples".into()))
            }
            StochasticConfig::Smolyak { order, .. } if order == 0 => {
                return Err(HsfemError::Config("Smolyak order must be >= 1".into()))
            }
            _ => {}
        }
        let o = &self.offline;
        if o.k == 0 || o.r == 0 || !(o.probe_tolerance > 0.0) {
            return Err(HsfemError::Config("offline needs k >= 1, r >= 1, probe_tolerance > 0".into()));
        }
        for f in &self.online.forcings {
            let f = f.resolve()?;
            if f.dim().is_some_and(|d| d != p.dim) {
                return Err(HsfemError::Config(format!("forcing {f:?} does not match dim {}", p.dim)));
            }
        }
        if let Some(c) = &self.correction {
            if c.n_mc < 2 || c.max_rounds == 0 || !(c.epsilon > 0.0) {
                return Err(HsfemError::Config("correction needs n_mc >= 2, max_rounds >= 1, epsilon > 0".into()));
            }
        }
        if let Some(t) = &self.tmatrix {
            if t.x.len() != p.dim {
                return Err(HsfemError::Config("tmatrix.x must have one coordinate per dimension".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configuration serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn mesh(&self) -> Result<Mesh> {
        Mesh::build_uniform(self.problem.dim, self.problem.h)
    }

    /// Stochastic dimension: the model's, or 1 for the constant model.
    pub fn m(&self) -> usize {
        self.problem.model.m().unwrap_or(1)
    }

    pub fn sample_set(&self) -> Result<SampleSet> {
        let natural = self.problem.model.natural_measure();
        match self.stochastic {
            StochasticConfig::MonteCarlo { samples, seed, measure } => {
                mc_sample(self.m(), samples, measure.unwrap_or(natural), seed)
            }
            StochasticConfig::Smolyak { order, measure, cap } => {
                smolyak_capped(self.m(), order, measure.unwrap_or(natural), cap.unwrap_or(DEFAULT_SMOLYAK_CAP))
            }
        }
    }

    pub fn offline_params(&self) -> OfflineParams {
        let o = &self.offline;
        let mut p = OfflineParams::with_probe_tolerance(o.k, o.r, o.probe_tolerance, o.seed);
        p.allow_growth = o.allow_growth;
        p.max_sketch = o.max_sketch;
        p.coarse_h = self.problem.coarse_h;
        p
    }

    pub fn forcings(&self) -> Result<Vec<Forcing>> {
        if self.online.forcings.is_empty() {
            let name = if self.problem.dim == 1 { "cubic_1d" } else { "linear_2d" };
            return Ok(vec![Forcing::preset(name)?]);
        }
        self.online.forcings.iter().map(ForcingSpec::resolve).collect()
    }

    /// Seeds used anywhere in the experiment, for provenance records.
    pub fn seeds(&self) -> serde_json::Value {
        let sample = match self.stochastic {
            StochasticConfig::MonteCarlo { seed, .. } => Some(seed),
            StochasticConfig::Smolyak { .. } => None,
        };
        serde_json::json!({
            "sample_set": sample,
            "offline": self.offline.seed,
            "correction": self.correction.as_ref().map(|c| c.seed),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
name = "tiny"
output = "out"

[problem]
dim = 1
h = 0.125
model = { kind = "trig_lognormal_1d", m = 2 }

[stochastic]
kind = "monte_carlo"
samples = 16
seed = 3

[offline]
k = 5
r = 2
probe_tolerance = 1e-4
seed = 1

[online]
forcings = ["cubic_1d", { kind = "constant", value = 2.0 }]

[correction]
functional = { kind = "point_moment", x = [0.5], power = 2 }
epsilon = 1e-2
n_mc = 10
max_rounds = 3
seed = 4
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(cfg.forcings().unwrap().len(), 2);
        assert!(cfg.baseline.kl && cfg.online.reference);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        assert_eq!(cfg.sample_set().unwrap().len(), 16);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_toml("name = 1").is_err());
        let bad_h = EXAMPLE.replace("h = 0.125", "h = 0.3");
        assert!(ExperimentConfig::from_toml(&bad_h).is_err());
        let bad_dim = EXAMPLE.replace("dim = 1", "dim = 2");
        assert!(ExperimentConfig::from_toml(&bad_dim).is_err());
        let unknown = EXAMPLE.replace("seed = 3", "seed = 3\nsurprise = 1");
        assert!(ExperimentConfig::from_toml(&unknown).is_err());
    }
}
