//! Named experiment presets, each at full and at desk scale.

use std::path::PathBuf;

use hsfem::correct::Functional;
use hsfem::field::CoefficientModel;
use hsfem::{HsfemError, Result};

use crate::config::{
    BaselineConfig, CorrectionConfig, ExperimentConfig, ForcingSpec, OfflineConfig, OnlineConfig, ProblemConfig,
    StochasticConfig, TmatrixConfig,
};

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub full: ExperimentConfig,
    pub desk: ExperimentConfig,
}

fn base(name: &str, dim: usize, h: f64, model: CoefficientModel, stochastic: StochasticConfig, offline: OfflineConfig) -> ExperimentConfig {
    let forcing = if dim == 1 { "cubic_1d" } else { "linear_2d" };
    ExperimentConfig {
        name: name.to_string(),
        problem: ProblemConfig {
            dim,
            h,
            coarse_h: None,
            model,
        },
        stochastic,
        offline,
        online: OnlineConfig {
            forcings: vec![ForcingSpec::Preset(forcing.into())],
            reference: true,
        },
        baseline: BaselineConfig { kl: true },
        correction: None,
        tmatrix: None,
        output: PathBuf::from(format!("hsfem-out/{name}")),
    }
}

fn offline(k: usize, tol: f64) -> OfflineConfig {
    OfflineConfig {
        k,
        r: 5,
        probe_tolerance: tol,
        seed: 1,
        allow_growth: false,
        max_sketch: None,
    }
}

fn mc(samples: usize) -> StochasticConfig {
    StochasticConfig::MonteCarlo {
        samples,
        seed: 2024,
        measure: None,
    }
}

fn sparse(order: usize) -> StochasticConfig {
    StochasticConfig::Smolyak {
        order,
        measure: None,
        cap: None,
    }
}

fn one_d_m20() -> Preset {
    let model = CoefficientModel::TrigLognormal1d { m: 20 };
    let tm = Some(TmatrixConfig {
        x: vec![0.5],
        epsilon: vec![2e-3],
    });
    let mut full = base("paper-1d-m20", 1, 1.0 / 256.0, model.clone(), sparse(4), offline(50, 1e-3));
    full.tmatrix = tm.clone();
    let mut desk = base("paper-1d-m20-desk", 1, 1.0 / 128.0, model, mc(5000), offline(50, 1e-3));
    desk.tmatrix = tm;
    Preset {
        name: "paper-1d-m20",
        description: "1D lognormal trigonometric coefficient, m = 20, cubic forcing",
        full,
        desk,
    }
}

fn one_d_m30() -> Preset {
    let model = CoefficientModel::TrigLognormal1d { m: 30 };
    let correction = Some(CorrectionConfig {
        functional: Functional::PointMoment { x: vec![0.5], power: 2 },
        epsilon: 1e-2,
        n_mc: 100,
        max_rounds: 4,
        seed: 7,
        variance_probe: 1000,
    });
    let mut full = base("paper-1d-m30", 1, 1.0 / 256.0, model.clone(), mc(40_000), offline(35, 3e-3));
    full.problem.coarse_h = Some(1.0 / 128.0);
    full.correction = correction.clone();
    let mut desk = base("paper-1d-m30-desk", 1, 1.0 / 64.0, model, mc(10_000), offline(35, 3e-3));
    desk.correction = correction;
    Preset {
        name: "paper-1d-m30",
        description: "1D, m = 30, Monte Carlo sampling, coarse offline mesh, error correction of E[u(1/2)^2]",
        full,
        desk,
    }
}

fn two_d_gaussian() -> Preset {
    let model = CoefficientModel::TrigLognormal2d { m: 12 };
    Preset {
        name: "paper-2d-gaussian",
        description: "2D smooth lognormal coefficient with 12 Gaussian variables",
        full: base("paper-2d-gaussian", 2, 1.0 / 64.0, model.clone(), sparse(4), offline(50, 3e-4)),
        desk: base("paper-2d-gaussian-desk", 2, 1.0 / 16.0, model, mc(1000), offline(50, 3e-4)),
    }
}

fn two_d_discontinuous() -> Preset {
    let model = CoefficientModel::Piecewise2d;
    Preset {
        name: "paper-2d-discontinuous",
        description: "2D coefficient with quadrant-wise jumps, 12 Gaussian variables",
        full: base("paper-2d-discontinuous", 2, 1.0 / 64.0, model.clone(), sparse(4), offline(50, 1e-4)),
        desk: base("paper-2d-discontinuous-desk", 2, 1.0 / 16.0, model, mc(1000), offline(50, 1e-4)),
    }
}

fn two_d_m36() -> Preset {
    Preset {
        name: "paper-2d-m36",
        description: "2D tensor-product lognormal coefficient with 36 Gaussian variables",
        full: base(
            "paper-2d-m36",
            2,
            1.0 / 32.0,
            CoefficientModel::TensorLognormal2d { m: 36 },
            mc(10_000),
            offline(70, 2e-3),
        ),
        desk: base(
            "paper-2d-m36-desk",
            2,
            1.0 / 16.0,
            CoefficientModel::TensorLognormal2d { m: 6 },
            mc(2000),
            offline(50, 2e-3),
        ),
    }
}

pub fn presets() -> Vec<Preset> {
    vec![one_d_m20(), one_d_m30(), two_d_gaussian(), two_d_discontinuous(), two_d_m36()]
}

/// Look up `name`, at desk scale if requested or if the name ends in `-desk`.
pub fn preset(name: &str, desk: bool) -> Result<ExperimentConfig> {
    let (base_name, desk) = match name.strip_suffix("-desk") {
        Some(b) => (b, true),
        None => (name, desk),
    };
    presets()
        .into_iter()
        .find(|p| p.name == base_name)
        .map(|p| if desk { p.desk } else { p.full })
        .ok_or_else(|| HsfemError::Config(format!("unknown preset '{name}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for p in presets() {
            for cfg in [&p.full, &p.desk] {
                cfg.validate().unwrap();
                let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
                assert_eq!(&again, cfg);
            }
        }
        assert_eq!(preset("paper-1d-m20-desk", false).unwrap().problem.h, 1.0 / 128.0);
        assert!(preset("nope", false).is_err());
    }
}
