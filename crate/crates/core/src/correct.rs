//! Online error estimation and correction of `E[g(u)]` with `g(u_h)` as a
//! control variate, sampling the discrete sample set.

use rand::distr::{weighted::WeightedIndex, Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detsolver::{Ensemble, StiffnessAssembler, SOLVE_TOLERANCE};
use crate::error::{HsfemError, Result};
use crate::field::{CoefficientModel, Forcing};
use crate::mesh::Mesh;
use crate::stochastic::{stream_rng, SampleSet};

/// `|E[g(u_h)]|` below this switches to absolute thresholds.
const RELATIVE_UNDEFINED: f64 = 1e-14;

/// Scalar functional of one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    /// `u(x)^power`, with `u` the P1 interpolant.
    PointMoment { x: Vec<f64>, power: i32 },
    /// `int_D u dx`.
    Integral,
}

impl Functional {
    /// Evaluate on interior nodal values.
    pub fn eval(&self, mesh: &Mesh, interior: &[f64]) -> Result<f64> {
        match self {
            Functional::PointMoment { x, power } => {
                if x.len() != mesh.dim() {
                    return Err(HsfemError::Dimension {
                        what: "functional point",
                        expected: mesh.dim(),
                        got: x.len(),
                    });
                }
                let full = mesh.extend_by_zero(interior);
                Ok(mesh.interp_p1(&full)?.eval(x).powi(*power))
            }
            Functional::Integral => {
                let ones = mesh.load_vector(|_| 1.0);
                Ok(ones.iter().zip(interior).map(|(a, b)| a * b).sum())
            }
        }
    }
}

/// Outcome of the three-case decision rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// The error of `E[g(u_h)]` is below the threshold.
    AcceptUh,
    /// `E[g(u_h)] + tau_bar` is accurate enough.
    AcceptCorrected,
    /// Rounds exhausted without either test passing.
    Escalated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub n_mc: usize,
    pub tau_bar: f64,
    pub tau_tilde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub functional: Functional,
    /// `E[g(u_h)]` over the full sample set.
    pub e_g_uh: f64,
    pub n_mc: usize,
    pub tau_bar: f64,
    pub tau_tilde: f64,
    /// `E[g(u_h)] + tau_bar`.
    pub corrected: f64,
    /// `[corrected - 2 tau_tilde, corrected + 2 tau_tilde]`.
    pub interval: [f64; 2],
    pub decision: Decision,
    /// Thresholds were absolute because `E[g(u_h)]` vanished.
    pub absolute_fallback: bool,
    pub history: Vec<Round>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionParams {
    pub epsilon: f64,
    pub n_mc_init: usize,
    pub seed: u64,
    pub max_rounds: usize,
}

/// The problem that is re-solved at drawn samples.
pub struct Problem<'a> {
    pub mesh: &'a Mesh,
    pub model: &'a CoefficientModel,
    pub set: &'a SampleSet,
    pub forcing: &'a Forcing,
}

impl Problem<'_> {
    fn solver(&self) -> Result<Solver<'_>> {
        self.model.validate(self.mesh.dim(), self.set.m())?;
        Ok(Solver {
            asm: StiffnessAssembler::new(self.mesh),
            load: self.forcing.load_vector(self.mesh),
            problem: self,
        })
    }
}

struct Solver<'a> {
    asm: StiffnessAssembler,
    load: Vec<f64>,
    problem: &'a Problem<'a>,
}

impl Solver<'_> {
    fn solve(&self, p: usize) -> Result<Vec<f64>> {
        let pr = self.problem;
        let (a, chol) = self.asm.factor_sample(pr.mesh, pr.model, pr.set, p)?;
        chol.solve_refined(&a, &self.load, SOLVE_TOLERANCE).map_err(|e| HsfemError::Sample {
            sample: p,
            source: Box::new(e),
        })
    }

    /// `(g(u(theta^p)), g(u_h(theta^p)))` for each index, solved afresh.
    fn pairs(&self, g: &Functional, approx: &Ensemble, idx: &[usize]) -> Result<Vec<(f64, f64)>> {
        let mesh = self.problem.mesh;
        idx.par_iter()
            .map(|&p| Ok((g.eval(mesh, &self.solve(p)?)?, g.eval(mesh, &approx.column(p))?)))
            .collect()
    }
}

/// Draw `n` indices with replacement, uniformly if all weights are equal and
/// proportional to the weights otherwise.
pub fn draw_indices(set: &SampleSet, n: usize, seed: u64, stream: u64) -> Result<Vec<usize>> {
    let mut rng = stream_rng(seed, stream);
    if set.is_empty() {
        return Err(HsfemError::Config("cannot draw from an empty sample set".into()));
    }
    if set.has_equal_weights() {
        let d = Uniform::new(0, set.len()).map_err(|e| HsfemError::Config(e.to_string()))?;
        Ok((0..n).map(|_| d.sample(&mut rng)).collect())
    } else {
        if set.has_negative_weights() {
            return Err(HsfemError::Config(
                "control-variate sampling needs nonnegative sample weights".into(),
            ));
        }
        let d = WeightedIndex::new(set.weights()).map_err(|e| HsfemError::Config(e.to_string()))?;
        Ok((0..n).map(|_| d.sample(&mut rng)).collect())
    }
}

/// `E[g(u_h)]` over the whole sample set.
pub fn expected_functional(mesh: &Mesh, set: &SampleSet, g: &Functional, approx: &Ensemble) -> Result<f64> {
    approx.check_sample_set(set)?;
    let vals: Vec<f64> = (0..set.len())
        .into_par_iter()
        .map(|p| g.eval(mesh, &approx.column(p)))
        .collect::<Result<_>>()?;
    Ok(set.expect(&vals))
}

/// Sample mean and `sqrt(sum (tau - mean)^2 / (N (N - 1)))`.
pub fn tau_statistics(tau: &[f64]) -> (f64, f64) {
    let n = tau.len() as f64;
    let mean = tau.iter().sum::<f64>() / n;
    if tau.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let ss: f64 = tau.iter().map(|t| (t - mean).powi(2)).sum();
    (mean, (ss / (n * (n - 1.0))).sqrt())
}

/// Control-variate estimate of `E[g(u)]` with the three-case decision rule:
/// accept `E[g(u_h)]`, accept the corrected value, or double the sample
/// count with fresh draws.
pub fn estimate_and_correct(
    problem: &Problem<'_>,
    approx: &Ensemble,
    g: &Functional,
    params: &CorrectionParams,
) -> Result<CorrectionReport> {
    if params.n_mc_init < 2 || params.max_rounds == 0 || !(params.epsilon > 0.0) {
        return Err(HsfemError::Config(
            "correction needs N_MC >= 2, at least one round and epsilon > 0".into(),
        ));
    }
    let solver = problem.solver()?;
    let e0 = expected_functional(problem.mesh, problem.set, g, approx)?;
    let absolute = e0.abs() < RELATIVE_UNDEFINED;
    if absolute {
        log::warn!("E[g(u_h)] = {e0:.3e} vanishes; using absolute thresholds");
    }
    let eps = params.epsilon;
    let mut history = Vec::new();
    let mut n = params.n_mc_init;
    for round in 0..params.max_rounds {
        let idx = draw_indices(problem.set, n, params.seed, round as u64)?;
        let tau: Vec<f64> = solver.pairs(g, approx, &idx)?.iter().map(|(u, uh)| u - uh).collect();
        let (tau_bar, tau_tilde) = tau_statistics(&tau);
        history.push(Round {
            n_mc: n,
            tau_bar,
            tau_tilde,
        });
        let corrected = e0 + tau_bar;
        let (case1, case2) = if absolute {
            (tau_bar.abs() + 2.0 * tau_tilde <= eps, tau_tilde < eps)
        } else {
            (
                (tau_bar.abs() + 2.0 * tau_tilde.abs()) / e0.abs() <= eps,
                tau_tilde < eps * corrected.abs(),
            )
        };
        let last = round + 1 == params.max_rounds;
        let decision = if case1 {
            Some(Decision::AcceptUh)
        } else if case2 {
            Some(Decision::AcceptCorrected)
        } else if last {
            Some(Decision::Escalated)
        } else {
            None
        };
        if let Some(decision) = decision {
            return Ok(CorrectionReport {
                functional: g.clone(),
                e_g_uh: e0,
                n_mc: n,
                tau_bar,
                tau_tilde,
                corrected,
                interval: [corrected - 2.0 * tau_tilde, corrected + 2.0 * tau_tilde],
                decision,
                absolute_fallback: absolute,
                history,
            });
        }
        n *= 2;
    }
    unreachable!("the last round always decides")
}

/// Estimates of `sigma[g(u)]`, `sigma[g(u) - g(u_h)]` and their ratio; the
/// ratio is infinite when the control variate removes all variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceRatio {
    pub sigma_g: f64,
    pub sigma_tau: f64,
    pub ratio: f64,
}

pub fn variance_ratio(
    problem: &Problem<'_>,
    approx: &Ensemble,
    g: &Functional,
    n_probe: usize,
    seed: u64,
) -> Result<VarianceRatio> {
    if n_probe < 2 {
        return Err(HsfemError::Config("variance ratio needs at least two draws".into()));
    }
    let solver = problem.solver()?;
    let idx = draw_indices(problem.set, n_probe, seed, u64::MAX)?;
    let pairs = solver.pairs(g, approx, &idx)?;
    let sd = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let gu: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tau: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let sigma_g = sd(&gu);
    let sigma_tau = sd(&tau);
    let ratio = if sigma_tau <= 1e-14 * sigma_g.max(f64::MIN_POSITIVE) {
        f64::INFINITY
    } else {
        sigma_g / sigma_tau
    };
    Ok(VarianceRatio {
        sigma_g,
        sigma_tau,
        ratio,
    })
}
