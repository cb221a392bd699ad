//! Online stage: coupled load vector, solve, statistics and the relative
//! stochastic error against a reference ensemble.

use rayon::prelude::*;
use serde::Serialize;

use crate::detsolver::{Ensemble, SOLVE_TOLERANCE};
use crate::error::{HsfemError, Result};
use crate::field::Forcing;
use crate::mesh::Mesh;
use crate::offline::{CoupledSystem, LocalBasis};
use crate::stochastic::SampleSet;

/// Entries `E[xi_i^j]` below this are treated as exactly zero.
const MEAN_ZERO: f64 = 1e-12;

/// Denominators below this make the relative error undefined.
const UNDEFINED_BELOW: f64 = 1e-14;

/// `b(R(i, j)) = E[xi_i^j] int phi_i f` for the load vector `fi = int phi_i f`.
pub fn coupled_load(system: &CoupledSystem, fi: &[f64]) -> Result<Vec<f64>> {
    if fi.len() != system.n_nodes() {
        return Err(HsfemError::Dimension {
            what: "nodal load vector",
            expected: system.n_nodes(),
            got: fi.len(),
        });
    }
    let means = system.means();
    let mut b = vec![0.0; system.size()];
    for (i, &f) in fi.iter().enumerate() {
        for j in 0..=system.k(i) {
            let r = system.index(i, j);
            let e = means[r];
            b[r] = if j > 0 && e.abs() <= MEAN_ZERO { 0.0 } else { e * f };
        }
    }
    Ok(b)
}

/// Coupled load vector of the forcing `f` on `mesh`.
pub fn load_vector(system: &CoupledSystem, mesh: &Mesh, f: &Forcing) -> Result<Vec<f64>> {
    coupled_load(system, &f.load_vector(mesh))
}

/// Coefficients `c_i^j` of `u_h = sum_i sum_j c_i^j phi_i xi_i^j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HsfemSolution {
    k: Vec<usize>,
    offsets: Vec<usize>,
    c: Vec<f64>,
    sample_fingerprint: String,
}

impl HsfemSolution {
    pub fn coefficients(&self) -> &[f64] {
        &self.c
    }

    pub fn n_nodes(&self) -> usize {
        self.k.len()
    }

    /// `c_i^j`.
    pub fn coefficient(&self, i: usize, j: usize) -> f64 {
        self.c[self.offsets[i] + j]
    }

    /// Nodal means `c_i^0`.
    pub fn mean(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.coefficient(i, 0)).collect()
    }

    /// Nodal standard deviations `sqrt(sum_{j >= 1} (c_i^j)^2)`.
    pub fn sd(&self) -> Vec<f64> {
        (0..self.n_nodes())
            .map(|i| {
                let s = &self.c[self.offsets[i] + 1..self.offsets[i] + 1 + self.k[i]];
                s.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect()
    }

    /// Traces `u_h(x_i, theta^p) = sum_j c_i^j xi_i^j(theta^p)` for every sample.
    pub fn materialize(&self, basis: &LocalBasis, set: &SampleSet) -> Result<Ensemble> {
        if basis.sample_fingerprint() != self.sample_fingerprint || set.fingerprint() != self.sample_fingerprint {
            return Err(HsfemError::SampleSetMismatch);
        }
        if basis.ks() != self.k.as_slice() {
            return Err(HsfemError::Artifact("solution and local basis disagree on k_i".into()));
        }
        let m = set.len();
        let values: Vec<f64> = (0..self.n_nodes())
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut t = vec![self.coefficient(i, 0); m];
                for j in 1..=self.k[i] {
                    let cij = self.coefficient(i, j);
                    for (v, x) in t.iter_mut().zip(basis.xi(i, j)) {
                        *v += cij * x;
                    }
                }
                t
            })
            .collect();
        Ensemble::from_node_major(self.n_nodes(), set, values, None)
    }
}

/// Solve `SM c = b` for a coupled load vector `b`.
pub fn solve_coupled(system: &CoupledSystem, b: &[f64]) -> Result<HsfemSolution> {
    let c = system.factor().solve_refined(system.matrix(), b, SOLVE_TOLERANCE).map_err(|e| {
        log::error!("coupled solve failed: {e}; check that the coupled stiffness matrix is positive definite");
        e
    })?;
    let mut offsets = vec![0usize];
    for &k in system.ks() {
        offsets.push(offsets.last().unwrap() + k + 1);
    }
    Ok(HsfemSolution {
        k: system.ks().to_vec(),
        offsets,
        c,
        sample_fingerprint: system.sample_fingerprint().to_string(),
    })
}

/// Assemble the load for `f` and solve the coupled system.
pub fn solve_online(system: &CoupledSystem, mesh: &Mesh, f: &Forcing) -> Result<HsfemSolution> {
    solve_coupled(system, &load_vector(system, mesh, f)?)
}

/// Nodal mean and standard deviation of the solution.
pub fn statistics(sol: &HsfemSolution) -> (Vec<f64>, Vec<f64>) {
    (sol.mean(), sol.sd())
}

/// `sum_p w^p e_p^T M e_p` for node-major traces `e`, with `M` the P1 mass matrix.
fn weighted_mass_norm2(mesh: &Mesh, set: &SampleSet, e: &[f64]) -> f64 {
    let mass = mesh.mass_matrix();
    let m = set.len();
    let trace = |i: usize| &e[i * m..(i + 1) * m];
    let total: f64 = (0..mass.dim())
        .into_par_iter()
        .map(|i| mass.row(i).map(|(k, v)| v * set.inner(trace(i), trace(k))).sum::<f64>())
        .sum();
    total.max(0.0)
}

/// Relative error of the stochastic part,
/// `sqrt(sum_p w^p |u_d - u_h|^2 / sum_p w^p |u_d - E u_d|^2)` in `L2(D)`.
pub fn e_hsfem(mesh: &Mesh, set: &SampleSet, approx: &Ensemble, reference: &Ensemble) -> Result<f64> {
    approx.check_sample_set(set)?;
    reference.check_sample_set(set)?;
    if approx.n_interior() != mesh.n_interior() || reference.n_interior() != mesh.n_interior() {
        return Err(HsfemError::Dimension {
            what: "ensemble nodes",
            expected: mesh.n_interior(),
            got: approx.n_interior().min(reference.n_interior()),
        });
    }
    let m = set.len();
    let diff: Vec<f64> = reference.values().iter().zip(approx.values()).map(|(a, b)| a - b).collect();
    let mean = reference.mean(set);
    let centred: Vec<f64> = reference
        .values()
        .iter()
        .enumerate()
        .map(|(k, v)| v - mean[k / m])
        .collect();
    let num = weighted_mass_norm2(mesh, set, &diff);
    let den = weighted_mass_norm2(mesh, set, &centred);
    if den < UNDEFINED_BELOW {
        return Err(HsfemError::Undefined(format!(
            "reference solution is deterministic (variance norm {den:.3e}); relative error undefined"
        )));
    }
    Ok((num / den).sqrt())
}

/// [`e_hsfem`] for a coupled solution, materializing its traces.
pub fn e_hsfem_solution(
    mesh: &Mesh,
    set: &SampleSet,
    basis: &LocalBasis,
    sol: &HsfemSolution,
    reference: &Ensemble,
) -> Result<f64> {
    e_hsfem(mesh, set, &sol.materialize(basis, set)?, reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detsolver::{solve_ensemble, StiffnessAssembler};
    use crate::field::CoefficientModel;
    use crate::offline::{assemble_coupled, build_local_basis, OfflineParams};
    use crate::stochastic::{mc_sample, Measure};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    struct Case {
        mesh: Mesh,
        model: CoefficientModel,
        set: SampleSet,
        basis: LocalBasis,
        system: CoupledSystem,
    }

    fn case(dim: usize, h: f64, model: CoefficientModel, n: usize, tol: f64) -> Case {
        let mesh = Mesh::build_uniform(dim, h).unwrap();
        let m = model.m().unwrap_or(2);
        let set = mc_sample(m, n, model.natural_measure(), 11).unwrap();
        let params = OfflineParams::with_probe_tolerance(6, 3, tol, 7);
        let basis = build_local_basis(&mesh, &model, &set, &params).unwrap();
        let system = assemble_coupled(&mesh, &model, &set, &basis).unwrap();
        Case {
            mesh,
            model,
            set,
            basis,
            system,
        }
    }

    #[test]
    fn deterministic_case_reduces_to_fem() {
        let c = case(1, 0.25, CoefficientModel::Constant { value: 1.0 }, 5, 1e-8);
        let one = Forcing::Constant { value: 1.0 };
        let b = load_vector(&c.system, &c.mesh, &one).unwrap();
        for v in &b {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-14);
        }
        let sol = solve_online(&c.system, &c.mesh, &one).unwrap();
        let (mean, sd) = statistics(&sol);
        for (i, x) in [0.25, 0.5, 0.75].iter().enumerate() {
            assert_abs_diff_eq!(mean[i], x * (1.0 - x) / 2.0, epsilon = 1e-13);
            assert_eq!(sd[i], 0.0);
        }
        let zero = solve_online(&c.system, &c.mesh, &Forcing::Constant { value: 0.0 }).unwrap();
        assert!(zero.coefficients().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stochastic_entries_of_the_load_vanish() {
        let c = case(1, 1.0 / 8.0, CoefficientModel::TrigLognormal1d { m: 2 }, 9, 1e-8);
        let b = load_vector(&c.system, &c.mesh, &Forcing::Cubic1d).unwrap();
        for i in 0..c.system.n_nodes() {
            for j in 1..=c.system.k(i) {
                assert_eq!(b[c.system.index(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn coupled_solution_matches_dense_solve() {
        let c = case(1, 1.0 / 8.0, CoefficientModel::TrigLognormal1d { m: 2 }, 9, 1e-8);
        let sol = solve_online(&c.system, &c.mesh, &Forcing::Cubic1d).unwrap();
        let s = c.system.size();
        let dense = c.system.matrix().to_dense();
        let a = DMatrix::from_fn(s, s, |r, k| dense[r][k]);
        let b = DVector::from_vec(load_vector(&c.system, &c.mesh, &Forcing::Cubic1d).unwrap());
        let x = a.lu().solve(&b).unwrap();
        for (u, v) in sol.coefficients().iter().zip(x.iter()) {
            assert_abs_diff_eq!(*u, *v, epsilon = 1e-10 * x.amax());
        }
    }

    #[test]
    fn statistics_match_materialized_traces() {
        let c = case(2, 0.25, CoefficientModel::TrigLognormal2d { m: 3 }, 20, 1e-6);
        let sol = solve_online(&c.system, &c.mesh, &Forcing::Linear2d).unwrap();
        let traces = sol.materialize(&c.basis, &c.set).unwrap();
        let (mean, sd) = statistics(&sol);
        for i in 0..sol.n_nodes() {
            let t = traces.trace(i);
            let mu = c.set.expect(t);
            let var: f64 = c.set.expect(&t.iter().map(|v| (v - mu).powi(2)).collect::<Vec<_>>());
            assert_abs_diff_eq!(mean[i], mu, epsilon = 1e-8);
            assert_abs_diff_eq!(sd[i], var.sqrt(), epsilon = 1e-8);
            assert!(sd[i] >= 0.0);
            for p in 0..c.set.len() {
                let mut v = sol.coefficient(i, 0);
                for j in 1..=c.basis.k(i) {
                    v += sol.coefficient(i, j) * c.basis.xi(i, j)[p];
                }
                assert!((t[p] - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn error_metric_endpoints() {
        let c = case(1, 1.0 / 8.0, CoefficientModel::TrigLognormal1d { m: 2 }, 16, 1e-8);
        let reference = solve_ensemble(&c.mesh, &c.model, &c.set, &Forcing::Cubic1d).unwrap();
        assert_eq!(e_hsfem(&c.mesh, &c.set, &reference, &reference).unwrap(), 0.0);
        let mean = reference.mean(&c.set);
        let m = c.set.len();
        let flat: Vec<f64> = (0..mean.len() * m).map(|k| mean[k / m]).collect();
        let only_mean = Ensemble::from_node_major(mean.len(), &c.set, flat, None).unwrap();
        assert_abs_diff_eq!(e_hsfem(&c.mesh, &c.set, &only_mean, &reference).unwrap(), 1.0, epsilon = 1e-12);
        let sol = solve_online(&c.system, &c.mesh, &Forcing::Cubic1d).unwrap();
        let e = e_hsfem_solution(&c.mesh, &c.set, &c.basis, &sol, &reference).unwrap();
        assert!(e < 1e-3, "{e}");
        let det = case(1, 0.25, CoefficientModel::Constant { value: 2.0 }, 4, 1e-8);
        let r = solve_ensemble(&det.mesh, &det.model, &det.set, &Forcing::Cubic1d).unwrap();
        assert!(matches!(e_hsfem(&det.mesh, &det.set, &r, &r), Err(HsfemError::Undefined(_))));
    }

    /// Residual `A_p (u_d - u_h)` per sample, node-major, and the sampled
    /// stiffness matrices.
    fn energy_setup(c: &Case, f: &Forcing) -> (Ensemble, Ensemble, Vec<crate::sparse::CsrMatrix>) {
        let reference = solve_ensemble(&c.mesh, &c.model, &c.set, f).unwrap();
        let sol = solve_online(&c.system, &c.mesh, f).unwrap();
        let approx = sol.materialize(&c.basis, &c.set).unwrap();
        let asm = StiffnessAssembler::new(&c.mesh);
        let mats = (0..c.set.len())
            .map(|p| asm.assemble(&c.model.centroid_values(&c.mesh, c.set.point(p), p).unwrap()))
            .collect();
        (reference, approx, mats)
    }

    fn energy_error2(c: &Case, mats: &[crate::sparse::CsrMatrix], u: &Ensemble, v: &Ensemble) -> f64 {
        (0..c.set.len())
            .map(|p| {
                let e: Vec<f64> = u.column(p).iter().zip(v.column(p)).map(|(a, b)| a - b).collect();
                c.set.weights()[p] * mats[p].bilinear(&e, &e)
            })
            .sum()
    }

    #[test]
    fn galerkin_orthogonality_and_optimality() {
        let c = case(2, 0.25, CoefficientModel::TrigLognormal2d { m: 3 }, 24, 1e-3);
        let f = Forcing::Linear2d;
        let (reference, approx, mats) = energy_setup(&c, &f);
        let n = c.mesh.n_interior();
        let m = c.set.len();
        let mut residual = vec![0.0; n * m];
        let mut scale = 0.0f64;
        for p in 0..m {
            let e: Vec<f64> = reference.column(p).iter().zip(approx.column(p)).map(|(a, b)| a - b).collect();
            let r = mats[p].matvec(&e);
            let full = mats[p].matvec(&reference.column(p));
            for i in 0..n {
                residual[i * m + p] = c.set.weights()[p] * r[i];
                scale = scale.max(full[i].abs());
            }
        }
        for i in 0..n {
            let r = &residual[i * m..(i + 1) * m];
            assert!(r.iter().sum::<f64>().abs() < 1e-7 * scale);
            for j in 1..=c.basis.k(i) {
                let g: f64 = r.iter().zip(c.basis.xi(i, j)).map(|(a, b)| a * b).sum();
                assert!(g.abs() < 1e-7 * scale, "node {i} mode {j}: {g:e}");
            }
        }
        // nodewise projection of u_d onto span{1, xi_i^j} lies in the trial space
        let mut proj = vec![0.0; n * m];
        for i in 0..n {
            let t = reference.trace(i);
            let mu = c.set.expect(t);
            let mut v = vec![mu; m];
            for j in 1..=c.basis.k(i) {
                let x = c.basis.xi(i, j);
                let cij = c.set.inner(t, x);
                for (a, b) in v.iter_mut().zip(x) {
                    *a += cij * b;
                }
            }
            proj[i * m..(i + 1) * m].copy_from_slice(&v);
        }
        let proj = Ensemble::from_node_major(n, &c.set, proj, None).unwrap();
        let eh = energy_error2(&c, &mats, &reference, &approx);
        let ep = energy_error2(&c, &mats, &reference, &proj);
        assert!(eh <= ep * (1.0 + 1e-9) + 1e-30, "{eh:e} > {ep:e}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn solve_is_linear_in_the_forcing(alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let c = case(1, 1.0 / 8.0, CoefficientModel::TrigLognormal1d { m: 2 }, 9, 1e-6);
            let f1 = Forcing::Cubic1d;
            let f2 = Forcing::Constant { value: 1.0 };
            let b1 = f1.load_vector(&c.mesh);
            let b2 = f2.load_vector(&c.mesh);
            let combo: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| alpha * x + beta * y).collect();
            let s1 = solve_coupled(&c.system, &coupled_load(&c.system, &b1).unwrap()).unwrap();
            let s2 = solve_coupled(&c.system, &coupled_load(&c.system, &b2).unwrap()).unwrap();
            let s = solve_coupled(&c.system, &coupled_load(&c.system, &combo).unwrap()).unwrap();
            let scale = s1.coefficients().iter().chain(s2.coefficients()).fold(0.0f64, |m, v| m.max(v.abs()));
            for ((x, y), z) in s1.coefficients().iter().zip(s2.coefficients()).zip(s.coefficients()) {
                prop_assert!((alpha * x + beta * y - z).abs() <= 1e-10 * scale * (1.0 + alpha.abs() + beta.abs()));
            }
        }
    }

    #[test]
    fn mismatched_sample_sets_are_rejected() {
        let c = case(1, 0.25, CoefficientModel::TrigLognormal1d { m: 2 }, 6, 1e-6);
        let other = mc_sample(2, 6, Measure::Uniform, 99).unwrap();
        let sol = solve_online(&c.system, &c.mesh, &Forcing::Cubic1d).unwrap();
        assert!(matches!(sol.materialize(&c.basis, &other), Err(HsfemError::SampleSetMismatch)));
    }
}
