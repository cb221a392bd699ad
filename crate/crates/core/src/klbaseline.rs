//! Discrete Karhunen–Loève expansion of a solution ensemble and its relative
//! truncation error.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::detsolver::Ensemble;
use crate::error::{HsfemError, Result};
use crate::mesh::Mesh;
use crate::rangefinder::fix_sign;
use crate::stochastic::SampleSet;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_CUTOFF: f64 = 1e-12;

/// Eigenvalues below this fraction of the uncentred energy are round-off.
const ROUNDOFF_FLOOR: f64 = 1e-26;

/// Spectrum, retained eigenvalues and modes.
type Spectral = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>);

/// Variances below this make the relative error undefined.
const UNDEFINED_BELOW: f64 = 1e-14;

/// `u(x_i, theta) = mean_i + sum_j sqrt(lambda_j) psi_j(x_i) xi_j(theta)`.
#[derive(Debug, Clone, Serialize)]
pub struct KlDecomposition {
    pub mean: Vec<f64>,
    /// Retained eigenvalues, descending.
    pub lambdas: Vec<f64>,
    /// Interior nodal modes, orthonormal under the P1 mass matrix.
    pub modes: Vec<Vec<f64>>,
    /// Stochastic factors over the samples: mean zero, weighted orthonormal.
    pub factors: Vec<Vec<f64>>,
    /// All eigenvalues of the covariance operator, descending, including
    /// those below the rank cutoff.
    pub spectrum: Vec<f64>,
    /// `sum_p w^p |u_p - mean|^2` in `L2(D)`.
    pub total_variance: f64,
}

impl KlDecomposition {
    pub fn rank(&self) -> usize {
        self.lambdas.len()
    }

    pub fn singular_values(&self) -> Vec<f64> {
        self.lambdas.iter().map(|l| l.sqrt()).collect()
    }

    /// Relative truncation error `sqrt(sum_{j > k} lambda_j / sum_j lambda_j)`.
    pub fn relative_error(&self, k: usize) -> Result<f64> {
        if self.total_variance < UNDEFINED_BELOW {
            return Err(HsfemError::Undefined(format!(
                "ensemble is deterministic (variance norm {:.3e}); KL error undefined",
                self.total_variance
            )));
        }
        let tail: f64 = self.spectrum.iter().skip(k).sum();
        Ok((tail.max(0.0) / self.total_variance).min(1.0).sqrt())
    }

    /// Centred traces of the rank-`k` truncation, node-major.
    pub fn reconstruct_centred(&self, k: usize) -> Vec<f64> {
        let n = self.mean.len();
        let m = self.factors.first().map_or(0, |f| f.len());
        let mut out = vec![0.0; n * m];
        for j in 0..k.min(self.rank()) {
            let s = self.lambdas[j].sqrt();
            for i in 0..n {
                let a = s * self.modes[j][i];
                for (o, x) in out[i * m..(i + 1) * m].iter_mut().zip(&self.factors[j]) {
                    *o += a * x;
                }
            }
        }
        out
    }
}

/// Generalized SVD of the centred trace table under the mass-matrix and
/// sample-weight inner products.
pub fn kl_expand(mesh: &Mesh, set: &SampleSet, ens: &Ensemble) -> Result<KlDecomposition> {
    ens.check_sample_set(set)?;
    let n = ens.n_interior();
    if n != mesh.n_interior() {
        return Err(HsfemError::Dimension {
            what: "ensemble nodes",
            expected: mesh.n_interior(),
            got: n,
        });
    }
    let m = set.len();
    let w = set.weights();
    let mean = ens.mean(set);
    let x = DMatrix::from_fn(n, m, |i, p| ens.trace(i)[p] - mean[i]);
    let mass = mesh.mass_matrix();
    // M X, column by column
    let mx_cols: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|p| mass.matvec(x.column(p).as_slice()))
        .collect();
    let mx = DMatrix::from_fn(n, m, |i, p| mx_cols[p][i]);
    let total_variance: f64 = (0..m)
        .map(|p| w[p] * x.column(p).dot(&mx.column(p)))
        .sum::<f64>()
        .max(0.0);
    let energy: f64 = (0..m)
        .map(|p| {
            let u: Vec<f64> = (0..n).map(|i| ens.trace(i)[p]).collect();
            w[p].abs() * mass.bilinear(&u, &u)
        })
        .sum();
    let floor = ROUNDOFF_FLOOR * energy;

    let positive = w.iter().all(|&v| v > 0.0);
    let (spectrum, lambdas, mut modes) = if positive && m < n {
        sample_route(&x, &mx, w, floor)
    } else {
        node_route(&x, &mass.to_dense(), w, floor)?
    };
    let mut factors = Vec::with_capacity(modes.len());
    for (j, psi) in modes.iter_mut().enumerate() {
        fix_sign(psi);
        let s = lambdas[j].sqrt();
        let mpsi = mass.matvec(psi);
        let xi: Vec<f64> = (0..m).map(|p| x.column(p).iter().zip(&mpsi).map(|(a, b)| a * b).sum::<f64>() / s).collect();
        factors.push(xi);
    }
    Ok(KlDecomposition {
        mean,
        lambdas,
        modes,
        factors,
        spectrum,
        total_variance,
    })
}

/// Full descending spectrum and the indices of retained eigenpairs.
fn descending_retained(eig: &SymmetricEigen<f64, nalgebra::Dyn>, floor: f64) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let spectrum = order.iter().map(|&o| eig.eigenvalues[o]).collect();
    let top = order.first().map_or(0.0, |&o| eig.eigenvalues[o]);
    let cut = (RANK_CUTOFF * top).max(floor);
    (spectrum, order.into_iter().filter(|&o| eig.eigenvalues[o] > cut).collect())
}

/// `n x n` route: eigenpairs of `R X W X^T R^T` with `M = R^T R`; valid for
/// any sign of the weights.
fn node_route(x: &DMatrix<f64>, mass: &[Vec<f64>], w: &[f64], floor: f64) -> Result<Spectral> {
    let n = x.nrows();
    let mm = DMatrix::from_fn(n, n, |i, k| mass[i][k]);
    let chol = mm
        .cholesky()
        .ok_or(HsfemError::NotPositiveDefinite { row: 0, pivot: f64::NAN })?;
    let r = chol.l().transpose();
    let y = &r * x;
    let yw = DMatrix::from_fn(n, x.ncols(), |i, p| y[(i, p)] * w[p]);
    let mut c = &yw * y.transpose();
    c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let (spectrum, keep) = descending_retained(&eig, floor);
    let lambdas = keep.iter().map(|&o| eig.eigenvalues[o]).collect();
    let modes = keep
        .iter()
        .map(|&o| {
            let v = eig.eigenvectors.column(o).into_owned();
            let psi = r.solve_upper_triangular(&v).expect("Cholesky factor is nonsingular");
            psi.as_slice().to_vec()
        })
        .collect();
    Ok((spectrum, lambdas, modes))
}

/// `M x M` route for positive weights: eigenpairs of `D X^T M X D`, `D = W^(1/2)`.
fn sample_route(x: &DMatrix<f64>, mx: &DMatrix<f64>, w: &[f64], floor: f64) -> Spectral {
    let m = x.ncols();
    let d: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let g = x.transpose() * mx;
    let mut c = DMatrix::from_fn(m, m, |a, b| d[a] * g[(a, b)] * d[b]);
    c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let (spectrum, keep) = descending_retained(&eig, floor);
    let lambdas: Vec<f64> = keep.iter().map(|&o| eig.eigenvalues[o]).collect();
    let modes = keep
        .iter()
        .zip(&lambdas)
        .map(|(&o, l)| {
            let z = eig.eigenvectors.column(o);
            let dz = nalgebra::DVector::from_fn(m, |p, _| d[p] * z[p]);
            (x * dz / l.sqrt()).as_slice().to_vec()
        })
        .collect();
    (spectrum, lambdas, modes)
}

/// Relative KL truncation error at a possibly fractional matched rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlError {
    pub k_match: f64,
    pub k_floor: usize,
    pub k_ceil: usize,
    pub floor: f64,
    pub ceil: f64,
}

impl KlError {
    /// Value reported as the baseline: truncation at `floor(k_match)`.
    pub fn headline(&self) -> f64 {
        self.floor
    }
}

pub fn e_kl_of(kl: &KlDecomposition, k_match: f64) -> Result<KlError> {
    if !(k_match >= 0.0) || !k_match.is_finite() {
        return Err(HsfemError::Config(format!("matched rank must be finite and >= 0, got {k_match}")));
    }
    let k_floor = k_match.floor() as usize;
    let k_ceil = k_match.ceil() as usize;
    Ok(KlError {
        k_match,
        k_floor,
        k_ceil,
        floor: kl.relative_error(k_floor)?,
        ceil: kl.relative_error(k_ceil)?,
    })
}

/// `|u - u_k| / |u - mean|` in `L2(D x Omega)` with `k` matched to `k_match`.
pub fn e_kl(mesh: &Mesh, set: &SampleSet, ens: &Ensemble, k_match: f64) -> Result<KlError> {
    e_kl_of(&kl_expand(mesh, set, ens)?, k_match)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::{mc_sample, smolyak, stream_rng, Measure};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn weighted_error2(mesh: &Mesh, set: &SampleSet, a: &[f64], b: &[f64]) -> f64 {
        let m = set.len();
        let n = mesh.n_interior();
        let mass = mesh.mass_matrix();
        (0..m)
            .map(|p| {
                let e: Vec<f64> = (0..n).map(|i| a[i * m + p] - b[i * m + p]).collect();
                set.weights()[p] * mass.bilinear(&e, &e)
            })
            .sum()
    }

    fn random_ensemble(mesh: &Mesh, set: &SampleSet, seed: u64) -> Ensemble {
        let mut rng = stream_rng(seed, 0);
        let v: Vec<f64> = (0..mesh.n_interior() * set.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ensemble::from_node_major(mesh.n_interior(), set, v, None).unwrap()
    }

    fn centred(ens: &Ensemble, set: &SampleSet) -> Vec<f64> {
        let m = set.len();
        let mean = ens.mean(set);
        ens.values().iter().enumerate().map(|(k, v)| v - mean[k / m]).collect()
    }

    #[test]
    fn rank_one_and_deterministic_ensembles() {
        let mesh = Mesh::build_uniform(1, 1.0 / 8.0).unwrap();
        let set = mc_sample(1, 10, Measure::Uniform, 2).unwrap();
        let m = set.len();
        let values: Vec<f64> = (0..7 * m)
            .map(|k| {
                let (i, p) = (k / m, k % m);
                1.0 + (i as f64 + 1.0).sin() * set.point(p)[0]
            })
            .collect();
        let ens = Ensemble::from_node_major(7, &set, values, None).unwrap();
        let kl = kl_expand(&mesh, &set, &ens).unwrap();
        assert_eq!(kl.rank(), 1);
        assert_abs_diff_eq!(kl.relative_error(1).unwrap(), 0.0, epsilon = 1e-7);
        let det = Ensemble::from_node_major(7, &set, vec![2.0; 7 * m], None).unwrap();
        let kl = kl_expand(&mesh, &set, &det).unwrap();
        assert_eq!(kl.rank(), 0);
        assert!(matches!(kl.relative_error(0), Err(HsfemError::Undefined(_))));
    }

    #[test]
    fn both_routes_agree_and_reconstruct() {
        // 6 x 9 table goes through the node route; 15 x 9 through the sample route
        for h in [1.0 / 7.0, 1.0 / 16.0] {
            let mesh = Mesh::build_uniform(1, h).unwrap();
            let set = mc_sample(2, 9, Measure::Uniform, 5).unwrap();
            let ens = random_ensemble(&mesh, &set, 3);
            let kl = kl_expand(&mesh, &set, &ens).unwrap();
            let mass = mesh.mass_matrix();
            for a in 0..kl.rank() {
                assert_abs_diff_eq!(set.expect(&kl.factors[a]), 0.0, epsilon = 1e-8);
                for b in 0..kl.rank() {
                    let e = if a == b { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(mass.bilinear(&kl.modes[a], &kl.modes[b]), e, epsilon = 1e-8);
                    assert_abs_diff_eq!(set.inner(&kl.factors[a], &kl.factors[b]), e, epsilon = 1e-8);
                }
            }
            let c = centred(&ens, &set);
            let full = kl.reconstruct_centred(kl.rank());
            let err = weighted_error2(&mesh, &set, &c, &full);
            assert!(err <= 1e-16 * kl.total_variance, "{err:e}");
            // tail formula equals the directly measured truncation error
            for k in 0..=kl.rank() {
                let direct = (weighted_error2(&mesh, &set, &c, &kl.reconstruct_centred(k)) / kl.total_variance).sqrt();
                assert_abs_diff_eq!(kl.relative_error(k).unwrap(), direct, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn eigenvalues_match_an_svd_of_the_scaled_table() {
        let mesh = Mesh::build_uniform(1, 1.0 / 7.0).unwrap();
        let set = mc_sample(2, 9, Measure::Uniform, 8).unwrap();
        let ens = random_ensemble(&mesh, &set, 4);
        let kl = kl_expand(&mesh, &set, &ens).unwrap();
        // independent oracle: symmetric square root of the mass matrix
        let n = mesh.n_interior();
        let dense = mesh.mass_matrix().to_dense();
        let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, |i, k| dense[i][k]));
        let root = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
            * eig.eigenvectors.transpose();
        let c = centred(&ens, &set);
        let m = set.len();
        let x = DMatrix::from_fn(n, m, |i, p| c[i * m + p] * set.weights()[p].sqrt());
        let mut s: Vec<f64> = (root * x).singular_values().iter().map(|v| v * v).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in kl.lambdas.iter().zip(&s) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10 * s[0]);
        }
    }

    #[test]
    fn matched_rank_endpoints() {
        let mesh = Mesh::build_uniform(1, 1.0 / 8.0).unwrap();
        let set = mc_sample(2, 12, Measure::Uniform, 1).unwrap();
        let ens = random_ensemble(&mesh, &set, 9);
        assert_abs_diff_eq!(e_kl(&mesh, &set, &ens, 0.0).unwrap().headline(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e_kl(&mesh, &set, &ens, 50.0).unwrap().headline(), 0.0, epsilon = 1e-7);
        let e = e_kl(&mesh, &set, &ens, 2.4).unwrap();
        assert_eq!((e.k_floor, e.k_ceil), (2, 3));
        assert!(e.ceil <= e.floor);
        assert!(e_kl(&mesh, &set, &ens, -1.0).is_err());
    }

    #[test]
    fn signed_weights_use_the_node_route() {
        let mesh = Mesh::build_uniform(1, 1.0 / 8.0).unwrap();
        let set = smolyak(2, 3, Measure::Uniform).unwrap();
        let m = set.len();
        let values: Vec<f64> = (0..7 * m)
            .map(|k| {
                let (i, p) = (k / m, k % m);
                let t = set.point(p);
                (i as f64 * 0.3).cos() * t[0] + (i as f64 * 0.7).sin() * t[1] * t[1]
            })
            .collect();
        let ens = Ensemble::from_node_major(7, &set, values, None).unwrap();
        let kl = kl_expand(&mesh, &set, &ens).unwrap();
        assert!(kl.rank() >= 2);
        assert!(kl.relative_error(kl.rank()).unwrap() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn truncation_is_optimal_and_monotone(seed in any::<u64>(), k in 1usize..5) {
            let mesh = Mesh::build_uniform(1, 1.0 / 7.0).unwrap();
            let set = mc_sample(2, 9, Measure::Uniform, seed).unwrap();
            let ens = random_ensemble(&mesh, &set, seed ^ 1);
            let kl = kl_expand(&mesh, &set, &ens).unwrap();
            let mut prev = f64::INFINITY;
            for j in 0..=kl.rank() {
                let e = kl.relative_error(j).unwrap();
                prop_assert!(e <= prev + 1e-14);
                prev = e;
            }
            // a competing rank-k approximation built from other modes is never better
            let c = centred(&ens, &set);
            let best = weighted_error2(&mesh, &set, &c, &kl.reconstruct_centred(k));
            let mut rng = stream_rng(seed, 7);
            let n = mesh.n_interior();
            let m = set.len();
            let mass = mesh.mass_matrix();
            let mut basis: Vec<Vec<f64>> = Vec::new();
            for _ in 0..k {
                let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                for b in &basis {
                    let d = mass.bilinear(&v, b);
                    for (x, y) in v.iter_mut().zip(b) {
                        *x -= d * y;
                    }
                }
                let nv = mass.bilinear(&v, &v).sqrt();
                v.iter_mut().for_each(|x| *x /= nv);
                basis.push(v);
            }
            let mut other = vec![0.0; n * m];
            for p in 0..m {
                let col: Vec<f64> = (0..n).map(|i| c[i * m + p]).collect();
                for b in &basis {
                    let d = mass.bilinear(&col, b);
                    for i in 0..n {
                        other[i * m + p] += d * b[i];
                    }
                }
            }
            let competitor = weighted_error2(&mesh, &set, &c, &other);
            prop_assert!(best <= competitor * (1.0 + 1e-10) + 1e-14);
        }
    }
}
