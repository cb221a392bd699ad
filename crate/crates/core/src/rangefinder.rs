//! Randomized range finders for operators known only through products `A v`.
//!
//! Output vectors live in an inner-product space that is either Euclidean or
//! weighted by sample weights, so the same code handles explicit matrices and
//! functions on a discrete probability space.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HsfemError, Result};
use crate::stochastic::stream_rng;

/// `sqrt(2 / pi)`.
pub const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Default failure-probability base for the a-posteriori bound.
pub const ALPHA: f64 = 10.0;

/// Probe threshold `epsilon / (alpha sqrt(2/pi))` that certifies `||(I - QQ^T) A|| <= epsilon`.
pub fn probe_threshold(epsilon: f64) -> f64 {
    epsilon / (ALPHA * SQRT_2_OVER_PI)
}

pub trait LinearOperator: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;

    /// Apply to several vectors; results keep the input order.
    fn apply_many(&self, vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        vs.par_iter().map(|v| self.apply(v)).collect()
    }
}

/// An explicit row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseOperator {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(HsfemError::Dimension {
                what: "dense operator entries",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(DenseOperator { rows, cols, data })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
        DenseOperator {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

impl LinearOperator for DenseOperator {
    fn input_dim(&self) -> usize {
        self.cols
    }

    fn output_dim(&self) -> usize {
        self.rows
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.cols.max(1))
            .take(self.rows)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Inner product on the output space.
#[derive(Debug, Clone, Copy)]
pub enum InnerProduct<'a> {
    Euclidean,
    /// `<f, g> = sum_p w_p f_p g_p`.
    Weighted(&'a [f64]),
}

impl InnerProduct<'_> {
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        match self {
            InnerProduct::Euclidean => f.iter().zip(g).map(|(a, b)| a * b).sum(),
            InnerProduct::Weighted(w) => w.iter().zip(f).zip(g).map(|((w, a), b)| w * a * b).sum(),
        }
    }

    /// Norm with negative round-off clamped to zero.
    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).max(0.0).sqrt()
    }

    fn nonnegative(&self) -> bool {
        match self {
            InnerProduct::Euclidean => true,
            InnerProduct::Weighted(w) => w.iter().all(|&x| x >= 0.0),
        }
    }

    fn weight(&self, p: usize) -> f64 {
        match self {
            InnerProduct::Euclidean => 1.0,
            InnerProduct::Weighted(w) => w[p],
        }
    }
}

/// `y -= <q, y> q`.
pub fn project_out(ip: &InnerProduct<'_>, q: &[f64], y: &mut [f64]) {
    let c = ip.inner(q, y);
    for (yi, qi) in y.iter_mut().zip(q) {
        *yi -= c * qi;
    }
}

/// Flip `v` so its first entry of significant size is positive.
pub fn fix_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * scale) {
        if *first < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
    }
}

/// `r` standard Gaussian vectors of length `n`, drawn in order from `rng`.
pub fn gaussian_probes<R: Rng>(n: usize, r: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..r)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// `alpha sqrt(2/pi) max_i ||B omega_i||` for the given probes.
pub fn aposteriori_bound_with(
    op: &dyn LinearOperator,
    ip: &InnerProduct<'_>,
    alpha: f64,
    probes: &[Vec<f64>],
) -> f64 {
    let worst = op
        .apply_many(probes)
        .iter()
        .map(|y| ip.norm(y))
        .fold(0.0, f64::max);
    alpha * SQRT_2_OVER_PI * worst
}

/// Bound on `||B||` that holds except with probability `alpha^-r`.
pub fn aposteriori_bound(
    op: &dyn LinearOperator,
    ip: &InnerProduct<'_>,
    r: usize,
    alpha: f64,
    seed: u64,
) -> f64 {
    let probes = gaussian_probes(op.input_dim(), r, &mut stream_rng(seed, 0));
    aposteriori_bound_with(op, ip, alpha, &probes)
}

/// Orthonormal basis of an approximate range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeBasis {
    /// Basis vectors `q^(1..k)` in the output space.
    pub vectors: Vec<Vec<f64>>,
    /// Largest probe residual norm at exit.
    pub residual: f64,
    /// Probe threshold the residuals were tested against.
    pub threshold: f64,
    /// Number of operator applications.
    pub applications: usize,
    /// True when the sketch was exhausted before the probes passed.
    pub saturated: bool,
    /// Singular values of the final sketch, when one was decomposed.
    pub singular_values: Vec<f64>,
    /// Largest probe residual per iteration.
    pub history: Vec<f64>,
}

impl RangeBasis {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    fn empty(threshold: f64, residual: f64, applications: usize) -> Self {
        RangeBasis {
            vectors: Vec::new(),
            residual,
            threshold,
            applications,
            saturated: false,
            singular_values: Vec::new(),
            history: vec![residual],
        }
    }
}

/// Adaptive randomized range finder with a probe-based stopping test.
///
/// Runs until `r` consecutive probe residuals are below
/// `epsilon / (10 sqrt(2/pi))`. Errors once the basis would exceed `cap`
/// vectors (`None` means the input dimension).
pub fn adaptive_range_finder(
    op: &dyn LinearOperator,
    ip: &InnerProduct<'_>,
    epsilon: f64,
    r: usize,
    seed: u64,
    cap: Option<usize>,
) -> Result<RangeBasis> {
    if !(epsilon > 0.0) || r == 0 {
        return Err(HsfemError::Config("range finder needs epsilon > 0 and r >= 1".into()));
    }
    let thr = probe_threshold(epsilon);
    let cap = cap.unwrap_or(op.input_dim());
    let n = op.input_dim();
    let mut rng = stream_rng(seed, 0);
    let probes = gaussian_probes(n, r, &mut rng);
    // y[j..j + r] is the current window of probe residuals
    let mut y: Vec<Vec<f64>> = op.apply_many(&probes);
    let mut applications = r;
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut history = Vec::new();
    let mut j = 0usize;
    loop {
        let worst = y[j..j + r].iter().map(|v| ip.norm(v)).fold(0.0, f64::max);
        history.push(worst);
        if worst <= thr {
            return Ok(RangeBasis {
                vectors: q,
                residual: worst,
                threshold: thr,
                applications,
                saturated: false,
                singular_values: Vec::new(),
                history,
            });
        }
        if q.len() >= cap {
            return Err(HsfemError::IterationCap {
                limit: cap,
                residual: worst,
            });
        }
        let mut v = std::mem::take(&mut y[j]);
        for qk in &q {
            project_out(ip, qk, &mut v);
        }
        let before = ip.norm(&v);
        // a second pass keeps Q orthonormal when cancellation is severe
        for qk in &q {
            project_out(ip, qk, &mut v);
        }
        let norm = ip.norm(&v);
        if !(norm > 0.0) || norm < 1e-14 * before.max(f64::MIN_POSITIVE) {
            return Err(HsfemError::IterationCap {
                limit: q.len(),
                residual: worst,
            });
        }
        for x in &mut v {
            *x /= norm;
        }
        j += 1;
        let probe = gaussian_probes(n, 1, &mut rng).pop().unwrap_or_default();
        let mut fresh = op.apply(&probe);
        applications += 1;
        for qk in q.iter().chain(std::iter::once(&v)) {
            project_out(ip, qk, &mut fresh);
        }
        for yi in &mut y[j..] {
            project_out(ip, &v, yi);
        }
        q.push(v);
        y.push(fresh);
    }
}

/// Left singular vectors and values of the columns `w` under `ip`, keeping
/// only directions with `sigma > 1e-7 sigma_1`.
pub fn weighted_svd(ip: &InnerProduct<'_>, w: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = w.len();
    if k == 0 {
        return (Vec::new(), Vec::new());
    }
    let len = w[0].len();
    if ip.nonnegative() {
        let positive = (0..len).all(|p| ip.weight(p) > 0.0);
        let scaled = DMatrix::from_fn(len, k, |p, c| ip.weight(p).sqrt() * w[c][p]);
        let svd = scaled.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let top = order.first().map(|&i| svd.singular_values[i]).unwrap_or(0.0);
        let mut vecs = Vec::new();
        let mut sigmas = Vec::new();
        for &i in &order {
            let s = svd.singular_values[i];
            if !(s > 1e-7 * top) {
                break;
            }
            // undo the row scaling: the weighted singular vectors are W v / s
            let mut v: Vec<f64> = vec![0.0; len];
            if positive {
                for (p, dst) in v.iter_mut().enumerate() {
                    *dst = u[(p, i)] / ip.weight(p).sqrt();
                }
            } else {
                let vt = svd_right(&scaled, &u, i, s);
                for (c, col) in w.iter().enumerate() {
                    for (dst, x) in v.iter_mut().zip(col) {
                        *dst += vt[c] * x / s;
                    }
                }
            }
            fix_sign(&mut v);
            vecs.push(v);
            sigmas.push(s);
        }
        (vecs, sigmas)
    } else {
        gram_svd(ip, w)
    }
}

/// All singular values of the columns `w` under `ip`, descending. With
/// negative weights they come from the Gram matrix, clamped at zero.
pub fn weighted_singular_values(ip: &InnerProduct<'_>, w: &[Vec<f64>]) -> Vec<f64> {
    let k = w.len();
    if k == 0 {
        return Vec::new();
    }
    let len = w[0].len();
    let mut s: Vec<f64> = if ip.nonnegative() {
        DMatrix::from_fn(len, k, |p, c| ip.weight(p).sqrt() * w[c][p])
            .singular_values()
            .iter()
            .copied()
            .collect()
    } else {
        let c = DMatrix::from_fn(k, k, |a, b| ip.inner(&w[a], &w[b]));
        SymmetricEigen::new(c).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect()
    };
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Right singular vector `v_i = A^T u_i / s`.
fn svd_right(a: &DMatrix<f64>, u: &DMatrix<f64>, i: usize, s: f64) -> Vec<f64> {
    (0..a.ncols())
        .map(|c| (0..a.nrows()).map(|p| a[(p, c)] * u[(p, i)]).sum::<f64>() / s)
        .collect()
}

/// Singular directions through the eigen-decomposition of the Gram matrix
/// `C = W^T G W`, re-orthonormalized by two Gram–Schmidt passes.
pub fn gram_svd(ip: &InnerProduct<'_>, w: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = w.len();
    let mut c = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..=a {
            let v = ip.inner(&w[a], &w[b]);
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
    let (vecs, lambdas) = gram_directions(ip, w, &c, &[]);
    (vecs, lambdas.iter().map(|l| l.sqrt()).collect())
}

/// Directions `W V_j / sqrt(lambda_j)` from the eigenpairs of the Gram matrix
/// `c`, in descending order, keeping `lambda_j > 1e-14 lambda_1`. Each vector
/// is re-orthonormalized against `against` and the previous directions.
pub fn gram_directions(
    ip: &InnerProduct<'_>,
    w: &[Vec<f64>],
    c: &DMatrix<f64>,
    against: &[&[f64]],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = w.len();
    if k == 0 {
        return (Vec::new(), Vec::new());
    }
    let len = w[0].len();
    let eig = SymmetricEigen::new(c.clone());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]];
    let mut vecs: Vec<Vec<f64>> = Vec::new();
    let mut lambdas = Vec::new();
    for &j in &order {
        let lambda = eig.eigenvalues[j];
        if !(top > 0.0) || !(lambda > 1e-14 * top) {
            break;
        }
        let mut v = vec![0.0; len];
        for (p, col) in w.iter().enumerate() {
            let coef = eig.eigenvectors[(p, j)];
            for (dst, x) in v.iter_mut().zip(col) {
                *dst += coef * x;
            }
        }
        let inv = 1.0 / lambda.sqrt();
        for x in &mut v {
            *x *= inv;
        }
        for _ in 0..2 {
            for a in against {
                let s = ip.inner(a, &v) / ip.inner(a, a);
                for (x, ai) in v.iter_mut().zip(a.iter()) {
                    *x -= s * ai;
                }
            }
            for prev in &vecs {
                project_out(ip, prev, &mut v);
            }
        }
        let norm = ip.norm(&v);
        if !(norm > 0.5) {
            // the direction is lost to cancellation; later ones would be worse
            break;
        }
        for x in &mut v {
            *x /= norm;
        }
        fix_sign(&mut v);
        vecs.push(v);
        lambdas.push(lambda);
    }
    (vecs, lambdas)
}

/// Smallest `gamma` such that every probe residual after removing the first
/// `gamma` basis vectors is at most `thr`; `None` if no prefix passes.
/// Also returns the largest residual per prefix length.
pub fn smallest_passing_prefix(
    ip: &InnerProduct<'_>,
    basis: &[Vec<f64>],
    probes: &[Vec<f64>],
    thr: f64,
) -> (Option<usize>, Vec<f64>) {
    let mut res: Vec<Vec<f64>> = probes.to_vec();
    let mut history = Vec::with_capacity(basis.len() + 1);
    let worst = |res: &[Vec<f64>]| res.iter().map(|y| ip.norm(y)).fold(0.0, f64::max);
    let w0 = worst(&res);
    history.push(w0);
    if w0 <= thr {
        return (Some(0), history);
    }
    for (g, u) in basis.iter().enumerate() {
        for y in &mut res {
            project_out(ip, u, y);
        }
        let wg = worst(&res);
        history.push(wg);
        if wg <= thr {
            return (Some(g + 1), history);
        }
    }
    (None, history)
}

/// Growth policy of the SVD range finder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Growth {
    /// Return all sketch directions, flagged as saturated.
    Saturate,
    /// Double the sketch until the probes pass or it would exceed `max_columns`.
    Double { max_columns: usize },
}

/// Range finder that picks the leading left singular vectors of a sketch
/// `W = A Omega` with `K` columns.
pub fn svd_range_finder(
    op: &dyn LinearOperator,
    ip: &InnerProduct<'_>,
    epsilon: f64,
    r: usize,
    k: usize,
    seed: u64,
    growth: Growth,
) -> Result<RangeBasis> {
    if !(epsilon > 0.0) || r == 0 || k == 0 {
        return Err(HsfemError::Config(
            "range finder needs epsilon > 0, r >= 1 and K >= 1".into(),
        ));
    }
    let thr = probe_threshold(epsilon);
    let n = op.input_dim();
    let probes = op.apply_many(&gaussian_probes(n, r, &mut stream_rng(seed, 0)));
    let mut sketch_rng = stream_rng(seed, 1);
    let mut w = op.apply_many(&gaussian_probes(n, k, &mut sketch_rng));
    let mut applications = r + k;
    let mut history = Vec::new();
    loop {
        let (u, sigma) = weighted_svd(ip, &w);
        let (pass, hist) = smallest_passing_prefix(ip, &u, &probes, thr);
        history.push(*hist.last().unwrap_or(&0.0));
        if let Some(g) = pass {
            if g == 0 {
                let mut b = RangeBasis::empty(thr, hist[0], applications);
                b.singular_values = sigma;
                b.history = history;
                return Ok(b);
            }
            return Ok(RangeBasis {
                vectors: u[..g].to_vec(),
                residual: hist[g],
                threshold: thr,
                applications,
                saturated: false,
                singular_values: sigma,
                history,
            });
        }
        match growth {
            Growth::Saturate => {
                return Ok(RangeBasis {
                    residual: *hist.last().unwrap_or(&0.0),
                    vectors: u,
                    threshold: thr,
                    applications,
                    saturated: true,
                    singular_values: sigma,
                    history,
                })
            }
            Growth::Double { max_columns } => {
                let extra = w.len();
                if w.len() + extra > max_columns {
                    return Err(HsfemError::IterationCap {
                        limit: max_columns,
                        residual: *hist.last().unwrap_or(&0.0),
                    });
                }
                w.extend(op.apply_many(&gaussian_probes(n, extra, &mut sketch_rng)));
                applications += extra;
            }
        }
    }
}

/// Spectral norm of `(I - QQ^T) A` for an explicit matrix with the
/// Euclidean inner product.
pub fn residual_norm(a: &DMatrix<f64>, q: &[Vec<f64>]) -> f64 {
    let mut r = a.clone();
    for qk in q {
        let qv = nalgebra::DVector::from_column_slice(qk);
        let proj = &qv * (qv.transpose() * &r);
        r -= proj;
    }
    r.singular_values().iter().fold(0.0, |m: f64, &s| m.max(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn orthonormal(n: usize, k: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        g.qr().q()
    }

    fn with_spectrum(rows: usize, cols: usize, sigma: &[f64], seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let k = sigma.len();
        let u = orthonormal(rows, k, &mut rng);
        let v = orthonormal(cols, k, &mut rng);
        u * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(sigma)) * v.transpose()
    }

    fn gram_defect(ip: &InnerProduct<'_>, q: &[Vec<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..q.len() {
            for b in 0..q.len() {
                let e = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((ip.inner(&q[a], &q[b]) - e).abs());
            }
        }
        worst
    }

    #[test]
    fn zero_operator_gives_empty_bases_and_zero_bound() {
        let op = DenseOperator::new(6, 4, vec![0.0; 24]).unwrap();
        let ip = InnerProduct::Euclidean;
        assert_eq!(aposteriori_bound(&op, &ip, 5, ALPHA, 1), 0.0);
        assert!(adaptive_range_finder(&op, &ip, 1e-3, 5, 1, None).unwrap().is_empty());
        assert!(svd_range_finder(&op, &ip, 1e-3, 5, 4, 1, Growth::Saturate).unwrap().is_empty());
    }

    #[test]
    fn identity_bound_fails_rarely() {
        let eye = DenseOperator::from_matrix(&DMatrix::identity(20, 20));
        let ip = InnerProduct::Euclidean;
        let failures = (0..10_000u64)
            .filter(|&s| aposteriori_bound(&eye, &ip, 5, ALPHA, s) < 1.0)
            .count();
        assert!(failures <= 1, "{failures} failures");
    }

    #[test]
    fn rank_one_bound_reduces_to_first_coordinate() {
        let mut d = DMatrix::zeros(7, 7);
        d[(0, 0)] = 3.0;
        let op = DenseOperator::from_matrix(&d);
        for seed in 0..50 {
            let probes = gaussian_probes(7, 4, &mut stream_rng(seed, 0));
            let expect = ALPHA * SQRT_2_OVER_PI * probes.iter().map(|p| p[0].abs()).fold(0.0, f64::max);
            let bound = aposteriori_bound(&op, &InnerProduct::Euclidean, 4, ALPHA, seed);
            assert_abs_diff_eq!(bound / 3.0, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_rank_three() {
        let a = with_spectrum(60, 40, &[5.0, 2.0, 0.5], 3);
        let op = DenseOperator::from_matrix(&a);
        let ip = InnerProduct::Euclidean;
        let q1 = adaptive_range_finder(&op, &ip, 1e-6, 5, 7, None).unwrap();
        assert_eq!(q1.len(), 3);
        assert!(residual_norm(&a, &q1.vectors) <= 1e-6);
        let q2 = svd_range_finder(&op, &ip, 1e-6, 5, 10, 7, Growth::Saturate).unwrap();
        assert_eq!(q2.len(), 3);
        assert!(!q2.saturated);
        assert!(residual_norm(&a, &q2.vectors) <= 1e-6);
        assert!(gram_defect(&ip, &q1.vectors) < 1e-8);
        assert!(gram_defect(&ip, &q2.vectors) < 1e-8);
    }

    #[test]
    fn exponential_spectrum_size_is_near_optimal() {
        let sigma: Vec<f64> = (1..=40).map(|j| 2f64.powi(-j)).collect();
        let a = with_spectrum(80, 60, &sigma, 11);
        let op = DenseOperator::from_matrix(&a);
        let eps = 1e-3;
        let optimal = sigma.iter().filter(|&&s| s > eps).count();
        let q = adaptive_range_finder(&op, &InnerProduct::Euclidean, eps, 5, 2, None).unwrap();
        assert!(q.len() >= optimal && q.len() <= optimal + 5 + 2, "k = {}", q.len());
        assert!(residual_norm(&a, &q.vectors) <= eps);
    }

    #[test]
    fn saturation_and_growth() {
        let sigma: Vec<f64> = (1..=30).map(|j| 0.8f64.powi(j)).collect();
        let a = with_spectrum(50, 40, &sigma, 5);
        let op = DenseOperator::from_matrix(&a);
        let ip = InnerProduct::Euclidean;
        let sat = svd_range_finder(&op, &ip, 1e-4, 5, 8, 1, Growth::Saturate).unwrap();
        assert!(sat.saturated);
        assert_eq!(sat.len(), 8);
        let grown = svd_range_finder(&op, &ip, 1e-4, 5, 8, 1, Growth::Double { max_columns: 64 }).unwrap();
        assert!(!grown.saturated);
        assert!(grown.applications > 8 + 5);
        assert!(residual_norm(&a, &grown.vectors) <= 1e-4);
        assert!(matches!(
            svd_range_finder(&op, &ip, 1e-4, 5, 8, 1, Growth::Double { max_columns: 16 }),
            Err(HsfemError::IterationCap { .. })
        ));
    }

    #[test]
    fn weighted_inner_product_orthonormality_and_determinism() {
        let weights: Vec<f64> = (0..50).map(|p| 1.0 + (p % 3) as f64).collect();
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let sigma: Vec<f64> = (1..=20).map(|j| 3f64.powi(-j)).collect();
        let a = with_spectrum(50, 30, &sigma, 8);
        let op = DenseOperator::from_matrix(&a);
        let ip = InnerProduct::Weighted(&weights);
        let q = svd_range_finder(&op, &ip, 1e-5, 5, 20, 4, Growth::Saturate).unwrap();
        assert!(gram_defect(&ip, &q.vectors) < 1e-8);
        assert_eq!(q, svd_range_finder(&op, &ip, 1e-5, 5, 20, 4, Growth::Saturate).unwrap());
        let q1 = adaptive_range_finder(&op, &ip, 1e-5, 5, 4, None).unwrap();
        assert!(gram_defect(&ip, &q1.vectors) < 1e-8);
        assert_eq!(q1, adaptive_range_finder(&op, &ip, 1e-5, 5, 4, None).unwrap());
        // the Gram route agrees with the scaled SVD up to sign
        let w: Vec<Vec<f64>> = op.apply_many(&gaussian_probes(30, 10, &mut stream_rng(1, 1)));
        let (u1, s1) = weighted_svd(&ip, &w);
        let (u2, s2) = gram_svd(&ip, &w);
        for j in 0..6 {
            assert!((s1[j] - s2[j]).abs() < 1e-8 * s1[0]);
            assert!((ip.inner(&u1[j], &u2[j]).abs() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn operator_is_linear() {
        let a = with_spectrum(12, 9, &[1.0, 0.5, 0.1], 1);
        let op = DenseOperator::from_matrix(&a);
        let mut rng = stream_rng(3, 0);
        let p = gaussian_probes(9, 2, &mut rng);
        let comb: Vec<f64> = p[0].iter().zip(&p[1]).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let lhs = op.apply(&comb);
        let (a0, a1) = (op.apply(&p[0]), op.apply(&p[1]));
        for i in 0..12 {
            assert_abs_diff_eq!(lhs[i], 2.0 * a0[i] - 0.5 * a1[i], epsilon = 1e-8);
        }
    }
}
