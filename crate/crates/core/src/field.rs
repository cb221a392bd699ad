//! Random coefficient models, forcing functions and the Fourier dictionary.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{HsfemError, Result};
use crate::mesh::Mesh;
use crate::stochastic::Measure;

const LOG_CLAMP: f64 = 690.0;

/// Coefficient `a(x, theta)` of the diffusion operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientModel {
    /// `log a = sum_i cos(2 pi i x) theta_i`.
    #[serde(rename = "trig_lognormal_1d")]
    TrigLognormal1d { m: usize },
    /// `log a = sum_i (20/m) cos(2 pi i x) theta_i`, so `a` stays in `[e^-10, e^10]`.
    #[serde(rename = "normalized_1d")]
    Normalized1d { m: usize },
    /// `log a = 1 + 1/4 sum_k theta_k (sin(k pi x) + cos((m + 1 - k) pi y))`.
    #[serde(rename = "trig_lognormal_2d")]
    TrigLognormal2d { m: usize },
    /// Quadrant-wise expansion with 12 variables and offsets 0, 1, 2, 3.
    #[serde(rename = "piecewise_2d")]
    Piecewise2d,
    /// `log a = 1/2 sum_i theta_i Psi_i` with orthonormal products
    /// `sqrt2 sin(2 k pi x) sqrt2 cos(2 l pi y)`, ordered by `max(k, l)` then
    /// lexicographically.
    #[serde(rename = "tensor_lognormal_2d")]
    TensorLognormal2d { m: usize },
    /// Deterministic `a = value`; ignores the sample point.
    Constant { value: f64 },
}

impl CoefficientModel {
    /// Stochastic dimension, `None` when any sample set is accepted.
    pub fn m(&self) -> Option<usize> {
        match *self {
            CoefficientModel::TrigLognormal1d { m }
            | CoefficientModel::Normalized1d { m }
            | CoefficientModel::TrigLognormal2d { m }
            | CoefficientModel::TensorLognormal2d { m } => Some(m),
            CoefficientModel::Piecewise2d => Some(12),
            CoefficientModel::Constant { .. } => None,
        }
    }

    /// Spatial dimension, `None` for the constant model.
    pub fn dim(&self) -> Option<usize> {
        match self {
            CoefficientModel::TrigLognormal1d { .. } | CoefficientModel::Normalized1d { .. } => Some(1),
            CoefficientModel::Constant { .. } => None,
            _ => Some(2),
        }
    }

    /// Distribution of the stochastic variables used with this model.
    pub fn natural_measure(&self) -> Measure {
        match self {
            CoefficientModel::TrigLognormal1d { .. } | CoefficientModel::Normalized1d { .. } => {
                Measure::Uniform
            }
            _ => Measure::Gaussian,
        }
    }

    pub fn validate(&self, dim: usize, m: usize) -> Result<()> {
        if let Some(d) = self.dim() {
            if d != dim {
                return Err(HsfemError::Config(format!(
                    "coefficient model is {d}-dimensional but the mesh is {dim}-dimensional"
                )));
            }
        }
        if let Some(mm) = self.m() {
            if mm != m {
                return Err(HsfemError::Config(format!(
                    "coefficient model has m = {mm} but the sample set has m = {m}"
                )));
            }
            if mm == 0 {
                return Err(HsfemError::Config("coefficient model needs m >= 1".into()));
            }
        }
        if let CoefficientModel::TensorLognormal2d { m } = *self {
            if m > tensor_pairs(m).len() {
                return Err(HsfemError::Config(format!("too many tensor modes: {m}")));
            }
        }
        if let CoefficientModel::Constant { value } = *self {
            if !(value > 0.0 && value.is_finite()) {
                return Err(HsfemError::Config(format!("constant coefficient must be positive, got {value}")));
            }
        }
        Ok(())
    }

    /// `log a(x, theta)` before clamping.
    pub fn log_eval(&self, x: &[f64], theta: &[f64]) -> f64 {
        match *self {
            CoefficientModel::TrigLognormal1d { m } => {
                (1..=m).map(|i| (2.0 * PI * i as f64 * x[0]).cos() * theta[i - 1]).sum()
            }
            CoefficientModel::Normalized1d { m } => {
                let s = 20.0 / m as f64;
                (1..=m).map(|i| s * (2.0 * PI * i as f64 * x[0]).cos() * theta[i - 1]).sum()
            }
            CoefficientModel::TrigLognormal2d { m } => {
                let s: f64 = (1..=m)
                    .map(|k| {
                        let kf = k as f64;
                        theta[k - 1]
                            * ((kf * PI * x[0]).sin() + (((m + 1 - k) as f64) * PI * x[1]).cos())
                    })
                    .sum();
                1.0 + 0.25 * s
            }
            CoefficientModel::Piecewise2d => {
                let q = quadrant(x[0], x[1]);
                let offset = q as f64;
                let s: f64 = (1..=3)
                    .map(|j| {
                        let k = 3 * q + j;
                        let jf = j as f64;
                        theta[k - 1]
                            * ((2.0 * jf * PI * x[0]).sin() + (2.0 * (4 - j) as f64 * PI * x[1]).cos())
                    })
                    .sum();
                offset + s
            }
            CoefficientModel::TensorLognormal2d { m } => {
                let s: f64 = tensor_pairs(m)
                    .iter()
                    .take(m)
                    .zip(theta)
                    .map(|(&(k, l), t)| {
                        t * 2.0
                            * (2.0 * PI * k as f64 * x[0]).sin()
                            * (2.0 * PI * l as f64 * x[1]).cos()
                    })
                    .sum();
                0.5 * s
            }
            CoefficientModel::Constant { value } => value.ln(),
        }
    }

    /// `a(x, theta)`, with the exponent clamped to keep `a` within `1e+-300`.
    pub fn eval(&self, x: &[f64], theta: &[f64]) -> f64 {
        if let CoefficientModel::Constant { value } = *self {
            return value;
        }
        let l = self.log_eval(x, theta);
        if l.abs() > LOG_CLAMP {
            log::warn!("coefficient exponent {l:.3e} clamped at x = {x:?}");
        }
        l.clamp(-LOG_CLAMP, LOG_CLAMP).exp()
    }

    /// Coefficient at every element centroid; errors if any value is not
    /// strictly positive and finite.
    pub fn centroid_values(&self, mesh: &Mesh, theta: &[f64], sample: usize) -> Result<Vec<f64>> {
        (0..mesh.n_elements())
            .map(|e| {
                let c = mesh.centroid(e);
                let v = self.eval(&c[..mesh.dim()], theta);
                if v > 0.0 && v.is_finite() {
                    Ok(v)
                } else {
                    Err(HsfemError::NonPositiveCoefficient {
                        element: e,
                        sample,
                        value: v,
                    })
                }
            })
            .collect()
    }
}

/// Quadrant index 0..3 (bottom-left, bottom-right, top-left, top-right);
/// points on the interfaces go to the lower index.
fn quadrant(x: f64, y: f64) -> usize {
    let right = usize::from(x > 0.5);
    let top = usize::from(y > 0.5);
    2 * top + right
}

/// Frequency pairs `(k, l)`, `k, l >= 1`, ordered by `max(k, l)` and then
/// lexicographically, enough to cover `m` modes.
pub fn tensor_pairs(m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut shell = 1;
    while out.len() < m {
        let mut ring: Vec<(usize, usize)> = (1..=shell)
            .flat_map(|k| (1..=shell).map(move |l| (k, l)))
            .filter(|&(k, l)| k.max(l) == shell)
            .collect();
        ring.sort();
        out.extend(ring);
        shell += 1;
    }
    out
}

/// Orthonormal Fourier modes on `(0, 1)^dim` with frequencies up to `l`.
///
/// In 1D the modes are `1, sqrt2 sin(2 pi k x), sqrt2 cos(2 pi k x)` for
/// `k = 1..l`; in 2D all products `Phi_a(x) Phi_b(y)` with `q = b (2l+1) + a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierDict {
    dim: usize,
    l: usize,
}

impl FourierDict {
    pub fn new(dim: usize, l: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(HsfemError::Config(format!("Fourier dictionary needs dim 1 or 2, got {dim}")));
        }
        Ok(FourierDict { dim, l })
    }

    /// The dictionary resolved by `mesh`, `l = 1/(2h)` rounded down.
    pub fn for_mesh(mesh: &Mesh) -> Self {
        FourierDict {
            dim: mesh.dim(),
            l: mesh.cells() / 2,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn l(&self) -> usize {
        self.l
    }

    fn n1(&self) -> usize {
        2 * self.l + 1
    }

    /// Number of modes `N = (2l + 1)^dim`.
    pub fn len(&self) -> usize {
        self.n1().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Values of all 1D modes at `t`.
    pub fn modes_1d(&self, t: f64, out: &mut [f64]) {
        out[0] = 1.0;
        for k in 1..=self.l {
            let (s, c) = (2.0 * PI * k as f64 * t).sin_cos();
            out[2 * k - 1] = SQRT_2 * s;
            out[2 * k] = SQRT_2 * c;
        }
    }

    /// Values of all modes at `x`, written into `out` (length `len()`).
    pub fn eval_all(&self, x: &[f64], out: &mut [f64]) {
        let n1 = self.n1();
        if self.dim == 1 {
            self.modes_1d(x[0], out);
            return;
        }
        let mut fx = vec![0.0; n1];
        let mut fy = vec![0.0; n1];
        self.modes_1d(x[0], &mut fx);
        self.modes_1d(x[1], &mut fy);
        for b in 0..n1 {
            for a in 0..n1 {
                out[b * n1 + a] = fx[a] * fy[b];
            }
        }
    }

    pub fn mode(&self, q: usize, x: &[f64]) -> f64 {
        let mut out = vec![0.0; self.len()];
        self.eval_all(x, &mut out);
        out[q]
    }

    /// Dense `n_interior x N` matrix `L(i, q) = int phi_i Phi_q`, row-major.
    ///
    /// The load vector of the forcing `sum_q v_q Phi_q` is `L v`.
    pub fn load_matrix(&self, mesh: &Mesh) -> Vec<f64> {
        let n = self.len();
        let mut l = vec![0.0; mesh.n_interior() * n];
        let mut vals = vec![0.0; n];
        for e in 0..mesh.n_elements() {
            let verts = mesh.element(e);
            for (x, bary, w) in mesh.quadrature(e) {
                self.eval_all(&x[..mesh.dim()], &mut vals);
                for (a, &k) in verts.iter().enumerate() {
                    if let Some(row) = mesh.unknown(k) {
                        let s = w * bary[a];
                        for (dst, v) in l[row * n..(row + 1) * n].iter_mut().zip(&vals) {
                            *dst += s * v;
                        }
                    }
                }
            }
        }
        l
    }
}

/// Right-hand side `f(x)` of the elliptic problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Forcing {
    /// `f = value`.
    Constant { value: f64 },
    /// `f(x) = 1 - x + x^2 - x^3`.
    #[serde(rename = "cubic_1d")]
    Cubic1d,
    /// `f(x, y) = 1 + x - 2y`.
    #[serde(rename = "linear_2d")]
    Linear2d,
    /// `f = sum_q coefficients[q] Phi_q`.
    Fourier { dict: FourierDict, coefficients: Vec<f64> },
}

impl Forcing {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Forcing::Constant { value } => *value,
            Forcing::Cubic1d => {
                let t = x[0];
                1.0 - t + t * t - t * t * t
            }
            Forcing::Linear2d => 1.0 + x[0] - 2.0 * x[1],
            Forcing::Fourier { dict, coefficients } => {
                let mut vals = vec![0.0; dict.len()];
                dict.eval_all(x, &mut vals);
                vals.iter().zip(coefficients).map(|(a, b)| a * b).sum()
            }
        }
    }

    /// Dimension the forcing is defined for, `None` if dimension-free.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Forcing::Constant { .. } => None,
            Forcing::Cubic1d => Some(1),
            Forcing::Linear2d => Some(2),
            Forcing::Fourier { dict, .. } => Some(dict.dim()),
        }
    }

    /// Named presets: `cubic_1d`, `linear_2d`, `zero`, `one`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "cubic_1d" => Ok(Forcing::Cubic1d),
            "linear_2d" => Ok(Forcing::Linear2d),
            "zero" => Ok(Forcing::Constant { value: 0.0 }),
            "one" => Ok(Forcing::Constant { value: 1.0 }),
            _ => Err(HsfemError::Config(format!("unknown forcing preset '{name}'"))),
        }
    }

    /// Load vector `int phi_i f` over the interior unknowns of `mesh`.
    pub fn load_vector(&self, mesh: &Mesh) -> Vec<f64> {
        mesh.load_vector(|x| self.eval(x))
    }
}

/// The forcing `sum_q v_q Phi_q`.
pub fn forcing_from_vector(dict: &FourierDict, v: &[f64]) -> Result<Forcing> {
    if v.len() != dict.len() {
        return Err(HsfemError::Dimension {
            what: "Fourier coefficient vector",
            expected: dict.len(),
            got: v.len(),
        });
    }
    Ok(Forcing::Fourier {
        dict: *dict,
        coefficients: v.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::{mc_sample, stream_rng};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    /// Tensor Gauss–Legendre rule on the unit square with `n` points per direction
    /// and `cells` sub-intervals; exact for trigonometric modes of low frequency.
    fn fine_quadrature(dim: usize, cells: usize) -> Vec<(Vec<f64>, f64)> {
        let (x, w) = crate::stochastic::gauss_rule(8, Measure::Uniform);
        let pts: Vec<(f64, f64)> = (0..cells)
            .flat_map(|c| {
                x.iter()
                    .zip(&w)
                    .map(move |(t, wt)| ((c as f64 + t + 0.5) / cells as f64, wt / cells as f64))
            })
            .collect();
        if dim == 1 {
            pts.iter().map(|&(t, w)| (vec![t], w)).collect()
        } else {
            pts.iter()
                .flat_map(|&(s, ws)| pts.iter().map(move |&(t, wt)| (vec![s, t], ws * wt)))
                .collect()
        }
    }

    #[test]
    fn dictionary_is_orthonormal() {
        for (dim, l) in [(1, 6), (2, 2)] {
            let d = FourierDict::new(dim, l).unwrap();
            assert_eq!(d.len(), (2 * l + 1).pow(dim as u32));
            let quad = fine_quadrature(dim, 16);
            let n = d.len();
            let mut gram = vec![0.0; n * n];
            let mut v = vec![0.0; n];
            for (x, w) in &quad {
                d.eval_all(x, &mut v);
                for a in 0..n {
                    for b in 0..n {
                        gram[a * n + b] += w * v[a] * v[b];
                    }
                }
            }
            for a in 0..n {
                for b in 0..n {
                    let e = if a == b { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(gram[a * n + b], e, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn first_mode_is_constant_and_zero_vector_is_zero() {
        let d = FourierDict::new(2, 3).unwrap();
        let mut e1 = vec![0.0; d.len()];
        e1[0] = 1.0;
        let f = forcing_from_vector(&d, &e1).unwrap();
        assert_abs_diff_eq!(f.eval(&[0.3, 0.9]), 1.0, epsilon = 1e-15);
        let z = forcing_from_vector(&d, &vec![0.0; d.len()]).unwrap();
        assert_eq!(z.eval(&[0.1, 0.2]), 0.0);
        assert!(forcing_from_vector(&d, &[1.0]).is_err());
    }

    #[test]
    fn dictionary_tied_to_mesh() {
        let m = Mesh::build_uniform(1, 1.0 / 256.0).unwrap();
        assert_eq!(FourierDict::for_mesh(&m).l(), 128);
        let m = Mesh::build_uniform(2, 1.0 / 64.0).unwrap();
        assert_eq!(FourierDict::for_mesh(&m).len(), 65 * 65);
    }

    #[test]
    fn load_matrix_matches_direct_load_vector() {
        let mesh = Mesh::build_uniform(2, 0.25).unwrap();
        let d = FourierDict::for_mesh(&mesh);
        let l = d.load_matrix(&mesh);
        let v: Vec<f64> = (0..d.len()).map(|q| (q as f64 * 0.7).cos()).collect();
        let f = forcing_from_vector(&d, &v).unwrap();
        let direct = f.load_vector(&mesh);
        for (i, b) in direct.iter().enumerate() {
            let lv: f64 = l[i * d.len()..(i + 1) * d.len()].iter().zip(&v).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(lv, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn coefficient_examples() {
        let m = CoefficientModel::TrigLognormal1d { m: 5 };
        assert_abs_diff_eq!(m.eval(&[0.37], &[0.0; 5]), 1.0);
        let p = CoefficientModel::Piecewise2d;
        let theta = [0.0; 12];
        assert_abs_diff_eq!(p.eval(&[0.75, 0.75], &theta), 3f64.exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(p.eval(&[0.25, 0.25], &theta), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.eval(&[0.75, 0.25], &theta), 1f64.exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(p.eval(&[0.25, 0.75], &theta), 2f64.exp(), epsilon = 1e-12);
        // interfaces belong to the lower-indexed quadrant
        assert_abs_diff_eq!(p.eval(&[0.5, 0.5], &theta), 1.0, epsilon = 1e-12);
        let g = CoefficientModel::TrigLognormal2d { m: 12 };
        assert_abs_diff_eq!(g.eval(&[0.2, 0.3], &theta), 1f64.exp(), epsilon = 1e-12);
        assert_eq!(CoefficientModel::Constant { value: 2.5 }.eval(&[0.1], &[]), 2.5);
    }

    #[test]
    fn extreme_exponents_are_clamped() {
        let m = CoefficientModel::TrigLognormal1d { m: 1 };
        let a = m.eval(&[0.0], &[1e6]);
        assert!(a.is_finite() && a > 0.0);
        let a = m.eval(&[0.0], &[-1e6]);
        assert!(a > 0.0);
    }

    #[test]
    fn tensor_pairs_are_shell_ordered() {
        assert_eq!(tensor_pairs(4), vec![(1, 1), (1, 2), (2, 1), (2, 2)]);
        let all = tensor_pairs(36);
        assert_eq!(all.len(), 36);
        assert_eq!(*all.last().unwrap(), (6, 6));
    }

    #[test]
    fn preset_models_are_positive_at_centroids() {
        let cases = [
            (CoefficientModel::TrigLognormal1d { m: 20 }, 1),
            (CoefficientModel::Normalized1d { m: 30 }, 1),
            (CoefficientModel::TrigLognormal2d { m: 12 }, 2),
            (CoefficientModel::Piecewise2d, 2),
            (CoefficientModel::TensorLognormal2d { m: 36 }, 2),
        ];
        for (model, dim) in cases {
            let m = model.m().unwrap();
            let mesh = Mesh::build_uniform(dim, 1.0 / 8.0).unwrap();
            let s = mc_sample(m, 20, model.natural_measure(), 3).unwrap();
            for p in 0..s.len() {
                let vals = model.centroid_values(&mesh, s.point(p), p).unwrap();
                assert!(vals.iter().all(|&v| v > 0.0));
            }
        }
    }

    proptest! {
        #[test]
        fn normalized_model_stays_in_band(m in 1usize..40, seed in any::<u64>(), x in 0.0f64..1.0) {
            let model = CoefficientModel::Normalized1d { m };
            let s = mc_sample(m, 1, Measure::Uniform, seed).unwrap();
            let a = model.eval(&[x], s.point(0));
            prop_assert!(a >= (-10.0f64).exp() * (1.0 - 1e-12) && a <= 10f64.exp() * (1.0 + 1e-12));
        }

        #[test]
        fn fourier_forcing_is_an_isometry(seed in any::<u64>()) {
            let d = FourierDict::new(2, 2).unwrap();
            let mut rng = stream_rng(seed, 0);
            let v: Vec<f64> = (0..d.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let f = forcing_from_vector(&d, &v).unwrap();
            let quad = fine_quadrature(2, 8);
            let norm2: f64 = quad.iter().map(|(x, w)| w * f.eval(x).powi(2)).sum();
            let v2: f64 = v.iter().map(|a| a * a).sum();
            prop_assert!((norm2.sqrt() - v2.sqrt()).abs() < 1e-8 * (1.0 + v2.sqrt()));
        }
    }
}
