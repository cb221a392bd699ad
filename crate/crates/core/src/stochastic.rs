//! Discrete probability spaces: weighted sample points and expectations.
//!
//! All reductions over samples are plain sequential sums in sample order so
//! that results do not depend on thread count.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HsfemError, Result};

/// Default cap on the number of Smolyak points.
pub const DEFAULT_SMOLYAK_CAP: usize = 200_000;

/// Distribution of each stochastic coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Uniform on `(-1/2, 1/2)`.
    Uniform,
    /// Standard normal.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    MonteCarlo { seed: u64 },
    Smolyak { order: usize },
    Explicit,
}

/// Points `theta^p` (row-major, `m` per sample) with weights `w^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    m: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    measure: Measure,
    generator: Generator,
    fingerprint: String,
}

/// A ChaCha20 stream derived from a base seed; distinct `stream` values give
/// non-overlapping sequences.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Monte Carlo sample set with equal weights `1/M`.
pub fn mc_sample(m: usize, n_samples: usize, measure: Measure, seed: u64) -> Result<SampleSet> {
    if m == 0 || n_samples == 0 {
        return Err(HsfemError::Config(
            "Monte Carlo sampling needs m >= 1 and M >= 1".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let points: Vec<f64> = (0..m * n_samples)
        .map(|_| match measure {
            Measure::Uniform => rng.random::<f64>() - 0.5,
            Measure::Gaussian => rng.sample(StandardNormal),
        })
        .collect();
    let weights = vec![1.0 / n_samples as f64; n_samples];
    SampleSet::new(m, points, weights, measure, Generator::MonteCarlo { seed })
}

/// Gauss rule with `n` points for `measure`, normalized to a probability
/// measure, computed by the Golub–Welsch eigenvalue method.
pub fn gauss_rule(n: usize, measure: Measure) -> (Vec<f64>, Vec<f64>) {
    let beta = |k: usize| -> f64 {
        let k = k as f64;
        match measure {
            // Legendre on (-1, 1), rescaled to (-1/2, 1/2) below
            Measure::Uniform => k / (4.0 * k * k - 1.0).sqrt(),
            Measure::Gaussian => k.sqrt(),
        }
    };
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j {
            beta(j)
        } else if j + 1 == i {
            beta(i)
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // enforce the symmetry of both rules exactly
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        let mirror = n - 1 - k;
        nodes[k] = 0.5 * (pairs[k].0 - pairs[mirror].0);
        weights[k] = 0.5 * (pairs[k].1 + pairs[mirror].1);
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    if measure == Measure::Uniform {
        for x in &mut nodes {
            *x *= 0.5;
        }
    }
    (nodes, weights)
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Visit every multi-index in `{1, 2, ...}^m` with `|i| = total`.
fn for_each_composition(m: usize, total: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(idx: &mut Vec<usize>, m: usize, left: usize, f: &mut dyn FnMut(&[usize])) {
        let slots = m - idx.len();
        if slots == 1 {
            idx.push(left);
            f(idx);
            idx.pop();
            return;
        }
        for first in 1..=(left + 1 - slots) {
            idx.push(first);
            rec(idx, m, left - first, f);
            idx.pop();
        }
    }
    if total >= m {
        rec(&mut Vec::with_capacity(m), m, total, f);
    }
}

/// Smolyak sparse grid of the given order.
///
/// The 1D rule at level `i >= 1` is the `(2i - 1)`-point Gauss rule, so all
/// odd rules share the node 0. The grid combines levels with
/// `q <= |i| <= m + q - 1`, which integrates every polynomial of total
/// degree `<= 2q - 1` exactly. Coincident points (within `1e-12` in every
/// coordinate) are merged and exactly cancelled weights dropped.
pub fn smolyak(m: usize, order: usize, measure: Measure) -> Result<SampleSet> {
    smolyak_capped(m, order, measure, DEFAULT_SMOLYAK_CAP)
}

pub fn smolyak_capped(m: usize, order: usize, measure: Measure, cap: usize) -> Result<SampleSet> {
    if m == 0 || order == 0 {
        return Err(HsfemError::Config("Smolyak grid needs m >= 1 and order >= 1".into()));
    }
    let rules: Vec<(Vec<f64>, Vec<f64>)> =
        (1..=order).map(|i| gauss_rule(2 * i - 1, measure)).collect();
    let top = m + order - 1;
    let lowest = m.max(order);
    let mut merged: BTreeMap<Vec<i64>, (Vec<f64>, f64)> = BTreeMap::new();
    let quantum = 1e-12;
    let mut overflow = false;
    for total in lowest..=top {
        let coeff = if (top - total) % 2 == 0 { 1.0 } else { -1.0 } * binomial(m - 1, top - total);
        if coeff == 0.0 {
            continue;
        }
        for_each_composition(m, total, &mut |levels| {
            if overflow {
                return;
            }
            let sizes: Vec<usize> = levels.iter().map(|&l| rules[l - 1].0.len()).collect();
            let mut digits = vec![0usize; m];
            loop {
                let mut w = coeff;
                let mut point = Vec::with_capacity(m);
                for d in 0..m {
                    let (x, wx) = (&rules[levels[d] - 1].0, &rules[levels[d] - 1].1);
                    point.push(x[digits[d]]);
                    w *= wx[digits[d]];
                }
                let key: Vec<i64> = point.iter().map(|x| (x / quantum).round() as i64).collect();
                merged.entry(key).or_insert_with(|| (point, 0.0)).1 += w;
                if merged.len() > cap {
                    overflow = true;
                    return;
                }
                let mut d = 0;
                while d < m {
                    digits[d] += 1;
                    if digits[d] < sizes[d] {
                        break;
                    }
                    digits[d] = 0;
                    d += 1;
                }
                if d == m {
                    break;
                }
            }
        });
        if overflow {
            return Err(HsfemError::Config(format!(
                "Smolyak grid (m = {m}, order = {order}) exceeds the cap of {cap} points"
            )));
        }
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (_, (p, w)) in merged {
        if w.abs() < 1e-15 {
            continue;
        }
        points.extend(p);
        weights.push(w);
    }
    SampleSet::new(m, points, weights, measure, Generator::Smolyak { order })
}

impl SampleSet {
    pub fn new(
        m: usize,
        points: Vec<f64>,
        weights: Vec<f64>,
        measure: Measure,
        generator: Generator,
    ) -> Result<Self> {
        if points.len() != m * weights.len() {
            return Err(HsfemError::Dimension {
                what: "sample points",
                expected: m * weights.len(),
                got: points.len(),
            });
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(HsfemError::Config(format!("sample weights sum to {total}, not 1")));
        }
        let fingerprint = fingerprint(m, &points, &weights);
        Ok(SampleSet {
            m,
            points,
            weights,
            measure,
            generator,
            fingerprint,
        })
    }

    /// Stochastic dimension.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, p: usize) -> &[f64] {
        &self.points[p * self.m..(p + 1) * self.m]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn generator(&self) -> Generator {
        self.generator
    }

    /// Hex SHA-256 of `m`, points and weights.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn has_negative_weights(&self) -> bool {
        self.weights.iter().any(|&w| w < 0.0)
    }

    pub fn has_equal_weights(&self) -> bool {
        self.weights.iter().all(|&w| w == self.weights[0])
    }

    /// `sum_p w^p f^p`.
    pub fn expect(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// `sum_p w^p f^p g^p`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        debug_assert_eq!(g.len(), self.len());
        self.weights.iter().zip(f).zip(g).map(|((w, a), b)| w * a * b).sum()
    }

    /// Weighted L2 norm, with negative round-off clamped to zero.
    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).max(0.0).sqrt()
    }

    pub fn function(&self, values: Vec<f64>) -> Result<RandomFunction<'_>> {
        RandomFunction::new(self, values)
    }
}

fn fingerprint(m: usize, points: &[f64], weights: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update((m as u64).to_le_bytes());
    for x in points.iter().chain(weights) {
        h.update(x.to_le_bytes());
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A function of the sample index, tied to its sample set.
#[derive(Debug, Clone)]
pub struct RandomFunction<'a> {
    set: &'a SampleSet,
    values: Vec<f64>,
}

impl<'a> RandomFunction<'a> {
    pub fn new(set: &'a SampleSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != set.len() {
            return Err(HsfemError::Dimension {
                what: "random function values",
                expected: set.len(),
                got: values.len(),
            });
        }
        Ok(RandomFunction { set, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_set(&self) -> &'a SampleSet {
        self.set
    }

    pub fn expect(&self) -> f64 {
        self.set.expect(&self.values)
    }

    pub fn inner(&self, other: &RandomFunction<'_>) -> Result<f64> {
        self.same_set(other)?;
        Ok(self.set.inner(&self.values, &other.values))
    }

    pub fn l2norm(&self) -> f64 {
        self.set.norm(&self.values)
    }

    fn same_set(&self, other: &RandomFunction<'_>) -> Result<()> {
        if std::ptr::eq(self.set, other.set) || self.set.fingerprint == other.set.fingerprint {
            Ok(())
        } else {
            Err(HsfemError::SampleSetMismatch)
        }
    }
}
