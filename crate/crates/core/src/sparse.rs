//! Sparse symmetric storage and an envelope (skyline) Cholesky factorization.
//!
//! Matrices here are small-bandwidth SPD systems from P1 assembly, so a
//! profile factorization without reordering keeps fill confined to the
//! envelope of each row.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{HsfemError, Result};

/// Accumulates `(row, col, value)` entries; duplicates are summed.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    n: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder {
            n,
            entries: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        *self.entries.entry((row, col)).or_insert(0.0) += value;
    }

    pub fn build(self) -> CsrMatrix {
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals = Vec::with_capacity(self.entries.len());
        for (&(r, c), &v) in &self.entries {
            row_ptr[r + 1] += 1;
            cols.push(c);
            vals.push(v);
        }
        for r in 0..self.n {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }
}

/// Square matrix in compressed sparse row form with both triangles stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Build from CSR arrays; columns within each row must be sorted.
    pub fn from_raw(n: usize, row_ptr: Vec<usize>, cols: Vec<usize>, vals: Vec<f64>) -> Result<Self> {
        let ok = row_ptr.len() == n + 1
            && row_ptr[n] == cols.len()
            && cols.len() == vals.len()
            && (0..n).all(|r| {
                row_ptr[r] <= row_ptr[r + 1]
                    && cols[row_ptr[r]..row_ptr[r + 1]].windows(2).all(|w| w[0] < w[1])
                    && cols[row_ptr[r]..row_ptr[r + 1]].iter().all(|&c| c < n)
            });
        if !ok {
            return Err(HsfemError::Artifact("malformed sparse matrix".into()));
        }
        Ok(CsrMatrix { n, row_ptr, cols, vals })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()].iter().copied().zip(self.vals[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[range.clone()].binary_search(&c) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    /// Mutable values in the fixed sparsity pattern.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    /// Position of `(r, c)` in the value array, if it is in the pattern.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()].binary_search(&c).ok().map(|k| range.start + k)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n)
            .map(|r| x[r] * self.row(r).map(|(c, v)| v * y[c]).sum::<f64>())
            .sum()
    }

    /// Largest `|A(r,c) - A(c,r)|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst / scale
    }

    /// Coordinate triplets `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut t = TripletBuilder::new(n);
        for &(r, c, v) in triplets {
            t.add(r, c, v);
        }
        t.build()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        d
    }
}

/// Lower-triangular envelope layout shared by all matrices with one pattern.
#[derive(Debug, Clone)]
pub struct Envelope {
    first: Vec<usize>,
    start: Vec<usize>,
    /// For every CSR entry in the lower triangle, its envelope slot.
    scatter: Vec<Option<usize>>,
}

impl Envelope {
    pub fn of(a: &CsrMatrix) -> Self {
        let n = a.dim();
        let mut first = vec![0usize; n];
        for (r, f) in first.iter_mut().enumerate() {
            *f = a.row(r).map(|(c, _)| c).filter(|&c| c <= r).min().unwrap_or(r);
        }
        let mut start = vec![0usize; n + 1];
        for r in 0..n {
            start[r + 1] = start[r] + (r - first[r] + 1);
        }
        let mut scatter = Vec::with_capacity(a.nnz());
        for r in 0..n {
            for (c, _) in a.row(r) {
                scatter.push((c <= r).then(|| start[r] + (c - first[r])));
            }
        }
        Envelope {
            first,
            start,
            scatter,
        }
    }

    pub fn size(&self) -> usize {
        *self.start.last().unwrap_or(&0)
    }

    /// Cholesky factor of a matrix with this envelope's pattern.
    pub fn factor(&self, a: &CsrMatrix) -> Result<SkylineCholesky> {
        let n = self.first.len();
        let mut l = vec![0.0; self.size()];
        for (slot, &v) in self.scatter.iter().zip(a.values()) {
            if let Some(s) = slot {
                l[*s] += v;
            }
        }
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let mut s = l[si + (j - fi)];
                let ri = &l[si + (k0 - fi)..si + (j - fi)];
                let rj = &l[sj + (k0 - fj)..sj + (j - fj)];
                s -= ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>();
                l[si + (j - fi)] = s / l[sj + (j - fj)];
            }
            let diag = si + (i - fi);
            let d = l[diag] - l[si..diag].iter().map(|x| x * x).sum::<f64>();
            if !(d > 0.0) || !d.is_finite() {
                return Err(HsfemError::NotPositiveDefinite { row: i, pivot: d });
            }
            l[diag] = d.sqrt();
        }
        Ok(SkylineCholesky {
            first: self.first.clone(),
            start: self.start.clone(),
            l,
        })
    }
}

/// `A = L L^T` with `L` stored row-wise over each row's envelope.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    first: Vec<usize>,
    start: Vec<usize>,
    l: Vec<f64>,
}

impl SkylineCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        Envelope::of(a).factor(a)
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            let diag = si + (i - fi);
            let s: f64 = self.l[si..diag].iter().zip(&x[fi..i]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / self.l[diag];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            let diag = si + (i - fi);
            x[i] /= self.l[diag];
            let xi = x[i];
            for (k, lv) in self.l[si..diag].iter().enumerate() {
                x[fi + k] -= lv * xi;
            }
        }
    }

    /// Solve `A x = b`, refining until the relative residual is below `tol`.
    pub fn solve_refined(&self, a: &CsrMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        let bnorm = norm2(b);
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut res = 0.0;
        for _ in 0..4 {
            let ax = a.matvec(&x);
            let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            res = norm2(&r) / bnorm;
            if res <= tol {
                return Ok(x);
            }
            self.solve_in_place(&mut r);
            for (xi, di) in x.iter_mut().zip(&r) {
                *xi += di;
            }
        }
        Err(HsfemError::SolveTolerance {
            residual: res,
            tolerance: tol,
        })
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
