//! Offline stage: local stochastic bases from sampled solution traces, and
//! the coupled Galerkin stiffness matrix.

use nalgebra::DMatrix;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detsolver::{StiffnessAssembler, SOLVE_TOLERANCE};
use crate::error::{HsfemError, Result};
use crate::field::{CoefficientModel, FourierDict};
use crate::mesh::Mesh;
use crate::rangefinder::{
    gaussian_probes, gram_directions, probe_threshold, smallest_passing_prefix, weighted_singular_values,
    InnerProduct, ALPHA, SQRT_2_OVER_PI,
};
use crate::sparse::{CsrMatrix, Envelope, SkylineCholesky};
use crate::stochastic::{stream_rng, SampleSet};

/// Samples solved together before their traces are scattered node-major.
const SAMPLE_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineParams {
    /// Sketch size `K`.
    pub k: usize,
    /// Number of probe forcings `r`.
    pub r: usize,
    /// Target operator-norm accuracy; probes are tested against
    /// `epsilon / (10 sqrt(2/pi))`.
    pub epsilon: f64,
    pub seed: u64,
    /// Double the sketch while some node fails the probe test.
    #[serde(default)]
    pub allow_growth: bool,
    /// Largest sketch reachable by growth; defaults to `8 K`.
    #[serde(default)]
    pub max_sketch: Option<usize>,
    /// Mesh size used for the sampling solves, if coarser than the fine mesh.
    #[serde(default)]
    pub coarse_h: Option<f64>,
}

impl OfflineParams {
    /// Parameters given the probe tolerance `epsilon / (10 sqrt(2/pi))` directly.
    pub fn with_probe_tolerance(k: usize, r: usize, tolerance: f64, seed: u64) -> Self {
        OfflineParams {
            k,
            r,
            epsilon: tolerance * ALPHA * SQRT_2_OVER_PI,
            seed,
            allow_growth: false,
            max_sketch: None,
            coarse_h: None,
        }
    }

    pub fn probe_tolerance(&self) -> f64 {
        probe_threshold(self.epsilon)
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.r == 0 || !(self.epsilon > 0.0) {
            return Err(HsfemError::Config(
                "offline stage needs K >= 1, r >= 1 and epsilon > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Solves sampled forcings on the sampling mesh and restricts the solutions
/// to interior nodes of the fine mesh.
struct Sampler<'a> {
    sampling: Mesh,
    model: &'a CoefficientModel,
    set: &'a SampleSet,
    asm: StiffnessAssembler,
    dict: FourierDict,
    load: Vec<f64>,
    restriction: Vec<Vec<(usize, f64)>>,
}

impl<'a> Sampler<'a> {
    fn new(
        fine: &Mesh,
        model: &'a CoefficientModel,
        set: &'a SampleSet,
        coarse_h: Option<f64>,
        nodes: Option<&[usize]>,
    ) -> Result<Self> {
        model.validate(fine.dim(), set.m())?;
        let sampling = match coarse_h {
            Some(h) => Mesh::build_uniform(fine.dim(), h)?,
            None => fine.clone(),
        };
        let dict = FourierDict::for_mesh(&sampling);
        let load = dict.load_matrix(&sampling);
        let mut restriction = sampling.restriction_to(fine);
        if let Some(sel) = nodes {
            restriction = sel.iter().map(|&i| restriction[i].clone()).collect();
        }
        Ok(Sampler {
            asm: StiffnessAssembler::new(&sampling),
            sampling,
            model,
            set,
            dict,
            load,
            restriction,
        })
    }

    /// Load vector of the forcing with Fourier coefficients `v`.
    fn load_of(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dict.len();
        self.load
            .chunks(n)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Mean-removed traces `[node][forcing][sample]` for the given forcings.
    fn traces(&self, forcings: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>> {
        let loads: Vec<Vec<f64>> = forcings.par_iter().map(|v| self.load_of(v)).collect();
        let n_out = self.restriction.len();
        let ncol = loads.len();
        let mm = self.set.len();
        let mut out = vec![vec![vec![0.0; mm]; ncol]; n_out];
        let mut start = 0;
        while start < mm {
            let end = (start + SAMPLE_CHUNK).min(mm);
            let block: Vec<Vec<f64>> = (start..end)
                .into_par_iter()
                .map(|p| self.solve_sample(p, &loads))
                .collect::<Result<_>>()?;
            for (off, sol) in block.iter().enumerate() {
                let p = start + off;
                for (i, node) in out.iter_mut().enumerate() {
                    for (c, col) in node.iter_mut().enumerate() {
                        col[p] = sol[i * ncol + c];
                    }
                }
            }
            start = end;
        }
        let set = self.set;
        out.par_iter_mut().for_each(|node| {
            for col in node.iter_mut() {
                let mean = set.expect(col);
                for x in col.iter_mut() {
                    *x -= mean;
                }
            }
        });
        Ok(out)
    }

    /// Restricted solutions for sample `p`, laid out `[node * ncol + forcing]`.
    fn solve_sample(&self, p: usize, loads: &[Vec<f64>]) -> Result<Vec<f64>> {
        let (a, chol) = self.asm.factor_sample(&self.sampling, self.model, self.set, p)?;
        let ncol = loads.len();
        let mut out = vec![0.0; self.restriction.len() * ncol];
        for (c, b) in loads.iter().enumerate() {
            let u = chol.solve_refined(&a, b, SOLVE_TOLERANCE).map_err(|e| HsfemError::Sample {
                sample: p,
                source: Box::new(e),
            })?;
            for (i, weights) in self.restriction.iter().enumerate() {
                let mut v = 0.0;
                for &(k, w) in weights {
                    v += w * u[k];
                }
                out[i * ncol + c] = v;
            }
        }
        Ok(out)
    }
}

/// Per-node orthonormal, mean-zero stochastic functions `xi_i^j`, `j = 1..k_i`;
/// the constant `xi_i^0 = 1` is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBasis {
    n_samples: usize,
    k: Vec<usize>,
    /// Index of the first vector of each node; `offsets[n]` is the total.
    offsets: Vec<usize>,
    /// Vector `v` occupies `data[v * M..(v + 1) * M]`.
    data: Vec<f64>,
    saturated: Vec<bool>,
    probe_residual: Vec<f64>,
    eigenvalues: Vec<Vec<f64>>,
    sketch_columns: usize,
    params: OfflineParams,
    sample_fingerprint: String,
}

/// Metadata of a [`LocalBasis`] without the vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisHeader {
    pub n_samples: usize,
    pub k: Vec<usize>,
    pub saturated: Vec<bool>,
    pub probe_residual: Vec<f64>,
    pub eigenvalues: Vec<Vec<f64>>,
    pub sketch_columns: usize,
    pub params: OfflineParams,
    pub sample_fingerprint: String,
}

impl LocalBasis {
    pub fn from_parts(header: BasisHeader, data: Vec<f64>) -> Result<Self> {
        let n = header.k.len();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for &k in &header.k {
            offsets.push(offsets.last().unwrap() + k);
        }
        let total = offsets[n] * header.n_samples;
        if data.len() != total || header.saturated.len() != n || header.probe_residual.len() != n {
            return Err(HsfemError::Artifact("local basis tables do not match k_i".into()));
        }
        Ok(LocalBasis {
            n_samples: header.n_samples,
            k: header.k,
            offsets,
            data,
            saturated: header.saturated,
            probe_residual: header.probe_residual,
            eigenvalues: header.eigenvalues,
            sketch_columns: header.sketch_columns,
            params: header.params,
            sample_fingerprint: header.sample_fingerprint,
        })
    }

    pub fn header(&self) -> BasisHeader {
        BasisHeader {
            n_samples: self.n_samples,
            k: self.k.clone(),
            saturated: self.saturated.clone(),
            probe_residual: self.probe_residual.clone(),
            eigenvalues: self.eigenvalues.clone(),
            sketch_columns: self.sketch_columns,
            params: self.params.clone(),
            sample_fingerprint: self.sample_fingerprint.clone(),
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn n_nodes(&self) -> usize {
        self.k.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn k(&self, i: usize) -> usize {
        self.k[i]
    }

    pub fn ks(&self) -> &[usize] {
        &self.k
    }

    /// `xi_i^j` for `1 <= j <= k_i`.
    pub fn xi(&self, i: usize, j: usize) -> &[f64] {
        assert!(j >= 1 && j <= self.k[i], "basis index {j} out of range at node {i}");
        let v = self.offsets[i] + j - 1;
        &self.data[v * self.n_samples..(v + 1) * self.n_samples]
    }

    pub fn is_saturated(&self, i: usize) -> bool {
        self.saturated[i]
    }

    pub fn saturated_count(&self) -> usize {
        self.saturated.iter().filter(|&&s| s).count()
    }

    /// Largest probe residual at node `i` after projection onto its basis.
    pub fn probe_residual(&self, i: usize) -> f64 {
        self.probe_residual[i]
    }

    /// Retained Gram eigenvalues at node `i`, descending.
    pub fn eigenvalues(&self, i: usize) -> &[f64] {
        &self.eigenvalues[i]
    }

    pub fn sketch_columns(&self) -> usize {
        self.sketch_columns
    }

    pub fn params(&self) -> &OfflineParams {
        &self.params
    }

    pub fn sample_fingerprint(&self) -> &str {
        &self.sample_fingerprint
    }

    /// Average `k = (1/n) sum_i k_i`.
    pub fn average_k(&self) -> f64 {
        if self.k.is_empty() {
            return 0.0;
        }
        self.k.iter().sum::<usize>() as f64 / self.k.len() as f64
    }

    pub fn max_k(&self) -> usize {
        self.k.iter().copied().max().unwrap_or(0)
    }

    /// Size of the coupled system, `S = sum_i (k_i + 1)`.
    pub fn total_size(&self) -> usize {
        self.k.iter().map(|k| k + 1).sum()
    }

    /// Largest deviation from mean zero and from orthonormality over all nodes.
    pub fn invariant_defects(&self, set: &SampleSet) -> (f64, f64) {
        (0..self.n_nodes())
            .into_par_iter()
            .map(|i| {
                let mut mean = 0.0f64;
                let mut ortho = 0.0f64;
                for a in 1..=self.k[i] {
                    mean = mean.max(set.expect(self.xi(i, a)).abs());
                    for b in 1..=a {
                        let e = if a == b { 1.0 } else { 0.0 };
                        ortho = ortho.max((set.inner(self.xi(i, a), self.xi(i, b)) - e).abs());
                    }
                }
                (mean, ortho)
            })
            .reduce(|| (0.0, 0.0), |x, y| (x.0.max(y.0), x.1.max(y.1)))
    }
}

struct NodeBasis {
    xi: Vec<Vec<f64>>,
    lambdas: Vec<f64>,
    residual: f64,
    saturated: bool,
}

fn node_basis(ip: &InnerProduct<'_>, probes: &[Vec<f64>], sketch: &[Vec<f64>], thr: f64) -> NodeBasis {
    let k = sketch.len();
    let mut c = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..=a {
            let v = ip.inner(&sketch[a], &sketch[b]);
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
    let ones = vec![1.0; sketch.first().map_or(0, |v| v.len())];
    let (mut xi, mut lambdas) = gram_directions(ip, sketch, &c, &[&ones]);
    let (pass, hist) = smallest_passing_prefix(ip, &xi, probes, thr);
    match pass {
        Some(g) => {
            xi.truncate(g);
            lambdas.truncate(g);
            NodeBasis {
                xi,
                lambdas,
                residual: hist[g],
                saturated: false,
            }
        }
        None => NodeBasis {
            xi,
            lambdas,
            residual: *hist.last().unwrap_or(&0.0),
            saturated: true,
        },
    }
}

/// Build the local stochastic basis at every interior node of `mesh`.
///
/// `r` probe and `K` sketch forcings are Gaussian combinations of the Fourier
/// dictionary of the sampling mesh, drawn from two independent streams of
/// `params.seed`. All forcings of one sample share a factorization.
pub fn build_local_basis(
    mesh: &Mesh,
    model: &CoefficientModel,
    set: &SampleSet,
    params: &OfflineParams,
) -> Result<LocalBasis> {
    params.validate()?;
    let sampler = Sampler::new(mesh, model, set, params.coarse_h, None)?;
    let n_dict = sampler.dict.len();
    let thr = params.probe_tolerance();
    let ip = InnerProduct::Weighted(set.weights());

    let probe_forcings = gaussian_probes(n_dict, params.r, &mut stream_rng(params.seed, 0));
    let mut sketch_rng: ChaCha20Rng = stream_rng(params.seed, 1);
    let sketch_forcings = gaussian_probes(n_dict, params.k, &mut sketch_rng);
    let mut all = probe_forcings;
    all.extend(sketch_forcings);
    let mut traces = sampler.traces(&all)?;
    let mut probes: Vec<Vec<Vec<f64>>> = Vec::with_capacity(traces.len());
    for node in traces.iter_mut() {
        let rest = node.split_off(params.r);
        probes.push(std::mem::replace(node, rest));
    }
    let mut sketch = traces;

    let n = mesh.n_interior();
    let mut nodes: Vec<Option<NodeBasis>> = (0..n).map(|_| None).collect();
    let mut pending: Vec<usize> = (0..n).collect();
    let max_sketch = params.max_sketch.unwrap_or(8 * params.k);
    let mut columns = params.k;
    loop {
        let results: Vec<NodeBasis> = pending
            .par_iter()
            .map(|&i| node_basis(&ip, &probes[i], &sketch[i], thr))
            .collect();
        let mut failed = Vec::new();
        for (&i, nb) in pending.iter().zip(results) {
            if nb.saturated {
                failed.push(i);
            }
            nodes[i] = Some(nb);
        }
        if failed.is_empty() || !params.allow_growth {
            break;
        }
        if 2 * columns > max_sketch {
            let i = failed[0];
            return Err(HsfemError::Node {
                node: i,
                message: format!(
                    "probe test still fails with {columns} sketch columns (cap {max_sketch}); residual {:.3e} > {thr:.3e}",
                    nodes[i].as_ref().map_or(f64::NAN, |nb| nb.residual)
                ),
            });
        }
        log::info!("{} nodes failed the probe test; growing sketch to {} columns", failed.len(), 2 * columns);
        let extra = gaussian_probes(n_dict, columns, &mut sketch_rng);
        let more = sampler.traces(&extra)?;
        for (node, cols) in sketch.iter_mut().zip(more) {
            node.extend(cols);
        }
        columns *= 2;
        pending = failed;
    }

    let m = set.len();
    let mut k = Vec::with_capacity(n);
    let mut offsets = vec![0usize];
    let mut data = Vec::new();
    let mut saturated = Vec::with_capacity(n);
    let mut probe_residual = Vec::with_capacity(n);
    let mut eigenvalues = Vec::with_capacity(n);
    for nb in nodes.into_iter().map(|nb| nb.expect("every node processed")) {
        k.push(nb.xi.len());
        offsets.push(offsets.last().unwrap() + nb.xi.len());
        for v in &nb.xi {
            debug_assert_eq!(v.len(), m);
            data.extend_from_slice(v);
        }
        saturated.push(nb.saturated);
        probe_residual.push(nb.residual);
        eigenvalues.push(nb.lambdas);
    }
    Ok(LocalBasis {
        n_samples: m,
        k,
        offsets,
        data,
        saturated,
        probe_residual,
        eigenvalues,
        sketch_columns: columns,
        params: params.clone(),
        sample_fingerprint: set.fingerprint().to_string(),
    })
}

/// Coupled Galerkin system over the basis `phi_i xi_i^j`, indexed node-major:
/// `R(i, j) = sum_{l < i} (k_l + 1) + j` (zero-based).
#[derive(Debug, Clone)]
pub struct CoupledSystem {
    k: Vec<usize>,
    offsets: Vec<usize>,
    sm: CsrMatrix,
    /// `E[xi_i^j]` per coupled index, `E[1]` for `j = 0`.
    means: Vec<f64>,
    chol: SkylineCholesky,
    sample_fingerprint: String,
}

impl CoupledSystem {
    pub fn from_parts(k: Vec<usize>, sm: CsrMatrix, means: Vec<f64>, sample_fingerprint: String) -> Result<Self> {
        let mut offsets = vec![0usize];
        for &ki in &k {
            offsets.push(offsets.last().unwrap() + ki + 1);
        }
        let s = *offsets.last().unwrap();
        if sm.dim() != s || means.len() != s {
            return Err(HsfemError::Artifact(format!(
                "coupled system of size {} does not match S = {s}",
                sm.dim()
            )));
        }
        let chol = Envelope::of(&sm).factor(&sm)?;
        Ok(CoupledSystem {
            k,
            offsets,
            sm,
            means,
            chol,
            sample_fingerprint,
        })
    }

    /// `S = sum_i (k_i + 1)`.
    pub fn size(&self) -> usize {
        self.sm.dim()
    }

    pub fn n_nodes(&self) -> usize {
        self.k.len()
    }

    pub fn k(&self, i: usize) -> usize {
        self.k[i]
    }

    pub fn ks(&self) -> &[usize] {
        &self.k
    }

    /// Zero-based relabeling `R(i, j)`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= self.k[i]);
        self.offsets[i] + j
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.sm
    }

    pub fn factor(&self) -> &SkylineCholesky {
        &self.chol
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sample_fingerprint(&self) -> &str {
        &self.sample_fingerprint
    }
}

/// Element coefficients for every sample, element-major: `[e * M + p]`.
pub fn coefficient_table(mesh: &Mesh, model: &CoefficientModel, set: &SampleSet) -> Result<Vec<f64>> {
    let m = set.len();
    let per_sample: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|p| model.centroid_values(mesh, set.point(p), p))
        .collect::<Result<_>>()?;
    let ne = mesh.n_elements();
    let mut out = vec![0.0; ne * m];
    for (p, vals) in per_sample.iter().enumerate() {
        for (e, v) in vals.iter().enumerate() {
            out[e * m + p] = *v;
        }
    }
    Ok(out)
}

/// Assemble `SM(R(i1,j1), R(i2,j2)) = sum_p w^p xi_i1^j1 xi_i2^j2 int grad(phi_i1) a grad(phi_i2)`
/// and factor it.
pub fn assemble_coupled(
    mesh: &Mesh,
    model: &CoefficientModel,
    set: &SampleSet,
    basis: &LocalBasis,
) -> Result<CoupledSystem> {
    if basis.sample_fingerprint() != set.fingerprint() {
        return Err(HsfemError::SampleSetMismatch);
    }
    if basis.n_nodes() != mesh.n_interior() {
        return Err(HsfemError::Dimension {
            what: "local basis nodes",
            expected: mesh.n_interior(),
            got: basis.n_nodes(),
        });
    }
    model.validate(mesh.dim(), set.m())?;
    let m = set.len();
    let w = set.weights();
    let coeffs = coefficient_table(mesh, model, set)?;
    let asm = StiffnessAssembler::new(mesh);
    let pattern = asm.pattern();
    let contributions = asm.slot_contributions();
    let triplets = pattern.triplets();
    let ones = vec![1.0; m];
    let column = |i: usize, j: usize| -> &[f64] {
        if j == 0 {
            &ones
        } else {
            basis.xi(i, j)
        }
    };
    // blocks for slots with row <= col, row-major (k_r + 1) x (k_c + 1)
    let blocks: Vec<Option<Vec<f64>>> = triplets
        .par_iter()
        .enumerate()
        .map(|(slot, &(r, c, _))| {
            if r > c {
                return None;
            }
            let mut g = vec![0.0; m];
            for &(e, unit) in &contributions[slot] {
                let a = &coeffs[e * m..(e + 1) * m];
                for p in 0..m {
                    g[p] += unit * a[p];
                }
            }
            for p in 0..m {
                g[p] *= w[p];
            }
            let (kr, kc) = (basis.k(r), basis.k(c));
            let weighted: Vec<Vec<f64>> = (0..=kc)
                .map(|j2| column(c, j2).iter().zip(&g).map(|(x, y)| x * y).collect())
                .collect();
            let mut block = vec![0.0; (kr + 1) * (kc + 1)];
            for j1 in 0..=kr {
                let x1 = column(r, j1);
                let first = if r == c { j1 } else { 0 };
                for (j2, wc) in weighted.iter().enumerate().skip(first) {
                    let v: f64 = x1.iter().zip(wc).map(|(a, b)| a * b).sum();
                    block[j1 * (kc + 1) + j2] = v;
                    if r == c {
                        block[j2 * (kc + 1) + j1] = v;
                    }
                }
            }
            Some(block)
        })
        .collect();

    let k = basis.ks().to_vec();
    let mut offsets = vec![0usize];
    for &ki in &k {
        offsets.push(offsets.last().unwrap() + ki + 1);
    }
    let s = offsets[k.len()];
    let mut row_ptr = Vec::with_capacity(s + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for i in 0..k.len() {
        let neighbours: Vec<usize> = pattern.row(i).map(|(c, _)| c).collect();
        for j1 in 0..=k[i] {
            for &c in &neighbours {
                let kc = k[c];
                if i <= c {
                    let block = blocks[pattern.position(i, c).unwrap()].as_ref().unwrap();
                    for j2 in 0..=kc {
                        cols.push(offsets[c] + j2);
                        vals.push(block[j1 * (kc + 1) + j2]);
                    }
                } else {
                    let block = blocks[pattern.position(c, i).unwrap()].as_ref().unwrap();
                    for j2 in 0..=kc {
                        cols.push(offsets[c] + j2);
                        vals.push(block[j2 * (k[i] + 1) + j1]);
                    }
                }
            }
            row_ptr.push(cols.len());
        }
    }
    let sm = CsrMatrix::from_raw(s, row_ptr, cols, vals)?;
    let total_weight: f64 = w.iter().sum();
    let mut means = Vec::with_capacity(s);
    for (i, &ki) in k.iter().enumerate() {
        means.push(total_weight);
        for j in 1..=ki {
            means.push(set.expect(basis.xi(i, j)));
        }
    }
    CoupledSystem::from_parts(k, sm, means, set.fingerprint().to_string()).map_err(|e| match e {
        HsfemError::NotPositiveDefinite { row, pivot } => {
            log::error!(
                "coupled stiffness matrix is not positive definite at row {row}; \
                 the local basis may be degenerate or the sample weights indefinite"
            );
            HsfemError::NotPositiveDefinite { row, pivot }
        }
        other => other,
    })
}

/// Explicit discrete operator `T_i` at one interior node: column `q` is the
/// mean-removed trace for forcing `Phi_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TMatrix {
    pub node: usize,
    pub columns: Vec<Vec<f64>>,
    /// Singular values under the weighted inner product, descending.
    pub singular_values: Vec<f64>,
}

impl TMatrix {
    /// Number of singular values above `epsilon`, the smallest rank whose
    /// truncation error in operator norm is at most `epsilon`.
    pub fn rank_at(&self, epsilon: f64) -> usize {
        self.singular_values.iter().filter(|&&s| s > epsilon).count()
    }
}

/// Apply the discrete `T_i` to every dictionary vector `e_q`.
pub fn tmatrix_explicit(
    mesh: &Mesh,
    model: &CoefficientModel,
    set: &SampleSet,
    node: usize,
) -> Result<TMatrix> {
    if node >= mesh.n_interior() {
        return Err(HsfemError::Dimension {
            what: "interior node index",
            expected: mesh.n_interior(),
            got: node,
        });
    }
    let sampler = Sampler::new(mesh, model, set, None, Some(&[node]))?;
    let n = sampler.dict.len();
    let unit: Vec<Vec<f64>> = (0..n)
        .map(|q| {
            let mut v = vec![0.0; n];
            v[q] = 1.0;
            v
        })
        .collect();
    let columns = sampler.traces(&unit)?.pop().unwrap_or_default();
    let singular_values = weighted_singular_values(&InnerProduct::Weighted(set.weights()), &columns);
    Ok(TMatrix {
        node,
        columns,
        singular_values,
    })
}

/// Interior unknown whose node is closest to `x`.
pub fn interior_index_near(mesh: &Mesh, x: &[f64]) -> Option<usize> {
    mesh.interior_nodes()
        .iter()
        .enumerate()
        .map(|(k, &node)| {
            let d: f64 = mesh.node(node).iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
            (k, d)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
}
