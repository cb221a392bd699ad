//! Deterministic P1 solves, one realization of the coefficient at a time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HsfemError, Result};
use crate::field::{CoefficientModel, Forcing};
use crate::mesh::Mesh;
use crate::sparse::{CsrMatrix, Envelope, SkylineCholesky, TripletBuilder};
use crate::stochastic::SampleSet;

/// Relative residual every deterministic solve must reach.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

/// Assembles `int a grad(phi_i) . grad(phi_j)` with the centroid rule for any
/// element-wise coefficient, reusing one sparsity pattern and envelope.
#[derive(Debug, Clone)]
pub struct StiffnessAssembler {
    pattern: CsrMatrix,
    /// `(element, value slot, |e| grad(phi_a) . grad(phi_b))`.
    scatter: Vec<(usize, usize, f64)>,
    envelope: Envelope,
}

impl StiffnessAssembler {
    pub fn new(mesh: &Mesh) -> Self {
        let v = mesh.vertices_per_element();
        let mut t = TripletBuilder::new(mesh.n_interior());
        for e in 0..mesh.n_elements() {
            let verts = mesh.element(e);
            for a in 0..v {
                let Some(ra) = mesh.unknown(verts[a]) else { continue };
                for b in 0..v {
                    if let Some(rb) = mesh.unknown(verts[b]) {
                        t.add(ra, rb, 0.0);
                    }
                }
            }
        }
        let pattern = t.build();
        let mut scatter = Vec::new();
        for e in 0..mesh.n_elements() {
            let verts = mesh.element(e);
            for a in 0..v {
                let Some(ra) = mesh.unknown(verts[a]) else { continue };
                for b in 0..v {
                    if let Some(rb) = mesh.unknown(verts[b]) {
                        let slot = pattern.position(ra, rb).expect("pattern covers element pairs");
                        scatter.push((e, slot, mesh.unit_stiffness(e, a, b)));
                    }
                }
            }
        }
        let envelope = Envelope::of(&pattern);
        StiffnessAssembler {
            pattern,
            scatter,
            envelope,
        }
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    /// The sparsity pattern of every assembled matrix (values are zero).
    pub fn pattern(&self) -> &CsrMatrix {
        &self.pattern
    }

    /// For every value slot of the pattern, the elements contributing to it
    /// and their unit-coefficient stiffness.
    pub fn slot_contributions(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.pattern.nnz()];
        for &(e, slot, unit) in &self.scatter {
            out[slot].push((e, unit));
        }
        out
    }

    /// Stiffness matrix for element coefficients `coeffs`.
    pub fn assemble(&self, coeffs: &[f64]) -> CsrMatrix {
        let mut a = self.pattern.clone();
        let vals = a.values_mut();
        for &(e, slot, unit) in &self.scatter {
            vals[slot] += coeffs[e] * unit;
        }
        a
    }

    pub fn factor(&self, a: &CsrMatrix) -> Result<SkylineCholesky> {
        self.envelope.factor(a)
    }

    /// Assemble and factor the system for one sample of `model`.
    pub fn factor_sample(
        &self,
        mesh: &Mesh,
        model: &CoefficientModel,
        set: &SampleSet,
        p: usize,
    ) -> Result<(CsrMatrix, SkylineCholesky)> {
        let wrap = |e: HsfemError| HsfemError::Sample {
            sample: p,
            source: Box::new(e),
        };
        let coeffs = model.centroid_values(mesh, set.point(p), p).map_err(wrap)?;
        let a = self.assemble(&coeffs);
        let chol = self.factor(&a).map_err(wrap)?;
        Ok((a, chol))
    }
}

/// Solve `A u = b` on interior unknowns for element coefficients `coeffs`.
pub fn solve_with_coefficients(mesh: &Mesh, coeffs: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let asm = StiffnessAssembler::new(mesh);
    let a = asm.assemble(coeffs);
    asm.factor(&a)?.solve_refined(&a, b, SOLVE_TOLERANCE)
}

/// Nodal solution (all nodes, zero on the boundary) for one sample point.
pub fn solve_deterministic(
    mesh: &Mesh,
    model: &CoefficientModel,
    theta: &[f64],
    f: &Forcing,
) -> Result<Vec<f64>> {
    let coeffs = model.centroid_values(mesh, theta, 0)?;
    let u = solve_with_coefficients(mesh, &coeffs, &f.load_vector(mesh))?;
    Ok(mesh.extend_by_zero(&u))
}

/// Interior solution values `u(x_i, theta^p)` for every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    n_interior: usize,
    n_samples: usize,
    /// Node-major: `values[i * M + p]`.
    values: Vec<f64>,
    sample_fingerprint: String,
    forcing: Option<Forcing>,
}

impl Ensemble {
    /// Build from a node-major table.
    pub fn from_node_major(
        n_interior: usize,
        set: &SampleSet,
        values: Vec<f64>,
        forcing: Option<Forcing>,
    ) -> Result<Self> {
        if values.len() != n_interior * set.len() {
            return Err(HsfemError::Dimension {
                what: "ensemble table",
                expected: n_interior * set.len(),
                got: values.len(),
            });
        }
        Ok(Ensemble {
            n_interior,
            n_samples: set.len(),
            values,
            sample_fingerprint: set.fingerprint().to_string(),
            forcing,
        })
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Trace `u(x_i, .)` over all samples.
    pub fn trace(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_samples..(i + 1) * self.n_samples]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Interior solution vector of sample `p`.
    pub fn column(&self, p: usize) -> Vec<f64> {
        (0..self.n_interior).map(|i| self.values[i * self.n_samples + p]).collect()
    }

    pub fn sample_fingerprint(&self) -> &str {
        &self.sample_fingerprint
    }

    pub fn forcing(&self) -> Option<&Forcing> {
        self.forcing.as_ref()
    }

    pub fn check_sample_set(&self, set: &SampleSet) -> Result<()> {
        if self.sample_fingerprint != set.fingerprint() {
            return Err(HsfemError::SampleSetMismatch);
        }
        Ok(())
    }

    /// Weighted mean at every node.
    pub fn mean(&self, set: &SampleSet) -> Vec<f64> {
        (0..self.n_interior).map(|i| set.expect(self.trace(i))).collect()
    }
}

/// Solve for every sample in parallel; column order follows the sample set.
pub fn solve_ensemble(
    mesh: &Mesh,
    model: &CoefficientModel,
    set: &SampleSet,
    f: &Forcing,
) -> Result<Ensemble> {
    model.validate(mesh.dim(), set.m())?;
    let asm = StiffnessAssembler::new(mesh);
    let b = f.load_vector(mesh);
    let columns: Vec<Vec<f64>> = (0..set.len())
        .into_par_iter()
        .map(|p| {
            let (a, chol) = asm.factor_sample(mesh, model, set, p)?;
            chol.solve_refined(&a, &b, SOLVE_TOLERANCE).map_err(|e| HsfemError::Sample {
                sample: p,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let n = mesh.n_interior();
    let mm = set.len();
    let mut values = vec![0.0; n * mm];
    for (p, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            values[i * mm + p] = *v;
        }
    }
    Ensemble::from_node_major(n, set, values, Some(f.clone()))
}
