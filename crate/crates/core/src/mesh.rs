//! Uniform P1 meshes of the unit interval and the unit square.
//!
//! In 2D every square cell is split along its lower-left to upper-right
//! diagonal. Element `2c` is the lower triangle `(ll, lr, ur)` of cell `c`
//! and element `2c + 1` the upper triangle `(ll, ur, ul)`. Cells and nodes are
//! numbered lexicographically with `x` running fastest.
//!
//! Boundary nodes carry homogeneous Dirichlet values and are excluded from
//! the unknowns; `unknown(node)` maps a node to its interior index.

use serde::Serialize;

use crate::error::{HsfemError, Result};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// Quadrature on the reference interval `[0, 1]`, exact to degree 5.
const GAUSS3_1D: [(f64, f64); 3] = [
    (0.112_701_665_379_258_31, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_594_741_7, 5.0 / 18.0),
];

/// Seven point rule on triangles in barycentric form, exact to degree 5.
fn radon7() -> [([f64; 3], f64); 7] {
    let s15 = 15f64.sqrt();
    let a1 = (6.0 - s15) / 21.0;
    let b1 = 1.0 - 2.0 * a1;
    let w1 = (155.0 - s15) / 1200.0;
    let a2 = (6.0 + s15) / 21.0;
    let b2 = 1.0 - 2.0 * a2;
    let w2 = (155.0 + s15) / 1200.0;
    let third = 1.0 / 3.0;
    [
        ([third, third, third], 9.0 / 40.0),
        ([a1, a1, b1], w1),
        ([a1, b1, a1], w1),
        ([b1, a1, a1], w1),
        ([a2, a2, b2], w2),
        ([a2, b2, a2], w2),
        ([b2, a2, a2], w2),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct Mesh {
    dim: usize,
    cells: usize,
    h: f64,
    /// Node coordinates, `dim` entries per node.
    nodes: Vec<f64>,
    /// Vertex indices, `dim + 1` per element.
    elements: Vec<usize>,
    interior_mask: Vec<bool>,
    element_measure: Vec<f64>,
    /// Constant hat-function gradients, `dim + 1` vectors of length `dim` per element.
    grad_table: Vec<f64>,
    #[serde(skip)]
    unknown: Vec<Option<usize>>,
    #[serde(skip)]
    interior: Vec<usize>,
}

impl Mesh {
    /// Uniform mesh of `(0,1)^dim` with mesh size `h`; `1/h` must be an integer.
    pub fn build_uniform(dim: usize, h: f64) -> Result<Self> {
        let cells = cells_for(h)?;
        Self::with_cells(dim, cells)
    }

    pub fn with_cells(dim: usize, cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(HsfemError::Config("mesh needs at least one cell".into()));
        }
        let h = 1.0 / cells as f64;
        match dim {
            1 => Ok(Self::line(cells, h)),
            2 => Ok(Self::square(cells, h)),
            _ => Err(HsfemError::Config(format!(
                "only 1D and 2D meshes are supported, got dim = {dim}"
            ))),
        }
    }

    fn line(cells: usize, h: f64) -> Self {
        let nodes: Vec<f64> = (0..=cells).map(|i| i as f64 * h).collect();
        let mut elements = Vec::with_capacity(2 * cells);
        let mut grad_table = Vec::with_capacity(2 * cells);
        for e in 0..cells {
            elements.extend_from_slice(&[e, e + 1]);
            grad_table.extend_from_slice(&[-1.0 / h, 1.0 / h]);
        }
        let interior_mask = (0..=cells).map(|i| i != 0 && i != cells).collect();
        Self::finish(1, cells, h, nodes, elements, interior_mask, vec![h; cells], grad_table)
    }

    fn square(cells: usize, h: f64) -> Self {
        let side = cells + 1;
        let mut nodes = Vec::with_capacity(2 * side * side);
        let mut interior_mask = Vec::with_capacity(side * side);
        for j in 0..side {
            for i in 0..side {
                nodes.push(i as f64 * h);
                nodes.push(j as f64 * h);
                interior_mask.push(i != 0 && j != 0 && i != cells && j != cells);
            }
        }
        let idx = |i: usize, j: usize| j * side + i;
        let mut elements = Vec::with_capacity(6 * cells * cells);
        for j in 0..cells {
            for i in 0..cells {
                let (ll, lr, ur, ul) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                elements.extend_from_slice(&[ll, lr, ur]);
                elements.extend_from_slice(&[ll, ur, ul]);
            }
        }
        let n_el = elements.len() / 3;
        let mut measure = Vec::with_capacity(n_el);
        let mut grad_table = Vec::with_capacity(6 * n_el);
        for e in 0..n_el {
            let v = &elements[3 * e..3 * e + 3];
            let p: Vec<[f64; 2]> = v.iter().map(|&k| [nodes[2 * k], nodes[2 * k + 1]]).collect();
            let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
            measure.push(0.5 * det.abs());
            for a in 0..3 {
                let b = &p[(a + 1) % 3];
                let c = &p[(a + 2) % 3];
                // grad phi_a = rot90(c - b) / det for counter-clockwise vertices
                grad_table.push((b[1] - c[1]) / det);
                grad_table.push((c[0] - b[0]) / det);
            }
        }
        Self::finish(2, cells, h, nodes, elements, interior_mask, measure, grad_table)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        dim: usize,
        cells: usize,
        h: f64,
        nodes: Vec<f64>,
        elements: Vec<usize>,
        interior_mask: Vec<bool>,
        element_measure: Vec<f64>,
        grad_table: Vec<f64>,
    ) -> Self {
        let mut unknown = vec![None; interior_mask.len()];
        let mut interior = Vec::new();
        for (node, &inside) in interior_mask.iter().enumerate() {
            if inside {
                unknown[node] = Some(interior.len());
                interior.push(node);
            }
        }
        Mesh {
            dim,
            cells,
            h,
            nodes,
            elements,
            interior_mask,
            element_measure,
            grad_table,
            unknown,
            interior,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of cells per coordinate direction, `1/h`.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn n_nodes(&self) -> usize {
        self.interior_mask.len()
    }

    pub fn n_elements(&self) -> usize {
        self.element_measure.len()
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[self.dim * i..self.dim * (i + 1)]
    }

    pub fn is_interior(&self, node: usize) -> bool {
        self.interior_mask[node]
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.interior_mask
    }

    /// Interior index of `node`, `None` on the Dirichlet boundary.
    pub fn unknown(&self, node: usize) -> Option<usize> {
        self.unknown[node]
    }

    /// Mesh node of each interior unknown.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn vertices_per_element(&self) -> usize {
        self.dim + 1
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let v = self.vertices_per_element();
        &self.elements[v * e..v * (e + 1)]
    }

    pub fn measure(&self, e: usize) -> f64 {
        self.element_measure[e]
    }

    /// Gradient of the hat function of local vertex `a` on element `e`.
    pub fn gradient(&self, e: usize, a: usize) -> &[f64] {
        let v = self.vertices_per_element();
        let start = (e * v + a) * self.dim;
        &self.grad_table[start..start + self.dim]
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let mut c = [0.0; 2];
        let verts = self.element(e);
        for &k in verts {
            for (d, cd) in c.iter_mut().enumerate().take(self.dim) {
                *cd += self.node(k)[d];
            }
        }
        let inv = 1.0 / verts.len() as f64;
        c[0] *= inv;
        c[1] *= inv;
        c
    }

    /// `|e| grad(phi_a) . grad(phi_b)` on element `e` for local vertices `a`, `b`.
    pub fn unit_stiffness(&self, e: usize, a: usize, b: usize) -> f64 {
        let ga = self.gradient(e, a);
        let gb = self.gradient(e, b);
        self.measure(e) * ga.iter().zip(gb).map(|(x, y)| x * y).sum::<f64>()
    }

    /// Physical quadrature points and weights on element `e` (degree-5 exact).
    pub fn quadrature(&self, e: usize) -> Vec<([f64; 2], [f64; 3], f64)> {
        let verts = self.element(e);
        let m = self.measure(e);
        match self.dim {
            1 => {
                let x0 = self.node(verts[0])[0];
                GAUSS3_1D
                    .iter()
                    .map(|&(s, w)| ([x0 + s * self.h, 0.0], [1.0 - s, s, 0.0], w * m))
                    .collect()
            }
            _ => radon7()
                .iter()
                .map(|&(bary, w)| {
                    let mut x = [0.0; 2];
                    for (a, &k) in verts.iter().enumerate() {
                        x[0] += bary[a] * self.node(k)[0];
                        x[1] += bary[a] * self.node(k)[1];
                    }
                    (x, bary, w * m)
                })
                .collect(),
        }
    }

    /// Integrals `int_D phi_i f dx` over interior unknowns.
    pub fn load_vector<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        let mut b = vec![0.0; self.n_interior()];
        for e in 0..self.n_elements() {
            let verts = self.element(e);
            for (x, bary, w) in self.quadrature(e) {
                let fx = f(&x[..self.dim]);
                if fx == 0.0 {
                    continue;
                }
                for (a, &k) in verts.iter().enumerate() {
                    if let Some(row) = self.unknown[k] {
                        b[row] += w * bary[a] * fx;
                    }
                }
            }
        }
        b
    }

    /// Consistent P1 mass matrix restricted to interior unknowns.
    pub fn mass_matrix(&self) -> CsrMatrix {
        let n = self.n_interior();
        let mut t = TripletBuilder::new(n);
        let v = self.vertices_per_element();
        let denom = if self.dim == 1 { 6.0 } else { 12.0 };
        for e in 0..self.n_elements() {
            let verts = self.element(e);
            let m = self.measure(e) / denom;
            for a in 0..v {
                let Some(ra) = self.unknown[verts[a]] else { continue };
                for b in 0..v {
                    let Some(rb) = self.unknown[verts[b]] else { continue };
                    t.add(ra, rb, if a == b { 2.0 * m } else { m });
                }
            }
        }
        t.build()
    }

    /// Element containing `x` (clamped into the closed domain) and barycentric weights.
    pub fn locate(&self, x: &[f64]) -> (usize, [f64; 3]) {
        let cell_of = |t: f64| {
            let s = t.clamp(0.0, 1.0) / self.h;
            let i = (s.floor() as usize).min(self.cells - 1);
            (i, s - i as f64)
        };
        match self.dim {
            1 => {
                let (i, s) = cell_of(x[0]);
                (i, [1.0 - s, s, 0.0])
            }
            _ => {
                let (i, s) = cell_of(x[0]);
                let (j, t) = cell_of(x[1]);
                let c = j * self.cells + i;
                if s >= t {
                    (2 * c, [1.0 - s, s - t, t])
                } else {
                    (2 * c + 1, [1.0 - t, s, t - s])
                }
            }
        }
    }

    /// Piecewise-linear interpolant of values given at every mesh node.
    pub fn interp_p1<'a>(&'a self, nodal_values: &'a [f64]) -> Result<P1Function<'a>> {
        if nodal_values.len() != self.n_nodes() {
            return Err(HsfemError::Dimension {
                what: "nodal values",
                expected: self.n_nodes(),
                got: nodal_values.len(),
            });
        }
        Ok(P1Function {
            mesh: self,
            values: nodal_values,
        })
    }

    /// Lift an interior vector to all nodes, zero on the boundary.
    pub fn extend_by_zero(&self, interior_values: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_nodes()];
        for (k, &node) in self.interior.iter().enumerate() {
            full[node] = interior_values[k];
        }
        full
    }

    /// Sparse restriction weights: for every interior node of `fine`, the
    /// interior unknowns of `self` and their P1 interpolation weights.
    ///
    /// Weights within `1e-12` of 0 or 1 are snapped, so restricting onto an
    /// identical mesh is the exact identity.
    pub fn restriction_to(&self, fine: &Mesh) -> Vec<Vec<(usize, f64)>> {
        fine.interior_nodes()
            .iter()
            .map(|&node| {
                let (e, bary) = self.locate(fine.node(node));
                let mut out = Vec::with_capacity(3);
                for (a, &k) in self.element(e).iter().enumerate() {
                    let mut w = bary[a];
                    if w.abs() < 1e-12 {
                        continue;
                    }
                    if (w - 1.0).abs() < 1e-12 {
                        w = 1.0;
                    }
                    if let Some(row) = self.unknown[k] {
                        out.push((row, w));
                    }
                }
                out
            })
            .collect()
    }

    /// JSON dump of the mesh geometry for debugging.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "dim": self.dim,
            "h": self.h,
            "nodes": self.nodes.chunks(self.dim).collect::<Vec<_>>(),
            "elements": self.elements.chunks(self.dim + 1).collect::<Vec<_>>(),
        })
    }
}

/// Number of cells `1/h`, which must be a positive integer.
pub fn cells_for(h: f64) -> Result<usize> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(HsfemError::Config(format!("mesh size must lie in (0, 1], got {h}")));
    }
    let inv = 1.0 / h;
    let cells = inv.round();
    if (inv - cells).abs() > 1e-9 * inv {
        return Err(HsfemError::Config(format!("1/h must be an integer, got 1/h = {inv}")));
    }
    Ok(cells as usize)
}

/// A P1 function given by nodal values.
#[derive(Debug, Clone, Copy)]
pub struct P1Function<'a> {
    mesh: &'a Mesh,
    values: &'a [f64],
}

impl P1Function<'_> {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let (e, bary) = self.mesh.locate(x);
        self.mesh
            .element(e)
            .iter()
            .enumerate()
            .map(|(a, &k)| bary[a] * self.values[k])
            .sum()
    }
}
