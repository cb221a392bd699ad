//! Sensitivity of the solution to the stiffness quadrature: the centroid value
//! of the coefficient against the edge-midpoint rule, exact for quadratics.

use hsfem::detsolver::solve_with_coefficients;
use hsfem::field::{CoefficientModel, Forcing};
use hsfem::mesh::Mesh;
use hsfem::stochastic::{mc_sample, Measure};

fn edge_midpoint_coefficients(mesh: &Mesh, model: &CoefficientModel, theta: &[f64]) -> Vec<f64> {
    (0..mesh.n_elements())
        .map(|e| {
            let v = mesh.element(e);
            let mut sum = 0.0;
            for a in 0..3 {
                let (p, q) = (mesh.node(v[a]), mesh.node(v[(a + 1) % 3]));
                sum += model.eval(&[(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0], theta);
            }
            sum / 3.0
        })
        .collect()
}

/// Largest relative nodal difference between the two rules over a few samples.
fn sensitivity(model: &CoefficientModel, cells: usize) -> f64 {
    let mesh = Mesh::with_cells(2, cells).unwrap();
    let set = mc_sample(model.m().unwrap(), 5, Measure::Gaussian, 9).unwrap();
    let b = Forcing::Linear2d.load_vector(&mesh);
    (0..set.len())
        .map(|p| {
            let centroid = model.centroid_values(&mesh, set.point(p), p).unwrap();
            let u1 = solve_with_coefficients(&mesh, &centroid, &b).unwrap();
            let mid = edge_midpoint_coefficients(&mesh, model, set.point(p));
            let u2 = solve_with_coefficients(&mesh, &mid, &b).unwrap();
            let scale = u2.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            u1.iter().zip(&u2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
        })
        .fold(0.0, f64::max)
}

#[test]
fn centroid_rule_sensitivity_shrinks_with_h() {
    for model in [
        CoefficientModel::TrigLognormal2d { m: 12 },
        CoefficientModel::Piecewise2d,
        CoefficientModel::TensorLognormal2d { m: 6 },
    ] {
        let d: Vec<f64> = [16, 32, 64].iter().map(|&c| sensitivity(&model, c)).collect();
        println!("{model:?}: relative nodal difference {:.2e}, {:.2e}, {:.2e} at h = 1/16, 1/32, 1/64", d[0], d[1], d[2]);
        assert!(d[0] < 0.3 && d[1] < d[0] && d[2] < d[1] && d[2] < d[0] / 6.0, "{d:?}");
    }
}
