use proptest::prelude::*;

use hsfem::artifact::OfflineArtifact;
use hsfem::detsolver::solve_ensemble;
use hsfem::field::{CoefficientModel, Forcing};
use hsfem::klbaseline::kl_expand;
use hsfem::mesh::Mesh;
use hsfem::offline::{assemble_coupled, build_local_basis, OfflineParams};
use hsfem::online::{e_hsfem, solve_online};
use hsfem::stochastic::{mc_sample, Measure};

fn instance(cells: usize, m: usize, samples: usize, seed: u64, k: usize) -> OfflineArtifact {
    let mesh = Mesh::with_cells(1, cells).unwrap();
    let model = CoefficientModel::TrigLognormal1d { m };
    let set = mc_sample(m, samples, Measure::Uniform, seed).unwrap();
    let params = OfflineParams::with_probe_tolerance(k, 3, 1e-5, seed + 1);
    let basis = build_local_basis(&mesh, &model, &set, &params).unwrap();
    let system = assemble_coupled(&mesh, &model, &set, &basis).unwrap();
    OfflineArtifact {
        provenance: serde_json::Value::Null,
        mesh,
        model,
        set,
        basis,
        system,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn offline_online_invariants(cells in 4usize..20, m in 1usize..5, samples in 6usize..40, seed in 0u64..1000) {
        let a = instance(cells, m, samples, seed, 12);
        let (mean_defect, ortho_defect) = a.basis.invariant_defects(&a.set);
        prop_assert!(mean_defect < 1e-10 && ortho_defect < 1e-10);
        prop_assert!(a.basis.ks().iter().all(|&k| k < samples));
        prop_assert_eq!(a.system.size(), a.basis.total_size());
        prop_assert_eq!(a.system.matrix().asymmetry(), 0.0);

        let f = Forcing::Cubic1d;
        let sol = solve_online(&a.system, &a.mesh, &f).unwrap();
        let traces = sol.materialize(&a.basis, &a.set).unwrap();
        let reference = solve_ensemble(&a.mesh, &a.model, &a.set, &f).unwrap();
        // the means of u_h and of the reference agree with the coupled means
        for (x, y) in traces.mean(&a.set).iter().zip(sol.mean()) {
            prop_assert!((x - y).abs() <= 1e-10 * y.abs().max(1e-12));
        }
        let e = e_hsfem(&a.mesh, &a.set, &traces, &reference).unwrap();
        prop_assert!((0.0..1.0).contains(&e));

        let kl = kl_expand(&a.mesh, &a.set, &reference).unwrap();
        let errs: Vec<f64> = (0..=kl.rank()).map(|k| kl.relative_error(k).unwrap()).collect();
        prop_assert!((errs[0] - 1.0).abs() < 1e-12);
        prop_assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        prop_assert!(errs[kl.rank()] < 1e-6);
    }

    #[test]
    fn artifacts_replay_and_round_trip(cells in 4usize..12, samples in 6usize..20, seed in 0u64..1000) {
        let bytes = instance(cells, 2, samples, seed, 6).to_bytes().unwrap();
        prop_assert_eq!(&bytes, &instance(cells, 2, samples, seed, 6).to_bytes().unwrap());
        let back = OfflineArtifact::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}

#[test]
fn growing_the_sample_set_keeps_the_error_small() {
    let f = Forcing::Cubic1d;
    for samples in [20, 80, 320] {
        let a = instance(16, 3, samples, 7, 40);
        let sol = solve_online(&a.system, &a.mesh, &f).unwrap();
        let traces = sol.materialize(&a.basis, &a.set).unwrap();
        let reference = solve_ensemble(&a.mesh, &a.model, &a.set, &f).unwrap();
        let e = e_hsfem(&a.mesh, &a.set, &traces, &reference).unwrap();
        assert!(e < 1e-2, "M = {samples}: E = {e}");
    }
}
