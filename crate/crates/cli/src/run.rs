//! Subcommand implementations. Each writes its results below the configured
//! output directory and also returns them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use hsfem::artifact::OfflineArtifact;
use hsfem::correct::{estimate_and_correct, variance_ratio, CorrectionParams, CorrectionReport, Problem, VarianceRatio};
use hsfem::detsolver::{solve_ensemble, Ensemble};
use hsfem::field::Forcing;
use hsfem::klbaseline::{e_kl_of, kl_expand, KlError};
use hsfem::mesh::Mesh;
use hsfem::offline::{assemble_coupled, build_local_basis, interior_index_near, tmatrix_explicit};
use hsfem::online::{e_hsfem_solution, solve_online, statistics};
use hsfem::stochastic::SampleSet;
use hsfem::{HsfemError, Result};

use crate::config::ExperimentConfig;

pub const ARTIFACT_FILE: &str = "offline.hsfem";

fn provenance(cfg: &ExperimentConfig, command: &str) -> serde_json::Value {
    serde_json::json!({
        "experiment": cfg.name,
        "command": command,
        "config_hash": cfg.hash(),
        "seeds": cfg.seeds(),
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output)?;
    Ok(cfg.output.clone())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn coords_header(dim: usize) -> &'static str {
    if dim == 1 {
        "x"
    } else {
        "x,y"
    }
}

fn coords(mesh: &Mesh, i: usize) -> String {
    let node = mesh.node(mesh.interior_nodes()[i]);
    node[..mesh.dim()].iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, Serialize)]
pub struct OfflineSummary {
    pub provenance: serde_json::Value,
    pub n_interior: usize,
    pub n_samples: usize,
    pub average_k: f64,
    pub max_k: usize,
    pub coupled_size: usize,
    pub saturated_nodes: usize,
    /// `k_histogram[k]` nodes have `k_i = k`.
    pub k_histogram: Vec<usize>,
    pub sketch_columns: usize,
    pub wall_seconds: f64,
    pub artifact: PathBuf,
    pub artifact_sha256: String,
}

/// Build the local basis and coupled system, and write the artifact, a JSON
/// summary and the per-node `k_i` profile.
pub fn run_offline(cfg: &ExperimentConfig) -> Result<(OfflineArtifact, OfflineSummary)> {
    let start = Instant::now();
    let mesh = cfg.mesh()?;
    let set = cfg.sample_set()?;
    log::info!("offline: {} interior nodes, {} samples", mesh.n_interior(), set.len());
    let basis = build_local_basis(&mesh, &cfg.problem.model, &set, &cfg.offline_params())?;
    log::info!("offline: average k = {:.2}, assembling coupled system", basis.average_k());
    let system = assemble_coupled(&mesh, &cfg.problem.model, &set, &basis)?;
    let artifact = OfflineArtifact {
        provenance: provenance(cfg, "offline"),
        mesh,
        model: cfg.problem.model.clone(),
        set,
        basis,
        system,
    };
    let dir = out_dir(cfg)?;
    let path = dir.join(ARTIFACT_FILE);
    let bytes = artifact.to_bytes()?;
    fs::write(&path, &bytes)?;

    let b = &artifact.basis;
    let mut hist = vec![0usize; b.max_k() + 1];
    for &k in b.ks() {
        hist[k] += 1;
    }
    let summary = OfflineSummary {
        provenance: provenance(cfg, "offline"),
        n_interior: b.n_nodes(),
        n_samples: b.n_samples(),
        average_k: b.average_k(),
        max_k: b.max_k(),
        coupled_size: artifact.system.size(),
        saturated_nodes: b.saturated_count(),
        k_histogram: hist,
        sketch_columns: b.sketch_columns(),
        wall_seconds: start.elapsed().as_secs_f64(),
        artifact: path,
        artifact_sha256: sha256_hex(&bytes),
    };
    write_json(&dir.join("offline_summary.json"), &summary)?;
    let mesh = &artifact.mesh;
    let mut csv = format!("node,{},k,saturated,probe_residual\n", coords_header(mesh.dim()));
    for i in 0..b.n_nodes() {
        writeln!(csv, "{i},{},{},{},{:e}", coords(mesh, i), b.k(i), b.is_saturated(i), b.probe_residual(i)).unwrap();
    }
    fs::write(dir.join("k_profile.csv"), csv)?;
    Ok((artifact, summary))
}

/// Load an artifact and make sure it was built for this configuration.
pub fn load_artifact(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<OfflineArtifact> {
    let default = cfg.output.join(ARTIFACT_FILE);
    let path = path.unwrap_or(&default);
    let art = OfflineArtifact::read(path)?;
    let set = cfg.sample_set()?;
    if art.set.fingerprint() != set.fingerprint() {
        return Err(HsfemError::Artifact(format!(
            "artifact {} was built on a different sample set ({} vs {}); refusing to run",
            path.display(),
            art.set.fingerprint(),
            set.fingerprint()
        )));
    }
    let mesh = cfg.mesh()?;
    if art.mesh.dim() != mesh.dim() || art.mesh.cells() != mesh.cells() || art.model != cfg.problem.model {
        return Err(HsfemError::Artifact(format!(
            "artifact {} was built for a different mesh or coefficient model",
            path.display()
        )));
    }
    Ok(art)
}

/// Reference ensemble for `f`, cached on disk under the output directory.
pub fn reference_ensemble(cfg: &ExperimentConfig, art: &OfflineArtifact, f: &Forcing) -> Result<Ensemble> {
    let key = sha256_hex(
        format!(
            "{}|{}|{}|{}|{}",
            art.set.fingerprint(),
            art.mesh.dim(),
            art.mesh.cells(),
            serde_json::to_string(&art.model)?,
            serde_json::to_string(f)?
        )
        .as_bytes(),
    );
    let dir = out_dir(cfg)?.join("cache");
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("reference-{}.bin", &key[..16]));
    let n = art.mesh.n_interior();
    if let Ok(bytes) = fs::read(&path) {
        if bytes.len() == 8 * n * art.set.len() {
            let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            log::info!("using cached reference ensemble {}", path.display());
            return Ensemble::from_node_major(n, &art.set, values, Some(f.clone()));
        }
    }
    log::info!("solving reference ensemble ({} samples)", art.set.len());
    let ens = solve_ensemble(&art.mesh, &art.model, &art.set, f)?;
    let bytes: Vec<u8> = ens.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&path, bytes)?;
    Ok(ens)
}

#[derive(Debug, Clone, Serialize)]
pub struct OnlineRecord {
    pub provenance: serde_json::Value,
    pub forcing: Forcing,
    pub average_k: f64,
    pub coupled_size: usize,
    pub e_hsfem: Option<f64>,
    pub e_kl: Option<KlError>,
    pub solve_seconds: f64,
    pub reference_seconds: Option<f64>,
}

/// Solve every configured forcing against the stored coupled system.
pub fn run_online(cfg: &ExperimentConfig, artifact: Option<&Path>) -> Result<Vec<OnlineRecord>> {
    let art = load_artifact(cfg, artifact)?;
    let dir = out_dir(cfg)?;
    let mut records = Vec::new();
    for (idx, f) in cfg.forcings()?.iter().enumerate() {
        let t = Instant::now();
        let sol = solve_online(&art.system, &art.mesh, f)?;
        let solve_seconds = t.elapsed().as_secs_f64();
        let (mean, sd) = statistics(&sol);
        let mut csv = format!("node,{},mean,sd,k\n", coords_header(art.mesh.dim()));
        for i in 0..mean.len() {
            writeln!(csv, "{i},{},{:e},{:e},{}", coords(&art.mesh, i), mean[i], sd[i], art.basis.k(i)).unwrap();
        }
        fs::write(dir.join(format!("online_{idx}.csv")), csv)?;

        let (mut e_hsfem, mut e_kl, mut reference_seconds) = (None, None, None);
        if cfg.online.reference {
            let t = Instant::now();
            let reference = reference_ensemble(cfg, &art, f)?;
            reference_seconds = Some(t.elapsed().as_secs_f64());
            e_hsfem = Some(undefined_as_nan(e_hsfem_solution(&art.mesh, &art.set, &art.basis, &sol, &reference))?);
            if cfg.baseline.kl {
                let kl = kl_expand(&art.mesh, &art.set, &reference)?;
                e_kl = match e_kl_of(&kl, art.basis.average_k()) {
                    Ok(e) => Some(e),
                    Err(HsfemError::Undefined(msg)) => {
                        log::warn!("{msg}");
                        None
                    }
                    Err(e) => return Err(e),
                };
            }
        }
        let record = OnlineRecord {
            provenance: provenance(cfg, "online"),
            forcing: f.clone(),
            average_k: art.basis.average_k(),
            coupled_size: art.system.size(),
            e_hsfem,
            e_kl,
            solve_seconds,
            reference_seconds,
        };
        write_json(&dir.join(format!("online_{idx}.json")), &record)?;
        records.push(record);
    }
    Ok(records)
}

/// Relative errors against deterministic references are reported as NaN.
fn undefined_as_nan(r: Result<f64>) -> Result<f64> {
    match r {
        Err(HsfemError::Undefined(msg)) => {
            log::warn!("{msg}");
            Ok(f64::NAN)
        }
        other => other,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineRecord {
    pub provenance: serde_json::Value,
    pub forcing: Forcing,
    pub rank: usize,
    pub error: KlError,
}

/// KL spectrum of the reference ensemble for the first forcing, and the
/// truncation error at the matched rank (the artifact's average `k` unless
/// given).
pub fn run_baseline(cfg: &ExperimentConfig, artifact: Option<&Path>, k_match: Option<f64>) -> Result<BaselineRecord> {
    let art = load_artifact(cfg, artifact)?;
    let f = cfg.forcings()?.remove(0);
    let reference = reference_ensemble(cfg, &art, &f)?;
    let kl = kl_expand(&art.mesh, &art.set, &reference)?;
    let dir = out_dir(cfg)?;
    let mut csv = String::from("j,lambda,relative_error\n");
    for j in 0..kl.rank() {
        writeln!(csv, "{},{:e},{:e}", j + 1, kl.lambdas[j], kl.relative_error(j + 1)?).unwrap();
    }
    fs::write(dir.join("kl_spectrum.csv"), csv)?;
    let record = BaselineRecord {
        provenance: provenance(cfg, "baseline-kl"),
        forcing: f,
        rank: kl.rank(),
        error: e_kl_of(&kl, k_match.unwrap_or(art.basis.average_k()))?,
    };
    write_json(&dir.join("baseline_kl.json"), &record)?;
    Ok(record)
}

#[derive(Debug, Clone, Serialize)]
pub struct TmatrixRecord {
    pub provenance: serde_json::Value,
    pub node: usize,
    pub x: Vec<f64>,
    pub singular_values: Vec<f64>,
    /// `(epsilon, number of singular values above epsilon)`.
    pub ranks: Vec<(f64, usize)>,
}

/// Singular values of the explicit operator at the node nearest `tmatrix.x`.
pub fn run_tmatrix(cfg: &ExperimentConfig) -> Result<TmatrixRecord> {
    let tm = cfg
        .tmatrix
        .as_ref()
        .ok_or_else(|| HsfemError::Config("configuration has no [tmatrix] section".into()))?;
    let mesh = cfg.mesh()?;
    let set: SampleSet = cfg.sample_set()?;
    let node = interior_index_near(&mesh, &tm.x).ok_or_else(|| HsfemError::Config("mesh has no interior nodes".into()))?;
    let t = tmatrix_explicit(&mesh, &cfg.problem.model, &set, node)?;
    let dir = out_dir(cfg)?;
    let mut csv = String::from("k,sigma\n");
    for (k, s) in t.singular_values.iter().enumerate() {
        writeln!(csv, "{},{:e}", k + 1, s).unwrap();
    }
    fs::write(dir.join("tmatrix_singular_values.csv"), csv)?;
    let record = TmatrixRecord {
        provenance: provenance(cfg, "tmatrix"),
        node,
        x: mesh.node(mesh.interior_nodes()[node])[..mesh.dim()].to_vec(),
        ranks: tm.epsilon.iter().map(|&e| (e, t.rank_at(e))).collect(),
        singular_values: t.singular_values,
    };
    write_json(&dir.join("tmatrix.json"), &record)?;
    Ok(record)
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrectionRecord {
    pub provenance: serde_json::Value,
    pub report: CorrectionReport,
    pub variance: Option<VarianceRatio>,
}

/// Control-variate estimate of the configured functional for the first forcing.
pub fn run_correct(cfg: &ExperimentConfig, artifact: Option<&Path>) -> Result<CorrectionRecord> {
    let c = cfg
        .correction
        .as_ref()
        .ok_or_else(|| HsfemError::Config("configuration has no [correction] section".into()))?;
    let art = load_artifact(cfg, artifact)?;
    let f = cfg.forcings()?.remove(0);
    let sol = solve_online(&art.system, &art.mesh, &f)?;
    let approx = sol.materialize(&art.basis, &art.set)?;
    let problem = Problem {
        mesh: &art.mesh,
        model: &art.model,
        set: &art.set,
        forcing: &f,
    };
    let params = CorrectionParams {
        epsilon: c.epsilon,
        n_mc_init: c.n_mc,
        seed: c.seed,
        max_rounds: c.max_rounds,
    };
    let report = estimate_and_correct(&problem, &approx, &c.functional, &params)?;
    let variance = if c.variance_probe >= 2 {
        Some(variance_ratio(&problem, &approx, &c.functional, c.variance_probe, c.seed)?)
    } else {
        None
    };
    let record = CorrectionRecord {
        provenance: provenance(cfg, "correct"),
        report,
        variance,
    };
    write_json(&out_dir(cfg)?.join("correction.json"), &record)?;
    Ok(record)
}
