//! Versioned binary container for offline results.
//!
//! Layout: the magic `HSFEMART`, a little-endian `u32` format version, a
//! `u64` header length, the JSON header, then the body as little-endian
//! 8-byte words in the order listed by [`Header::sections`].

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HsfemError, Result};
use crate::field::CoefficientModel;
use crate::mesh::Mesh;
use crate::offline::{BasisHeader, CoupledSystem, LocalBasis};
use crate::sparse::CsrMatrix;
use crate::stochastic::{hex, Generator, Measure, SampleSet};

pub const MAGIC: &[u8; 8] = b"HSFEMART";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Section {
    name: String,
    words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    /// Caller-supplied provenance (config hash, seeds, command).
    provenance: serde_json::Value,
    dim: usize,
    cells: usize,
    model: CoefficientModel,
    sample_m: usize,
    sample_len: usize,
    measure: Measure,
    generator: Generator,
    sample_fingerprint: String,
    basis: BasisHeader,
    sm_size: usize,
    sm_nnz: usize,
    sections: Vec<Section>,
    body_sha256: String,
}

/// Everything the online stage needs.
#[derive(Debug, Clone)]
pub struct OfflineArtifact {
    pub provenance: serde_json::Value,
    pub mesh: Mesh,
    pub model: CoefficientModel,
    pub set: SampleSet,
    pub basis: LocalBasis,
    pub system: CoupledSystem,
}

fn push_f64(body: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        body.extend_from_slice(&x.to_le_bytes());
    }
}

fn push_u64(body: &mut Vec<u8>, v: impl Iterator<Item = usize>) {
    for x in v {
        body.extend_from_slice(&(x as u64).to_le_bytes());
    }
}

impl OfflineArtifact {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let triplets = self.system.matrix().triplets();
        let mut body = Vec::new();
        let mut sections = Vec::new();
        let mut section = |name: &str, words: usize| sections.push(Section { name: name.into(), words });
        push_f64(&mut body, self.set.points());
        section("sample_points", self.set.points().len());
        push_f64(&mut body, self.set.weights());
        section("sample_weights", self.set.len());
        push_f64(&mut body, self.basis.data());
        section("basis_vectors", self.basis.data().len());
        push_u64(&mut body, triplets.iter().map(|t| t.0));
        section("sm_rows", triplets.len());
        push_u64(&mut body, triplets.iter().map(|t| t.1));
        section("sm_cols", triplets.len());
        push_f64(&mut body, &triplets.iter().map(|t| t.2).collect::<Vec<_>>());
        section("sm_values", triplets.len());
        push_f64(&mut body, self.system.means());
        section("basis_means", self.system.means().len());

        let header = Header {
            provenance: self.provenance.clone(),
            dim: self.mesh.dim(),
            cells: self.mesh.cells(),
            model: self.model.clone(),
            sample_m: self.set.m(),
            sample_len: self.set.len(),
            measure: self.set.measure(),
            generator: self.set.generator(),
            sample_fingerprint: self.set.fingerprint().to_string(),
            basis: self.basis.header(),
            sm_size: self.system.size(),
            sm_nnz: triplets.len(),
            sections,
            body_sha256: hex(&Sha256::digest(&body)),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| HsfemError::Artifact(msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not an offline artifact (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(HsfemError::Artifact(format!(
                "unsupported artifact version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let hend = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..hend])?;
        let body = &bytes[hend..];
        if hex(&Sha256::digest(body)) != header.body_sha256 {
            return Err(bad("artifact body checksum mismatch"));
        }
        let expected: usize = header.sections.iter().map(|s| s.words * 8).sum();
        if expected != body.len() {
            return Err(bad("artifact body length does not match its sections"));
        }
        let mut pos = 0;
        let mut words = |name: &str| -> Result<&[u8]> {
            let s = header
                .sections
                .iter()
                .find(|s| s.name == name)
                .ok_or_else(|| HsfemError::Artifact(format!("missing section {name}")))?;
            let start: usize = header.sections.iter().take_while(|t| t.name != name).map(|t| t.words * 8).sum();
            pos = start + s.words * 8;
            Ok(&body[start..pos])
        };
        let f64s = |b: &[u8]| -> Vec<f64> { b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect() };
        let usizes = |b: &[u8]| -> Vec<usize> {
            b.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize).collect()
        };
        let points = f64s(words("sample_points")?);
        let weights = f64s(words("sample_weights")?);
        let data = f64s(words("basis_vectors")?);
        let rows = usizes(words("sm_rows")?);
        let cols = usizes(words("sm_cols")?);
        let vals = f64s(words("sm_values")?);
        let means = f64s(words("basis_means")?);

        let set = SampleSet::new(header.sample_m, points, weights, header.measure, header.generator)?;
        if set.fingerprint() != header.sample_fingerprint {
            return Err(HsfemError::SampleSetMismatch);
        }
        let mesh = Mesh::with_cells(header.dim, header.cells)?;
        let basis = LocalBasis::from_parts(header.basis, data)?;
        if rows.iter().chain(&cols).any(|&i| i >= header.sm_size) {
            return Err(bad("coupled matrix index out of range"));
        }
        let triplets: Vec<(usize, usize, f64)> =
            rows.into_iter().zip(cols).zip(vals).map(|((r, c), v)| (r, c, v)).collect();
        let sm = CsrMatrix::from_triplets(header.sm_size, &triplets);
        let system = CoupledSystem::from_parts(basis.ks().to_vec(), sm, means, set.fingerprint().to_string())?;
        Ok(OfflineArtifact {
            provenance: header.provenance,
            mesh,
            model: header.model,
            set,
            basis,
            system,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
