//! JSON problem files.
//!
//! ```json
//! {"version":1,"config":{...},"a":[...],"D_shared":[[[...]]],"D_local":[[[...]]],
//!  "C_blocks":[[0,1,[[...]]],...],"t":...,"noise":"gaussian","sigma_blocks":[[[...]]]}
//! ```
//!
//! Matrices are nested row-major arrays; every float is written with 17
//! significant digits so a file reads back bit for bit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use umdo_core::problem::CouplingBlock;
use umdo_core::{NoiseKind, ProblemConfig, ScalableProblem, UncertaintyModel};

use crate::json::to_json_bytes;
use crate::{BenchError, Result};

pub const FORMAT_VERSION: u32 = 1;

/// A problem together with its noise model, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemBundle {
    pub problem: ScalableProblem,
    pub noise: UncertaintyModel,
}

type Rows = Vec<Vec<f64>>;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigRecord {
    n_disciplines: usize,
    d_shared: usize,
    d_local: Vec<usize>,
    p_coupling: Vec<usize>,
    coupling_strength: f64,
    feasibility_level: f64,
    seed: u64,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum NoiseRecord {
    Gaussian,
    None,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemRecord {
    version: u32,
    config: ConfigRecord,
    a: Vec<f64>,
    #[serde(rename = "D_shared")]
    d_shared: Vec<Rows>,
    #[serde(rename = "D_local")]
    d_local: Vec<Rows>,
    #[serde(rename = "C_blocks")]
    c_blocks: Vec<(usize, usize, Rows)>,
    t: f64,
    #[serde(default = "gaussian")]
    noise: NoiseRecord,
    sigma_blocks: Vec<Rows>,
}

fn gaussian() -> NoiseRecord {
    NoiseRecord::Gaussian
}

#[derive(Deserialize)]
struct VersionProbe {
    version: Option<serde_json::Value>,
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &Rows, what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(BenchError::Format(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl ProblemBundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.problem;
        let c = &p.config;
        let finite =
            p.a.iter()
                .chain(p.d_shared.iter().flat_map(|m| m.iter()))
                .chain(p.d_local.iter().flat_map(|m| m.iter()))
                .chain(p.c_blocks.iter().flat_map(|b| b.matrix.iter()))
                .chain(self.noise.sigma_blocks.iter().flat_map(|m| m.iter()))
                .chain([&p.t, &c.coupling_strength, &c.feasibility_level])
                .all(|v| v.is_finite());
        if !finite {
            return Err(BenchError::Format("problem contains non-finite values".into()));
        }
        let record = ProblemRecord {
            version: FORMAT_VERSION,
            config: ConfigRecord {
                n_disciplines: c.n_disciplines,
                d_shared: c.d_shared,
                d_local: c.d_local.clone(),
                p_coupling: c.p_coupling.clone(),
                coupling_strength: c.coupling_strength,
                feasibility_level: c.feasibility_level,
                seed: c.seed,
            },
            a: p.a.iter().copied().collect(),
            d_shared: p.d_shared.iter().map(rows).collect(),
            d_local: p.d_local.iter().map(rows).collect(),
            c_blocks: p.c_blocks.iter().map(|b| (b.i, b.j, rows(&b.matrix))).collect(),
            t: p.t,
            noise: match self.noise.kind {
                NoiseKind::Gaussian => NoiseRecord::Gaussian,
                NoiseKind::None => NoiseRecord::None,
            },
            sigma_blocks: self.noise.sigma_blocks.iter().map(rows).collect(),
        };
        to_json_bytes(&record)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_slice(bytes).map_err(|e| BenchError::Format(e.to_string()))?;
        match probe.version.as_ref().and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(BenchError::Version { found: v.to_string(), expected: FORMAT_VERSION });
            }
            None => {
                let found = probe.version.map_or_else(|| "missing".to_string(), |v| v.to_string());
                return Err(BenchError::Version { found, expected: FORMAT_VERSION });
            }
        }
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let record: ProblemRecord = serde_path_to_error::deserialize(de)
            .map_err(|e| BenchError::Format(format!("at `{}`: {}", e.path(), e.inner())))?;

        let cfg = record.config;
        let config = ProblemConfig {
            n_disciplines: cfg.n_disciplines,
            d_shared: cfg.d_shared,
            d_local: cfg.d_local,
            p_coupling: cfg.p_coupling,
            coupling_strength: cfg.coupling_strength,
            feasibility_level: cfg.feasibility_level,
            seed: cfg.seed,
        };
        let d_shared = record.d_shared.iter().map(|r| matrix(r, "D_shared")).collect::<Result<Vec<_>>>()?;
        let d_local = record.d_local.iter().map(|r| matrix(r, "D_local")).collect::<Result<Vec<_>>>()?;
        let c_blocks = record
            .c_blocks
            .iter()
            .map(|(i, j, r)| Ok(CouplingBlock { i: *i, j: *j, matrix: matrix(r, "C_blocks")? }))
            .collect::<Result<Vec<_>>>()?;
        let sigma_blocks = record.sigma_blocks.iter().map(|r| matrix(r, "sigma_blocks")).collect::<Result<Vec<_>>>()?;
        let problem =
            ScalableProblem { a: DVector::from_vec(record.a), d_shared, d_local, c_blocks, t: record.t, config };
        problem.validate()?;
        let noise = UncertaintyModel {
            kind: match record.noise {
                NoiseRecord::Gaussian => NoiseKind::Gaussian,
                NoiseRecord::None => NoiseKind::None,
            },
            sigma_blocks,
        };
        noise.validate(&problem.config.p_coupling)?;
        Ok(Self { problem, noise })
    }

    /// Hex SHA-256 of the serialized bundle.
    pub fn digest(&self) -> Result<String> {
        Ok(digest(&self.to_bytes()?))
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
