//! Binary model snapshots.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! 8 bytes   magic "GPMXCKPT"
//! u32       format version (1)
//! u32       header length H
//! H bytes   UTF-8 JSON header (dimensions, kernel tag, seed, array table)
//! f64 × …   arrays in header order, matrices row-major
//! ```
//!
//! Floats are written with `to_le_bytes`, so a save/load cycle is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ModelState, Responsibilities, TracePoint};
use crate::error::{Error, Result};
use crate::kernel::{KernelParams, KernelSpec};

pub const MAGIC: &[u8; 8] = b"GPMXCKPT";
pub const VERSION: u32 = 1;

/// Everything needed to resume or inspect a fit.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: ModelState,
    pub responsibilities: Responsibilities,
    /// Output dimension of the data the model was fitted to.
    pub p: usize,
    pub seed: u64,
    pub trace: Vec<TracePoint>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    n: usize,
    p: usize,
    q: usize,
    m: usize,
    n_inducing: usize,
    kernel: String,
    seed: u64,
    trace_len: usize,
    arrays: Vec<(String, usize)>,
}

fn row_major(a: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for i in 0..a.nrows() {
        out.extend(a.row(i).iter());
    }
    out
}

impl Checkpoint {
    fn arrays(&self) -> Vec<(&'static str, Vec<f64>)> {
        let s = &self.state;
        let kernels: Vec<f64> = s
            .kernels
            .iter()
            .flat_map(|k| [k.log_lin, k.log_rbf, k.log_gamma, k.log_bias, k.log_white])
            .collect();
        let trace: Vec<f64> = self
            .trace
            .iter()
            .flat_map(|t| [t.iteration as f64, t.kl_bound, t.accuracy.unwrap_or(f64::NAN)])
            .collect();
        vec![
            ("x", row_major(&s.x)),
            ("x_u", row_major(&s.x_u)),
            ("kernels", kernels),
            ("beta", vec![s.beta]),
            ("log_pi", s.log_pi.iter().copied().collect()),
            ("means", row_major(&s.means)),
            ("log_cov_diag", row_major(&s.log_cov_diag)),
            ("responsibilities", row_major(self.responsibilities.matrix())),
            ("trace", trace),
        ]
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let arrays = self.arrays();
        let s = &self.state;
        let header = Header {
            n: s.n(),
            p: self.p,
            q: s.q(),
            m: s.m(),
            n_inducing: s.n_inducing(),
            kernel: s.kernel.tag().to_string(),
            seed: self.seed,
            trace_len: self.trace.len(),
            arrays: arrays.iter().map(|(k, v)| (k.to_string(), v.len())).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Parse(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, values) in &arrays {
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a checkpoint file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
        }
        r.read_exact(&mut word)?;
        let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
        r.read_exact(&mut json)?;
        let h: Header = serde_json::from_slice(&json).map_err(|e| Error::Parse(e.to_string()))?;
        let kernel = KernelSpec::from_tag(&h.kernel)?;

        let expected = [
            ("x", h.n * h.q),
            ("x_u", h.n_inducing * h.q),
            ("kernels", h.m * 5),
            ("beta", 1),
            ("log_pi", h.m),
            ("means", h.m * h.q),
            ("log_cov_diag", h.m * h.q),
            ("responsibilities", h.n * h.m),
            ("trace", h.trace_len * 3),
        ];
        if h.arrays.len() != expected.len()
            || h.arrays.iter().zip(&expected).any(|((a, la), (b, lb))| a != b || la != lb)
        {
            return Err(Error::Parse("checkpoint array table does not match its dimensions".into()));
        }
        let mut read = |len: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; 8 * len];
            r.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect())
        };
        let x = DMatrix::from_row_slice(h.n, h.q, &read(h.n * h.q)?);
        let x_u = DMatrix::from_row_slice(h.n_inducing, h.q, &read(h.n_inducing * h.q)?);
        let kernels = read(h.m * 5)?
            .chunks_exact(5)
            .map(|c| KernelParams {
                log_lin: c[0],
                log_rbf: c[1],
                log_gamma: c[2],
                log_bias: c[3],
                log_white: c[4],
            })
            .collect();
        let beta = read(1)?[0];
        let log_pi = DVector::from_vec(read(h.m)?);
        let means = DMatrix::from_row_slice(h.m, h.q, &read(h.m * h.q)?);
        let log_cov_diag = DMatrix::from_row_slice(h.m, h.q, &read(h.m * h.q)?);
        let resp = DMatrix::from_row_slice(h.n, h.m, &read(h.n * h.m)?);
        let trace = read(h.trace_len * 3)?
            .chunks_exact(3)
            .map(|c| TracePoint {
                iteration: c[0] as usize,
                kl_bound: c[1],
                accuracy: if c[2].is_nan() { None } else { Some(c[2]) },
            })
            .collect();
        let state = ModelState {
            kernel,
            x,
            x_u,
            kernels,
            beta,
            log_pi,
            means,
            log_cov_diag,
        };
        state.validate()?;
        Ok(Checkpoint {
            state,
            responsibilities: Responsibilities::from_raw(resp),
            p: h.p,
            seed: h.seed,
            trace,
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("ckpt.tmp");
        {
            let file = std::fs::File::create(&tmp)?;
            self.write_to(std::io::BufWriter::new(file))?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
