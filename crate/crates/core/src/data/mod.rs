//! Inputs to the model and everything used to initialize it.

mod fcm;
mod inducing;
mod isomap;
mod pca;
pub mod synth;

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use fcm::{fcm_cluster, FcmConfig, FcmResult};
pub use inducing::select_inducing;
pub use isomap::{isomap_embed, IsomapEmbedding, DEFAULT_NEIGHBORS};
pub use pca::{explained_variance, pca_variance_dims};

/// Observed matrix (one row per data point) with optional class labels.
/// Labels are only ever used for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub y: DMatrix<f64>,
    pub labels: Option<Vec<i64>>,
    pub name: String,
}

/// Where the class label lives in a CSV row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LabelColumn {
    #[default]
    None,
    Last,
    Index(usize),
}

impl Dataset {
    pub fn new(y: DMatrix<f64>, labels: Option<Vec<i64>>, name: impl Into<String>) -> Result<Self> {
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset values".into()));
        }
        if let Some(l) = &labels {
            if l.len() != y.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} rows",
                    l.len(),
                    y.nrows()
                )));
            }
        }
        Ok(Dataset {
            y,
            labels,
            name: name.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().collect::<BTreeSet<_>>().len())
    }

    pub fn from_csv_path(path: impl AsRef<Path>, label: LabelColumn) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        Self::from_csv_reader(file, label, name)
    }

    /// Parses a comma-separated numeric matrix. A first row containing any
    /// non-numeric feature field is treated as a header. Labels that are all
    /// integers are kept as-is; otherwise distinct strings are numbered in
    /// sorted order.
    pub fn from_csv_reader(reader: impl Read, label: LabelColumn, name: impl Into<String>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut raw_labels: Vec<String> = Vec::new();
        let mut width = None;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            let fields: Vec<&str> = rec.iter().collect();
            let label_idx = match label {
                LabelColumn::None => None,
                LabelColumn::Last => Some(fields.len() - 1),
                LabelColumn::Index(i) => {
                    if i >= fields.len() {
                        return Err(Error::Parse(format!("label column {i} out of range on line {}", line + 1)));
                    }
                    Some(i)
                }
            };
            let mut values = Vec::with_capacity(fields.len());
            let mut numeric = true;
            for (j, f) in fields.iter().enumerate() {
                if Some(j) == label_idx {
                    continue;
                }
                match f.parse::<f64>() {
                    Ok(v) => values.push(v),
                    Err(_) => {
                        numeric = false;
                        break;
                    }
                }
            }
            if !numeric {
                if line == 0 {
                    continue;
                }
                return Err(Error::Parse(format!("non-numeric value on line {}", line + 1)));
            }
            match width {
                None => width = Some(values.len()),
                Some(w) if w != values.len() => {
                    return Err(Error::Parse(format!(
                        "line {} has {} features, expected {w}",
                        line + 1,
                        values.len()
                    )))
                }
                _ => {}
            }
            if let Some(i) = label_idx {
                raw_labels.push(fields[i].to_string());
            }
            rows.push(values);
        }
        let p = width.ok_or_else(|| Error::Parse("no data rows".into()))?;
        let n = rows.len();
        let y = DMatrix::from_row_iterator(n, p, rows.into_iter().flatten());
        let labels = if label == LabelColumn::None {
            None
        } else {
            Some(encode_labels(&raw_labels))
        };
        Self::new(y, labels, name)
    }

    /// Writes `x1..xP[,label]` with a header row. Values use the shortest
    /// representation that round-trips.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let mut header: Vec<String> = (1..=self.p()).map(|j| format!("x{j}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.n() {
            let mut fields: Vec<String> = self.y.row(i).iter().map(|v| format!("{v}")).collect();
            if let Some(l) = &self.labels {
                fields.push(l[i].to_string());
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

fn encode_labels(raw: &[String]) -> Vec<i64> {
    let ints: Option<Vec<i64>> = raw.iter().map(|s| s.parse::<i64>().ok()).collect();
    if let Some(v) = ints {
        return v;
    }
    let distinct: Vec<&String> = raw.iter().collect::<BTreeSet<_>>().into_iter().collect();
    raw.iter()
        .map(|s| distinct.binary_search(&s).expect("label present") as i64)
        .collect()
}

/// Per-column sample variance (`N − 1` denominator; a single row gives 0).
pub fn column_variances(y: &DMatrix<f64>) -> Vec<f64> {
    let n = y.nrows() as f64;
    y.column_iter()
        .map(|c| {
            if y.nrows() < 2 {
                return 0.0;
            }
            let mean = c.mean();
            c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .collect()
}

/// Shifts every column to zero mean and scales it to unit sample variance.
/// Constant columns are only centered.
pub fn standardize(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let vars = column_variances(y);
    if vars.iter().all(|v| *v <= 0.0) {
        return Err(Error::Degenerate("every column has zero variance".into()));
    }
    let mut out = y.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let mean = col.mean();
        let sd = vars[j].sqrt();
        for v in col.iter_mut() {
            *v -= mean;
            if sd > 0.0 {
                *v /= sd;
            }
        }
    }
    Ok(out)
}

/// Seeded generator for one named purpose, so independent random decisions
/// made under the same seed do not share a stream.
pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) mod streams {
    pub const INDUCING: u64 = 1;
    pub const FCM: u64 = 2;
    pub const SYNTH: u64 = 3;
}
