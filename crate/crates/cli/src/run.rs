//! `fit` and `sweep-inducing`: run EM for every seed and write the results.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use gpmix_core::data::pca_variance_dims;
use gpmix_core::metrics::{clustering_accuracy, nmi, LabelPair};
use gpmix_core::mixture::checkpoint::Checkpoint;
use gpmix_core::{em_fit, Dataset, EmConfig, FitOutput};
use serde::{Deserialize, Serialize};

use crate::config::{Clusters, DataSource, ExperimentConfig, LatentDims};
use crate::error::{CliError, CliResult};
use crate::output::write_atomic;

pub const RUN_RECORD_FILE: &str = "run_record.json";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";

pub fn load_dataset(source: &DataSource) -> CliResult<Dataset> {
    match source {
        DataSource::Csv { path, labels } => {
            if !path.is_file() {
                return Err(CliError::Usage(format!("cannot read dataset {}", path.display())));
            }
            Ok(Dataset::from_csv_path(path, labels.column()).map_err(CliError::Input)?)
        }
        DataSource::Synth(spec) => spec.generate().map_err(CliError::Input),
    }
}

/// Mean and sample standard deviation (zero for a single value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Summary { mean, sd })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub nmi: Option<f64>,
    pub kl_bound: f64,
    pub wall_time_s: f64,
    /// Paths relative to the output directory.
    pub embedding: PathBuf,
    pub trace: PathBuf,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: Option<Summary>,
    pub nmi: Option<Summary>,
    pub kl_bound: Summary,
    pub wall_time_s: Summary,
}

impl Aggregate {
    pub fn of(runs: &[SeedRun]) -> Option<Aggregate> {
        let collect = |f: &dyn Fn(&SeedRun) -> Option<f64>| -> Option<Vec<f64>> { runs.iter().map(f).collect() };
        Some(Aggregate {
            accuracy: collect(&|r| r.accuracy).and_then(|v| Summary::of(&v)),
            nmi: collect(&|r| r.nmi).and_then(|v| Summary::of(&v)),
            kl_bound: Summary::of(&runs.iter().map(|r| r.kl_bound).collect::<Vec<_>>())?,
            wall_time_s: Summary::of(&runs.iter().map(|r| r.wall_time_s).collect::<Vec<_>>())?,
        })
    }
}

/// Everything one `fit` invocation produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub dataset: String,
    pub n: usize,
    pub p: usize,
    pub latent_dim: usize,
    pub n_clusters: usize,
    pub n_inducing: usize,
    pub runs: Vec<SeedRun>,
    pub aggregate: Aggregate,
}

/// Concrete model sizes for one dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Resolved {
    pub latent_dim: usize,
    pub n_clusters: usize,
    pub n_inducing: usize,
}

pub fn resolve(cfg: &ExperimentConfig, data: &Dataset) -> CliResult<Resolved> {
    let n_clusters = match cfg.clusters {
        Clusters::Fixed(m) => m,
        Clusters::FromLabels => data
            .n_classes()
            .ok_or_else(|| CliError::Usage("clusters = auto needs a labelled dataset".into()))?,
    };
    // retained variance is measured on the data as read, before any scaling
    let latent_dim = match cfg.latent {
        LatentDims::Explicit(q) => q,
        LatentDims::VariancePct(pct) => pca_variance_dims(&data.y, pct).map_err(CliError::Input)?,
    };
    if latent_dim > data.p() {
        return Err(CliError::Usage(format!(
            "latent dimension {latent_dim} exceeds the {} data columns",
            data.p()
        )));
    }
    let n_inducing = cfg.n_inducing.unwrap_or(crate::config::DEFAULT_INDUCING.min(data.n()));
    if n_inducing > data.n() {
        return Err(CliError::Usage(format!("{n_inducing} inducing inputs for {} samples", data.n())));
    }
    if n_clusters > data.n() {
        return Err(CliError::Usage(format!("{n_clusters} clusters for {} samples", data.n())));
    }
    Ok(Resolved {
        latent_dim,
        n_clusters,
        n_inducing,
    })
}

pub fn em_config(cfg: &ExperimentConfig, sizes: Resolved, seed: u64) -> EmConfig {
    let mut em = EmConfig::new(cfg.kernel, sizes.n_clusters, sizes.latent_dim, sizes.n_inducing);
    em.n_iter = cfg.iterations;
    em.inner_iters = cfg.inner_iterations;
    em.seed = seed;
    em.standardize = cfg.standardize;
    em.isomap_neighbors = cfg.isomap_neighbors;
    em
}

fn embedding_csv(out: &FitOutput, labels: Option<&[i64]>) -> String {
    let q = out.state.q();
    let mut s = String::new();
    for d in 1..=q {
        let _ = write!(s, "x{d},");
    }
    s.push_str("cluster,label\n");
    for i in 0..out.state.n() {
        for d in 0..q {
            let _ = write!(s, "{},", out.state.x[(i, d)]);
        }
        let _ = write!(s, "{},", out.clusters[i]);
        if let Some(l) = labels {
            let _ = write!(s, "{}", l[i]);
        }
        s.push('\n');
    }
    s
}

fn trace_csv(out: &FitOutput) -> String {
    let mut s = String::from("iter,kl_bound,accuracy\n");
    for r in &out.records {
        let _ = write!(s, "{},{},", r.iteration, r.kl_bound);
        if let Some(a) = r.accuracy {
            let _ = write!(s, "{a}");
        }
        s.push('\n');
    }
    s
}

fn run_seed(
    cfg: &ExperimentConfig,
    data: &Dataset,
    sizes: Resolved,
    seed: u64,
    observe: &mut dyn FnMut(u64, &FitOutput),
) -> CliResult<SeedRun> {
    let em = em_config(cfg, sizes, seed);
    let start = Instant::now();
    let out = em_fit(data, &em)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    log::info!("seed {seed}: bound {:.4} after {wall_time_s:.2} s", out.report.kl_corrected);

    let labels = data.labels.as_deref();
    let (accuracy, nmi_value) = match labels {
        Some(l) => {
            let pair = LabelPair::from_clusters(l, &out.clusters)?;
            (Some(clustering_accuracy(&pair)), Some(nmi(&pair)))
        }
        None => (None, None),
    };

    let dir = PathBuf::from(format!("seed-{seed}"));
    let run = SeedRun {
        seed,
        accuracy,
        nmi: nmi_value,
        kl_bound: out.report.kl_corrected,
        wall_time_s,
        embedding: dir.join("embedding.csv"),
        trace: dir.join("trace.csv"),
        checkpoint: dir.join("model.ckpt"),
    };
    let root = &cfg.output_dir;
    write_atomic(&root.join(&run.embedding), embedding_csv(&out, labels).as_bytes())?;
    write_atomic(&root.join(&run.trace), trace_csv(&out).as_bytes())?;
    let ckpt = Checkpoint {
        state: out.state.clone(),
        responsibilities: out.responsibilities.clone(),
        p: data.p(),
        seed,
        trace: out.report.trace.clone(),
    };
    ckpt.save(root.join(&run.checkpoint))?;
    observe(seed, &out);
    Ok(run)
}

/// Fits the configured model once per seed. Per-seed embedding, trace and
/// checkpoint files go to `output_dir/seed-<s>/` and the run record to
/// `output_dir/run_record.json`.
pub fn cmd_fit(cfg: &ExperimentConfig) -> CliResult<RunRecord> {
    cmd_fit_observed(cfg, |_, _| {})
}

/// [`cmd_fit`] that also hands every seed's full fit to `observe`.
pub fn cmd_fit_observed(cfg: &ExperimentConfig, mut observe: impl FnMut(u64, &FitOutput)) -> CliResult<RunRecord> {
    cfg.validate()?;
    let data = load_dataset(&cfg.source)?;
    cmd_fit_on(cfg, &data, &mut observe)
}

fn cmd_fit_on(cfg: &ExperimentConfig, data: &Dataset, observe: &mut dyn FnMut(u64, &FitOutput)) -> CliResult<RunRecord> {
    let sizes = resolve(cfg, data)?;
    log::info!(
        "{}: N={} P={} Q={} M={} inducing={}",
        data.name,
        data.n(),
        data.p(),
        sizes.latent_dim,
        sizes.n_clusters,
        sizes.n_inducing
    );
    let runs = cfg
        .seeds
        .iter()
        .map(|&seed| run_seed(cfg, data, sizes, seed, observe))
        .collect::<CliResult<Vec<_>>>()?;
    let record = RunRecord {
        config: cfg.clone(),
        dataset: data.name.clone(),
        n: data.n(),
        p: data.p(),
        latent_dim: sizes.latent_dim,
        n_clusters: sizes.n_clusters,
        n_inducing: sizes.n_inducing,
        aggregate: Aggregate::of(&runs).expect("seed list is non-empty"),
        runs,
    };
    let json = serde_json::to_vec_pretty(&record).map_err(|e| CliError::Usage(e.to_string()))?;
    write_atomic(&cfg.output_dir.join(RUN_RECORD_FILE), &json)?;
    Ok(record)
}

/// An entry of the inducing-count list; `N` stands for every sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InducingCount {
    Count(usize),
    All,
}

impl FromStr for InducingCount {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "N" | "n" | "all" => Ok(InducingCount::All),
            t => t
                .parse()
                .map(InducingCount::Count)
                .map_err(|_| format!("inducing count must be a number or `N`, got `{t}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_inducing: usize,
    pub mean_accuracy: Option<f64>,
    pub mean_nmi: Option<f64>,
    pub mean_wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub records: Vec<RunRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs `fit` once per inducing count, each into
/// `output_dir/inducing-<k>/`, and writes a summary table.
pub fn cmd_sweep_inducing(cfg: &ExperimentConfig, counts: &[InducingCount]) -> CliResult<SweepReport> {
    if counts.is_empty() {
        return Err(CliError::Usage("empty inducing list".into()));
    }
    cfg.validate()?;
    let data = load_dataset(&cfg.source)?;
    let resolved: Vec<usize> = counts
        .iter()
        .map(|c| match c {
            InducingCount::All => data.n(),
            InducingCount::Count(k) => *k,
        })
        .collect();
    if let Some(&bad) = resolved.iter().find(|&&k| k == 0 || k > data.n()) {
        return Err(CliError::Usage(format!("{bad} inducing inputs for {} samples", data.n())));
    }
    let mut rows = Vec::with_capacity(resolved.len());
    let mut records = Vec::with_capacity(resolved.len());
    for k in resolved {
        let mut sub = cfg.clone();
        sub.n_inducing = Some(k);
        sub.output_dir = cfg.output_dir.join(format!("inducing-{k}"));
        let record = cmd_fit_on(&sub, &data, &mut |_, _| {})?;
        let agg = &record.aggregate;
        rows.push(SweepRow {
            n_inducing: k,
            mean_accuracy: agg.accuracy.map(|s| s.mean),
            mean_nmi: agg.nmi.map(|s| s.mean),
            mean_wall_time_s: agg.wall_time_s.mean,
        });
        records.push(record);
    }
    let mut csv = String::from("n_inducing,mean_accuracy,mean_nmi,mean_wall_time_s\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.n_inducing,
            opt(r.mean_accuracy),
            opt(r.mean_nmi),
            r.mean_wall_time_s
        );
    }
    write_atomic(&cfg.output_dir.join(SWEEP_SUMMARY_FILE), csv.as_bytes())?;
    Ok(SweepReport { rows, records })
}

/// Reads a run record back from an output directory.
pub fn read_run_record(dir: &Path) -> CliResult<RunRecord> {
    let bytes = std::fs::read(dir.join(RUN_RECORD_FILE))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("bad run record: {e}")))
}
