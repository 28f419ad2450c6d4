//! Experiment configuration: an optional TOML file overlaid by flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use gpmix_core::data::LabelColumn;
use gpmix_core::KernelSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_INDUCING: usize = 50;
pub const DEFAULT_OUTPUT_DIR: &str = "gpmix-out";

/// Where the label of each CSV row lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LabelSpec {
    None,
    Last,
    Column(usize),
}

impl FromStr for LabelSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "none" => Ok(LabelSpec::None),
            "last" => Ok(LabelSpec::Last),
            other => other
                .parse()
                .map(LabelSpec::Column)
                .map_err(|_| format!("label column must be `none`, `last` or an index, got `{other}`")),
        }
    }
}

impl TryFrom<String> for LabelSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<LabelSpec> for String {
    fn from(l: LabelSpec) -> String {
        l.to_string()
    }
}

impl fmt::Display for LabelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelSpec::None => write!(f, "none"),
            LabelSpec::Last => write!(f, "last"),
            LabelSpec::Column(i) => write!(f, "{i}"),
        }
    }
}

impl LabelSpec {
    pub fn column(self) -> LabelColumn {
        match self {
            LabelSpec::None => LabelColumn::None,
            LabelSpec::Last => LabelColumn::Last,
            LabelSpec::Column(i) => LabelColumn::Index(i),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Arcs,
    Spiral,
}

impl SynthKind {
    /// Points per arc for `arcs`, total points for `spiral`.
    pub fn default_size(self) -> usize {
        match self {
            SynthKind::Arcs => 30,
            SynthKind::Spiral => 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub size: usize,
    /// Only used by the spiral.
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind) -> Self {
        SynthSpec {
            kind,
            size: kind.default_size(),
            noise: 0.05,
            seed: 0,
        }
    }

    pub fn generate(&self) -> gpmix_core::Result<gpmix_core::Dataset> {
        use gpmix_core::data::synth;
        match self.kind {
            SynthKind::Arcs => synth::synth_circle_arcs(self.size, self.seed),
            SynthKind::Spiral => synth::synth_spiral3d(self.size, self.noise, self.seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf, labels: LabelSpec },
    Synth(SynthSpec),
}

/// Number of mixture components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ClustersField", into = "ClustersField")]
pub enum Clusters {
    /// As many as there are distinct labels.
    FromLabels,
    Fixed(usize),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ClustersField {
    Count(usize),
    Word(String),
}

impl TryFrom<ClustersField> for Clusters {
    type Error = String;
    fn try_from(f: ClustersField) -> Result<Self, String> {
        match f {
            ClustersField::Count(m) => Ok(Clusters::Fixed(m)),
            ClustersField::Word(w) => w.parse(),
        }
    }
}

impl From<Clusters> for ClustersField {
    fn from(c: Clusters) -> Self {
        match c {
            Clusters::FromLabels => ClustersField::Word("auto".into()),
            Clusters::Fixed(m) => ClustersField::Count(m),
        }
    }
}

impl FromStr for Clusters {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "auto" => Ok(Clusters::FromLabels),
            other => other
                .parse()
                .map(Clusters::Fixed)
                .map_err(|_| format!("clusters must be a count or `auto`, got `{other}`")),
        }
    }
}

/// How the latent dimensionality is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentDims {
    /// Smallest count of principal directions keeping this share (in
    /// percent) of the raw data variance.
    VariancePct(f64),
    Explicit(usize),
}

/// Seed lists: `1..10` (inclusive), `3,5,8`, or a single value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

impl FromStr for SeedList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("cannot read seed list `{s}`");
        let s = s.trim();
        let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
            let b = b.strip_prefix('=').unwrap_or(b);
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if a > b {
                return Err(bad());
            }
            (a..=b).collect()
        } else {
            s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
        };
        if seeds.is_empty() {
            return Err(bad());
        }
        Ok(SeedList(seeds))
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum SeedsField {
    List(Vec<u64>),
    Text(String),
}

/// The contents of a `--config` file. Keys mirror the long flag names with
/// dashes replaced by underscores.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    labels: Option<LabelSpec>,
    synth: Option<SynthKind>,
    synth_size: Option<usize>,
    synth_noise: Option<f64>,
    synth_seed: Option<u64>,
    kernel: Option<KernelSpec>,
    clusters: Option<Clusters>,
    variance_pct: Option<f64>,
    q: Option<usize>,
    inducing: Option<usize>,
    iters: Option<usize>,
    inner_iters: Option<usize>,
    seeds: Option<SeedsField>,
    standardize: Option<bool>,
    neighbors: Option<usize>,
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum KernelArg {
    Linear,
    Rbf,
}

impl From<KernelArg> for KernelSpec {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Linear => KernelSpec::Linear,
            KernelArg::Rbf => KernelSpec::Rbf,
        }
    }
}

/// Flags shared by `fit` and `sweep-inducing`. Every flag overrides the
/// matching key of `--config`.
#[derive(Clone, Debug, Default, Args)]
pub struct ExperimentArgs {
    /// TOML file with default settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV, one row per sample.
    #[arg(long, conflicts_with = "synth")]
    pub data: Option<PathBuf>,
    /// Label column of the CSV: `none`, `last` or a 0-based index.
    #[arg(long)]
    pub labels: Option<LabelSpec>,
    /// Use a generated dataset instead of a CSV.
    #[arg(long, value_enum)]
    pub synth: Option<SynthKind>,
    /// Points per arc, or total spiral points.
    #[arg(long)]
    pub synth_size: Option<usize>,
    #[arg(long)]
    pub synth_noise: Option<f64>,
    #[arg(long)]
    pub synth_seed: Option<u64>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// Component count or `auto` to match the number of labels.
    #[arg(long)]
    pub clusters: Option<Clusters>,
    /// Pick the latent dimension from retained variance, in percent.
    #[arg(long, conflicts_with = "q")]
    pub variance_pct: Option<f64>,
    /// Latent dimension.
    #[arg(long)]
    pub q: Option<usize>,
    /// Number of inducing inputs.
    #[arg(long)]
    pub inducing: Option<usize>,
    /// Outer EM iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Optimizer iterations per M-step.
    #[arg(long)]
    pub inner_iters: Option<usize>,
    /// `1..10`, `1,4,9` or a single seed.
    #[arg(long)]
    pub seeds: Option<SeedList>,
    /// Scale every column to zero mean and unit variance.
    #[arg(long)]
    pub standardize: Option<bool>,
    /// Neighborhood size of the initial embedding.
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub kernel: KernelSpec,
    pub clusters: Clusters,
    pub latent: LatentDims,
    /// `None` means `min(50, N)`.
    pub n_inducing: Option<usize>,
    pub iterations: usize,
    pub inner_iterations: usize,
    pub seeds: Vec<u64>,
    pub standardize: bool,
    pub isomap_neighbors: usize,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// A config with defaults for everything but the data and latent
    /// dimension.
    pub fn new(source: DataSource, latent: LatentDims) -> Self {
        ExperimentConfig {
            source,
            kernel: KernelSpec::Rbf,
            clusters: Clusters::FromLabels,
            latent,
            n_inducing: None,
            iterations: 100,
            inner_iterations: 20,
            seeds: vec![1],
            standardize: true,
            isomap_neighbors: gpmix_core::data::DEFAULT_NEIGHBORS,
            output_dir: PathBuf::from(DEFAULT_OUTPUT_DIR),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |m: &str| Err(CliError::Usage(m.to_string()));
        if self.seeds.is_empty() {
            return usage("at least one seed is required");
        }
        if self.iterations == 0 || self.inner_iterations == 0 {
            return usage("iteration counts must be positive");
        }
        if self.isomap_neighbors == 0 {
            return usage("neighbors must be positive");
        }
        match self.latent {
            LatentDims::VariancePct(v) if !(v > 0.0 && v <= 100.0) => {
                return usage("variance-pct must lie in (0, 100]");
            }
            LatentDims::Explicit(0) => return usage("q must be positive"),
            _ => {}
        }
        if self.clusters == Clusters::Fixed(0) {
            return usage("clusters must be positive");
        }
        if self.n_inducing == Some(0) {
            return usage("inducing must be positive");
        }
        Ok(())
    }

    /// Reads `args.config` if given and lays the flags over it.
    pub fn from_args(args: &ExperimentArgs) -> CliResult<Self> {
        let file = match &args.config {
            Some(path) => read_file_config(path)?,
            None => FileConfig::default(),
        };
        let source = if args.data.is_some() || args.synth.is_some() {
            source_from(args.data.clone(), args.synth, args, &file)?
        } else {
            source_from(file.data.clone(), file.synth, args, &file)?
        };
        let latent = match (args.variance_pct, args.q) {
            (Some(v), _) => LatentDims::VariancePct(v),
            (None, Some(q)) => LatentDims::Explicit(q),
            (None, None) => match (file.variance_pct, file.q) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Usage("config sets both variance_pct and q".into()));
                }
                (Some(v), None) => LatentDims::VariancePct(v),
                (None, Some(q)) => LatentDims::Explicit(q),
                (None, None) => {
                    return Err(CliError::Usage("give either --q or --variance-pct".into()));
                }
            },
        };
        let mut cfg = ExperimentConfig::new(source, latent);
        if let Some(k) = args.kernel.map(KernelSpec::from).or(file.kernel) {
            cfg.kernel = k;
        }
        if let Some(c) = args.clusters.or(file.clusters) {
            cfg.clusters = c;
        }
        cfg.n_inducing = args.inducing.or(file.inducing);
        if let Some(i) = args.iters.or(file.iters) {
            cfg.iterations = i;
        }
        if let Some(i) = args.inner_iters.or(file.inner_iters) {
            cfg.inner_iterations = i;
        }
        let file_seeds = match file.seeds {
            Some(SeedsField::List(v)) => Some(v),
            Some(SeedsField::Text(t)) => Some(t.parse::<SeedList>().map_err(CliError::Usage)?.0),
            None => None,
        };
        if let Some(s) = args.seeds.clone().map(|s| s.0).or(file_seeds) {
            cfg.seeds = s;
        }
        if let Some(s) = args.standardize.or(file.standardize) {
            cfg.standardize = s;
        }
        if let Some(k) = args.neighbors.or(file.neighbors) {
            cfg.isomap_neighbors = k;
        }
        if let Some(d) = args.output_dir.clone().or(file.output_dir) {
            cfg.output_dir = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_file_config(path: &Path) -> CliResult<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
}

fn source_from(
    data: Option<PathBuf>,
    synth: Option<SynthKind>,
    args: &ExperimentArgs,
    file: &FileConfig,
) -> CliResult<DataSource> {
    match (data, synth) {
        (Some(_), Some(_)) => Err(CliError::Usage("choose either a data file or a synthetic set".into())),
        (Some(path), None) => Ok(DataSource::Csv {
            path,
            labels: args.labels.or(file.labels).unwrap_or(LabelSpec::Last),
        }),
        (None, Some(kind)) => {
            let mut spec = SynthSpec::new(kind);
            if let Some(n) = args.synth_size.or(file.synth_size) {
                spec.size = n;
            }
            if let Some(s) = args.synth_noise.or(file.synth_noise) {
                spec.noise = s;
            }
            if let Some(s) = args.synth_seed.or(file.synth_seed) {
                spec.seed = s;
            }
            Ok(DataSource::Synth(spec))
        }
        (None, None) => Err(CliError::Usage("no dataset: pass --data or --synth".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!("1..10".parse::<SeedList>().unwrap().0, (1..=10).collect::<Vec<_>>());
        assert_eq!("3..=4".parse::<SeedList>().unwrap().0, vec![3, 4]);
        assert_eq!("2, 7,9".parse::<SeedList>().unwrap().0, vec![2, 7, 9]);
        assert_eq!("5".parse::<SeedList>().unwrap().0, vec![5]);
        assert!("4..2".parse::<SeedList>().is_err());
        assert!("a,b".parse::<SeedList>().is_err());
        assert!("".parse::<SeedList>().is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(
            &path,
            "data = \"a.csv\"\nkernel = \"linear\"\nq = 3\nseeds = [4, 5]\ninducing = 20\nclusters = \"auto\"\n",
        )
        .unwrap();
        let args = ExperimentArgs {
            config: Some(path),
            variance_pct: Some(95.0),
            inducing: Some(10),
            ..ExperimentArgs::default()
        };
        let cfg = ExperimentConfig::from_args(&args).unwrap();
        assert_eq!(cfg.kernel, KernelSpec::Linear);
        assert_eq!(cfg.latent, LatentDims::VariancePct(95.0));
        assert_eq!(cfg.n_inducing, Some(10));
        assert_eq!(cfg.seeds, vec![4, 5]);
        assert_eq!(cfg.clusters, Clusters::FromLabels);
        assert_eq!(
            cfg.source,
            DataSource::Csv {
                path: "a.csv".into(),
                labels: LabelSpec::Last
            }
        );
    }

    #[test]
    fn flag_source_replaces_file_source() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "data = \"a.csv\"\nq = 2\nseeds = \"1..3\"\nclusters = 4\n").unwrap();
        let args = ExperimentArgs {
            config: Some(path),
            synth: Some(SynthKind::Arcs),
            ..ExperimentArgs::default()
        };
        let cfg = ExperimentConfig::from_args(&args).unwrap();
        assert!(matches!(cfg.source, DataSource::Synth(SynthSpec { kind: SynthKind::Arcs, .. })));
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.clusters, Clusters::Fixed(4));
    }

    #[test]
    fn rejects_incomplete_or_contradictory_configs() {
        let no_dims = ExperimentArgs {
            data: Some("a.csv".into()),
            ..ExperimentArgs::default()
        };
        assert!(matches!(ExperimentConfig::from_args(&no_dims), Err(CliError::Usage(_))));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "data = \"a.csv\"\nq = 2\nvariance_pct = 90\n").unwrap();
        let both = ExperimentArgs {
            config: Some(path.clone()),
            ..ExperimentArgs::default()
        };
        assert!(matches!(ExperimentConfig::from_args(&both), Err(CliError::Usage(_))));

        std::fs::write(&path, "data = \"a.csv\"\nq = 2\ncolour = 1\n").unwrap();
        assert!(matches!(ExperimentConfig::from_args(&both), Err(CliError::Usage(_))));

        let no_seeds = ExperimentArgs {
            data: Some("a.csv".into()),
            q: Some(2),
            seeds: Some(SeedList(vec![])),
            ..ExperimentArgs::default()
        };
        assert!(matches!(ExperimentConfig::from_args(&no_seeds), Err(CliError::Usage(_))));
    }

    #[test]
    fn config_echo_round_trips_through_json() {
        let mut cfg = ExperimentConfig::new(
            DataSource::Csv {
                path: "iris.csv".into(),
                labels: LabelSpec::Column(4),
            },
            LatentDims::VariancePct(95.0),
        );
        cfg.clusters = Clusters::Fixed(3);
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
