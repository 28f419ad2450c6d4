use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gpmix_cli::config::{KernelArg, SynthKind, SynthSpec};
use gpmix_cli::{
    cmd_fit, cmd_plot, cmd_sweep_inducing, cmd_synth, run_gradcheck, CliError, CliResult, ExperimentArgs,
    ExperimentConfig, GradcheckConfig, InducingCount,
};

#[derive(Parser)]
#[command(name = "gpmix", version, about = "Joint embedding and clustering with mixtures of sparse GP latent variable models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model once per seed and write embeddings, traces and a run record.
    Fit(ExperimentArgs),
    /// Repeat `fit` for several inducing counts and tabulate the results.
    SweepInducing {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Comma-separated counts; `N` means every sample.
        #[arg(long, value_delimiter = ',', required = true)]
        list: Vec<InducingCount>,
    },
    /// Render a 2-D embedding CSV as an SVG scatter plot.
    Plot {
        embedding: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Check analytic bound gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 15)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        inducing: usize,
        #[arg(long, default_value_t = 2)]
        clusters: usize,
        #[arg(long, default_value_t = 2)]
        q: usize,
        #[arg(long, default_value_t = 3)]
        p: usize,
        #[arg(long, value_enum, default_value = "rbf")]
        kernel: KernelArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_index: Option<usize>,
    },
    /// Write a generated dataset as CSV.
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        /// Points per arc, or total spiral points.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit(args) => {
            let cfg = ExperimentConfig::from_args(&args)?;
            let record = cmd_fit(&cfg)?;
            for r in &record.runs {
                println!(
                    "seed {:>3}  acc {:>6}  nmi {:>6}  bound {:.4}  {:.2}s",
                    r.seed,
                    fmt_opt(r.accuracy),
                    fmt_opt(r.nmi),
                    r.kl_bound,
                    r.wall_time_s
                );
            }
            let a = &record.aggregate;
            if let (Some(acc), Some(nmi)) = (a.accuracy, a.nmi) {
                println!(
                    "mean acc {:.2} ± {:.2}  nmi {:.2} ± {:.2}",
                    acc.mean, acc.sd, nmi.mean, nmi.sd
                );
            }
            println!("results in {}", cfg.output_dir.display());
        }
        Command::SweepInducing { experiment, list } => {
            let cfg = ExperimentConfig::from_args(&experiment)?;
            let report = cmd_sweep_inducing(&cfg, &list)?;
            println!("inducing  acc     nmi     seconds");
            for r in &report.rows {
                println!(
                    "{:>8}  {:>6}  {:>6}  {:.2}",
                    r.n_inducing,
                    fmt_opt(r.mean_accuracy),
                    fmt_opt(r.mean_nmi),
                    r.mean_wall_time_s
                );
            }
        }
        Command::Plot { embedding, out } => {
            let n = cmd_plot(&embedding, &out)?;
            println!("plotted {n} points to {}", out.display());
        }
        Command::Gradcheck {
            n,
            inducing,
            clusters,
            q,
            p,
            kernel,
            seed,
            corrupt_index,
        } => {
            let cfg = GradcheckConfig {
                n,
                n_inducing: inducing,
                clusters,
                latent_dim: q,
                output_dim: p,
                kernel: kernel.into(),
                seed,
                corrupt: corrupt_index,
                ..GradcheckConfig::default()
            };
            let report = run_gradcheck(&cfg)?;
            for b in &report.blocks {
                println!("{:<9} {:.3e}", b.block, b.max_rel_error);
            }
            if !report.passed() {
                let w = report.worst();
                return Err(CliError::CheckFailed(format!(
                    "gradient mismatch in block {} (index {}, error {:.3e})",
                    w.block, w.worst_index, w.max_rel_error
                )));
            }
            println!("ok");
        }
        Command::Synth {
            kind,
            size,
            noise,
            seed,
            out,
        } => {
            let mut spec = SynthSpec::new(kind);
            spec.noise = noise;
            spec.seed = seed;
            if let Some(s) = size {
                spec.size = s;
            }
            let n = cmd_synth(&spec, &out)?;
            println!("wrote {n} rows to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
