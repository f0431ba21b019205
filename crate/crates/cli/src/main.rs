use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmadmm::problems::LatentLrrFormulation;
use mmadmm_cli::commands::{self, PartitionStudy};
use mmadmm_cli::config::KEYS;
use mmadmm_cli::{generate, CliError, CliResult, GenerateSpec, Manifest, ProblemKind, RunConfig};

#[derive(Parser)]
#[command(name = "mmadmm", version, about = "Mixed Gauss-Seidel/Jacobian ADMM solvers and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic instance and its manifest.
    Generate {
        /// nnsc | nnsc-noisy | nmc | latent-lrr
        #[arg(long)]
        problem: String,
        /// Rows of A, rows of the matrix, or ambient dimension.
        #[arg(long, default_value_t = 50)]
        d: usize,
        /// Blocks (sparse coding) or columns (completion).
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Split this many columns evenly instead of m_i = 10 i.
        #[arg(long)]
        uniform_total: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        nonzero_fraction: f64,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long, default_value_t = 5)]
        rank: usize,
        #[arg(long, default_value_t = 0.6)]
        observed_fraction: f64,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 5)]
        subspaces: usize,
        #[arg(long, default_value_t = 5)]
        subspace_dim: usize,
        #[arg(long, default_value_t = 30)]
        per_subspace: usize,
        #[arg(long, default_value_t = 0.2)]
        corrupt_fraction: f64,
        /// Latent LRR model: 2 or 3 blocks.
        #[arg(long, default_value_t = 3)]
        formulation: u8,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one solver and write its trace.
    Solve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// key=value overrides of the config.
        #[arg(long = "set")]
        overrides: Vec<String>,
        #[arg(long)]
        workers: Option<usize>,
        /// Trace CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a gnuplot script for the trace.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Run several configs on one manifest and align their traces.
    Bench {
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Repeat every config for each of these rho values.
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
        #[arg(long = "set")]
        overrides: Vec<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Score every n1 of the sort-and-split heuristic.
    PartitionStudy {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: Option<usize>,
        /// Include the ||A_B1||^2 correction for n1 <= 3.
        #[arg(long)]
        correction: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// List the run-config keys and their defaults.
    Keys,
}

fn run_config(path: Option<&Path>, overrides: &[String], workers: Option<usize>) -> CliResult<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let mut all = overrides.to_vec();
    if let Some(w) = workers {
        all.push(format!("workers={w}"));
    }
    cfg.apply_overrides(&all)?;
    Ok(cfg)
}

/// CSV to `out` (or stdout); the summary goes to stdout after a file, else to stderr.
fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> CliResult<()>, summary: &str) -> CliResult<()> {
    match out {
        Some(p) => {
            let mut f = commands::create(p)?;
            write(&mut f)?;
            f.flush()?;
            println!("{summary}");
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn plot_target(out: Option<&Path>) -> CliResult<&Path> {
    out.ok_or_else(|| CliError::Config("--plot needs --out so the script can name the CSV".into()))
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate {
            problem,
            d,
            n,
            seed,
            uniform_total,
            nonzero_fraction,
            noise_sigma,
            rank,
            observed_fraction,
            lambda,
            subspaces,
            subspace_dim,
            per_subspace,
            corrupt_fraction,
            formulation,
            out,
        } => {
            let kind: ProblemKind = problem.parse()?;
            let formulation = match formulation {
                2 => LatentLrrFormulation::TwoBlock,
                3 => LatentLrrFormulation::ThreeBlock,
                f => return Err(CliError::Config(format!("formulation must be 2 or 3, got {f}"))),
            };
            let spec = GenerateSpec {
                uniform_total,
                nonzero_fraction,
                noise_sigma,
                rank,
                observed_fraction,
                lambda,
                subspaces,
                subspace_dim,
                per_subspace,
                corrupt_fraction,
                formulation,
                ..GenerateSpec::new(kind, d, n, seed)
            };
            let path = generate(&spec, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Solve { config, manifest, overrides, workers, out, plot } => {
            let cfg = run_config(config.as_deref(), &overrides, workers)?;
            let problem = commands::load_problem(&cfg, manifest.as_deref())?;
            let res = commands::solve(&cfg, &problem)?;
            let out = out.or_else(|| cfg.output_path());
            let summary = commands::summary_line(&cfg, &res);
            emit(out.as_deref(), |w| commands::write_trace_csv(w, res.trace()), &summary)?;
            if let Some(p) = plot {
                commands::write_file(&p, &commands::trace_plot(plot_target(out.as_deref())?, &[]))?;
            }
        }
        Command::Bench { configs, manifest, rho, overrides, workers, out, plot } => {
            let mut runs = Vec::new();
            for path in &configs {
                let cfg = run_config(Some(path), &overrides, workers)?;
                if rho.is_empty() {
                    runs.push(cfg);
                    continue;
                }
                for r in &rho {
                    let mut c = cfg.clone();
                    c.set("rho", &r.to_string())?;
                    c.validate()?;
                    c.label = Some(format!("{}-rho{r}", cfg.label()));
                    runs.push(c);
                }
            }
            let named = if manifest.is_some() { None } else { commands::common_manifest(&runs)? };
            let problem = commands::load_problem(&runs[0], manifest.as_deref().or(named.as_deref()))?;
            let results = commands::bench(&runs, &problem)?;
            let summary: Vec<String> = results
                .iter()
                .zip(&runs)
                .map(|((label, r), cfg)| {
                    let mut c = cfg.clone();
                    c.label = Some(label.clone());
                    commands::summary_line(&c, r)
                })
                .collect();
            emit(out.as_deref(), |w| commands::write_bench_csv(w, &results), &summary.join("\n"))?;
            if let Some(p) = plot {
                let labels: Vec<String> = results.iter().map(|(l, _)| l.clone()).collect();
                commands::write_file(&p, &commands::trace_plot(plot_target(out.as_deref())?, &labels))?;
            }
        }
        Command::PartitionStudy { manifest, split, correction, out, plot } => {
            let problem = Manifest::read(&manifest)?.load(split)?;
            let study: PartitionStudy = commands::partition_study(&problem, correction)?;
            emit(out.as_deref(), |w| commands::write_study_csv(w, &study), &commands::study_summary(&study))?;
            if let Some(p) = plot {
                let script = commands::gnuplot_script(plot_target(out.as_deref())?, "n1", &["score".into()], false);
                commands::write_file(&p, &script)?;
            }
        }
        Command::Keys => {
            for (k, default, doc) in KEYS {
                let d = if default.is_empty() { "(unset)" } else { default };
                println!("{k:<20} {d:<10} {doc}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
