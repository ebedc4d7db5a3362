use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mclt_core::bounds::BoundId;
use mclt_lab::config::{ExperimentConfig, ExperimentKind};
use mclt_lab::experiment::{run_experiment, run_simulation, ResultManifest};
use mclt_lab::output::OutputSet;
use mclt_lab::{emit_plot_data, exit_code, ConfigError};

#[derive(Parser)]
#[command(name = "mclt-lab", version, about = "Martingale CLT rate laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker cap.
    #[arg(long, env = "MCLT_LAB_THREADS")]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Stream terminal records of a kernel experiment.
    Simulate(RunArgs),
    /// Kolmogorov distances and rate functionals over a grid.
    Rates(RunArgs),
    /// Rate-functional comparison table.
    Bounds(RunArgs),
    /// Separately Lipschitz functionals.
    Lipschitz(RunArgs),
    /// Lemma suites and transform checks.
    Verify(RunArgs),
    /// Log-log table from a manifest.
    PlotData {
        #[arg(long)]
        manifest: PathBuf,
        /// Reference functionals, e.g. `--reference T1`.
        #[arg(long)]
        reference: Vec<BoundId>,
        /// Output CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(args: &RunArgs, allowed: &[ExperimentKind], command: &str) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if !allowed.contains(&config.kind) {
        return Err(ConfigError::new(format!("`{command}` cannot run a {} experiment", config.kind)).into());
    }
    if let Some(seed) = args.seed {
        config.seed = Some(seed);
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.output.clone())
        .ok_or_else(|| ConfigError::new("no output directory (use --out or `output`)"))?;
    Ok((config, out))
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(0) => Err(ConfigError::new("--threads must be positive").into()),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .context("building worker pool")?
            .install(f),
        None => f(),
    }
}

fn run(args: &RunArgs, allowed: &[ExperimentKind], command: &str, simulate: bool) -> Result<()> {
    let (config, out) = load(args, allowed, command)?;
    let manifest = with_threads(args.threads, || {
        if simulate {
            run_simulation(&config, &out)
        } else {
            run_experiment(&config, &out)
        }
    })?;
    for d in &manifest.diagnostics {
        log::info!("diagnostic: {d}");
    }
    println!(
        "{} experiment: {} invariants hold; results in {}",
        config.kind,
        manifest.invariants.len(),
        out.display()
    );
    Ok(())
}

fn plot(manifest: &Path, references: &[BoundId], out: Option<&Path>) -> Result<()> {
    let manifest = ResultManifest::load(manifest).map_err(|e| ConfigError::new(format!("{e:#}")))?;
    let bytes = emit_plot_data(&manifest, references)?;
    match out {
        Some(path) => {
            let mut files = OutputSet::new();
            let name = path
                .file_name()
                .ok_or_else(|| ConfigError::new("--out must name a file"))?
                .to_string_lossy()
                .into_owned();
            files.add(name, bytes);
            files.commit(path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")))
        }
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    use ExperimentKind as K;
    let result = match &cli.command {
        Command::Simulate(a) => run(a, &[K::Rates, K::TransformsCheck], "simulate", true),
        Command::Rates(a) => run(a, &[K::Rates], "rates", false),
        Command::Bounds(a) => run(a, &[K::BoundsTable], "bounds", false),
        Command::Lipschitz(a) => run(a, &[K::Lipschitz], "lipschitz", false),
        Command::Verify(a) => run(a, &[K::LemmaSuite, K::TransformsCheck], "verify", false),
        Command::PlotData {
            manifest,
            reference,
            out,
        } => plot(manifest, reference, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
