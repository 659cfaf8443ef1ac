use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gapflow::config::{parse_config, schema_reference, Experiment, RunConfig};
use gapflow::experiments::{self, Outcome};
use gapflow::{par, Result};

/// Spectral-flow experiments for dislocated Schrödinger operators on a tube.
#[derive(Parser)]
#[command(name = "gapflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// output directory, overriding `output.dir`
    #[arg(long)]
    out: Option<PathBuf>,
    /// worker threads
    #[arg(long, env = "GAPFLOW_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Lowest eigenvalues of the configured section
    Spectrum(Common),
    /// Dislocation sweep, crossings and counting chain
    Sweep(Common),
    /// Eigenstate decay, Combes–Thomas and interface growth probes
    Decay(Common),
    /// Decoupling probes over the gapped ensemble
    Decoupling(Common),
    /// Free kernels, their bounds and HS norms
    Greens {
        #[command(flatten)]
        common: Common,
        /// `dump` writes only the kernel samples
        #[arg(value_parser = ["dump"])]
        action: Option<String>,
    },
    /// Transformed-operator equivalence, branch continuity and BV probes
    Transform {
        #[command(flatten)]
        common: Common,
        /// `compare` writes only the equivalence table
        #[arg(value_parser = ["compare"])]
        action: Option<String>,
    },
    /// Torus window counts at the first crossing
    Ids(Common),
    /// Full acceptance suite; exit status 0 iff every criterion passes
    Verify(Common),
    /// Print every configuration key with its type, range and meaning
    Schema,
}

fn load(common: &Common, kind: Experiment) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|source| gapflow::Error::Io { path: p.display().to_string(), source })?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    match cfg.experiment {
        Some(k) if k != kind => {
            return Err(gapflow::Error::Config(format!(
                "the configuration is for `{k}` but the subcommand is `{kind}`"
            )))
        }
        _ => cfg.experiment = Some(kind),
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    if let Some(t) = common.threads.or(cfg.threads) {
        if t == 0 {
            return Err(gapflow::Error::Config("--threads must be at least 1".into()));
        }
        cfg.threads = Some(t);
        par::set_threads(t);
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<Option<Outcome>> {
    let (common, kind, action) = match cli.command {
        Command::Schema => {
            print!("{}", schema_reference());
            return Ok(None);
        }
        Command::Spectrum(c) => (c, Experiment::Spectrum, None),
        Command::Sweep(c) => (c, Experiment::Sweep, None),
        Command::Decay(c) => (c, Experiment::Decay, None),
        Command::Decoupling(c) => (c, Experiment::Decoupling, None),
        Command::Greens { common, action } => (common, Experiment::Greens, action),
        Command::Transform { common, action } => (common, Experiment::Transform, action),
        Command::Ids(c) => (c, Experiment::Ids, None),
        Command::Verify(c) => (c, Experiment::Verify, None),
    };
    let cfg = load(&common, kind)?;
    let dir = cfg.output.dir.clone();
    let outcome = match (kind, action.as_deref()) {
        (Experiment::Greens, Some("dump")) => experiments::run_greens_dump(&cfg, &dir)?,
        (Experiment::Transform, Some("compare")) => experiments::run_transform_compare(&cfg, &dir)?,
        _ => experiments::run(&cfg, kind, &dir)?,
    };
    Ok(Some(outcome))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(o)) => {
            for f in &o.manifest.files {
                eprintln!("wrote {}", f.name);
            }
            eprintln!("{}: {} in {:.1} s", o.manifest.experiment, o.manifest.status, o.manifest.total_seconds);
            if o.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
