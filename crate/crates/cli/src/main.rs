use std::path::PathBuf;
use std::process::ExitCode;

use carleman_lab::manifest::{Kind, Manifest};
use carleman_lab::runner::{default_manifest, fmt_f64, run_manifest, RunOptions, RunSummary};
use carleman_lab::stability::Case;
use carleman_lab::Execution;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "carleman-lab", version, about = "Carleman-estimate and stability experiments for the magnetic Schrödinger equation")]
struct Cli {
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the manifest seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `[output].dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment in a manifest.
    Run {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Forward solves.
    Solve {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Empirical Carleman-estimate check over a random ensemble.
    CarlemanVerify {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Check a single large parameter instead of the manifest's sweep.
        #[arg(long)]
        s: Option<f64>,
        /// Ensemble size.
        #[arg(long)]
        members: Option<usize>,
    },
    /// Lipschitz-stability measurement.
    Stability {
        /// case1, case2, case3 or case3-divfree.
        case: Option<String>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Refinement sweeps against closed-form solutions.
    Convergence {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

fn load(path: &Option<PathBuf>, kind: Kind, case: Option<Case>) -> Result<Manifest, String> {
    match path {
        Some(p) => Manifest::load(p).map_err(|e| e.to_string()),
        None => Ok(default_manifest(kind, case)),
    }
}

fn execute(cli: &Cli) -> Result<RunSummary, String> {
    let exec = if cli.threads == Some(1) { Execution::Sequential } else { Execution::Parallel };
    let mut opts = RunOptions { out_dir: cli.out.clone(), seed: cli.seed, exec, kind: None, case: None };
    let manifest = match &cli.command {
        Command::Run { manifest } => Manifest::load(manifest).map_err(|e| e.to_string())?,
        Command::Solve { manifest } => {
            opts.kind = Some(Kind::Solve);
            load(manifest, Kind::Solve, None)?
        }
        Command::CarlemanVerify { manifest, s, members } => {
            opts.kind = Some(Kind::Carleman);
            let mut m = load(manifest, Kind::Carleman, None)?;
            if let Some(s) = *s {
                m.weight.s_min = s;
                m.weight.s_max = s;
                m.weight.s_count = 1;
            }
            if let Some(n) = *members {
                for e in &mut m.experiments {
                    e.members = Some(n);
                }
            }
            m
        }
        Command::Stability { case, manifest } => {
            let case = match case {
                Some(name) => Some(Case::parse(name).ok_or_else(|| {
                    format!("unknown case `{name}` (expected case1, case2, case3 or case3-divfree)")
                })?),
                None => None,
            };
            opts.kind = Some(Kind::Stability);
            opts.case = case;
            load(manifest, Kind::Stability, case)?
        }
        Command::Convergence { manifest } => {
            opts.kind = Some(Kind::Convergence);
            load(manifest, Kind::Convergence, None)?
        }
    };
    let threads = if exec == Execution::Sequential { None } else { cli.threads };
    carleman_lab::exec::with_threads(threads, || run_manifest(&manifest, &opts))?.map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(summary) => {
            for o in &summary.outcomes {
                println!("{:<24} {:<12} {:<10} {:>24}  {}", o.name, o.kind.name(), o.status.name(), fmt_f64(o.metric), o.detail);
            }
            println!("summary: {}", summary.summary_path.display());
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
