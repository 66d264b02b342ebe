use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use overlap_core::CyclicMode;
use overlap_harness::pipeline::resolve_output;
use overlap_harness::{compare_files, report, run, CompareOptions, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "overlap", version, about = "Eigenvector overlap statistics: theory, Monte Carlo and comparison")]
struct Cli {
    /// Root directory for relative output paths.
    #[arg(long, global = true, env = "OVERLAP_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        realizations: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Cyclic fourth-moment formula: paper-literal or symmetrized.
        #[arg(long)]
        mode: Option<CyclicMode>,
    },
    /// Compare two moment tables; the first is the reference.
    Compare {
        reference: PathBuf,
        candidate: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        mask: f64,
        #[arg(long, default_value_t = 0.15)]
        rel_tol: f64,
        #[arg(long, default_value_t = 4.0)]
        z_tol: f64,
        /// Also write the per-point comparison table here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Summarize a finished run directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<u8, HarnessError> {
    let root = cli.output_root.as_deref();
    match cli.command {
        Command::Run {
            config,
            seed,
            realizations,
            threads,
            output,
            mode,
        } => {
            let mut c = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                c.master_seed = s;
            }
            if let Some(r) = realizations {
                c.realizations = r;
            }
            if let Some(t) = threads {
                c.threads = t;
            }
            if let Some(o) = output {
                c.output = o;
            }
            if let Some(m) = mode {
                c.mode = m;
            }
            c.validate()?;
            let dir = resolve_output(&c.output, root);
            let summary = run(&c, &dir)?;
            print!("{}", report(&dir)?);
            Ok(if summary.passed { 0 } else { 1 })
        }
        Command::Compare {
            reference,
            candidate,
            mask,
            rel_tol,
            z_tol,
            output,
        } => {
            let options = CompareOptions {
                mask_fraction: mask,
                rel_tol,
                z_tol,
            };
            let r = compare_files(&reference, &candidate, options)?;
            if let Some(o) = output {
                r.write(&resolve_output(&o, root))?;
            }
            print!("{}", r.summary_text());
            Ok(if r.passed() { 0 } else { 1 })
        }
        Command::Report { dir } => {
            print!("{}", report(Path::new(&dir))?);
            Ok(0)
        }
    }
}
