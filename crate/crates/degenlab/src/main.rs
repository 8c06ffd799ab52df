//! `degenlab` — a numerical laboratory for degenerate fully nonlinear
//! Dirichlet problems. Each subcommand runs one experiment described by
//! a JSON config file and writes its outputs into a directory.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use degenlab::cli::config::ExperimentKind;
use degenlab::cli::{run, RunInputs};

#[derive(Parser)]
#[command(
    name = "degenlab",
    version,
    about = "Monotone wide-stencil solver and regularity probes for \
             degenerate fully nonlinear Dirichlet problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: config's out_dir, then the current
    /// directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the Jacobi sweeps (default: the DEGENLAB_THREADS
    /// environment variable, then the number of cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Recorded into report.json for bookkeeping; the solver itself is
    /// deterministic and takes no randomness.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Dirichlet problem and report convergence diagnostics.
    Solve(CommonArgs),
    /// Solve, then measure oscillation profiles and Hölder exponents.
    Probe(CommonArgs),
    /// Solve an absorption problem and report dead-core diagnostics.
    Deadcore(CommonArgs),
    /// Solve an obstacle problem and report contact-set diagnostics.
    Obstacle(CommonArgs),
    /// Construct and audit barrier functions and a-priori bounds.
    Barriers(CommonArgs),
    /// Solve the problem and its rescaled twin; report the mismatch.
    Scaling(CommonArgs),
    /// Check the config and the assembled problem; write a report.
    Validate(CommonArgs),
}

fn main() {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Solve(a) => (ExperimentKind::Solve, a),
        Command::Probe(a) => (ExperimentKind::Probe, a),
        Command::Deadcore(a) => (ExperimentKind::Deadcore, a),
        Command::Obstacle(a) => (ExperimentKind::Obstacle, a),
        Command::Barriers(a) => (ExperimentKind::Barriers, a),
        Command::Scaling(a) => (ExperimentKind::Scaling, a),
        Command::Validate(a) => (ExperimentKind::Validate, a),
    };

    let threads = args.threads.or_else(|| {
        std::env::var("DEGENLAB_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(n) = threads {
        // Ignore the error if a pool already exists (e.g. under a test
        // harness); determinism does not depend on the thread count.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let inputs = RunInputs {
        expected: kind,
        config_path: args.config,
        out_override: args.out,
        threads,
        seed: args.seed,
    };
    std::process::exit(run(&inputs));
}
