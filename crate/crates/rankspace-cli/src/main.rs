use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rankspace_cli::commands::{
    exit_code_for, run_allocate, run_oracle, run_report, run_search, run_sweep, RunContext,
};
use rankspace_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "rankspace",
    about = "Rank allocation and rank-space search for low-rank adapters",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score layer importances and allocate ranks under a rank budget.
    Allocate(RunArgs),
    /// Greedy coarse + fine exploration; writes best.result and history.log.
    Search(RunArgs),
    /// Exact reference solve of the configured instance.
    Oracle(RunArgs),
    /// Evaluate every combination of per-group uniform ranks.
    Sweep(RunArgs),
    /// Summarize history logs into report.csv.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config's output_dir, else current dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for candidate evaluation (0 = sequential).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// History log(s) to summarize.
    #[arg(long, required = true, num_args = 1..)]
    history: Vec<PathBuf>,
    /// Optional config enabling the uniform-rank table.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn context_for(cfg: Option<&ExperimentConfig>, args_config: Option<&PathBuf>, seed: Option<u64>, out: Option<PathBuf>, jobs: Option<usize>) -> RunContext {
    let config_dir = args_config
        .and_then(|p| p.parent().map(|d| d.to_path_buf()))
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    let output_dir = out
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    let seed = seed.or_else(|| cfg.map(|c| c.seed)).unwrap_or(0);
    RunContext {
        config_dir,
        output_dir,
        seed,
        jobs,
    }
}

fn run() -> Result<(), rankspace::Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Allocate(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            let ctx = context_for(Some(&cfg), Some(&args.config), args.seed, args.out, args.jobs);
            let report = run_allocate(&cfg, &ctx)?;
            println!(
                "allocated ranks {:?} ({} params) -> {}",
                report.ranks,
                report.total_params,
                ctx.output_dir.join("allocation.result").display()
            );
        }
        Command::Search(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            let ctx = context_for(Some(&cfg), Some(&args.config), args.seed, args.out, args.jobs);
            let report = run_search(&cfg, &ctx)?;
            println!(
                "best ranks {:?} metric {} after {} evaluations -> {}",
                report.ranks,
                report.metric,
                report.evaluations,
                ctx.output_dir.join("best.result").display()
            );
        }
        Command::Oracle(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            let ctx = context_for(Some(&cfg), Some(&args.config), args.seed, args.out, args.jobs);
            let report = run_oracle(&cfg, &ctx)?;
            println!(
                "oracle ({}) ranks {:?} metric {} -> {}",
                report.method,
                report.ranks,
                report.metric,
                ctx.output_dir.join("oracle.result").display()
            );
        }
        Command::Sweep(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            let ctx = context_for(Some(&cfg), Some(&args.config), args.seed, args.out, args.jobs);
            let rows = run_sweep(&cfg, &ctx)?;
            println!(
                "swept {} configurations -> {}",
                rows.len(),
                ctx.output_dir.join("sweep.csv").display()
            );
        }
        Command::Report(args) => {
            let cfg = match &args.config {
                Some(path) => Some(ExperimentConfig::load(path)?),
                None => None,
            };
            let ctx = context_for(cfg.as_ref(), args.config.as_ref(), args.seed, args.out, None);
            let path = run_report(&args.history, cfg.as_ref(), &ctx)?;
            println!("report -> {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
