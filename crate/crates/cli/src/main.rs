use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod io;

use io::CliError;

#[derive(Parser)]
#[command(name = "mtelab", version, about = "Recover MTE curves from multi-cell experiments and plan reach decisions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a DGP from aggregate study moments.
    Calibrate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a design file against the design clauses.
    ValidateDesign {
        #[arg(long)]
        design: PathBuf,
    },
    /// Turn a budget split into per-cell propensities.
    PlanBudget {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate an experiment and write binned counts as CSV.
    Simulate {
        #[arg(long)]
        dgp: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Point-estimate λ from counts, or from exact moments with --analytic.
    Estimate {
        #[arg(long, required_unless_present = "analytic")]
        counts: Option<PathBuf>,
        #[arg(long, requires_all = ["dgp", "design"])]
        analytic: bool,
        #[arg(long)]
        dgp: Option<PathBuf>,
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Beta-Bernoulli posterior draws of λ.
    Bayes {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long, default_value_t = mtelab::bayes::DEFAULT_DRAWS)]
        draws: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimal reach for an MTE representation, or for an experiment's posterior.
    Decide {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, required_unless_present = "counts", conflicts_with = "counts")]
        mte: Option<PathBuf>,
        #[arg(long, requires = "seed")]
        counts: Option<PathBuf>,
        #[arg(long, default_value_t = mtelab::bayes::DEFAULT_DRAWS)]
        draws: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sup, L2 and ATE norms between two MTE representations.
    Compare {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        approx: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        lo: f64,
        #[arg(long, default_value_t = 1.0)]
        hi: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate, estimate, update, decide and compare in one run.
    Pipeline(PipelineArgs),
    /// Recompute the canned tables and compare them with the stored references.
    Reproduce {
        /// Comma-separated subset of table1, table2, tableE1, appendixA.
        #[arg(long, value_delimiter = ',')]
        tables: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multi-exposure simulation with per-exposure and naive estimates.
    Sequential {
        #[arg(long)]
        dgp: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub dgp: PathBuf,
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    /// Use exact moments instead of a simulated experiment.
    #[arg(long)]
    pub analytic: bool,
    #[arg(long, required_unless_present = "analytic")]
    pub n: Option<u64>,
    #[arg(long, required_unless_present = "analytic")]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = mtelab::bayes::DEFAULT_DRAWS)]
    pub draws: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Calibrate { input, out } => commands::calibrate(&input, out.as_deref()),
        Command::ValidateDesign { design } => commands::validate_design(&design),
        Command::PlanBudget { input, out } => commands::plan_budget(&input, out.as_deref()),
        Command::Simulate { dgp, design, n, seed, out } => commands::simulate(&dgp, &design, n, seed, out.as_deref()),
        Command::Estimate { counts, analytic: _, dgp, design, out } => {
            commands::estimate(counts.as_deref(), dgp.as_deref(), design.as_deref(), out.as_deref())
        }
        Command::Bayes { counts, draws, seed, priors, out } => {
            commands::bayes(&counts, draws, seed, priors.as_deref(), out.as_deref())
        }
        Command::Decide { spec, mte, counts, draws, seed, truth, out } => commands::decide(
            &spec,
            mte.as_deref(),
            counts.as_deref().map(|c| (c, draws, seed.unwrap_or_default())),
            truth.as_deref(),
            out.as_deref(),
        ),
        Command::Compare { truth, approx, lo, hi, out } => commands::compare(&truth, &approx, lo, hi, out.as_deref()),
        Command::Pipeline(args) => commands::pipeline(&args),
        Command::Reproduce { tables, out } => commands::reproduce(&tables, out.as_deref()),
        Command::Sequential { dgp, config, n, seed, out } => {
            commands::sequential(dgp.as_deref(), config.as_deref(), n, seed, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
