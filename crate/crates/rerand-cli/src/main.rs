mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rerand::estimate::{Kind, DEFAULT_LAW_DRAWS};

/// Rerandomization with balance-test p-values.
#[derive(Parser)]
#[command(name = "rerand", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    N,
    F,
    L,
}

impl From<KindArg> for Kind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::N => Kind::N,
            KindArg::F => Kind::F,
            KindArg::L => Kind::L,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DesignArg {
    /// Flag each complete randomization against every scheme.
    Filter,
    /// Rejection-sample an acceptable allocation per replication and scheme.
    Rerandomize,
}

#[derive(Subcommand)]
enum Command {
    /// Draw an allocation that satisfies a balance scheme.
    Randomize {
        #[arg(long)]
        covariates: PathBuf,
        /// Arm sizes, e.g. `100,400`.
        #[arg(long)]
        arms: String,
        #[arg(long)]
        scheme: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = rerand::design::DEFAULT_MAX_DRAWS)]
        max_draws: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a given allocation against a balance scheme.
    Check {
        #[arg(long)]
        covariates: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        #[arg(long)]
        scheme: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate treatment effects with EHW standard errors.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        contrast: Option<PathBuf>,
        /// Add plug-in intervals for the scheme used to allocate.
        #[arg(long, requires = "scheme")]
        plugin: bool,
        #[arg(long)]
        scheme: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = DEFAULT_LAW_DRAWS)]
        law_draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo replications on a synthetic population.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        schemes: PathBuf,
        #[arg(long)]
        reps: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        outdir: PathBuf,
        #[arg(long, value_enum, default_value_t = DesignArg::Filter)]
        design: DesignArg,
        /// Law draws for plug-in intervals (rerandomize design only).
        #[arg(long)]
        plugin_draws: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value_t = 40)]
        bins: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Summaries of the limiting law of the covariate imbalance.
    Law {
        #[arg(long)]
        j: usize,
        #[arg(long)]
        alpha0: f64,
        #[arg(long, requires = "covariates")]
        scheme: Option<PathBuf>,
        #[arg(long, requires = "scheme")]
        covariates: Option<PathBuf>,
        /// Arm sizes for the scheme law, e.g. `100,400`.
        #[arg(long)]
        arms: Option<String>,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Randomize {
            covariates,
            arms,
            scheme,
            seed,
            max_draws,
            out,
        } => commands::randomize(&covariates, &arms, &scheme, seed, max_draws, &out),
        Command::Check {
            covariates,
            assignment,
            scheme,
            out,
        } => commands::check(&covariates, &assignment, &scheme, &out),
        Command::Estimate {
            data,
            kind,
            contrast,
            plugin,
            scheme,
            level,
            law_draws,
            seed,
            out,
        } => commands::estimate(commands::EstimateArgs {
            data: &data,
            kind: kind.into(),
            contrast: contrast.as_deref(),
            plugin,
            scheme: scheme.as_deref(),
            level,
            law_draws,
            seed,
            out: &out,
        }),
        Command::Simulate {
            spec,
            schemes,
            reps,
            seed,
            outdir,
            design,
            plugin_draws,
            threads,
            bins,
            level,
        } => commands::simulate(commands::SimulateArgs {
            spec: &spec,
            schemes: &schemes,
            reps,
            seed,
            outdir: &outdir,
            rerandomize: design == DesignArg::Rerandomize,
            plugin_draws,
            threads,
            bins,
            level,
        }),
        Command::Law {
            j,
            alpha0,
            scheme,
            covariates,
            arms,
            draws,
            seed,
            out,
        } => commands::law(commands::LawArgs {
            j,
            alpha0,
            scheme: scheme.as_deref(),
            covariates: covariates.as_deref(),
            arms: arms.as_deref(),
            draws,
            seed,
            out: &out,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
