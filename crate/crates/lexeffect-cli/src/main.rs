use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::{emit_error_record, exit_code_for, Pipeline};
use config::Config;

/// Estimate the perception effect of single-word substitutions.
#[derive(Parser)]
#[command(name = "lexeffect", version, about)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "lexeffect.toml")]
    config: PathBuf,

    /// Worker threads for per-pair estimation and per-tree fitting
    /// (results are identical at any value; 0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize a corpus file.
    Ingest {
        #[arg(long)]
        domain: Option<String>,
    },
    /// Generate admissible substitution tuples.
    Candidates {
        #[arg(long)]
        domain: Option<String>,
    },
    /// Fill per-tuple effect estimates.
    Estimate {
        #[arg(long)]
        domain: Option<String>,
        /// Comma-separated subset of knn,vt_rf,cf_rf,csf,perception_clf.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
    },
    /// Order the estimate table by one estimator.
    Rank {
        #[arg(long)]
        domain: Option<String>,
        #[arg(long)]
        estimator: String,
    },
    /// Select the annotation sample and emit rating batches.
    RctSample {
        #[arg(long)]
        domain: Option<String>,
    },
    /// Filter workers and aggregate ratings into effects.
    RctAggregate {
        #[arg(long)]
        domain: Option<String>,
        /// Ratings CSV: worker_id,batch_id,sentence_key,rating.
        #[arg(long)]
        ratings: PathBuf,
    },
    /// Compare estimates against a reference and write the metric report.
    Eval {
        #[arg(long)]
        domain: Option<String>,
        /// "truth" (synthetic ground truth) or "rct".
        #[arg(long, default_value = "truth")]
        reference: String,
    },
    /// Generate the synthetic corpus with planted effects.
    Synth,
}

fn run(cli: &Cli) -> Result<()> {
    let config = Config::load(&cli.config)?;
    let pipeline = Pipeline::new(config)?;
    match &cli.command {
        Command::Ingest { domain } => pipeline.ingest(domain.as_deref()),
        Command::Candidates { domain } => pipeline.candidates(domain.as_deref()),
        Command::Estimate { domain, estimators } => {
            pipeline.estimate(domain.as_deref(), estimators.as_deref())
        }
        Command::Rank { domain, estimator } => pipeline.rank(domain.as_deref(), estimator),
        Command::RctSample { domain } => pipeline.rct_sample(domain.as_deref()),
        Command::RctAggregate { domain, ratings } => {
            pipeline.rct_aggregate(domain.as_deref(), ratings)
        }
        Command::Eval { domain, reference } => pipeline.eval(domain.as_deref(), reference),
        Command::Synth => pipeline.synth(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    #[cfg(feature = "parallel")]
    let outcome = {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build()
        {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(anyhow::anyhow!("cannot build thread pool: {e}")),
        }
    };
    #[cfg(not(feature = "parallel"))]
    let outcome = {
        if cli.jobs > 1 {
            eprintln!("built without the parallel feature; --jobs ignored");
        }
        run(&cli)
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            let code = exit_code_for(&error);
            emit_error_record(&error, code);
            ExitCode::from(code as u8)
        }
    }
}
