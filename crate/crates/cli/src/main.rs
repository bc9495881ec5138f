//! `pigline`: batch driver from raw station traces to a per-segment pigging report.
//!
//! ```text
//! pigline synth      -> <out>/raw/        station traces and ground truth
//! pigline cleanse    -> <out>/cleanse/    outlier-free grids, regime labels
//! pigline headloss   -> <out>/headloss/   per-segment head loss
//! pigline track      -> <out>/track/      correlation map and PIG trajectory
//! pigline train      -> <out>/datasets/, <out>/model/, <out>/eval/
//! pigline predict    -> <out>/predict/
//! pigline report     -> <out>/report/
//! ```

mod config;
mod stages;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pigline::series::Timestamp;

use config::RunConfig;
use stages::Span;

#[derive(Parser, Debug)]
#[command(name = "pigline", version, about = "Pipeline fouling indicators and PIG tracking from pressure traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (`key = value` with `[section]` headers).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Start of the time span, ISO-8601 UTC.
    #[arg(long, global = true, value_name = "ISO8601")]
    from: Option<String>,

    /// End of the time span (exclusive), ISO-8601 UTC.
    #[arg(long, global = true, value_name = "ISO8601")]
    to: Option<String>,

    /// Restrict the stage to one segment.
    #[arg(long, global = true, value_name = "UP-DOWN")]
    segment: Option<String>,

    /// Output directory; overrides the configured one.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scenario with ground truth.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Remove outliers, resample and label operating regimes.
    Cleanse,
    /// Compensate altitude and compute per-segment head loss.
    Headloss,
    /// Track a PIG from the dynamic channels of one segment.
    Track,
    /// Build datasets, train the regression tree and evaluate it.
    Train,
    /// Predict the PIG indicator with the trained tree.
    Predict,
    /// Rank segments by their latest predicted pigging probability.
    Report {
        #[arg(long, value_name = "0..1")]
        threshold: Option<f64>,
    },
}

fn timestamp(arg: Option<&str>) -> pigline::Result<Option<Timestamp>> {
    arg.map(Timestamp::parse_iso8601).transpose()
}

fn run(cli: Cli) -> stages::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    let span = Span {
        from: timestamp(cli.from.as_deref())?,
        to: timestamp(cli.to.as_deref())?,
    };
    if let (Some(f), Some(t)) = (span.from, span.to) {
        if f >= t {
            return Err(pigline::Error::InvalidArgument(format!("--from {f} is not before --to {t}")).into());
        }
    }
    let segment = cli.segment.as_deref();
    match cli.command {
        Command::Synth { seed } => {
            if let Some(s) = seed {
                cfg.scenario.seed = s;
            }
            stages::synth(&cfg, span)
        }
        Command::Cleanse => stages::cleanse(&cfg, span),
        Command::Headloss => stages::headloss(&cfg, span, segment),
        Command::Track => stages::track(&cfg, span, segment),
        Command::Train => stages::train(&cfg, span),
        Command::Predict => stages::predict(&cfg, span, segment),
        Command::Report { threshold } => {
            stages::report(&cfg, span, segment, threshold.unwrap_or(cfg.report_threshold))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
