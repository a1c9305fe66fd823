use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hospred_cli::{CliError, CliResult, Command, Pipeline, PipelineConfig};
use hospred_core::explain::ShapMethod;
use hospred_core::features::Scenario;
use hospred_core::models::ModelKind;

#[derive(Parser)]
#[command(name = "hospred", version, about = "Hospitalization-risk pipeline: synthetic records to models, SHAP and reports")]
struct Cli {
    /// TOML pipeline configuration; defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set generator.n_patients=5000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Work directory (overrides `paths.work_dir`).
    #[arg(long, env = "HOSPRED_WORK_DIR", global = true)]
    work_dir: Option<PathBuf>,
    /// Proceed even when upstream artifacts were built under a different configuration.
    #[arg(long, global = true)]
    force: bool,
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write synthetic records and the ground-truth file.
    Generate,
    /// Ingest records, select and label the cohort.
    Cohort,
    /// Build interval features and train/test splits.
    Featurize {
        #[arg(long, value_parser = parse_with::<Scenario>)]
        scenario: Option<Scenario>,
    },
    /// Cross-validate and fit models.
    Train {
        #[arg(long, value_parser = parse_with::<ModelKind>)]
        model: Option<ModelKind>,
    },
    /// Compute SHAP values on test rows.
    Explain {
        #[arg(long, value_parser = parse_with::<ShapMethod>)]
        method: Option<ShapMethod>,
    },
    /// Per-class cohort statistics with significance tests.
    Stats,
    /// Metrics table, SHAP summaries, overlaps and plot data.
    Report,
    /// Every stage in order.
    All,
}

fn parse_with<T: std::str::FromStr<Err = hospred_core::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: hospred_core::Error| e.to_string())
}

fn run(cli: Cli) -> CliResult<()> {
    let overrides = cli
        .overrides
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Config(format!("override `{kv}` is not KEY=VALUE")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(dir) = cli.work_dir {
        cfg.paths.work_dir = dir;
    }
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))?;
    }
    let command = match cli.command {
        Cmd::Generate => Command::Generate,
        Cmd::Cohort => Command::Cohort,
        Cmd::Featurize { scenario } => Command::Featurize(scenario),
        Cmd::Train { model } => Command::Train(model),
        Cmd::Explain { method } => Command::Explain(method),
        Cmd::Stats => Command::Stats,
        Cmd::Report => Command::Report,
        Cmd::All => Command::All,
    };
    Pipeline::new(cfg, cli.force)?.run(command)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
