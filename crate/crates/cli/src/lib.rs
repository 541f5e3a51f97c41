//! `lds-sgd`: generate teachers and data, train, evaluate and check
//! acquiescence from the command line.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Format, Mode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<lds_core::Error> for CliError {
    fn from(e: lds_core::Error) -> Self {
        use lds_core::Error as E;
        match e {
            E::Io(_) | E::Json(_) | E::Csv(_) | E::Parse(_) => CliError::Io(e.to_string()),
            E::DimensionMismatch(_) | E::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lds-sgd", version, about = "Learn linear dynamical systems by projected SGD")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for Monte-Carlo and data generation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a teacher and a dataset of trajectories.
    Gen,
    /// Fit a model to a generated dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Risks of a model against a teacher.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Acquiescence diagnostics for a model or coefficient file.
    Check {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
    },
}

/// Merges flags into the config; flags win.
pub fn effective_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    if cli.format.is_some() {
        cfg.format = cli.format;
    }
    if let Some(seed) = cfg.seed {
        if let Some(g) = cfg.gen.as_mut() {
            g.seed = seed;
        }
        if let Some(t) = cfg.train.as_mut() {
            t.sgd.seed = seed;
        }
    }
    match &cli.command {
        Command::Gen => {}
        Command::Train { data, mode } => {
            let t = cfg
                .train
                .as_mut()
                .ok_or_else(|| CliError::Usage("train needs a [train] section with [train.sgd]".into()))?;
            if data.is_some() {
                t.data = data.clone();
            }
            if let Some(m) = mode {
                t.mode = *m;
            }
        }
        Command::Eval { model, teacher } => {
            let e = cfg
                .eval
                .as_mut()
                .ok_or_else(|| CliError::Usage("eval needs an [eval] section with t_len".into()))?;
            if model.is_some() {
                e.model = model.clone();
            }
            if teacher.is_some() {
                e.teacher = teacher.clone();
            }
        }
        Command::Check { input, alpha } => {
            let c = cfg.check.get_or_insert_with(Default::default);
            if input.is_some() {
                c.input = input.clone();
            }
            if let Some(a) = alpha {
                c.alpha = *a;
            }
        }
    }
    Ok(cfg)
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("LDS_SGD_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = effective_config(cli)?;
    if let Some(jobs) = cfg.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be ≥ 1".into()));
        }
        if rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().is_err() {
            log::debug!("thread pool already initialized");
        }
    }
    match cli.command {
        Command::Gen => commands::gen(&cfg),
        Command::Train { .. } => commands::train(&cfg),
        Command::Eval { .. } => commands::eval(&cfg),
        Command::Check { .. } => commands::check(&cfg),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("lds-sgd: {e}");
            e.exit_code()
        }
    }
}
