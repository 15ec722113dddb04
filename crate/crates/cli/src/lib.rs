//! Command layer of the `lhvdyn` binary.
//!
//! Every command reads an [`ExperimentConfig`], writes its outputs into the
//! output directory together with `manifest.json`, and reports whether its
//! criterion passed. Exit codes: 0 pass, 1 criterion failure or runtime error,
//! 2 usage or configuration error.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{ExperimentConfig, IntegratorMode, PLATEAU_THRESHOLD};
pub use manifest::{git_hash, HashedFile, Manifest};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("computation failed: {0}")]
    Compute(String),
    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Compute(_) | CliError::Output(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lhvdyn", version, about = "Hidden-variable models and their dynamics")]
pub struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel kernels (0: one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Omits timings so that repeated runs give identical files.
    #[arg(long, global = true)]
    pub reproducible: bool,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Hidden-variable versus quantum probabilities for an ensemble of states.
    VerifyStatic,
    /// Velocity-field fits for the control and the two-qubit exchange problem.
    FitVelocity,
    /// Dimension-constraint table.
    NogoTable,
    /// Group-action and covariance checks of the universal model.
    CovarianceCheck,
    /// Bloch-form equations of motion for a state file.
    Derivs,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::VerifyStatic => "verify-static",
            Command::FitVelocity => "fit-velocity",
            Command::NogoTable => "nogo-table",
            Command::CovarianceCheck => "covariance-check",
            Command::Derivs => "derivs",
        }
    }
}

/// Files written by a command, with whether its criterion passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub passed: bool,
    pub outputs: Vec<HashedFile>,
    pub summary: serde_json::Value,
}

/// Output sink of one command run.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<HashedFile>,
}

impl OutputDir {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        self.files.push(HashedFile {
            name: name.to_string(),
            hash: git_hash(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn write_csv<T: serde::Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| CliError::Output(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
        self.write(name, &bytes)
    }
}

/// Runs one command and writes its manifest.
pub fn run(cli: &Cli) -> Result<Report, CliError> {
    let start = Instant::now();
    let (mut cfg, config_text) = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => (ExperimentConfig::default(), String::new()),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    let mut inputs = vec![HashedFile {
        name: cli
            .config
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "<defaults>".into()),
        hash: git_hash(config_text.as_bytes()),
    }];
    if let Some(p) = &cfg.states_file {
        let bytes = std::fs::read(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        inputs.push(HashedFile {
            name: p.display().to_string(),
            hash: git_hash(&bytes),
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| CliError::Usage(format!("workers: {e}")))?;
    let mut out = OutputDir::new(&cfg.out)?;
    let (passed, summary) = pool.install(|| match cli.command {
        Command::VerifyStatic => commands::verify_static(&cfg, &mut out),
        Command::FitVelocity => commands::fit_velocity(&cfg, &mut out),
        Command::NogoTable => commands::nogo_table(&cfg, &mut out),
        Command::CovarianceCheck => commands::covariance_check(&cfg, &mut out),
        Command::Derivs => commands::derivs(&cfg, &mut out),
    })?;
    let manifest = Manifest {
        tool: "lhvdyn".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cli.command.name().into(),
        reproducible: cli.reproducible,
        passed,
        config: cfg.echo(),
        inputs,
        outputs: out.files.clone(),
        elapsed_seconds: (!cli.reproducible).then(|| start.elapsed().as_secs_f64()),
    };
    manifest::write_json(&out.dir.join("manifest.json"), &manifest)?;
    Ok(Report {
        passed,
        outputs: out.files,
        summary,
    })
}

/// Parses `args`, runs, prints a one-line status and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(r) => {
            println!("{}: {}", cli.command.name(), if r.passed { "PASS" } else { "FAIL" });
            if r.passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
