//! `disvm`: generate data, fit models, cross-validate, benchmark and sweep.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data or schema
//! error, 3 solver failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "disvm", version, about = "Domain-invariant SVM experiments")]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic datasets as CSV files plus a checksum manifest.
    Synth,
    /// Train one model on the given datasets and report its diagnostics.
    Fit,
    /// Cross-validate one method on one transfer task.
    Eval {
        /// Source dataset names, comma-separated.
        #[arg(long, value_delimiter = ',')]
        source: Vec<String>,
        #[arg(long)]
        target: Option<String>,
    },
    /// Cross-validate several methods over a family of transfer tasks.
    Bench {
        /// `all-pairs` or `leave-one-out`.
        #[arg(long)]
        tasks: Option<String>,
    },
    /// Accuracy of the domain-invariant SVM along `C` or `lambda`.
    Sweep {
        /// `c` or `lambda`.
        #[arg(long)]
        param: Option<String>,
        #[arg(long, value_delimiter = ',')]
        source: Vec<String>,
        #[arg(long)]
        target: Option<String>,
    },
}

/// Flags that override the config file.
#[derive(Debug, Args)]
struct Overrides {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation and evaluation splits.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `disvm`, `svm`, `pca-t`, `pca-st`, `mida` or `smida`. Repeat for
    /// several methods (`bench`); other commands take one.
    #[arg(long, global = true)]
    method: Vec<String>,
    /// `linear`, `rbf` or `poly`.
    #[arg(long, global = true)]
    kernel: Option<String>,
    /// Slack weight.
    #[arg(long, global = true)]
    c: Option<f64>,
    /// Weight of the domain dependence penalty.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// RBF width, multiplying the squared distance.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// KKT tolerance of the solvers.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// `NAME=PATH` of a dataset CSV; repeatable.
    #[arg(long, global = true, value_parser = parse_data)]
    data: Vec<(String, PathBuf)>,
}

fn parse_data(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got `{s}`")),
    }
}

/// An error message with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl From<disvm::Error> for Failure {
    fn from(e: disvm::Error) -> Self {
        use disvm::Error as E;
        let code = if e.is_solver_failure() {
            3
        } else {
            match e {
                E::InvalidParameter(_) | E::SourceIsTarget(_) => 1,
                E::Qp(_) => 3,
                _ => 2,
            }
        };
        Failure { code, message: e.to_string() }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let o = &cli.opts;
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &o.out {
        cfg.out = out.clone();
    }
    match (&cli.command, o.method.as_slice()) {
        (_, []) => {}
        (Command::Bench { .. }, methods) => cfg.bench.methods = methods.to_vec(),
        (_, [one]) => cfg.model.method = one.clone(),
        _ => return Err(Failure::usage("only `bench` accepts more than one --method")),
    }
    if let Some(k) = &o.kernel {
        cfg.model.kernel = k.clone();
    }
    if let Some(c) = o.c {
        cfg.model.c = c;
    }
    if let Some(l) = o.lambda {
        cfg.model.lambda = l;
    }
    if let Some(g) = o.gamma {
        cfg.model.gamma = Some(g);
    }
    if let Some(t) = o.tol {
        cfg.model.tol = t;
    }
    for (name, path) in &o.data {
        cfg.data.insert(name.clone(), path.clone());
    }
    match &cli.command {
        Command::Eval { source, target } | Command::Sweep { source, target, .. } => {
            if !source.is_empty() {
                cfg.task.sources = source.clone();
            }
            if let Some(t) = target {
                cfg.task.target = Some(t.clone());
            }
        }
        _ => {}
    }
    if let Command::Bench { tasks: Some(t) } = &cli.command {
        cfg.bench.tasks = t.clone();
    }
    if let Command::Sweep { param: Some(p), .. } = &cli.command {
        cfg.sweep.param = p.clone();
    }
    validate(&cfg)?;
    Ok(cfg)
}

/// Checks that fail fast, before any data is read.
fn validate(cfg: &RunConfig) -> Result<(), Failure> {
    cfg.kernel_family()?;
    cfg.protocol().validate()?;
    let m = &cfg.model;
    for (name, v) in [("c", m.c), ("tol", m.tol)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Failure::usage(format!("{name} must be positive, got {v}")));
        }
    }
    if !(m.lambda >= 0.0 && m.lambda.is_finite()) {
        return Err(Failure::usage(format!("lambda must be nonnegative, got {}", m.lambda)));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve(&cli)?;
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Fit => commands::fit_command(&cfg),
        Command::Eval { .. } => commands::eval(&cfg),
        Command::Bench { .. } => commands::bench(&cfg),
        Command::Sweep { .. } => commands::sweep(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", line);
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
