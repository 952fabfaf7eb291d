use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use exterior_wavemaps::config::{self, ConfigIssue, Kind, RawConfig};
use exterior_wavemaps::harness::{self, RunManifest};

/// Exterior wave-map laboratory.
#[derive(Parser)]
#[command(name = "wavelab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file; keys may be overridden with --set.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// `key=value` override, repeatable.
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (same as --set output.dir=DIR).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file of any kind.
    Run {
        config: PathBuf,
        #[arg(short, long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Exact coefficient tables and identity checks.
    TabulateCoefficients(Common),
    /// Harmonic map by shooting.
    Shoot(Common),
    /// Wave-map evolution with energy ledger and checkpoints.
    Evolve(Common),
    /// Exterior energy channels of free waves.
    Channels(Common),
    /// Smallest eigenvalue of the linearised operator.
    Spectral(Common),
    /// Parallel relaxation sweep over (ell, n, amplitude).
    Sweep(Common),
    /// Projection identities on random data.
    Projection(Common),
    /// Check a finished run directory against its manifest.
    Verify { dir: PathBuf },
}

enum Failure {
    Validation(Vec<ConfigIssue>),
    Runtime(String),
}

fn load(path: Option<&Path>, kind: Option<Kind>, set: &[String], output: Option<&Path>) -> Result<RawConfig, Failure> {
    let mut raw = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                Failure::Validation(vec![ConfigIssue { line: None, message: format!("cannot read {}: {e}", p.display()) }])
            })?;
            RawConfig::parse(&text).map_err(Failure::Validation)?
        }
        None => RawConfig::default(),
    };
    let mut issues = Vec::new();
    if let Some(k) = kind {
        match raw.get("kind") {
            Some(found) if found != k.name() => issues.push(ConfigIssue {
                line: None,
                message: format!("config is of kind `{found}`, not `{}`", k.name()),
            }),
            _ => {
                let _ = raw.set(&format!("kind={}", k.name()));
            }
        }
    }
    for s in set {
        if let Err(e) = raw.set(s) {
            issues.push(e);
        }
    }
    if let Some(o) = output {
        let _ = raw.set(&format!("output.dir={}", o.display()));
    }
    if issues.is_empty() {
        Ok(raw)
    } else {
        Err(Failure::Validation(issues))
    }
}

fn execute(raw: RawConfig) -> Result<RunManifest, Failure> {
    let cfg = config::validate(&raw).map_err(Failure::Validation)?;
    eprintln!("running {} -> {}", cfg.kind().name(), cfg.output_dir.display());
    harness::run(&cfg).map_err(|e| Failure::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Verify { dir } => {
            return match RunManifest::read(&dir) {
                Ok(m) => {
                    let bad = m.verify(&dir);
                    if bad.is_empty() {
                        println!("{} files verified", m.files.len());
                        ExitCode::SUCCESS
                    } else {
                        for b in bad {
                            eprintln!("mismatch: {b}");
                        }
                        ExitCode::from(2)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            };
        }
        Command::Run { config, set, output } => load(Some(&config), None, &set, output.as_deref()).and_then(execute),
        Command::TabulateCoefficients(c) => with_kind(Kind::TabulateCoefficients, c),
        Command::Shoot(c) => with_kind(Kind::Shoot, c),
        Command::Evolve(c) => with_kind(Kind::Evolve, c),
        Command::Channels(c) => with_kind(Kind::Channels, c),
        Command::Spectral(c) => with_kind(Kind::Spectral, c),
        Command::Sweep(c) => with_kind(Kind::Sweep, c),
        Command::Projection(c) => with_kind(Kind::Projection, c),
    };
    match outcome {
        Ok(m) => {
            for f in &m.files {
                println!("{}  {}", f.sha256, f.path);
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Validation(issues)) => {
            for i in issues {
                eprintln!("invalid config: {i}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn with_kind(kind: Kind, c: Common) -> Result<RunManifest, Failure> {
    load(c.config.as_deref(), Some(kind), &c.set, c.output.as_deref()).and_then(execute)
}
