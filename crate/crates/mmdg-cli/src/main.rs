use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmdg::app::{self, Outcome};
use mmdg::config::{ProbeKind, RunConfig};
use mmdg::{Error, Result};

/// Moving-mesh interior-penalty DG for advection-diffusion on the unit square.
///
/// Settings come from defaults, then the `--config` file, then trailing
/// `--key=value` pairs, then MMDG_OUTPUT_DIR for the output directory.
#[derive(Parser)]
#[command(name = "mmdg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured scenario and write fields, indicators and VTK snapshots.
    Solve(Common),
    /// Run one of the numerical checks: coercivity, inconsistency, appendix or
    /// apriori, given as the first word or through the `probe` key.
    Probe(Common),
    /// Error table and observed rates over the `sizes` meshes.
    Converge(Common),
    /// The same problem with and without mesh motion.
    CompareStaticMoving(Common),
}

#[derive(Args)]
struct Common {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides such as `--n=18` or `--dt=2^-16`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
    overrides: Vec<String>,
}

fn configure(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => app::load_config(path)?,
        None => RunConfig::default(),
    };
    let pairs: Vec<&str> =
        common.overrides.iter().filter(|s| s.starts_with("--")).map(|s| s.trim_start_matches("--")).collect();
    cfg.apply_overrides(pairs)?;
    app::apply_env(&mut cfg, std::env::var(app::OUTPUT_ENV).ok());
    Ok(cfg)
}

fn execute(command: &Command) -> Result<Outcome> {
    match command {
        Command::Solve(c) | Command::Converge(c) | Command::CompareStaticMoving(c)
            if c.overrides.iter().any(|s| !s.starts_with("--")) =>
        {
            Err(Error::InvalidParameter(format!("overrides must look like --key=value: {:?}", c.overrides)))
        }
        Command::Solve(c) => app::solve(&configure(c)?),
        Command::Converge(c) => app::converge(&configure(c)?),
        Command::CompareStaticMoving(c) => app::compare(&configure(c)?),
        Command::Probe(common) => {
            let cfg = configure(common)?;
            let named = match common.overrides.iter().find(|s| !s.starts_with("--")) {
                Some(w) => {
                    Some(ProbeKind::parse(w).ok_or_else(|| Error::InvalidParameter(format!("unknown probe '{w}'")))?)
                }
                None => None,
            };
            let kind = named.or(cfg.probe).ok_or_else(|| Error::InvalidParameter("no probe selected".into()))?;
            app::probe(&cfg, kind)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are successes; every other usage error is a validation failure.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = execute(&cli.command);
    match &result {
        Ok(o) => {
            print!("{}", o.summary);
            for f in &o.files {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(app::exit_code(&result) as u8)
}
