use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sfrbsde::config::ExperimentConfig;
use sfrbsde::error::Error;
use sfrbsde::harness::{
    cmd_simulate_fbm, cmd_solve, cmd_sweep, cmd_verify, format_table, init_workers, CommandOutcome,
    EXPECT_FAIL_CHECKS,
};

#[derive(Parser)]
#[command(
    name = "sfrbsde",
    version,
    about = "Mixed Brownian/fractional BSDE averaging experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate B and B^H paths and compare the empirical fBm covariance with the analytic one.
    SimulateFbm(Common),
    /// Solve the configured equation at the largest epsilon and check the representation identities.
    Solve(Common),
    /// Compare original and averaged solutions across eps_list.
    Sweep(Common),
    /// Run the invariant suite at reduced scale.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Negative control that must be observed to fail.
        #[arg(long, value_name = "CHECK")]
        expect_fail: Option<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file; defaults are used when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "SFRBSDE_OUT", value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::parse_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        Ok(cfg)
    }
}

fn report(name: &str, outcome: &CommandOutcome) -> ExitCode {
    print!("{}", format_table(&outcome.checks));
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    if outcome.passed() {
        println!("{name}: all checks passed");
        ExitCode::SUCCESS
    } else {
        println!("{name}: some checks failed");
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let (common, name) = match &cli.command {
        Command::SimulateFbm(c) => (c, "simulate-fbm"),
        Command::Solve(c) => (c, "solve"),
        Command::Sweep(c) => (c, "sweep"),
        Command::Verify { common, .. } => (common, "verify"),
    };
    let cfg = common.load()?;
    init_workers(cfg.workers);
    let outcome = match &cli.command {
        Command::SimulateFbm(_) => cmd_simulate_fbm(&cfg)?,
        Command::Solve(_) => cmd_solve(&cfg)?,
        Command::Sweep(_) => cmd_sweep(&cfg)?.0,
        Command::Verify { expect_fail, .. } => {
            if let Some(c) = expect_fail {
                if !EXPECT_FAIL_CHECKS.contains(&c.as_str()) {
                    return Err(Error::Config(vec![format!(
                        "--expect-fail: unknown check '{c}' (known: {})",
                        EXPECT_FAIL_CHECKS.join(", ")
                    )]));
                }
            }
            cmd_verify(&cfg, expect_fail.as_deref())?
        }
    };
    Ok(report(name, &outcome))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
