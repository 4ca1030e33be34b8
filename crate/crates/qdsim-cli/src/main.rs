//! Batch experiment runner for the dialogue simulator.
//!
//! Exit codes: 0 success, 1 configuration error, 2 verification failure,
//! 3 I/O error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use qdsim::adversary::{SubstitutionPolicy, TargetPolicy};
use qdsim::logical::Encoding;
use qdsim::noise::{NoiseKind, ParamLaw};
use qdsim::protocol::ConfigWarning;

use config::{
    parse_encoding, parse_format, parse_noise, parse_noise_law, parse_policy, parse_target,
    resolve, Flags, OutputFormat, RunConfig,
};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    ChecksFailed,
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::ChecksFailed => 2,
            CliError::Io(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "qdsim",
    version,
    about = "Noise-immune quantum dialogue: seeded simulation, attack scans and reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded dialogue rounds with key reuse; report decode accuracy
    Dialogue(CommonArgs),
    /// Estimate attack detection rates and compare with the exact oracle
    Attack(CommonArgs),
    /// Check the algebra identities and the channel-invariance suite
    Verify(CommonArgs),
    /// Emit efficiency figures and announcement-leakage analysis
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON config file; explicit flags override its fields
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Logical code: dp (dephasing-immune) or r (rotation-immune)
    #[arg(long, value_parser = parse_encoding)]
    encoding: Option<Encoding>,
    /// Message bits per round
    #[arg(long)]
    n: Option<usize>,
    /// Key-share sampling-check size
    #[arg(long)]
    delta1: Option<usize>,
    /// Decoys inserted per transmission
    #[arg(long)]
    decoys: Option<usize>,
    /// Key rotation angle in radians; odd multiples of pi/4 are rejected
    #[arg(long, value_name = "RAD")]
    theta_key: Option<f64>,
    /// Channel noise kind: dephasing, rotation or ideal
    #[arg(long, value_parser = parse_noise)]
    noise: Option<NoiseKind>,
    /// Per-block channel parameter law: uniform or fixed:<rad>
    #[arg(long, value_parser = parse_noise_law, value_name = "LAW")]
    noise_law: Option<ParamLaw>,
    /// none, intercept_resend_logical, intercept_resend_physical,
    /// capture_sc or entangle_ancilla
    #[arg(long)]
    attack: Option<String>,
    /// Substitution policy for capture_sc
    #[arg(long, value_parser = parse_policy)]
    policy: Option<SubstitutionPolicy>,
    /// Target selection for entangle_ancilla
    #[arg(long, value_parser = parse_target)]
    target: Option<TargetPolicy>,
    /// Dialogue rounds or attack trials
    #[arg(long)]
    trials: Option<u32>,
    /// Master seed; falls back to QDSIM_SEED, then 0
    #[arg(long)]
    seed: Option<u64>,
    /// Payload format: json or csv
    #[arg(long, value_parser = parse_format)]
    format: Option<OutputFormat>,
    /// Output path; stdout when omitted
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Record in-flight reduced-state deviation per message qubit
    #[arg(long)]
    introspect: bool,
}

#[derive(Args, Clone)]
struct ReportArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Public transcript JSON to analyze instead of synthesizing one
    #[arg(long, value_name = "PATH")]
    transcript: Option<PathBuf>,
}

impl From<&CommonArgs> for Flags {
    fn from(args: &CommonArgs) -> Flags {
        Flags {
            config: args.config.clone(),
            encoding: args.encoding,
            n: args.n,
            delta1: args.delta1,
            decoys: args.decoys,
            theta_key: args.theta_key,
            noise: args.noise,
            noise_law: args.noise_law.clone(),
            attack: args.attack.clone(),
            policy: args.policy,
            target: args.target,
            trials: args.trials,
            seed: args.seed,
            format: args.format,
            out: args.out.clone(),
            introspect: args.introspect,
        }
    }
}

fn resolved(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let cfg = resolve(&Flags::from(args))?;
    for warning in cfg.protocol.warnings() {
        match warning {
            ConfigWarning::NullRotation => {
                eprintln!("warning: theta_key is a multiple of 2*pi; key rotations do nothing")
            }
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Dialogue(args) => commands::cmd_dialogue(&resolved(args)?),
        Command::Attack(args) => commands::cmd_attack(&resolved(args)?),
        Command::Verify(args) => commands::cmd_verify(&resolved(args)?),
        Command::Report(args) => commands::cmd_report(&resolved(&args.common)?, &args.transcript),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap's own exit convention would collide with the verify code, so
        // parse failures are mapped onto the config-error code here
        Err(e) => {
            let failed = e.use_stderr();
            let _ = e.print();
            std::process::exit(if failed { 1 } else { 0 });
        }
    };
    if let Err(err) = run(cli) {
        match &err {
            CliError::Config(msg) => eprintln!("config error: {msg}"),
            CliError::ChecksFailed => eprintln!("verification failed"),
            CliError::Io(msg) => eprintln!("io error: {msg}"),
        }
        std::process::exit(err.exit_code());
    }
}
