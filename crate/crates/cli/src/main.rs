use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairshare_cli::campaign::{run_campaign, CampaignSpec, Generator};
use fairshare_cli::commands::{exit_code, Outcome, EXIT_AUDIT_FAIL, EXIT_INPUT};
use fairshare_cli::config::{Method, RunConfig, CONFIG_ENV};
use fairshare_cli::{cmd_check, cmd_decompose, cmd_district, cmd_solve};
use fairshare_core::num::{parse_rational, Rational};
use fairshare_core::schoolchoice::EndowmentPolicy;

#[derive(Parser)]
#[command(
    name = "fairshare",
    version,
    about = "Fair and individually rational allocation of divisible objects"
)]
struct Cli {
    /// Run configuration (JSON); defaults to the file named by FAIRSHARE_CONFIG.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct SolveFlags {
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long, value_parser = parse_rational)]
    epsilon: Option<Rational>,
    /// Regularizer weight override.
    #[arg(long, value_parser = parse_rational)]
    delta: Option<Rational>,
    /// Simplicial refinement depth.
    #[arg(long)]
    depth: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the solution (also printed).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    audit_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute an allocation and audit it.
    Solve {
        problem: PathBuf,
        #[command(flatten)]
        flags: SolveFlags,
    },
    /// Audit an allocation: IR, justified envy, Pareto optimality.
    Check {
        problem: PathBuf,
        allocation: PathBuf,
        #[arg(long, value_parser = parse_rational, default_value = "0")]
        epsilon: Rational,
    },
    /// Write a unit-demand allocation as a lottery over deterministic assignments.
    Decompose { problem: PathBuf, allocation: PathBuf },
    /// Deferred acceptance plus a fair allocation of a school district.
    District {
        district: PathBuf,
        #[arg(long, value_enum, default_value = "uniform-lottery")]
        policy: Policy,
        #[command(flatten)]
        flags: SolveFlags,
    },
    /// Randomized property campaign over generated instances.
    Campaign {
        #[arg(long, value_enum, default_value = "unit-demand")]
        generator: Generator,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        max_agents: usize,
        #[arg(long, default_value_t = 5)]
        max_objects: usize,
        #[arg(long, default_value_t = 5)]
        prices: usize,
        /// Also run the welfare-weight solver on instances with clones.
        #[arg(long)]
        kkm: bool,
        /// Directory for minimized counterexamples.
        #[arg(long)]
        repro_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Policy {
    UniformLottery,
    NeighborhoodBoost,
    Custom,
}

impl From<Policy> for EndowmentPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::UniformLottery => EndowmentPolicy::UniformLottery,
            Policy::NeighborhoodBoost => EndowmentPolicy::NeighborhoodBoost,
            Policy::Custom => EndowmentPolicy::Custom,
        }
    }
}

fn apply(mut cfg: RunConfig, f: SolveFlags) -> RunConfig {
    if let Some(m) = f.method {
        cfg.method = m;
    }
    if let Some(e) = f.epsilon {
        cfg.epsilon = e;
    }
    if f.delta.is_some() {
        cfg.delta = f.delta;
    }
    if let Some(d) = f.depth {
        cfg.kkm.grid_depth = d;
    }
    if let Some(s) = f.seed {
        cfg.seed = s;
    }
    if f.out.is_some() {
        cfg.out = f.out;
    }
    if f.audit_out.is_some() {
        cfg.audit_out = f.audit_out;
    }
    cfg
}

fn emit(o: Outcome) -> ExitCode {
    for d in &o.diagnostics {
        eprintln!("error: {d}");
    }
    match serde_json::to_string_pretty(&o.output) {
        Ok(text) => {
            // a closed pipe downstream is not an error of ours
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INPUT as u8);
        }
    }
    ExitCode::from(o.code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let base = match RunConfig::resolve(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e) as u8);
        }
    };
    match cli.command {
        Command::Solve { problem, flags } => emit(cmd_solve(&problem, &apply(base, flags))),
        Command::Check {
            problem,
            allocation,
            epsilon,
        } => emit(cmd_check(&problem, &allocation, &epsilon)),
        Command::Decompose { problem, allocation } => emit(cmd_decompose(&problem, &allocation)),
        Command::District {
            district,
            policy,
            flags,
        } => emit(cmd_district(&district, policy.into(), &apply(base, flags))),
        Command::Campaign {
            generator,
            instances,
            seed,
            max_agents,
            max_objects,
            prices,
            kkm,
            repro_dir,
        } => {
            let spec = CampaignSpec {
                generator,
                instances,
                seed,
                max_agents,
                max_objects,
                prices_per_instance: prices,
                kkm,
                epsilon: base.epsilon.clone(),
            };
            match run_campaign(&spec, repro_dir.as_deref()) {
                Ok(report) => {
                    let code = if report.passes { 0 } else { EXIT_AUDIT_FAIL };
                    emit(Outcome {
                        code,
                        output: serde_json::to_value(&report).unwrap_or_default(),
                        diagnostics: Vec::new(),
                    })
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code(&e) as u8)
                }
            }
        }
    }
}
