use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, ValueEnum};
use fedbary::dual::solver::SolveResult;
use fedbary::dual::{HyperParams, RecoveryMode, StopRule};
use fedbary::federation::{connect_client, run_client, serve_tcp, solve_in_process, solve_tcp, ClientData, RoundLog};
use fedbary::io::{save_trace, BarycenterFile};
use fedbary::measures::ProblemInstance;

use super::{ensure_dir, load_instance};
use crate::error::CliError;
use crate::{CliResult, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Role {
    /// Coordinator and every client in this process.
    AllInOne,
    Coordinator,
    Client,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Transport {
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Stop {
    Relative,
    Absolute,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Recover {
    TopM,
    Sample,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Instance file.
    instance: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    alpha0: f64,
    #[arg(long, default_value_t = 0.9)]
    kappa1: f64,
    #[arg(long, default_value_t = 0.9)]
    kappa2: f64,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long, value_enum, default_value = "relative")]
    stop: Stop,
    #[arg(long, default_value_t = 5000)]
    maxiter: u64,
    /// Candidates per round; omit for the deterministic variant.
    #[arg(long)]
    batch: Option<usize>,
    /// Rounds averaged by primal recovery.
    #[arg(long, default_value_t = 50)]
    window: usize,
    #[arg(long, value_enum, default_value = "top-m")]
    recovery: Recover,
    /// Allowed relative deviation of the selected count from M at stop.
    #[arg(long, default_value_t = 0.10)]
    band: f64,
    #[arg(long, env = "FEDBARY_SEED", default_value_t = 0)]
    seed: u64,
    /// Initial value of the cardinality multiplier.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta0: f64,
    #[arg(long, value_enum, default_value = "all-in-one")]
    role: Role,
    #[arg(long, value_enum, default_value = "in-process")]
    transport: Transport,
    /// Coordinator listen address.
    #[arg(long, env = "FEDBARY_LISTEN", default_value = "127.0.0.1:7001")]
    listen: String,
    /// Coordinator address for the client role (defaults to --listen).
    #[arg(long)]
    connect: Option<String>,
    /// Instance client index served by the client role.
    #[arg(long)]
    client_id: Option<usize>,
    /// Straggler and connection deadline in seconds.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    #[arg(short, long, default_value = ".")]
    out: PathBuf,
}

impl SolveArgs {
    fn hyper(&self) -> HyperParams {
        HyperParams {
            alpha0: self.alpha0,
            kappa1: self.kappa1,
            kappa2: self.kappa2,
            epsilon: self.epsilon,
            stop_rule: match self.stop {
                Stop::Relative => StopRule::Relative,
                Stop::Absolute => StopRule::Absolute,
            },
            maxiter: self.maxiter,
            batch_size: self.batch,
            recovery_window: self.window,
            recovery_mode: match self.recovery {
                Recover::TopM => RecoveryMode::TopM,
                Recover::Sample => RecoveryMode::Sample,
            },
            support_band: self.band,
            seed: self.seed,
            theta0_init: self.theta0,
        }
    }

    fn timeout(&self) -> Result<Duration, CliError> {
        Duration::try_from_secs_f64(self.timeout).map_err(|_| CliError::input("timeout must be a positive number of seconds"))
    }
}

fn address(text: &str) -> String {
    // accept ":7001" as shorthand for all interfaces
    if text.starts_with(':') {
        format!("0.0.0.0{text}")
    } else {
        text.to_owned()
    }
}

fn write_outputs(dir: &Path, instance: &ProblemInstance, hyper: &HyperParams, result: &SolveResult, log: &RoundLog) -> Result<(), CliError> {
    ensure_dir(dir)?;
    let hash = instance.content_hash();
    save_trace(&dir.join("trace.csv"), &result.history, &hash)?;
    BarycenterFile::from_dual(instance, hyper, result).save(&dir.join("barycenter.json"))?;
    log.save(&dir.join("rounds.jsonl"))?;
    Ok(())
}

fn status(converged: bool) -> Status {
    if converged {
        Status::Done
    } else {
        Status::IterationCap
    }
}

pub fn run(args: SolveArgs) -> CliResult {
    let instance = load_instance(&args.instance)?;
    let hyper = args.hyper();
    hyper.validate(instance.num_candidates())?;
    let timeout = args.timeout()?;

    if args.role == Role::Client {
        let id = args.client_id.ok_or_else(|| CliError::input("the client role needs --client-id"))?;
        if id >= instance.num_clients() {
            return Err(CliError::input(format!("client id {id} out of range for {} clients", instance.num_clients())));
        }
        let addr = address(args.connect.as_deref().unwrap_or(&args.listen));
        let mut link = connect_client(addr.as_str(), timeout)?;
        let summary = run_client(&mut link, ClientData::from_instance(&instance, id))?;
        println!("client {id}: {} rounds, stopped: {}", summary.rounds, summary.reason);
        return match summary.reason.as_str() {
            "converged" => Ok(Status::Done),
            "maxiter" => Ok(Status::IterationCap),
            other => Err(CliError::Protocol(format!("run aborted by coordinator: {other}"))),
        };
    }

    let (result, log) = match (args.role, args.transport) {
        (Role::Coordinator, _) => {
            let addr = address(&args.listen);
            let listener = TcpListener::bind(&addr).map_err(|e| CliError::Protocol(format!("{addr}: {e}")))?;
            log::info!("waiting for {} clients on {addr}", instance.num_clients());
            serve_tcp(&listener, &instance, &hyper, timeout)?
        }
        (_, Transport::InProcess) => solve_in_process(&instance, &hyper, timeout)?,
        (_, Transport::Tcp) => solve_tcp(&instance, &hyper, &address(&args.listen), timeout)?,
    };
    write_outputs(&args.out, &instance, &hyper, &result, &log)?;
    println!(
        "{} after {} rounds: best dual {:.6}, objective {:.6}, support size {} ({:.3} ms/round)",
        if result.converged { "converged" } else { "iteration cap" },
        result.iterations,
        result.best_dual,
        result.recovery.objective,
        result.recovery.support.len(),
        result.mean_round_ms()
    );
    Ok(status(result.converged))
}
