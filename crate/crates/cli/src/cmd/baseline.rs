use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use clap::Args;
use fedbary::bregman::{free_support_barycenter, init_from_particles, BaselineConfig, SinkhornConfig};
use fedbary::io::{write_baseline_trace, BarycenterFile};

use super::{ensure_dir, load_instance, parse_list};
use crate::error::CliError;
use crate::{CliResult, Status};

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Instance file.
    instance: PathBuf,
    /// Entropic regularizations, comma separated.
    #[arg(long, default_value = "0.05,0.1,0.5")]
    reg: String,
    /// Relative support change that ends the fixed-point iteration.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    maxiter: usize,
    /// Row-marginal L1 tolerance of each Sinkhorn solve.
    #[arg(long, default_value_t = 1e-6)]
    sinkhorn_tol: f64,
    /// Sinkhorn iterations per outer step.
    #[arg(long, default_value_t = 1000)]
    sinkhorn_maxiter: usize,
    /// Always use log-domain stabilization.
    #[arg(long)]
    log_domain: bool,
    /// Reuse the previous step's potentials.
    #[arg(long)]
    warm_start: bool,
    #[arg(long, env = "FEDBARY_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(short, long, default_value = ".")]
    out: PathBuf,
}

pub fn run(args: BaselineArgs) -> CliResult {
    let instance = load_instance(&args.instance)?;
    let regs: Vec<f64> = parse_list(&args.reg).map_err(CliError::Input)?;
    ensure_dir(&args.out)?;
    let hash = instance.content_hash();
    let init = init_from_particles(&instance, instance.support_size(), args.seed)?;
    let mut all_converged = true;
    for reg in regs {
        let config = BaselineConfig {
            sinkhorn: SinkhornConfig {
                reg,
                tol: args.sinkhorn_tol,
                maxiter: args.sinkhorn_maxiter,
                log_domain: args.log_domain,
            },
            tol: args.tol,
            maxiter: args.maxiter,
            warm_start: args.warm_start,
            seed: args.seed,
        };
        let result = free_support_barycenter(&instance, &init, &config)?;
        let stem = format!("baseline_reg{reg}");
        BarycenterFile::from_baseline(&instance, &result).save(&args.out.join(format!("{stem}.json")))?;
        let trace = BufWriter::new(File::create(args.out.join(format!("{stem}_trace.csv")))?);
        write_baseline_trace(trace, &result.trace, &hash)?;
        println!(
            "reg {reg}: {} after {} iterations, objective {:.6}, {:.2} ms/iteration",
            if result.converged { "converged" } else { "NOT converged" },
            result.iterations,
            result.objective,
            result.mean_iter_ms()
        );
        all_converged &= result.converged;
    }
    Ok(if all_converged { Status::Done } else { Status::IterationCap })
}
