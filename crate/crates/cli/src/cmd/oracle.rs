use std::path::PathBuf;

use clap::Args;
use fedbary::oracle::{barycenter_objective, brute_force_barycenter, wasserstein_pp};
use serde_json::json;

use super::{load_instance, parse_list};
use crate::error::CliError;
use crate::{CliResult, Status};

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Instance file.
    instance: PathBuf,
    /// Candidate indices of a support to evaluate, comma separated.
    #[arg(long)]
    support: Option<String>,
    /// Exhaustive search over all M-subsets of candidates.
    #[arg(long)]
    brute_force: bool,
}

pub fn run(args: OracleArgs) -> CliResult {
    let instance = load_instance(&args.instance)?;
    if args.support.is_none() && !args.brute_force {
        return Err(CliError::input("nothing to do: pass --support and/or --brute-force"));
    }
    if let Some(text) = &args.support {
        let mut selected: Vec<usize> = parse_list(text).map_err(CliError::Input)?;
        selected.sort_unstable();
        selected.dedup();
        let objective = barycenter_objective(&instance, &selected)?;
        let support = instance.candidates().points().select(&selected).map_err(|e| CliError::input(e.to_string()))?;
        let weights = vec![1.0 / selected.len() as f64; selected.len()];
        let distances = instance
            .clients()
            .iter()
            .map(|c| wasserstein_pp(&c.cloud, &support, &weights, instance.order()))
            .collect::<Result<Vec<f64>, _>>()?;
        println!(
            "{}",
            json!({ "support": selected, "objective": objective, "client_wpp": distances })
        );
    }
    if args.brute_force {
        let best = brute_force_barycenter(&instance)?;
        println!("{}", json!({ "brute_force": { "support": best.subset, "objective": best.value } }));
    }
    Ok(Status::Done)
}
