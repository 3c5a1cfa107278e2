use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use fedbary::datagen::{paper_preset_5, random_preset, CandidateMode, CandidateSpec, ClientLayout};

use super::parse_list;
use crate::error::CliError;
use crate::{CliResult, Status};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Five Gaussians at the square corners and origin.
    Paper5,
    /// Seeded random mixture.
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Layout {
    PerComponent,
    Mixture,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "paper5")]
    preset: Preset,
    /// Mixture weights for paper5, comma separated.
    #[arg(long, default_value = "0.2,0.2,0.2,0.2,0.2")]
    weights: String,
    /// Number of components for the random preset.
    #[arg(long, default_value_t = 10)]
    components: usize,
    /// Particles per client.
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Candidate set as mode:K:scale with mode grid, normal or pooled.
    #[arg(long, default_value = "normal:1000:5")]
    candidates: String,
    /// Barycenter support size.
    #[arg(short = 'M', long = "M")]
    m: usize,
    #[arg(long, env = "FEDBARY_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "per-component")]
    layout: Layout,
    #[arg(short, long, default_value = "instance.json")]
    out: PathBuf,
}

pub fn parse_candidates(text: &str) -> Result<CandidateSpec, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || CliError::input(format!("candidates must look like normal:1000:5, got `{text}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mode = match parts[0] {
        "grid" => CandidateMode::Grid,
        "normal" => CandidateMode::Normal,
        "pooled" => CandidateMode::Pooled,
        _ => return Err(bad()),
    };
    let k = parts[1].parse().map_err(|_| bad())?;
    let scale = parts[2].parse().map_err(|_| bad())?;
    Ok(CandidateSpec { mode, k, scale })
}

pub fn run(args: GenArgs) -> CliResult {
    let candidates = parse_candidates(&args.candidates)?;
    let layout = match args.layout {
        Layout::PerComponent => ClientLayout::PerComponent,
        Layout::Mixture => ClientLayout::Mixture,
    };
    let generated = match args.preset {
        Preset::Paper5 => {
            let weights: Vec<f64> = parse_list(&args.weights).map_err(CliError::Input)?;
            paper_preset_5(&weights, args.n, candidates, args.m, args.seed, layout)?
        }
        Preset::Random => random_preset(args.components, args.n, candidates, args.m, args.seed)?,
    };
    let text = serde_json::to_string(&generated.to_raw())?;
    fs::write(&args.out, text).map_err(|e| CliError::input(format!("{}: {e}", args.out.display())))?;
    let inst = &generated.instance;
    println!(
        "wrote {}: N = {} clients, K = {} candidates, M = {}, hash {}",
        args.out.display(),
        inst.num_clients(),
        inst.num_candidates(),
        inst.support_size(),
        inst.content_hash()
    );
    Ok(Status::Done)
}
