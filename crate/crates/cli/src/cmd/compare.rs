use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use clap::Args;
use fedbary::io::{write_points, BarycenterFile, Method};
use serde::Serialize;

use super::{ensure_dir, load_instance};
use crate::error::CliError;
use crate::{CliResult, Status};

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Instance file all results must come from.
    instance: PathBuf,
    /// Result files written by `solve` or `baseline`.
    #[arg(required = true)]
    results: Vec<PathBuf>,
    #[arg(short, long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Row {
    method: String,
    regularization: String,
    converged: bool,
    total_time_s: f64,
    iterations: u64,
    time_per_iter_ms: f64,
    exact_objective: f64,
}

fn label(file: &BarycenterFile) -> String {
    match (file.method, file.regularization) {
        (Method::Dual, _) => "dual".into(),
        (Method::Bregman, Some(r)) => format!("bregman_reg{r}"),
        (Method::Bregman, None) => "bregman".into(),
    }
}

pub fn run(args: CompareArgs) -> CliResult {
    let instance = load_instance(&args.instance)?;
    let hash = instance.content_hash();
    let mut files = Vec::with_capacity(args.results.len());
    for path in &args.results {
        let file = BarycenterFile::load(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        if file.instance_hash != hash {
            return Err(CliError::input(format!(
                "{} was computed on instance {}, not {} ({hash}); refusing to compare",
                path.display(),
                file.instance_hash,
                args.instance.display()
            )));
        }
        files.push(file);
    }
    ensure_dir(&args.out)?;

    let rows: Vec<Row> = files
        .iter()
        .map(|f| Row {
            method: match f.method {
                Method::Dual => "dual".into(),
                Method::Bregman => "bregman".into(),
            },
            regularization: f.regularization.map_or("-".into(), |r| r.to_string()),
            converged: f.converged,
            total_time_s: f.total_time_s,
            iterations: f.iterations,
            time_per_iter_ms: f.time_per_iter_ms,
            exact_objective: f.objective,
        })
        .collect();
    let mut w = csv::Writer::from_path(args.out.join("comparison.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;

    println!(
        "{:<10} {:>6} {:>10} {:>12} {:>10} {:>14} {:>16}",
        "method", "reg", "converged", "total_s", "iters", "ms/iter", "exact_objective"
    );
    for r in &rows {
        println!(
            "{:<10} {:>6} {:>10} {:>12.3} {:>10} {:>14.3} {:>16.6}",
            r.method,
            r.regularization,
            if r.converged { "yes" } else { "no" },
            r.total_time_s,
            r.iterations,
            r.time_per_iter_ms,
            r.exact_objective
        );
    }

    let mut labels = Vec::new();
    let mut particles = Vec::new();
    for (s, client) in instance.clients().iter().enumerate() {
        for p in client.cloud.points().iter() {
            labels.push(s.to_string());
            particles.push(p.to_vec());
        }
    }
    write_points(
        BufWriter::new(File::create(args.out.join("clients.csv"))?),
        Some(("client", &labels)),
        &particles,
    )?;
    write_points(
        BufWriter::new(File::create(args.out.join("candidates.csv"))?),
        None,
        &instance.candidates().points().to_rows(),
    )?;
    for f in &files {
        let path = args.out.join(format!("support_{}.csv", label(f)));
        write_points(BufWriter::new(File::create(path)?), None, &f.support)?;
    }
    Ok(Status::Done)
}
