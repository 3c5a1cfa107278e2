use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use fedbary::datagen::{paper_preset_5, CandidateMode, CandidateSpec, ClientLayout};
use fedbary::dual::{client_report, local_couplings, select_support, Batch, ClientReport, Selection};
use fedbary::measures::{build_cost_profile, pairwise_cost, PointSet};
use fedbary::oracle::transport_weights;
use fedbary::{sinkhorn, SinkhornConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WEIGHTS: [f64; 5] = [0.7, 0.1, 0.05, 0.05, 0.1];

fn dual_round(c: &mut Criterion) {
    let mut group = c.benchmark_group("dual_round");
    for &k in &[250usize, 1000] {
        let cand = CandidateSpec { mode: CandidateMode::Normal, k, scale: 5.0 };
        let inst = paper_preset_5(&WEIGHTS, 200, cand, k / 4, 1, ClientLayout::PerComponent).unwrap().instance;
        let profile = build_cost_profile(&inst);
        let lambdas = inst.lambdas();
        let m = inst.support_size() as f64;
        let thetas: Vec<Vec<f64>> = profile.blocks().iter().map(|b| vec![0.0; b.nrows()]).collect();
        let full = Batch::full(k);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        group.throughput(Throughput::Elements(k as u64));
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| {
                let reports: Vec<ClientReport> = profile
                    .blocks()
                    .iter()
                    .enumerate()
                    .map(|(s, block)| ClientReport {
                        client_id: s,
                        round: 0,
                        t: client_report(block, lambdas[s] / m, &thetas[s], &full),
                    })
                    .collect();
                let gamma = select_support(&reports, -1.0, &full, &Selection::empty(k));
                for (s, block) in profile.blocks().iter().enumerate() {
                    local_couplings(block, lambdas[s] / m, &thetas[s], &gamma, &full, &mut rng);
                }
                gamma
            })
        });
    }
    group.finish();
}

fn random_points(n: usize, seed: u64) -> PointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-5.0..5.0)).collect();
    PointSet::new(2, coords).unwrap()
}

fn exact_transport(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_transport");
    for &n in &[50usize, 200] {
        let x = random_points(n, 3);
        let y = random_points(n / 2, 4);
        let cost = pairwise_cost(&x, &y, 2.0).unwrap();
        let a = vec![1.0 / n as f64; n];
        let b = vec![2.0 / n as f64; n / 2];
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, _| {
            bch.iter(|| transport_weights(&a, &b, &cost).unwrap().value)
        });
    }
    group.finish();
}

fn sinkhorn_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("sinkhorn");
    group.sample_size(20);
    let n = 300;
    let x = random_points(n, 5);
    let y = random_points(n / 2, 6);
    let cost = pairwise_cost(&x, &y, 2.0).unwrap();
    let a = vec![1.0 / n as f64; n];
    let b = vec![2.0 / n as f64; n / 2];
    for &reg in &[0.1f64, 0.5] {
        for log_domain in [false, true] {
            let config = SinkhornConfig { reg, tol: 1e-6, maxiter: 1000, log_domain };
            let label = format!("reg{reg}_{}", if log_domain { "log" } else { "plain" });
            group.bench_function(label, |bch| bch.iter(|| sinkhorn(&cost, &a, &b, &config)));
        }
    }
    group.finish();
}

criterion_group!(benches, dual_round, exact_transport, sinkhorn_solve);
criterion_main!(benches);
