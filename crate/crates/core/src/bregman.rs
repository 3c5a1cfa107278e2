//! Entropic baseline: Sinkhorn scaling and the free-support barycenter
//! fixed point with barycentric support updates.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{pairwise_cost, InstanceError, PointSet, ProblemInstance};
use crate::oracle::{objective_for_support, OracleError, TransportPlan};
use crate::seed::{mix_seed, BASELINE_STREAM};

/// Scaling factors beyond `exp(ABSORB_LOG)` are folded into the potentials.
const ABSORB_LOG: f64 = 50.0;

#[derive(Debug, Error)]
pub enum BregmanError {
    #[error("regularization must be positive (reg = {0})")]
    InvalidReg(f64),
    #[error("tolerance must be positive (tol = {0})")]
    InvalidTol(f64),
    #[error("marginal weights must be positive and finite")]
    InvalidMarginal,
    #[error("cost matrix is {rows}x{cols}, marginals have lengths {a} and {b}")]
    Shape { rows: usize, cols: usize, a: usize, b: usize },
    #[error("cost matrix has a non-finite entry")]
    NonFiniteCost,
    #[error("numeric overflow in kernel scaling at reg = {reg}; rerun with log-domain stabilization")]
    Overflow { reg: f64 },
    #[error("initial support has {found} points, expected M = {expected}")]
    InitSize { expected: usize, found: usize },
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub reg: f64,
    /// L1 bound on the row-marginal violation (columns are exact after each
    /// sweep).
    pub tol: f64,
    pub maxiter: usize,
    pub log_domain: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            reg: 0.1,
            tol: 1e-6,
            maxiter: 1000,
            log_domain: false,
        }
    }
}

impl SinkhornConfig {
    fn validate(&self) -> Result<(), BregmanError> {
        if !(self.reg > 0.0 && self.reg.is_finite()) {
            return Err(BregmanError::InvalidReg(self.reg));
        }
        if !(self.tol > 0.0) {
            return Err(BregmanError::InvalidTol(self.tol));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornOutput {
    /// Regularized plan and its transport cost `<C, pi>` (entropy excluded).
    pub transport: TransportPlan,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_error: f64,
    pub log_domain: bool,
    /// Dual potentials `(f, g)` with `pi = exp((f_i + g_j - C_ij) / reg)`.
    /// Only set by the log-domain solver.
    pub potentials: Option<(DVector<f64>, DVector<f64>)>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if v.len() % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Whether the log-domain solver is used for this cost and config.
pub fn needs_log_domain(cost: &DMatrix<f64>, config: &SinkhornConfig) -> bool {
    config.log_domain || config.reg < 0.1 * median(cost.as_slice())
}

fn check_inputs(cost: &DMatrix<f64>, a: &[f64], b: &[f64]) -> Result<(), BregmanError> {
    if cost.nrows() != a.len() || cost.ncols() != b.len() {
        return Err(BregmanError::Shape {
            rows: cost.nrows(),
            cols: cost.ncols(),
            a: a.len(),
            b: b.len(),
        });
    }
    if a.is_empty() || b.is_empty() || a.iter().chain(b).any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(BregmanError::InvalidMarginal);
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(BregmanError::NonFiniteCost);
    }
    Ok(())
}

/// Entropic transport between weights `a` and `b`.
pub fn sinkhorn(cost: &DMatrix<f64>, a: &[f64], b: &[f64], config: &SinkhornConfig) -> Result<SinkhornOutput, BregmanError> {
    sinkhorn_warm(cost, a, b, config, None)
}

/// As [`sinkhorn`], optionally starting the log-domain solver from a column
/// potential `g`.
pub fn sinkhorn_warm(
    cost: &DMatrix<f64>,
    a: &[f64],
    b: &[f64],
    config: &SinkhornConfig,
    warm_g: Option<&DVector<f64>>,
) -> Result<SinkhornOutput, BregmanError> {
    config.validate()?;
    check_inputs(cost, a, b)?;
    let a = DVector::from_column_slice(a);
    let b = DVector::from_column_slice(b);
    if needs_log_domain(cost, config) {
        Ok(log_domain(cost, &a, &b, config, warm_g))
    } else {
        plain(cost, &a, &b, config)
    }
}

fn row_error(u: &DVector<f64>, kv: &DVector<f64>, a: &DVector<f64>) -> f64 {
    u.iter().zip(kv.iter()).zip(a.iter()).map(|((u, k), a)| (u * k - a).abs()).sum()
}

fn scaled_plan(kernel: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>, cost: &DMatrix<f64>) -> TransportPlan {
    let mut plan = kernel.clone();
    for (j, mut col) in plan.column_iter_mut().enumerate() {
        for (i, x) in col.iter_mut().enumerate() {
            *x *= u[i] * v[j];
        }
    }
    let value = plan.component_mul(cost).sum();
    TransportPlan { plan, value }
}

fn plain(cost: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>, config: &SinkhornConfig) -> Result<SinkhornOutput, BregmanError> {
    let overflow = BregmanError::Overflow { reg: config.reg };
    let kernel = cost.map(|c| (-c / config.reg).exp());
    let mut u = DVector::from_element(a.len(), 1.0);
    let mut v = DVector::from_element(b.len(), 1.0);
    let mut err = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.maxiter {
        iterations += 1;
        u = a.component_div(&(&kernel * &v));
        v = b.component_div(&(kernel.tr_mul(&u)));
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(overflow);
        }
        err = row_error(&u, &(&kernel * &v), a);
        if err <= config.tol {
            break;
        }
    }
    let transport = scaled_plan(&kernel, &u, &v, cost);
    if !transport.value.is_finite() {
        return Err(overflow);
    }
    Ok(SinkhornOutput {
        transport,
        iterations,
        converged: err <= config.tol,
        marginal_error: err,
        log_domain: false,
        potentials: None,
    })
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Exact soft-min updates of both potentials.
fn log_update(cost: &DMatrix<f64>, reg: f64, a: &DVector<f64>, b: &DVector<f64>, f: &mut DVector<f64>, g: &mut DVector<f64>) {
    for i in 0..cost.nrows() {
        let lse = log_sum_exp((0..cost.ncols()).map(|j| (g[j] - cost[(i, j)]) / reg));
        f[i] = reg * (a[i].ln() - lse);
    }
    for j in 0..cost.ncols() {
        let col = cost.column(j);
        let lse = log_sum_exp((0..cost.nrows()).map(|i| (f[i] - col[i]) / reg));
        g[j] = reg * (b[j].ln() - lse);
    }
}

fn stabilized_kernel(cost: &DMatrix<f64>, reg: f64, f: &DVector<f64>, g: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(cost.nrows(), cost.ncols(), |i, j| ((f[i] + g[j] - cost[(i, j)]) / reg).exp())
}

/// Scaling iterations on a kernel stabilized by log-domain potentials; large
/// scalings are absorbed into the potentials and the kernel is rebuilt.
fn log_domain(
    cost: &DMatrix<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
    config: &SinkhornConfig,
    warm_g: Option<&DVector<f64>>,
) -> SinkhornOutput {
    let reg = config.reg;
    let mut f = DVector::zeros(a.len());
    let mut g = match warm_g {
        Some(g) if g.len() == b.len() && g.iter().all(|x| x.is_finite()) => g.clone(),
        _ => DVector::zeros(b.len()),
    };
    log_update(cost, reg, a, b, &mut f, &mut g);
    let mut kernel = stabilized_kernel(cost, reg, &f, &g);
    let mut u = DVector::from_element(a.len(), 1.0);
    let mut v = DVector::from_element(b.len(), 1.0);
    let mut err = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.maxiter {
        iterations += 1;
        u = a.component_div(&(&kernel * &v));
        v = b.component_div(&(kernel.tr_mul(&u)));
        let healthy = u.iter().chain(v.iter()).all(|x| x.is_finite() && *x > 0.0);
        let large = healthy && u.iter().chain(v.iter()).any(|x| x.ln().abs() > ABSORB_LOG);
        if !healthy || large {
            if healthy {
                f += u.map(|x| reg * x.ln());
                g += v.map(|x| reg * x.ln());
            } else {
                log_update(cost, reg, a, b, &mut f, &mut g);
            }
            kernel = stabilized_kernel(cost, reg, &f, &g);
            u.fill(1.0);
            v.fill(1.0);
        }
        err = row_error(&u, &(&kernel * &v), a);
        if err <= config.tol {
            break;
        }
    }
    let transport = scaled_plan(&kernel, &u, &v, cost);
    f += u.map(|x| reg * x.ln());
    g += v.map(|x| reg * x.ln());
    SinkhornOutput {
        transport,
        iterations,
        converged: err <= config.tol,
        marginal_error: err,
        log_domain: true,
        potentials: Some((f, g)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub sinkhorn: SinkhornConfig,
    /// Bound on the relative Frobenius change of the support.
    pub tol: f64,
    pub maxiter: usize,
    /// Start each inner solve from the previous column potentials.
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            sinkhorn: SinkhornConfig::default(),
            tol: 1e-4,
            maxiter: 500,
            warm_start: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub iter: usize,
    pub support_change: f64,
    /// Inner iterations summed over clients.
    pub sinkhorn_iterations: usize,
    pub sinkhorn_converged: bool,
    pub reseeded: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub support: PointSet,
    /// Exact-oracle objective of the uniform measure on `support`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub total_ms: f64,
    pub trace: Vec<BaselineRecord>,
    pub config: BaselineConfig,
}

impl BaselineResult {
    pub fn mean_iter_ms(&self) -> f64 {
        if self.trace.is_empty() {
            0.0
        } else {
            self.trace.iter().map(|r| r.wall_ms).sum::<f64>() / self.trace.len() as f64
        }
    }
}

/// `m` distinct particles drawn uniformly from the union of client clouds.
pub fn init_from_particles(instance: &ProblemInstance, m: usize, seed: u64) -> Result<PointSet, BregmanError> {
    let pool: Vec<&[f64]> = instance.clients().iter().flat_map(|c| c.cloud.points().iter()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, BASELINE_STREAM));
    let picks = rand::seq::index::sample(&mut rng, pool.len(), m.min(pool.len()));
    let mut rows: Vec<&[f64]> = picks.iter().map(|i| pool[i]).collect();
    while rows.len() < m {
        rows.push(pool[rng.random_range(0..pool.len())]);
    }
    Ok(PointSet::from_rows(&rows)?)
}

fn as_matrix(points: &PointSet) -> DMatrix<f64> {
    DMatrix::from_row_slice(points.len(), points.dim(), points.coords())
}

fn to_points(x: &DMatrix<f64>) -> Result<PointSet, InstanceError> {
    let coords = x.transpose().as_slice().to_vec();
    PointSet::new(x.ncols(), coords)
}

/// Free-support barycenter by alternating entropic plans and barycentric
/// projections. The support keeps `init.len()` uniform atoms throughout.
pub fn free_support_barycenter(
    instance: &ProblemInstance,
    init: &PointSet,
    config: &BaselineConfig,
) -> Result<BaselineResult, BregmanError> {
    let m = instance.support_size();
    if init.len() != m {
        return Err(BregmanError::InitSize {
            expected: m,
            found: init.len(),
        });
    }
    if init.dim() != instance.dim() {
        return Err(InstanceError::DimensionMismatch {
            expected: instance.dim(),
            found: init.dim(),
        }
        .into());
    }
    if !(config.tol > 0.0) {
        return Err(BregmanError::InvalidTol(config.tol));
    }
    config.sinkhorn.validate()?;

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, BASELINE_STREAM + 1));
    let clouds: Vec<DMatrix<f64>> = instance.clients().iter().map(|c| as_matrix(c.cloud.points())).collect();
    let marginals: Vec<Vec<f64>> = clouds.iter().map(|y| vec![1.0 / y.nrows() as f64; y.nrows()]).collect();
    let b = vec![1.0 / m as f64; m];
    let lambdas = instance.lambdas();
    let mut warm: Vec<Option<DVector<f64>>> = vec![None; clouds.len()];

    let mut x = as_matrix(init);
    let mut trace = Vec::new();
    let mut converged = false;
    for iter in 0..config.maxiter {
        let round_start = Instant::now();
        let support = to_points(&x)?;
        let mut numer = DMatrix::zeros(m, instance.dim());
        let mut mass = DVector::<f64>::zeros(m);
        let mut inner_iters = 0;
        let mut inner_ok = true;
        for (s, client) in instance.clients().iter().enumerate() {
            let cost = pairwise_cost(client.cloud.points(), &support, instance.order())?;
            let out = sinkhorn_warm(&cost, &marginals[s], &b, &config.sinkhorn, warm[s].as_ref())?;
            inner_iters += out.iterations;
            inner_ok &= out.converged;
            if config.warm_start {
                warm[s] = out.potentials.map(|(_, g)| g);
            }
            let plan = &out.transport.plan;
            numer += plan.tr_mul(&clouds[s]) * lambdas[s];
            for (j, col) in plan.column_iter().enumerate() {
                mass[j] += lambdas[s] * col.sum();
            }
        }
        let mut next = x.clone();
        let mut reseeded = 0;
        for j in 0..m {
            if mass[j] > f64::MIN_POSITIVE && mass[j].is_finite() {
                next.set_row(j, &(numer.row(j) / mass[j]));
            } else {
                let s = rng.random_range(0..clouds.len());
                let i = rng.random_range(0..clouds[s].nrows());
                next.set_row(j, &clouds[s].row(i));
                reseeded += 1;
            }
        }
        let scale = x.norm();
        let change = if scale > 0.0 {
            (&next - &x).norm() / scale
        } else {
            (&next - &x).norm()
        };
        x = next;
        trace.push(BaselineRecord {
            iter,
            support_change: change,
            sinkhorn_iterations: inner_iters,
            sinkhorn_converged: inner_ok,
            reseeded,
            wall_ms: round_start.elapsed().as_secs_f64() * 1e3,
        });
        log::debug!("baseline iter {iter}: change {change:.3e}, inner {inner_iters}");
        if change < config.tol {
            converged = true;
            break;
        }
    }
    let support = to_points(&x)?;
    let objective = objective_for_support(instance, &support)?;
    Ok(BaselineResult {
        support,
        objective,
        iterations: trace.len(),
        converged,
        total_ms: start.elapsed().as_secs_f64() * 1e3,
        trace,
        config: *config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::fixtures::*;
    use crate::measures::{CandidateSet, Client, ParticleCloud};
    use crate::oracle::transport_weights;
    use proptest::prelude::*;

    fn cfg(reg: f64) -> SinkhornConfig {
        SinkhornConfig {
            reg,
            tol: 1e-9,
            maxiter: 100_000,
            log_domain: false,
        }
    }

    #[test]
    fn single_atom() {
        let cost = DMatrix::from_element(1, 1, 3.0);
        for reg in [1e-3, 0.1, 10.0] {
            let out = sinkhorn(&cost, &[1.0], &[1.0], &cfg(reg)).unwrap();
            assert!((out.transport.plan[(0, 0)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn value_decreases_with_reg() {
        let cost = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let u = [0.5, 0.5];
        let exact = transport_weights(&u, &u, &cost).unwrap().value;
        assert_eq!(exact, 0.0);
        let v: Vec<f64> = [0.01, 0.1, 1.0]
            .iter()
            .map(|&r| sinkhorn(&cost, &u, &u, &cfg(r)).unwrap().transport.value)
            .collect();
        assert!(v[0] <= v[1] && v[1] <= v[2], "{v:?}");
        assert!(v[0] < 1e-20);
    }

    #[test]
    fn small_reg_switches_to_log_domain() {
        let cost = DMatrix::from_row_slice(2, 2, &[0.0, 100.0, 100.0, 0.0]);
        let c = cfg(1.0);
        assert!(needs_log_domain(&cost, &c));
        let out = sinkhorn(&cost, &[0.5, 0.5], &[0.5, 0.5], &c).unwrap();
        assert!(out.log_domain && out.converged);
        assert!(out.transport.value < 1e-12);
    }

    #[test]
    fn plain_mode_reports_overflow() {
        // median is 0, so plain scaling is allowed, but every kernel entry
        // of row 0 underflows
        let cost = DMatrix::from_row_slice(3, 3, &[1e4, 1e4, 1e4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let third = [1.0 / 3.0; 3];
        let err = sinkhorn(&cost, &third, &third, &cfg(1.0)).unwrap_err();
        assert!(matches!(err, BregmanError::Overflow { .. }));
        assert!(err.to_string().contains("log-domain"));
        let forced = SinkhornConfig {
            log_domain: true,
            ..cfg(1.0)
        };
        assert!(sinkhorn(&cost, &third, &third, &forced).unwrap().converged);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cost = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(sinkhorn(&cost, &[1.0, 0.0], &[0.5, 0.5], &cfg(1.0)), Err(BregmanError::InvalidMarginal)));
        assert!(matches!(sinkhorn(&cost, &[1.0], &[0.5, 0.5], &cfg(1.0)), Err(BregmanError::Shape { .. })));
        assert!(matches!(sinkhorn(&cost, &[0.5, 0.5], &[0.5, 0.5], &cfg(-1.0)), Err(BregmanError::InvalidReg(_))));
    }

    fn simplex(raw: Vec<f64>) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn marginals_within_tol(
            c in proptest::collection::vec(0.0f64..10.0, 25),
            a in proptest::collection::vec(0.1f64..1.0, 5),
            b in proptest::collection::vec(0.1f64..1.0, 5),
            log in any::<bool>(),
        ) {
            let cost = DMatrix::from_row_slice(5, 5, &c);
            let (a, b) = (simplex(a), simplex(b));
            let config = SinkhornConfig { reg: 0.5, tol: 1e-9, maxiter: 100_000, log_domain: log };
            let out = sinkhorn(&cost, &a, &b, &config).unwrap();
            prop_assert!(out.converged);
            prop_assert!(out.transport.marginal_residual(&a, &b) <= 1e-9);
        }
    }

    fn baseline_cfg() -> BaselineConfig {
        BaselineConfig {
            sinkhorn: SinkhornConfig {
                reg: 0.1,
                tol: 1e-9,
                maxiter: 10_000,
                log_domain: false,
            },
            ..Default::default()
        }
    }

    #[test]
    fn t3_moves_to_midpoint() {
        let init = PointSet::from_scalars(&[0.3]).unwrap();
        let r = free_support_barycenter(&t3(), &init, &baseline_cfg()).unwrap();
        assert!(r.converged);
        assert!((r.support.point(0)[0] - 1.0).abs() < 0.05);
        assert!((r.objective - barycenter_value(&t3(), &r.support)).abs() < 1e-12);
    }

    fn barycenter_value(instance: &ProblemInstance, support: &PointSet) -> f64 {
        objective_for_support(instance, support).unwrap()
    }

    #[test]
    fn particles_are_a_fixed_point() {
        let pts = [0.0, 10.0, 20.0];
        let cloud = ParticleCloud::new(PointSet::from_scalars(&pts).unwrap());
        let inst = ProblemInstance::new(
            vec![Client { cloud, weight: 1.0 }],
            CandidateSet::new(PointSet::from_scalars(&pts).unwrap()),
            3,
            2.0,
        )
        .unwrap();
        let init = PointSet::from_scalars(&pts).unwrap();
        let r = free_support_barycenter(&inst, &init, &baseline_cfg()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.support, init);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn init_size_is_checked() {
        let init = PointSet::from_scalars(&[0.0, 1.0]).unwrap();
        assert!(matches!(
            free_support_barycenter(&t3(), &init, &baseline_cfg()),
            Err(BregmanError::InitSize { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn particle_init_is_seeded() {
        let a = init_from_particles(&t2(), 2, 3).unwrap();
        assert_eq!(a, init_from_particles(&t2(), 2, 3).unwrap());
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
