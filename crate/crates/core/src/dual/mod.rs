//! Lagrangian dual of the mixed-integer barycenter program.
//!
//! Multipliers: `theta0` prices the cardinality constraint `sum_k gamma_k = M`
//! and lives at the coordinator; `theta_s` (one entry per particle) prices
//! the per-particle mass balance of client `s` and never leaves the client.
//! The inner minimization of the Lagrangian has a closed form, so each round
//! is a single pass over the `(particle, candidate)` pairs of every client.
//!
//! The functions in this module are the pure building blocks. The round
//! loop lives in [`solver`], client-side state in [`client`] and ergodic
//! primal recovery in [`recovery`].

pub mod client;
pub mod recovery;
pub mod solver;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;

pub use client::LocalClient;
pub use recovery::{recover_primal, RecoveryMode, Recovery};
pub use solver::{run, ClientPool, Coordinator, HyperParams, LocalPool, RoundRecord, SolveResult, StopRule};

/// Candidate indices visited in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    k: usize,
    /// Sorted indices; `None` means every candidate.
    indices: Option<Vec<usize>>,
}

impl Batch {
    pub fn full(k: usize) -> Self {
        Self { k, indices: None }
    }

    /// Builds a batch from explicit indices (sorted and deduplicated).
    pub fn from_indices(k: usize, mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        assert!(indices.iter().all(|&i| i < k), "batch index out of range");
        if indices.len() == k {
            Self::full(k)
        } else {
            Self {
                k,
                indices: Some(indices),
            }
        }
    }

    /// `b` distinct candidates drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(k: usize, b: usize, rng: &mut R) -> Self {
        if b >= k {
            return Self::full(k);
        }
        Self::from_indices(k, index::sample(rng, k, b).into_vec())
    }

    pub fn is_full(&self) -> bool {
        self.indices.is_none()
    }

    /// `K`.
    pub fn num_candidates(&self) -> usize {
        self.k
    }

    /// `B`.
    pub fn len(&self) -> usize {
        self.indices.as_ref().map_or(self.k, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> Option<&[usize]> {
        self.indices.as_deref()
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = usize> + '_> {
        match &self.indices {
            None => Box::new(0..self.k),
            Some(v) => Box::new(v.iter().copied()),
        }
    }

    pub fn contains(&self, k: usize) -> bool {
        match &self.indices {
            None => k < self.k,
            Some(v) => v.binary_search(&k).is_ok(),
        }
    }

    /// `K / B`, the unbiasing factor of stochastic subgradients.
    pub fn scale(&self) -> f64 {
        self.k as f64 / self.len() as f64
    }
}

/// Report payload: all `K` entries, or `(k, T_sk)` pairs for a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReportValues {
    Dense(Vec<f64>),
    Sparse(Vec<(usize, f64)>),
}

impl ReportValues {
    pub fn len(&self) -> usize {
        match self {
            Self::Dense(v) => v.len(),
            Self::Sparse(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Iterates over present `(k, T_sk)` entries in increasing `k`.
    pub fn entries(&self) -> Box<dyn Iterator<Item = (usize, f64)> + '_> {
        match self {
            Self::Dense(v) => Box::new(v.iter().copied().enumerate()),
            Self::Sparse(v) => Box::new(v.iter().copied()),
        }
    }

    pub fn as_dense(&self) -> Option<&[f64]> {
        match self {
            Self::Dense(v) => Some(v),
            Self::Sparse(_) => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries().all(|(_, t)| t.is_finite())
    }
}

/// The only upstream payload of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientReport {
    pub client_id: usize,
    pub round: u64,
    pub t: ReportValues,
}

/// Binary selection flags `gamma_k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    gamma: Vec<bool>,
}

impl Selection {
    pub fn empty(k: usize) -> Self {
        Self { gamma: vec![false; k] }
    }

    pub fn from_flags(gamma: Vec<bool>) -> Self {
        Self { gamma }
    }

    pub fn flags(&self) -> &[bool] {
        &self.gamma
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn is_selected(&self, k: usize) -> bool {
        self.gamma[k]
    }

    /// `sum_k gamma_k`.
    pub fn count(&self) -> usize {
        self.gamma.iter().filter(|&&g| g).count()
    }

    pub fn selected(&self) -> Vec<usize> {
        (0..self.gamma.len()).filter(|&k| self.gamma[k]).collect()
    }

    /// Selected entries within `batch`.
    pub fn count_in(&self, batch: &Batch) -> usize {
        batch.iter().filter(|&k| self.gamma[k]).count()
    }
}

/// Particle chosen for each selected candidate: `beta_{s,i*,k} = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LocalCoupling {
    /// `(k, i*(s, k))`, increasing in `k`.
    pub assignments: Vec<(usize, usize)>,
}

impl LocalCoupling {
    pub fn particle_for(&self, k: usize) -> Option<usize> {
        self.assignments
            .binary_search_by_key(&k, |&(kk, _)| kk)
            .ok()
            .map(|idx| self.assignments[idx].1)
    }
}

/// Centered multipliers `theta_i - mean(theta)`, computed as
/// `(n theta_i - sum theta) / n` so that a constant shift of `theta`
/// produces bit-identical output whenever the shifted inputs are exact.
pub fn centered_multipliers(theta: &[f64]) -> Vec<f64> {
    let n = theta.len() as f64;
    let sum: f64 = theta.iter().sum();
    theta.iter().map(|&t| (n * t - sum) / n).collect()
}

/// Best particle for candidate `k` under centered multipliers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ColumnMax {
    pub value: f64,
    pub first: usize,
    pub ties: usize,
}

pub(crate) fn column_max(costs: &DMatrix<f64>, w: f64, centered: &[f64], k: usize) -> ColumnMax {
    let col = costs.column(k);
    let mut best = ColumnMax {
        value: f64::NEG_INFINITY,
        first: 0,
        ties: 0,
    };
    for (i, (&d, &th)) in col.iter().zip(centered).enumerate() {
        let v = th - w * d;
        if v > best.value {
            best = ColumnMax {
                value: v,
                first: i,
                ties: 1,
            };
        } else if v == best.value {
            best.ties += 1;
        }
    }
    best
}

/// `T_sk = max_i(theta_si - w_s d_sik) - mean_i(theta_si)` for `k` in `batch`.
pub fn client_report(costs: &DMatrix<f64>, w: f64, theta: &[f64], batch: &Batch) -> ReportValues {
    assert_eq!(theta.len(), costs.nrows(), "one multiplier per particle");
    let centered = centered_multipliers(theta);
    if batch.is_full() {
        ReportValues::Dense(
            (0..costs.ncols())
                .map(|k| column_max(costs, w, &centered, k).value)
                .collect(),
        )
    } else {
        ReportValues::Sparse(
            batch
                .iter()
                .map(|k| (k, column_max(costs, w, &centered, k).value))
                .collect(),
        )
    }
}

/// Sums `T_sk` over clients in client-id order, for `k` in `batch`.
fn aggregate(reports: &[ClientReport], batch: &Batch) -> Vec<(usize, f64)> {
    let mut ordered: Vec<&ClientReport> = reports.iter().collect();
    ordered.sort_by_key(|r| r.client_id);
    let k = batch.num_candidates();
    let mut sums = vec![0.0; k];
    let mut seen = vec![0usize; k];
    for r in ordered {
        for (kk, t) in r.t.entries() {
            if batch.contains(kk) {
                sums[kk] += t;
                seen[kk] += 1;
            }
        }
    }
    batch
        .iter()
        .map(|kk| {
            debug_assert_eq!(seen[kk], reports.len(), "every report covers the batch");
            (kk, sums[kk])
        })
        .collect()
}

/// `gamma_k = 1` iff `sum_s T_sk > theta0` for `k` in the batch; entries
/// outside the batch keep their previous value. Equality selects nothing.
pub fn select_support(reports: &[ClientReport], theta0: f64, batch: &Batch, previous: &Selection) -> Selection {
    let mut gamma = previous.gamma.clone();
    gamma.resize(batch.num_candidates(), false);
    for (k, total) in aggregate(reports, batch) {
        gamma[k] = total > theta0;
    }
    Selection { gamma }
}

/// `L_D = sum_k min(0, theta0 - sum_s T_sk) - M theta0`. Needs dense reports.
pub fn dual_value(reports: &[ClientReport], theta0: f64, m: usize) -> Option<f64> {
    let k = reports.first()?.t.as_dense()?.len();
    if reports.iter().any(|r| r.t.as_dense().is_none_or(|t| t.len() != k)) {
        return None;
    }
    let sums = aggregate(reports, &Batch::full(k));
    let inner: f64 = sums.iter().map(|&(_, total)| (theta0 - total).min(0.0)).sum();
    Some(inner - m as f64 * theta0)
}

/// Chooses `i*(s, k)` for every selected `k` in the batch, breaking ties
/// uniformly at random.
pub fn local_couplings<R: Rng + ?Sized>(
    costs: &DMatrix<f64>,
    w: f64,
    theta: &[f64],
    gamma: &Selection,
    batch: &Batch,
    rng: &mut R,
) -> LocalCoupling {
    let centered = centered_multipliers(theta);
    let assignments = batch
        .iter()
        .filter(|&k| gamma.is_selected(k))
        .map(|k| {
            let best = column_max(costs, w, &centered, k);
            (k, resolve_tie(costs, w, &centered, k, best, rng))
        })
        .collect();
    LocalCoupling { assignments }
}

pub(crate) fn resolve_tie<R: Rng + ?Sized>(
    costs: &DMatrix<f64>,
    w: f64,
    centered: &[f64],
    k: usize,
    best: ColumnMax,
    rng: &mut R,
) -> usize {
    if best.ties <= 1 {
        return best.first;
    }
    let pick = rng.random_range(0..best.ties);
    costs
        .column(k)
        .iter()
        .zip(centered)
        .enumerate()
        .filter(|(_, (&d, &th))| th - w * d == best.value)
        .nth(pick)
        .map(|(i, _)| i)
        .expect("tie count matches")
}

/// `g0 = (K/B) sum_{k in batch} gamma_k - M`.
pub fn global_subgradient(gamma: &Selection, m: usize, batch: &Batch) -> f64 {
    let count = gamma.count_in(batch) as f64;
    if batch.is_full() {
        count - m as f64
    } else {
        batch.scale() * count - m as f64
    }
}

/// `g_si = (K/B) sum_{k in batch} (gamma_k / n - beta_sik gamma_k)`.
pub fn local_subgradient(coupling: &LocalCoupling, gamma: &Selection, num_particles: usize, batch: &Batch) -> Vec<f64> {
    let n = num_particles as f64;
    let selected = gamma.count_in(batch) as f64;
    let mut assigned = vec![0.0f64; num_particles];
    for &(k, i) in &coupling.assignments {
        if batch.contains(k) && gamma.is_selected(k) {
            assigned[i] += 1.0;
        }
    }
    let scale = if batch.is_full() { 1.0 } else { batch.scale() };
    assigned
        .into_iter()
        .map(|a| {
            let g = selected / n - a;
            if batch.is_full() {
                g
            } else {
                scale * g
            }
        })
        .collect()
}

/// `alpha^{(j+1)} = alpha0 / sqrt(j + 1)`.
pub fn step_size(alpha0: f64, round: u64) -> f64 {
    alpha0 / ((round + 1) as f64).sqrt()
}

/// Coordinator-side multiplier and momentum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalDual {
    pub theta0: f64,
    pub m0: f64,
}

impl GlobalDual {
    pub fn new(theta0: f64) -> Self {
        Self { theta0, m0: 0.0 }
    }

    /// Momentum ascent step on `theta0`.
    pub fn step(&mut self, g0: f64, alpha: f64, kappa1: f64) {
        self.m0 = (1.0 - kappa1) * g0 + kappa1 * self.m0;
        self.theta0 += alpha * self.m0;
    }
}

/// Client-side multipliers and momenta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDual {
    pub theta: Vec<f64>,
    pub momentum: Vec<f64>,
}

impl LocalDual {
    pub fn zeros(n: usize) -> Self {
        Self {
            theta: vec![0.0; n],
            momentum: vec![0.0; n],
        }
    }

    pub fn step(&mut self, g: &[f64], alpha: f64, kappa2: f64) {
        for ((t, m), &gi) in self.theta.iter_mut().zip(&mut self.momentum).zip(g) {
            *m = (1.0 - kappa2) * gi + kappa2 * *m;
            *t += alpha * *m;
        }
    }
}

/// Full dual iterate: the global part plus every client's local part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub global: GlobalDual,
    pub local: Vec<LocalDual>,
}
