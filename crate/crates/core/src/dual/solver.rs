//! The round loop: reports, selection, dual value, stopping test, global
//! step, broadcast, local steps.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::client::{ClientParams, LocalClient};
use super::recovery::{recover_primal, Recovery, RecoveryError, RecoveryMode};
use super::{dual_value, global_subgradient, select_support, step_size, Batch, ClientReport, GlobalDual, LocalDual, Selection};
use crate::measures::ProblemInstance;
use crate::seed::{mix_seed, BATCH_STREAM};

/// How the change in the dual value is measured by the stopping test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StopRule {
    /// `|L_j - L_{j-1}| <= epsilon`
    Absolute,
    /// `|L_j - L_{j-1}| <= epsilon |L_{j-1}|`
    #[default]
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub epsilon: f64,
    pub stop_rule: StopRule,
    pub maxiter: u64,
    /// `B`; `None` visits every candidate each round.
    pub batch_size: Option<usize>,
    /// `J`, rounds averaged by primal recovery.
    pub recovery_window: usize,
    pub recovery_mode: RecoveryMode,
    /// Stopping also requires `|sum gamma - M| <= support_band * M`.
    pub support_band: f64,
    pub seed: u64,
    /// Initial `theta0`.
    pub theta0_init: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            kappa1: 0.9,
            kappa2: 0.9,
            epsilon: 1e-4,
            stop_rule: StopRule::Relative,
            maxiter: 5000,
            batch_size: None,
            recovery_window: 50,
            recovery_mode: RecoveryMode::TopM,
            support_band: 0.10,
            seed: 0,
            theta0_init: 0.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self, k: usize) -> Result<(), SolveError> {
        let bad = |what: &str| Err(SolveError::InvalidHyperParams(what.to_string()));
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return bad("alpha0 must be positive");
        }
        if !(0.0..1.0).contains(&self.kappa1) || !(0.0..1.0).contains(&self.kappa2) {
            return bad("momentum factors must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if let Some(b) = self.batch_size {
            if b == 0 || b > k {
                return bad("batch size must satisfy 1 <= B <= K");
            }
        }
        if self.recovery_window == 0 {
            return bad("recovery window must be at least 1");
        }
        if !(self.support_band >= 0.0) {
            return bad("support band must be non-negative");
        }
        Ok(())
    }

    pub fn client_params(&self) -> ClientParams {
        ClientParams {
            alpha0: self.alpha0,
            kappa2: self.kappa2,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("non-finite dual value in round {round}")]
    NonFiniteDual { round: u64 },
    #[error("client {client} sent a malformed report in round {round}: {reason}")]
    BadReport { client: usize, round: u64, reason: String },
    #[error("client pool failure: {0}")]
    Pool(String),
    #[error(transparent)]
    Protocol(#[from] crate::federation::ProtocolError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
}

/// The coordinator's view of the clients. Implementations may run clients
/// in-process or behind a message transport.
pub trait ClientPool {
    fn num_clients(&self) -> usize;

    /// Announces the batch of the first round.
    fn start(&mut self, batch: &Batch) -> Result<(), SolveError>;

    /// One report per client for `round`, in any order.
    fn gather(&mut self, round: u64) -> Result<Vec<ClientReport>, SolveError>;

    /// Sends the selection of `round` with the batch of the next round, or
    /// `None` when no further round follows (clients then skip their step).
    fn broadcast(&mut self, round: u64, gamma: &Selection, next_batch: Option<&Batch>) -> Result<(), SolveError>;

    fn finish(&mut self, reason: &str) -> Result<(), SolveError>;
}

/// Clients held directly by the coordinator loop, without serialization.
pub struct LocalPool {
    clients: Vec<LocalClient>,
}

impl LocalPool {
    pub fn new(clients: Vec<LocalClient>) -> Self {
        Self { clients }
    }

    pub fn from_instance(instance: &ProblemInstance, params: ClientParams) -> Self {
        Self::new(
            (0..instance.num_clients())
                .map(|s| LocalClient::from_instance(instance, s, params))
                .collect(),
        )
    }

    pub fn clients(&self) -> &[LocalClient] {
        &self.clients
    }

    pub fn into_clients(self) -> Vec<LocalClient> {
        self.clients
    }
}

impl ClientPool for LocalPool {
    fn num_clients(&self) -> usize {
        self.clients.len()
    }

    fn start(&mut self, batch: &Batch) -> Result<(), SolveError> {
        for c in &mut self.clients {
            c.set_batch(batch.clone());
        }
        Ok(())
    }

    fn gather(&mut self, round: u64) -> Result<Vec<ClientReport>, SolveError> {
        Ok(self.clients.iter_mut().map(|c| c.report(round)).collect())
    }

    fn broadcast(&mut self, round: u64, gamma: &Selection, next_batch: Option<&Batch>) -> Result<(), SolveError> {
        for c in &mut self.clients {
            c.apply_selection(round, gamma, next_batch.is_some());
            if let Some(b) = next_batch {
                c.set_batch(b.clone());
            }
        }
        Ok(())
    }

    fn finish(&mut self, _reason: &str) -> Result<(), SolveError> {
        Ok(())
    }
}

/// One row of the convergence trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub iter: u64,
    /// Present on rounds with full reports.
    pub dual_value: Option<f64>,
    pub support_size: usize,
    pub step_size: f64,
    /// Value used for this round's selection.
    pub theta0: f64,
    pub wall_ms: f64,
    pub gamma: Selection,
}

/// Output of the coordinator loop.
#[derive(Debug, Clone)]
pub struct CoordinatorOutcome {
    pub history: Vec<RoundRecord>,
    pub converged: bool,
    pub global: GlobalDual,
    pub final_gamma: Selection,
}

impl CoordinatorOutcome {
    pub fn best_dual(&self) -> Option<f64> {
        self.history
            .iter()
            .filter_map(|r| r.dual_value)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    }

    pub fn iterations(&self) -> u64 {
        self.history.len() as u64
    }
}

/// Coordinator state: `theta0`, its momentum and the current selection.
pub struct Coordinator {
    k: usize,
    m: usize,
    hyper: HyperParams,
    global: GlobalDual,
    gamma: Selection,
    batch_rng: ChaCha8Rng,
}

impl Coordinator {
    pub fn new(k: usize, m: usize, hyper: HyperParams) -> Result<Self, SolveError> {
        hyper.validate(k)?;
        Ok(Self {
            k,
            m,
            global: GlobalDual::new(hyper.theta0_init),
            gamma: Selection::empty(k),
            batch_rng: ChaCha8Rng::seed_from_u64(mix_seed(hyper.seed, BATCH_STREAM)),
            hyper,
        })
    }

    /// Rounds between full dual evaluations in stochastic mode.
    pub fn evaluation_period(&self) -> u64 {
        match self.hyper.batch_size {
            Some(b) if b < self.k => self.k.div_ceil(b) as u64,
            _ => 1,
        }
    }

    fn batch_for(&mut self, round: u64) -> Batch {
        match self.hyper.batch_size {
            Some(b) if b < self.k && !round.is_multiple_of(self.evaluation_period()) => {
                Batch::sample(self.k, b, &mut self.batch_rng)
            }
            _ => Batch::full(self.k),
        }
    }

    fn check_reports(&self, reports: &[ClientReport], round: u64, batch: &Batch, n: usize) -> Result<(), SolveError> {
        if reports.len() != n {
            return Err(SolveError::Pool(format!(
                "expected {n} reports in round {round}, got {}",
                reports.len()
            )));
        }
        for r in reports {
            let bad = |reason: String| SolveError::BadReport {
                client: r.client_id,
                round,
                reason,
            };
            if r.round != round {
                return Err(bad(format!("report tagged with round {}", r.round)));
            }
            if !r.t.is_finite() {
                return Err(bad("non-finite entry".into()));
            }
            let keys: Vec<usize> = r.t.entries().map(|(k, _)| k).collect();
            let expected: Vec<usize> = batch.iter().collect();
            if keys != expected {
                return Err(bad(format!("covers {} entries, batch has {}", keys.len(), expected.len())));
            }
        }
        Ok(())
    }

    fn converged(&self, previous: f64, current: f64, gamma: &Selection) -> bool {
        let change = (current - previous).abs();
        let flat = match self.hyper.stop_rule {
            StopRule::Absolute => change <= self.hyper.epsilon,
            StopRule::Relative => change <= self.hyper.epsilon * previous.abs(),
        };
        let band = self.hyper.support_band * self.m as f64;
        flat && (gamma.count() as f64 - self.m as f64).abs() <= band
    }

    /// Runs rounds until the stopping test holds or `maxiter` is reached.
    pub fn run<P: ClientPool + ?Sized>(&mut self, pool: &mut P) -> Result<CoordinatorOutcome, SolveError> {
        let n = pool.num_clients();
        let mut history = Vec::new();
        let mut batch = self.batch_for(0);
        pool.start(&batch)?;
        let mut last_full: Option<f64> = None;
        let mut converged = false;

        for round in 0..self.hyper.maxiter {
            let started = Instant::now();
            let reports = pool.gather(round)?;
            self.check_reports(&reports, round, &batch, n)?;
            let theta0 = self.global.theta0;
            self.gamma = select_support(&reports, theta0, &batch, &self.gamma);
            let value = if batch.is_full() {
                let v = dual_value(&reports, theta0, self.m).expect("full reports are dense");
                if !v.is_finite() {
                    return Err(SolveError::NonFiniteDual { round });
                }
                Some(v)
            } else {
                None
            };
            let alpha = step_size(self.hyper.alpha0, round);
            let stop = match (value, last_full) {
                (Some(v), Some(prev)) => self.converged(prev, v, &self.gamma),
                _ => false,
            };
            if let Some(v) = value {
                last_full = Some(v);
            }
            if stop || round + 1 == self.hyper.maxiter {
                pool.broadcast(round, &self.gamma, None)?;
            } else {
                let g0 = global_subgradient(&self.gamma, self.m, &batch);
                self.global.step(g0, alpha, self.hyper.kappa1);
                let next = self.batch_for(round + 1);
                pool.broadcast(round, &self.gamma, Some(&next))?;
                batch = next;
            }
            history.push(RoundRecord {
                iter: round,
                dual_value: value,
                support_size: self.gamma.count(),
                step_size: alpha,
                theta0,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
                gamma: self.gamma.clone(),
            });
            if stop {
                converged = true;
                break;
            }
        }
        pool.finish(if converged { "converged" } else { "maxiter" })?;
        Ok(CoordinatorOutcome {
            history,
            converged,
            global: self.global,
            final_gamma: self.gamma.clone(),
        })
    }
}

/// Everything produced by a solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub history: Vec<RoundRecord>,
    pub best_dual: f64,
    pub converged: bool,
    pub iterations: u64,
    pub final_gamma: Selection,
    pub state: DualStateSnapshot,
    pub recovery: Recovery,
    pub total_ms: f64,
}

/// Final multipliers; local parts are only known when clients run in-process.
#[derive(Debug, Clone)]
pub struct DualStateSnapshot {
    pub global: GlobalDual,
    pub local: Option<Vec<LocalDual>>,
}

impl SolveResult {
    pub fn mean_round_ms(&self) -> f64 {
        if self.history.is_empty() {
            0.0
        } else {
            self.history.iter().map(|r| r.wall_ms).sum::<f64>() / self.history.len() as f64
        }
    }
}

/// Builds a [`SolveResult`] from a finished coordinator loop.
pub fn finish_solve(
    instance: &ProblemInstance,
    hyper: &HyperParams,
    outcome: CoordinatorOutcome,
    local: Option<Vec<LocalDual>>,
    total_ms: f64,
) -> Result<SolveResult, SolveError> {
    let best_dual = outcome.best_dual().ok_or(SolveError::Recovery(RecoveryError::InsufficientHistory {
        needed: 1,
        available: 0,
    }))?;
    let available = outcome.history.iter().filter(|r| r.dual_value.is_some()).count();
    let window = hyper.recovery_window.min(available);
    let recovery = recover_primal(&outcome.history, window, instance, hyper.recovery_mode, hyper.seed)?;
    Ok(SolveResult {
        best_dual,
        converged: outcome.converged,
        iterations: outcome.iterations(),
        final_gamma: outcome.final_gamma,
        state: DualStateSnapshot {
            global: outcome.global,
            local,
        },
        history: outcome.history,
        recovery,
        total_ms,
    })
}

/// Solves `instance` with all clients in-process.
pub fn run(instance: &ProblemInstance, hyper: &HyperParams) -> Result<SolveResult, SolveError> {
    let started = Instant::now();
    let mut pool = LocalPool::from_instance(instance, hyper.client_params());
    let mut coordinator = Coordinator::new(instance.num_candidates(), instance.support_size(), hyper.clone())?;
    let outcome = coordinator.run(&mut pool)?;
    let total_ms = started.elapsed().as_secs_f64() * 1e3;
    let local = pool.clients().iter().map(|c| c.dual().clone()).collect();
    finish_solve(instance, hyper, outcome, Some(local), total_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::fixtures::*;
    use crate::oracle::brute_force_barycenter;

    #[test]
    fn t2_starts_at_zero_subgradient_point() {
        let hyper = HyperParams {
            theta0_init: -0.25,
            ..HyperParams::default()
        };
        let r = run(&t2(), &hyper).unwrap();
        assert!(r.converged);
        assert_eq!(r.best_dual, 0.0);
        assert_eq!(r.final_gamma.flags(), &[true, false, true]);
        assert_eq!(r.state.global.m0, 0.0);
        assert_eq!(r.recovery.support, vec![0, 2]);
        assert_eq!(r.recovery.objective, 0.0);
    }

    #[test]
    fn t3_reaches_brute_force_optimum() {
        let hyper = HyperParams {
            maxiter: 2000,
            ..HyperParams::default()
        };
        let r = run(&t3(), &hyper).unwrap();
        assert!((r.best_dual - 1.0).abs() <= 1e-3, "best dual {}", r.best_dual);
        assert_eq!(r.recovery.support, vec![1]);
        assert_eq!(r.recovery.objective, 1.0);
    }

    #[test]
    fn t1_respects_weak_duality() {
        let inst = t1();
        let r = run(&inst, &HyperParams::default()).unwrap();
        let optimum = brute_force_barycenter(&inst).unwrap().value;
        assert!(r.best_dual <= optimum + 1e-9);
        assert_eq!(optimum, 1.0);
        // the relaxation reaches 0 with gamma = (1/2, 0, 1/2): a real gap
        assert!(r.best_dual <= 1e-9);
        assert!(r.recovery.objective >= optimum);
    }

    #[test]
    fn maxiter_stops_without_convergence() {
        let hyper = HyperParams {
            maxiter: 3,
            epsilon: 1e-300,
            ..HyperParams::default()
        };
        let r = run(&t3(), &hyper).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }

    #[test]
    fn invalid_hyperparams_are_rejected() {
        let hyper = HyperParams {
            batch_size: Some(4),
            ..HyperParams::default()
        };
        assert!(matches!(run(&t3(), &hyper), Err(SolveError::InvalidHyperParams(_))));
    }

    #[test]
    fn stochastic_mode_evaluates_periodically() {
        let hyper = HyperParams {
            batch_size: Some(2),
            maxiter: 40,
            epsilon: 1e-300,
            ..HyperParams::default()
        };
        let r = run(&t3(), &hyper).unwrap();
        for rec in &r.history {
            assert_eq!(rec.dual_value.is_some(), rec.iter % 2 == 0, "round {}", rec.iter);
        }
    }
}
