//! Client-side state of the federated dual method.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    centered_multipliers, column_max, local_subgradient, resolve_tie, step_size, Batch, ClientReport, ColumnMax,
    LocalCoupling, LocalDual, ReportValues, Selection,
};
use crate::measures::{client_costs, ProblemInstance};
use crate::seed::mix_seed;

/// Parameters a client needs to take its local steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientParams {
    pub alpha0: f64,
    pub kappa2: f64,
    pub seed: u64,
}

/// One local device: its costs, scaled weight and private multipliers.
#[derive(Debug, Clone)]
pub struct LocalClient {
    id: usize,
    costs: DMatrix<f64>,
    w: f64,
    dual: LocalDual,
    params: ClientParams,
    rng: ChaCha8Rng,
    batch: Batch,
    // per-round scan shared by the report and the coupling step
    centered: Vec<f64>,
    scan: Vec<(usize, ColumnMax)>,
    last_coupling: LocalCoupling,
}

impl LocalClient {
    /// `lambda` is the client's mixture weight; `w_s = lambda / M`.
    pub fn new(id: usize, costs: DMatrix<f64>, lambda: f64, support_size: usize, params: ClientParams) -> Self {
        let n = costs.nrows();
        let k = costs.ncols();
        Self {
            id,
            costs,
            w: lambda / support_size as f64,
            dual: LocalDual::zeros(n),
            rng: ChaCha8Rng::seed_from_u64(mix_seed(params.seed, id as u64)),
            params,
            batch: Batch::full(k),
            centered: Vec::new(),
            scan: Vec::new(),
            last_coupling: LocalCoupling::default(),
        }
    }

    pub fn from_instance(instance: &ProblemInstance, id: usize, params: ClientParams) -> Self {
        Self::new(
            id,
            client_costs(instance, id),
            instance.clients()[id].weight,
            instance.support_size(),
            params,
        )
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Self {
        assert_eq!(theta.len(), self.costs.nrows());
        self.dual.theta = theta;
        self
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn num_particles(&self) -> usize {
        self.costs.nrows()
    }

    pub fn num_candidates(&self) -> usize {
        self.costs.ncols()
    }

    pub fn dual(&self) -> &LocalDual {
        &self.dual
    }

    pub fn batch(&self) -> &Batch {
        &self.batch
    }

    pub fn last_coupling(&self) -> &LocalCoupling {
        &self.last_coupling
    }

    /// Batch to report on in the next round.
    pub fn set_batch(&mut self, batch: Batch) {
        assert_eq!(batch.num_candidates(), self.num_candidates());
        self.batch = batch;
    }

    pub fn report(&mut self, round: u64) -> ClientReport {
        self.centered = centered_multipliers(&self.dual.theta);
        self.scan = self
            .batch
            .iter()
            .map(|k| (k, column_max(&self.costs, self.w, &self.centered, k)))
            .collect();
        let t = if self.batch.is_full() {
            ReportValues::Dense(self.scan.iter().map(|(_, c)| c.value).collect())
        } else {
            ReportValues::Sparse(self.scan.iter().map(|&(k, c)| (k, c.value)).collect())
        };
        ClientReport {
            client_id: self.id,
            round,
            t,
        }
    }

    /// Couplings after the coordinator's selection, followed by the local
    /// momentum step when `step` is set.
    pub fn apply_selection(&mut self, round: u64, gamma: &Selection, step: bool) {
        let assignments = self
            .scan
            .iter()
            .filter(|(k, _)| gamma.is_selected(*k))
            .map(|&(k, best)| (k, resolve_tie(&self.costs, self.w, &self.centered, k, best, &mut self.rng)))
            .collect();
        let coupling = LocalCoupling { assignments };
        if step {
            let g = local_subgradient(&coupling, gamma, self.num_particles(), &self.batch);
            self.dual
                .step(&g, step_size(self.params.alpha0, round), self.params.kappa2);
        }
        self.last_coupling = coupling;
    }
}
