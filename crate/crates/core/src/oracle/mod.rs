//! Exact discrete optimal transport and exhaustive barycenter search.
//!
//! Marginals are scaled to integer supplies over a common denominator and
//! solved as an integer min-cost flow, so golden values do not depend on a
//! floating-point stopping rule. Tolerance enters only when validating the
//! marginals.

mod flow;
mod scaling;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::measures::{pairwise_cost, CostProfile, InstanceError, ParticleCloud, PointSet, ProblemInstance};

pub use scaling::MAX_DENOMINATOR;

/// Allowed difference between the total masses of the two marginals.
pub const MARGINAL_TOL: f64 = 1e-9;

/// Largest number of subsets `brute_force_barycenter` will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("marginal mismatch: source mass {source_mass}, target mass {target_mass}")]
    MarginalMismatch { source_mass: f64, target_mass: f64 },
    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),
    #[error("cost matrix is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    CostShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("selection must not be empty")]
    EmptySelection,
    #[error("candidate index {index} out of range (K = {k})")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("combinatorial budget exceeded: C({k}, {m}) = {count} > {limit}")]
    BudgetExceeded { k: usize, m: usize, count: u128, limit: u128 },
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

/// Weighted point measure.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    support: PointSet,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: PointSet, weights: Vec<f64>) -> Result<Self, OracleError> {
        if weights.len() != support.len() {
            return Err(OracleError::InvalidMarginal(format!(
                "{} weights for {} atoms",
                weights.len(),
                support.len()
            )));
        }
        check_weights(&weights)?;
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(OracleError::InvalidMarginal(format!("weights sum to {sum}")));
        }
        Ok(Self { support, weights })
    }

    pub fn uniform(support: PointSet) -> Self {
        let n = support.len();
        Self {
            support,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn support(&self) -> &PointSet {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Optimal coupling with its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// Rows are source atoms, columns target atoms.
    pub plan: DMatrix<f64>,
    pub value: f64,
}

impl TransportPlan {
    /// Largest absolute deviation of the plan marginals from `a` and `b`.
    pub fn marginal_residual(&self, a: &[f64], b: &[f64]) -> f64 {
        let rows = self
            .plan
            .row_iter()
            .zip(a)
            .map(|(r, &w)| (r.sum() - w).abs());
        let cols = self
            .plan
            .column_iter()
            .zip(b)
            .map(|(c, &w)| (c.sum() - w).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }
}

fn check_weights(w: &[f64]) -> Result<(), OracleError> {
    if w.is_empty() {
        return Err(OracleError::InvalidMarginal("empty marginal".into()));
    }
    if let Some(x) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(OracleError::InvalidMarginal(format!("weight {x}")));
    }
    Ok(())
}

/// Exact transport between two weight vectors under `cost`.
///
/// Zero-weight atoms are removed before solving and receive zero mass in the
/// returned plan.
pub fn transport_weights(a: &[f64], b: &[f64], cost: &DMatrix<f64>) -> Result<TransportPlan, OracleError> {
    check_weights(a)?;
    check_weights(b)?;
    if cost.nrows() != a.len() || cost.ncols() != b.len() {
        return Err(OracleError::CostShape {
            rows: cost.nrows(),
            cols: cost.ncols(),
            expected_rows: a.len(),
            expected_cols: b.len(),
        });
    }
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    if (sa - sb).abs() > MARGINAL_TOL || sa <= 0.0 {
        return Err(OracleError::MarginalMismatch {
            source_mass: sa,
            target_mass: sb,
        });
    }

    let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    let ra: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
    let rb: Vec<f64> = cols.iter().map(|&j| b[j]).collect();
    let reduced = DMatrix::from_fn(rows.len(), cols.len(), |i, j| cost[(rows[i], cols[j])]);

    let total = scaling::scale_for(&ra, &rb);
    let supply = scaling::integer_masses(&ra, total);
    let demand = scaling::integer_masses(&rb, total);
    let flow = flow::transport_min_cost_flow(&supply, &demand, &reduced);

    // Mass per flow unit; the source total is taken as the reference.
    let unit = sa / total as f64;
    let m = cols.len();
    let mut plan = DMatrix::zeros(a.len(), b.len());
    let mut value = 0.0;
    for (ii, &i) in rows.iter().enumerate() {
        for (jj, &j) in cols.iter().enumerate() {
            let f = flow[ii * m + jj];
            if f > 0 {
                let mass = f as f64 * unit;
                plan[(i, j)] = mass;
                value += cost[(i, j)] * mass;
            }
        }
    }
    Ok(TransportPlan { plan, value })
}

pub fn exact_transport(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &DMatrix<f64>,
) -> Result<TransportPlan, OracleError> {
    transport_weights(mu.weights(), nu.weights(), cost)
}

/// `W_p^p` between the uniform empirical measure on `cloud` and the weighted
/// measure on `support`.
pub fn wasserstein_pp(
    cloud: &ParticleCloud,
    support: &PointSet,
    weights: &[f64],
    order: f64,
) -> Result<f64, OracleError> {
    let cost = pairwise_cost(cloud.points(), support, order)?;
    let n = cloud.len();
    let a = vec![1.0 / n as f64; n];
    Ok(transport_weights(&a, weights, &cost)?.value)
}

/// Objective of the barycenter search at the uniform measure on an arbitrary
/// support point set.
pub fn objective_for_support(instance: &ProblemInstance, support: &PointSet) -> Result<f64, OracleError> {
    let weights = vec![1.0 / support.len() as f64; support.len()];
    let mut total = 0.0;
    for client in instance.clients() {
        total += client.weight * wasserstein_pp(&client.cloud, support, &weights, instance.order())?;
    }
    Ok(total)
}

/// `sum_s lambda_s W_p^p(cloud_s, uniform on the selected candidates)`.
pub fn barycenter_objective(instance: &ProblemInstance, selected: &[usize]) -> Result<f64, OracleError> {
    if selected.is_empty() {
        return Err(OracleError::EmptySelection);
    }
    let k = instance.num_candidates();
    if let Some(&index) = selected.iter().find(|&&i| i >= k) {
        return Err(OracleError::IndexOutOfRange { index, k });
    }
    let support = instance.candidates().points().select(selected)?;
    objective_for_support(instance, &support)
}

/// Same objective computed from precomputed cost blocks. Clients hold uniform
/// weights over their particles.
pub fn objective_from_costs(profile: &CostProfile, lambdas: &[f64], selected: &[usize]) -> Result<f64, OracleError> {
    if selected.is_empty() {
        return Err(OracleError::EmptySelection);
    }
    let k = profile.num_candidates();
    if let Some(&index) = selected.iter().find(|&&i| i >= k) {
        return Err(OracleError::IndexOutOfRange { index, k });
    }
    let b = vec![1.0 / selected.len() as f64; selected.len()];
    let mut total = 0.0;
    for (block, &lambda) in profile.blocks().iter().zip(lambdas) {
        let n = block.nrows();
        let a = vec![1.0 / n as f64; n];
        let sub = block.select_columns(selected);
        total += lambda * transport_weights(&a, &b, &sub)?.value;
    }
    Ok(total)
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub subset: Vec<usize>,
    pub value: f64,
}

/// Exhaustive search over all size-`m` subsets of `0..k`, guarded by
/// [`BRUTE_FORCE_LIMIT`]. Ties go to the lexicographically smallest subset.
pub fn brute_force_from_costs(profile: &CostProfile, lambdas: &[f64], m: usize) -> Result<BruteForceResult, OracleError> {
    let k = profile.num_candidates();
    if m == 0 {
        return Err(OracleError::EmptySelection);
    }
    let count = binomial(k, m);
    if count > BRUTE_FORCE_LIMIT {
        return Err(OracleError::BudgetExceeded {
            k,
            m,
            count,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if m > k {
        return Err(OracleError::IndexOutOfRange { index: m, k });
    }
    let mut subset: Vec<usize> = (0..m).collect();
    let mut best: Option<BruteForceResult> = None;
    loop {
        let value = objective_from_costs(profile, lambdas, &subset)?;
        // Lexicographic enumeration order: strict improvement keeps the
        // smallest subset among ties.
        if best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(BruteForceResult {
                subset: subset.clone(),
                value,
            });
        }
        // next combination
        let mut i = m;
        loop {
            if i == 0 {
                return Ok(best.expect("at least one subset"));
            }
            i -= 1;
            if subset[i] < k - m + i {
                subset[i] += 1;
                for j in i + 1..m {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

pub fn brute_force_barycenter(instance: &ProblemInstance) -> Result<BruteForceResult, OracleError> {
    let count = binomial(instance.num_candidates(), instance.support_size());
    if count > BRUTE_FORCE_LIMIT {
        return Err(OracleError::BudgetExceeded {
            k: instance.num_candidates(),
            m: instance.support_size(),
            count,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let profile = crate::measures::build_cost_profile(instance);
    brute_force_from_costs(&profile, &instance.lambdas(), instance.support_size())
}
