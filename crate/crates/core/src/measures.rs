//! Discrete measures, candidate sets and problem instances.
//!
//! Points are stored row-wise in a flat coordinate buffer. The ground metric
//! is Euclidean; costs are `|y - z|^p`.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Tolerance on the client weight sum.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Current version of the instance file format.
pub const INSTANCE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("point set must not be empty")]
    EmptyPoints,
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("coordinate {index} is not finite")]
    NonFiniteCoordinate { index: usize },
    #[error("client {client} has an empty particle cloud")]
    EmptyCloud { client: usize },
    #[error("instance has no clients")]
    NoClients,
    #[error("client {client} weight {weight} outside (0, 1]")]
    WeightOutOfRange { client: usize, weight: f64 },
    #[error("weights must sum to 1 (sum = {sum})")]
    WeightSum { sum: f64 },
    #[error("M exceeds candidate count (M = {m}, K = {k})")]
    SupportBudgetTooLarge { m: usize, k: usize },
    #[error("M must be at least 1")]
    SupportBudgetZero,
    #[error("order p must be finite and >= 1 (p = {0})")]
    InvalidOrder(f64),
    #[error("unsupported instance format version {0}")]
    UnsupportedVersion(u32),
}

/// A set of points in `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self, InstanceError> {
        if dim == 0 {
            return Err(InstanceError::ZeroDimension);
        }
        if coords.is_empty() {
            return Err(InstanceError::EmptyPoints);
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(InstanceError::DimensionMismatch {
                expected: dim,
                found: coords.len() % dim,
            });
        }
        if let Some(index) = coords.iter().position(|c| !c.is_finite()) {
            return Err(InstanceError::NonFiniteCoordinate { index });
        }
        Ok(Self { dim, coords })
    }

    /// Builds a point set from nested rows; all rows must share a length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, InstanceError> {
        let first = rows.first().ok_or(InstanceError::EmptyPoints)?;
        let dim = first.as_ref().len();
        let mut coords = Vec::with_capacity(dim * rows.len());
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(InstanceError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            coords.extend_from_slice(row);
        }
        Self::new(dim, coords)
    }

    /// One-dimensional points.
    pub fn from_scalars(values: &[f64]) -> Result<Self, InstanceError> {
        Self::new(1, values.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }

    /// Subset of points by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, InstanceError> {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        Self::new(self.dim, coords)
    }
}

/// Particles `y^{s,i}` held by one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud(PointSet);

impl ParticleCloud {
    pub fn new(points: PointSet) -> Self {
        Self(points)
    }

    pub fn points(&self) -> &PointSet {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

/// The candidate locations `zeta^k`, `k = 0..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet(PointSet);

impl CandidateSet {
    pub fn new(points: PointSet) -> Self {
        Self(points)
    }

    pub fn points(&self) -> &PointSet {
        &self.0
    }

    /// `K`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Client {
    pub cloud: ParticleCloud,
    /// Mixture weight `lambda_s`.
    pub weight: f64,
}

/// A validated barycenter problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    clients: Vec<Client>,
    candidates: CandidateSet,
    support_size: usize,
    order: f64,
}

impl ProblemInstance {
    pub fn new(
        clients: Vec<Client>,
        candidates: CandidateSet,
        support_size: usize,
        order: f64,
    ) -> Result<Self, InstanceError> {
        if clients.is_empty() {
            return Err(InstanceError::NoClients);
        }
        if !order.is_finite() || order < 1.0 {
            return Err(InstanceError::InvalidOrder(order));
        }
        let dim = candidates.dim();
        for (s, client) in clients.iter().enumerate() {
            if client.cloud.is_empty() {
                return Err(InstanceError::EmptyCloud { client: s });
            }
            if client.cloud.dim() != dim {
                return Err(InstanceError::DimensionMismatch {
                    expected: dim,
                    found: client.cloud.dim(),
                });
            }
            if !(client.weight > 0.0 && client.weight <= 1.0) {
                return Err(InstanceError::WeightOutOfRange {
                    client: s,
                    weight: client.weight,
                });
            }
        }
        let sum: f64 = clients.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(InstanceError::WeightSum { sum });
        }
        if support_size == 0 {
            return Err(InstanceError::SupportBudgetZero);
        }
        if support_size > candidates.len() {
            return Err(InstanceError::SupportBudgetTooLarge {
                m: support_size,
                k: candidates.len(),
            });
        }
        Ok(Self {
            clients,
            candidates,
            support_size,
            order,
        })
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    /// `K`.
    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    /// `M`.
    pub fn support_size(&self) -> usize {
        self.support_size
    }

    /// `p`.
    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.candidates.dim()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.weight).collect()
    }

    /// `w_s = lambda_s / M`.
    pub fn scaled_weight(&self, s: usize) -> f64 {
        self.clients[s].weight / self.support_size as f64
    }

    /// Same data with a different support budget.
    pub fn with_support_size(&self, support_size: usize) -> Result<Self, InstanceError> {
        Self::new(
            self.clients.clone(),
            self.candidates.clone(),
            support_size,
            self.order,
        )
    }

    pub fn to_raw(&self) -> RawInstance {
        RawInstance {
            version: INSTANCE_FORMAT_VERSION,
            p: self.order,
            m: self.support_size,
            candidates: self.candidates.points().to_rows(),
            clients: self
                .clients
                .iter()
                .map(|c| RawClient {
                    weight: c.weight,
                    particles: c.cloud.points().to_rows(),
                })
                .collect(),
            generator: None,
        }
    }

    /// SHA-256 of the canonical JSON encoding (generator metadata excluded).
    pub fn content_hash(&self) -> String {
        let raw = self.to_raw();
        let bytes = serde_json::to_vec(&raw).expect("instance serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_raw()).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LoadError> {
        let raw: RawInstance = serde_json::from_str(text)?;
        Ok(validate_instance(raw)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, LoadError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl fmt::Display for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "N={} K={} M={} p={} dim={}",
            self.num_clients(),
            self.num_candidates(),
            self.support_size,
            self.order,
            self.dim()
        )
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("malformed instance JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid instance: {0}")]
    Invalid(#[from] InstanceError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// On-disk representation of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawInstance {
    pub version: u32,
    pub p: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub candidates: Vec<Vec<f64>>,
    pub clients: Vec<RawClient>,
    /// Provenance of generated instances; not part of the content hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawClient {
    pub weight: f64,
    pub particles: Vec<Vec<f64>>,
}

impl RawInstance {
    /// Rescales client weights to sum to one. Never applied implicitly.
    pub fn renormalized(mut self) -> Self {
        let sum: f64 = self.clients.iter().map(|c| c.weight).sum();
        if sum > 0.0 {
            for c in &mut self.clients {
                c.weight /= sum;
            }
        }
        self
    }
}

pub fn validate_instance(raw: RawInstance) -> Result<ProblemInstance, InstanceError> {
    if raw.version != INSTANCE_FORMAT_VERSION {
        return Err(InstanceError::UnsupportedVersion(raw.version));
    }
    let candidates = CandidateSet::new(PointSet::from_rows(&raw.candidates)?);
    let mut clients = Vec::with_capacity(raw.clients.len());
    for (s, c) in raw.clients.iter().enumerate() {
        if c.particles.is_empty() {
            return Err(InstanceError::EmptyCloud { client: s });
        }
        clients.push(Client {
            cloud: ParticleCloud::new(PointSet::from_rows(&c.particles)?),
            weight: c.weight,
        });
    }
    ProblemInstance::new(clients, candidates, raw.m, raw.p)
}

#[inline]
fn point_cost(a: &[f64], b: &[f64], order: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    if order == 2.0 {
        sq
    } else if order == 1.0 {
        sq.sqrt()
    } else {
        sq.sqrt().powf(order)
    }
}

/// `cost[(i, j)] = |a_i - b_j|^p`.
pub fn pairwise_cost(a: &PointSet, b: &PointSet, order: f64) -> Result<DMatrix<f64>, InstanceError> {
    if a.dim() != b.dim() {
        return Err(InstanceError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if !order.is_finite() || order < 1.0 {
        return Err(InstanceError::InvalidOrder(order));
    }
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
        point_cost(a.point(i), b.point(j), order)
    }))
}

/// Per-client cost blocks `d_{sik}` (particles x candidates).
#[derive(Debug, Clone, PartialEq)]
pub struct CostProfile {
    blocks: Vec<DMatrix<f64>>,
}

impl CostProfile {
    /// Wraps precomputed blocks; all blocks must share the candidate count.
    pub fn from_blocks(blocks: Vec<DMatrix<f64>>) -> Result<Self, InstanceError> {
        let k = blocks.first().ok_or(InstanceError::NoClients)?.ncols();
        for b in &blocks {
            if b.ncols() != k {
                return Err(InstanceError::DimensionMismatch {
                    expected: k,
                    found: b.ncols(),
                });
            }
            if b.nrows() == 0 {
                return Err(InstanceError::EmptyPoints);
            }
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block(&self, s: usize) -> &DMatrix<f64> {
        &self.blocks[s]
    }

    pub fn num_clients(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_candidates(&self) -> usize {
        self.blocks[0].ncols()
    }

    pub fn into_blocks(self) -> Vec<DMatrix<f64>> {
        self.blocks
    }
}

pub fn client_costs(instance: &ProblemInstance, s: usize) -> DMatrix<f64> {
    pairwise_cost(
        instance.clients[s].cloud.points(),
        instance.candidates.points(),
        instance.order,
    )
    .expect("validated instance has consistent dimensions")
}

pub fn build_cost_profile(instance: &ProblemInstance) -> CostProfile {
    let blocks = (0..instance.num_clients())
        .map(|s| client_costs(instance, s))
        .collect();
    CostProfile { blocks }
}
