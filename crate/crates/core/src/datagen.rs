//! Seeded synthetic instances: Gaussian mixture clients and candidate sets.
//!
//! Every generator is a pure function of its arguments and seed. Client `s`
//! draws from `ChaCha8(mix_seed(seed, s))`; candidates from a reserved stream
//! (see [`crate::seed`]).

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::measures::{CandidateSet, Client, InstanceError, ParticleCloud, PointSet, ProblemInstance, RawInstance};
use crate::seed::{mix_seed, CANDIDATE_STREAM};

/// Name of the random stream algorithm, recorded in generated files.
pub const RNG_NAME: &str = "chacha8";

#[derive(Debug, Error)]
pub enum DataGenError {
    #[error("mixture weights must be non-negative and sum to 1")]
    BadWeights,
    #[error("component {0}: covariance is not symmetric positive definite")]
    NotPositiveDefinite(usize),
    #[error("component {component}: expected dimension {expected}, found {found}")]
    Dimension { component: usize, expected: usize, found: usize },
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("pooled sampling needs K <= total particles ({available}), got K = {k}")]
    PoolTooSmall { k: usize, available: usize },
    #[error("preset expects {expected} weights, got {found}")]
    PresetWeights { expected: usize, found: usize },
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

#[derive(Debug, Clone)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

/// Validated Gaussian mixture.
#[derive(Debug, Clone)]
pub struct GmmSpec {
    components: Vec<GmmComponent>,
    dim: usize,
}

impl GmmSpec {
    /// Components as `(weight, mean, covariance)`.
    pub fn new(components: Vec<(f64, Vec<f64>, DMatrix<f64>)>) -> Result<Self, DataGenError> {
        let dim = components.first().map(|c| c.1.len()).ok_or(DataGenError::BadWeights)?;
        let sum: f64 = components.iter().map(|c| c.0).sum();
        if components.iter().any(|c| !(c.0 >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(DataGenError::BadWeights);
        }
        let mut out = Vec::with_capacity(components.len());
        for (idx, (weight, mean, cov)) in components.into_iter().enumerate() {
            if mean.len() != dim || cov.nrows() != dim || cov.ncols() != dim {
                return Err(DataGenError::Dimension {
                    component: idx,
                    expected: dim,
                    found: mean.len(),
                });
            }
            let symmetric = (0..dim).all(|i| (0..dim).all(|j| (cov[(i, j)] - cov[(j, i)]).abs() <= 1e-12));
            if !symmetric {
                return Err(DataGenError::NotPositiveDefinite(idx));
            }
            let factor = Cholesky::new(cov.clone())
                .ok_or(DataGenError::NotPositiveDefinite(idx))?
                .l();
            out.push(GmmComponent {
                weight,
                mean: DVector::from_vec(mean),
                covariance: cov,
                factor,
            });
        }
        Ok(Self { components: out, dim })
    }

    pub fn gaussian(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self, DataGenError> {
        Self::new(vec![(1.0, mean, covariance)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    /// The single-component mixture for component `idx`.
    pub fn component(&self, idx: usize) -> Self {
        let mut c = self.components[idx].clone();
        c.weight = 1.0;
        Self {
            components: vec![c],
            dim: self.dim,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, picker: &WeightedIndex<f64>, rng: &mut R, out: &mut Vec<f64>) {
        let c = &self.components[picker.sample(rng)];
        let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &c.mean + &c.factor * z;
        out.extend(x.iter());
    }
}

/// `n` i.i.d. draws from the mixture.
pub fn sample_gmm(spec: &GmmSpec, n: usize, seed: u64) -> Result<ParticleCloud, DataGenError> {
    if n == 0 {
        return Err(DataGenError::EmptySample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picker = WeightedIndex::new(spec.components.iter().map(|c| c.weight)).map_err(|_| DataGenError::BadWeights)?;
    let mut coords = Vec::with_capacity(n * spec.dim);
    for _ in 0..n {
        spec.draw(&picker, &mut rng, &mut coords);
    }
    Ok(ParticleCloud::new(PointSet::new(spec.dim, coords)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateMode {
    /// Regular lattice over `[-scale, scale]^dim`.
    Grid,
    /// `N(0, scale I)`; `scale` is the per-coordinate variance.
    Normal,
    /// Drawn without replacement from the union of client particles. This
    /// reads every client's data and is meant for tests only.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub mode: CandidateMode,
    pub k: usize,
    pub scale: f64,
}

/// Smallest `n` with `n^dim >= k`.
fn lattice_side(k: usize, dim: usize) -> usize {
    let mut n = 1usize;
    while n.checked_pow(dim as u32).is_some_and(|v| v < k) {
        n += 1;
    }
    n
}

/// Builds a candidate set. Grid mode returns the full lattice of
/// `ceil(K^(1/dim))` points per axis, which may exceed `K`.
pub fn make_candidates(
    spec: CandidateSpec,
    dim: usize,
    seed: u64,
    clients: &[ParticleCloud],
) -> Result<CandidateSet, DataGenError> {
    if spec.k == 0 {
        return Err(DataGenError::EmptySample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, CANDIDATE_STREAM));
    let coords = match spec.mode {
        CandidateMode::Grid => {
            let side = lattice_side(spec.k, dim);
            let axis: Vec<f64> = if side == 1 {
                vec![0.0]
            } else {
                (0..side)
                    .map(|i| -spec.scale + 2.0 * spec.scale * i as f64 / (side - 1) as f64)
                    .collect()
            };
            let total = side.pow(dim as u32);
            let mut coords = Vec::with_capacity(total * dim);
            for idx in 0..total {
                let mut rest = idx;
                let mut point = vec![0.0; dim];
                for d in (0..dim).rev() {
                    point[d] = axis[rest % side];
                    rest /= side;
                }
                coords.extend(point);
            }
            coords
        }
        CandidateMode::Normal => {
            let sd = spec.scale.sqrt();
            (0..spec.k * dim)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
        CandidateMode::Pooled => {
            let pool: Vec<&[f64]> = clients.iter().flat_map(|c| c.points().iter()).collect();
            if spec.k > pool.len() {
                return Err(DataGenError::PoolTooSmall {
                    k: spec.k,
                    available: pool.len(),
                });
            }
            let mut picks = index::sample(&mut rng, pool.len(), spec.k).into_vec();
            picks.sort_unstable();
            picks.iter().flat_map(|&i| pool[i].iter().copied()).collect()
        }
    };
    Ok(CandidateSet::new(PointSet::new(dim, coords)?))
}

/// How client clouds relate to the mixture components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClientLayout {
    /// Client `s` samples component `s` only.
    #[default]
    PerComponent,
    /// Every client samples the whole mixture.
    Mixture,
}

/// An instance plus the provenance written into its file.
#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub instance: ProblemInstance,
    pub generator: serde_json::Value,
}

impl GeneratedInstance {
    pub fn to_raw(&self) -> RawInstance {
        let mut raw = self.instance.to_raw();
        raw.generator = Some(self.generator.clone());
        raw
    }
}

/// Component means of the five-component benchmark mixture.
pub const PRESET5_MEANS: [[f64; 2]; 5] = [[-2.0, -2.0], [2.0, 2.0], [2.0, -2.0], [-2.0, 2.0], [0.0, 0.0]];

/// Shared covariance of the five-component benchmark mixture.
pub fn preset5_covariance() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.5, -0.2, -0.2, 0.5])
}

pub fn preset5_spec(weights: &[f64]) -> Result<GmmSpec, DataGenError> {
    if weights.len() != 5 {
        return Err(DataGenError::PresetWeights {
            expected: 5,
            found: weights.len(),
        });
    }
    GmmSpec::new(
        PRESET5_MEANS
            .iter()
            .zip(weights)
            .map(|(m, &w)| (w, m.to_vec(), preset5_covariance()))
            .collect(),
    )
}

/// Instance from a mixture: one client per component (or per layout).
pub fn instance_from_gmm(
    spec: &GmmSpec,
    n: usize,
    candidates: CandidateSpec,
    support_size: usize,
    seed: u64,
    layout: ClientLayout,
) -> Result<ProblemInstance, DataGenError> {
    let clouds = (0..spec.components.len())
        .map(|s| {
            let source = match layout {
                ClientLayout::PerComponent => spec.component(s),
                ClientLayout::Mixture => spec.clone(),
            };
            sample_gmm(&source, n, mix_seed(seed, s as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let candidate_set = make_candidates(candidates, spec.dim, seed, &clouds)?;
    let clients = clouds
        .into_iter()
        .zip(&spec.components)
        .map(|(cloud, c)| Client {
            cloud,
            weight: c.weight,
        })
        .collect();
    Ok(ProblemInstance::new(clients, candidate_set, support_size, 2.0)?)
}

/// The five-component benchmark: means at the corners and origin, shared
/// covariance `[[0.5, -0.2], [-0.2, 0.5]]`, one client per component, `p = 2`.
pub fn paper_preset_5(
    weights: &[f64],
    n: usize,
    candidates: CandidateSpec,
    support_size: usize,
    seed: u64,
    layout: ClientLayout,
) -> Result<GeneratedInstance, DataGenError> {
    let spec = preset5_spec(weights)?;
    let instance = instance_from_gmm(&spec, n, candidates, support_size, seed, layout)?;
    Ok(GeneratedInstance {
        instance,
        generator: json!({
            "preset": "paper5",
            "weights": weights,
            "n": n,
            "candidates": candidates,
            "layout": layout,
            "seed": seed,
            "rng": RNG_NAME,
            "seed_mix": "splitmix64(seed ^ stream)",
        }),
    })
}

/// Randomized mixture with `components` 2-D Gaussians: weights from
/// normalized uniforms, means uniform in `[-4, 4]^2`, covariances
/// `A A^T + 0.1 I` with `A` uniform in `[-0.5, 0.5]`.
pub fn random_preset(
    components: usize,
    n: usize,
    candidates: CandidateSpec,
    support_size: usize,
    seed: u64,
) -> Result<GeneratedInstance, DataGenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX));
    let raw: Vec<f64> = (0..components).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    // absorb rounding so the sum is 1 to the last bit that matters
    let drift: f64 = 1.0 - weights.iter().sum::<f64>();
    weights[0] += drift;
    let comps = weights
        .iter()
        .map(|&w| {
            let mean = vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.5..0.5));
            let cov = &a * a.transpose() + DMatrix::identity(2, 2) * 0.1;
            (w, mean, cov)
        })
        .collect();
    let spec = GmmSpec::new(comps)?;
    let instance = instance_from_gmm(&spec, n, candidates, support_size, seed, ClientLayout::PerComponent)?;
    Ok(GeneratedInstance {
        instance,
        generator: json!({
            "preset": "random",
            "components": components,
            "n": n,
            "candidates": candidates,
            "seed": seed,
            "rng": RNG_NAME,
            "seed_mix": "splitmix64(seed ^ stream)",
        }),
    })
}
