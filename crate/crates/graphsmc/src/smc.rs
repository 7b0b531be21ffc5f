//! Particle filtering over graph states: ensemble initialization, GCN
//! transition, observation fusion, discriminative weighting and soft
//! resampling, plus the generic scalar skeleton used for oracle validation.
//!
//! Weight updates run in the log domain. The naive-order normalizations
//! here are mirrored operation for operation on the autodiff tape, so
//! training-time and inference-time weights agree bitwise; the compensated
//! [`normalize_weights`] is the standalone primitive used where no tape is
//! involved.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gcn::{cheb_forward, scaled_laplacian};
use crate::ingest::{topk_sparsify, GraphObservation};
use crate::linalg::{kahan_sum, spectral_radius_symmetric, symmetrize};
use crate::model::ModelParameters;

/// Floor applied to weights before taking logs, so a particle whose weight
/// underflowed to zero keeps a finite (if hopeless) log weight.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// One hypothesis about the hidden graph state.
#[derive(Debug, Clone)]
pub struct GraphParticle {
    pub adjacency: Array2<f64>,
    pub features: Array2<f64>,
    pub weight: f64,
    pub lineage_id: usize,
}

/// K weighted graph particles sharing one RNG stream.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub particles: Vec<GraphParticle>,
    pub rng: ChaCha8Rng,
    pub timestamp: usize,
}

/// Soft-resampling mixture weight and the ESS fraction that triggers it.
#[derive(Debug, Clone, Copy)]
pub struct SoftResampleConfig {
    pub alpha: f64,
    pub trigger: f64,
}

impl SoftResampleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::input(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.trigger > 0.0 && self.trigger <= 1.0) {
            return Err(Error::input(format!(
                "resample trigger must be in (0, 1], got {}",
                self.trigger
            )));
        }
        Ok(())
    }
}

/// Per-step filter knobs.
#[derive(Debug, Clone, Copy)]
pub struct StepConfig {
    pub knn: usize,
    pub sigma: f64,
    pub k_top: usize,
    pub resample: SoftResampleConfig,
}

/// Diagnostics and readout inputs from one filter step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Last hidden-layer embedding per particle, taken before the update.
    pub embeddings: Vec<Array2<f64>>,
    /// Post-update, pre-resample weights; these weight the predictions.
    pub prediction_weights: Vec<f64>,
    pub ess: f64,
    pub resampled: bool,
    /// Source index of each particle after the step.
    pub lineage: Vec<usize>,
}

impl ParticleEnsemble {
    pub fn k(&self) -> usize {
        self.particles.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    /// Asserts the Σw = 1 invariant all public operations maintain.
    pub fn check_normalized(&self) -> Result<()> {
        let total = kahan_sum(self.particles.iter().map(|p| p.weight));
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invariant(format!(
                "particle weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Clones the first observation into K particles. Particle 0 stays exact;
/// the rest receive Gaussian feature noise of scale `noise_scale` and edge
/// dropout at the same rate (mirrored across the diagonal). The RNG draws
/// features first, then dropout, one particle at a time.
pub fn init_ensemble(
    obs0: &GraphObservation,
    k: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<ParticleEnsemble> {
    if k == 0 {
        return Err(Error::input("particle count must be at least 1"));
    }
    if noise_scale < 0.0 {
        return Err(Error::input("noise scale must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = obs0.nodes();
    let weight = 1.0 / k as f64;
    let mut particles = Vec::with_capacity(k);
    for idx in 0..k {
        let mut features = obs0.features.clone();
        let mut adjacency = obs0.adjacency.clone();
        if idx > 0 && noise_scale > 0.0 {
            for v in features.iter_mut() {
                *v += noise_scale * rng.sample::<f64, _>(StandardNormal);
            }
            for i in 0..r {
                for j in (i + 1)..r {
                    if rng.random::<f64>() < noise_scale {
                        adjacency[[i, j]] = 0.0;
                        adjacency[[j, i]] = 0.0;
                    }
                }
            }
        }
        particles.push(GraphParticle {
            adjacency,
            features,
            weight,
            lineage_id: idx,
        });
    }
    Ok(ParticleEnsemble {
        particles,
        rng,
        timestamp: 0,
    })
}

/// Runs the Chebyshev stack on one particle's features: ReLU after every
/// hidden layer, identity on the last. Returns the new features and the
/// final post-ReLU hidden embedding (the readout input).
pub fn gcn_rollout(
    features: &Array2<f64>,
    l_tilde: &Array2<f64>,
    params: &ModelParameters,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = params.layers.len();
    let mut h = features.clone();
    let mut embedding = None;
    for (i, layer) in params.layers.iter().enumerate() {
        let relu = i + 1 < n;
        h = cheb_forward(&h, l_tilde, &layer.weight_values(), &layer.bias.value, relu)?;
        if i + 2 == n || n == 1 {
            embedding = Some(h.clone());
        }
    }
    Ok((h.clone(), embedding.expect("at least one layer")))
}

/// Advances every particle's features through the shared GCN; adjacencies
/// and weights are untouched. Returns the per-particle embeddings.
pub fn transition(
    ensemble: &mut ParticleEnsemble,
    params: &ModelParameters,
) -> Result<Vec<Array2<f64>>> {
    let mut embeddings = Vec::with_capacity(ensemble.k());
    for p in &mut ensemble.particles {
        let l_tilde = scaled_laplacian(&p.adjacency)?;
        let (features, embedding) = gcn_rollout(&p.features, &l_tilde, params)?;
        p.features = features;
        embeddings.push(embedding);
    }
    Ok(embeddings)
}

/// Fuses an observation into one particle: adjacency accumulates the top-k
/// sparsified observed adjacency, features take the Hadamard product with
/// the observed features. The weight is untouched.
pub fn aggregate_update(
    particle: &mut GraphParticle,
    obs: &GraphObservation,
    k_top: usize,
) -> Result<()> {
    let sparsified = topk_sparsify(&obs.adjacency, k_top)?;
    apply_update(particle, &sparsified, &obs.features)
}

/// Inner update once the observation adjacency is already sparsified;
/// `step` shares one sparsification across the ensemble.
fn apply_update(
    particle: &mut GraphParticle,
    sparsified: &Array2<f64>,
    obs_features: &Array2<f64>,
) -> Result<()> {
    if particle.adjacency.dim() != sparsified.dim()
        || particle.features.dim() != obs_features.dim()
    {
        return Err(Error::input(format!(
            "particle state {}x{} does not match observation {}x{}",
            particle.adjacency.nrows(),
            particle.adjacency.ncols(),
            sparsified.nrows(),
            sparsified.ncols()
        )));
    }
    particle.adjacency = &particle.adjacency + sparsified;
    symmetrize(&mut particle.adjacency);
    particle.features = &particle.features * obs_features;
    Ok(())
}

/// Divides a symmetric matrix by its spectral radius so repeated additive
/// updates cannot blow up the Laplacian scale. Zero matrices pass through.
pub fn rescale_unit_radius(a: &mut Array2<f64>) {
    let rho = spectral_radius_symmetric(a, 1e-10, 10_000);
    if rho > 1e-12 {
        a.mapv_inplace(|x| x / rho);
    }
}

/// Mean of the observed feature rows over each node's `knn` strongest
/// neighbours, ranked by |observed adjacency weight| with ties broken
/// toward the lower index. The diagonal never counts as a neighbour.
pub fn knn_aggregate(obs: &GraphObservation, knn: usize) -> Result<Array2<f64>> {
    if knn == 0 {
        return Err(Error::input("knn must be at least 1"));
    }
    let r = obs.nodes();
    let take = knn.min(r.saturating_sub(1));
    if take == 0 {
        return Err(Error::input("knn aggregation needs at least 2 nodes"));
    }
    let mut out = Array2::<f64>::zeros((r, r));
    let mut order: Vec<usize> = Vec::with_capacity(r);
    for v in 0..r {
        order.clear();
        order.extend((0..r).filter(|&j| j != v));
        order.sort_by(|&a, &b| {
            obs.adjacency[[v, b]]
                .abs()
                .partial_cmp(&obs.adjacency[[v, a]].abs())
                .unwrap()
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(take) {
            for c in 0..r {
                out[[v, c]] += obs.features[[j, c]];
            }
        }
        for c in 0..r {
            out[[v, c]] /= take as f64;
        }
    }
    Ok(out)
}

/// Node-wise Gaussian log-likelihood of the aggregated observation given
/// the particle features: Σ_v −‖agg_v − feat_v‖²/(2σ²), which is
/// −‖agg − F‖²_F/(2σ²). Returned in the log domain.
pub fn discriminative_log_weight(
    aggregated: &Array2<f64>,
    particle_features: &Array2<f64>,
    sigma: f64,
) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::input("bandwidth sigma must be positive"));
    }
    if aggregated.dim() != particle_features.dim() {
        return Err(Error::input(format!(
            "aggregated observation {}x{} does not match particle features {}x{}",
            aggregated.nrows(),
            aggregated.ncols(),
            particle_features.nrows(),
            particle_features.ncols()
        )));
    }
    let diff = aggregated - particle_features;
    let sq = &diff * &diff;
    let total = sq.sum();
    Ok(total * (-1.0 / (2.0 * sigma * sigma)))
}

/// Spec'd convenience form: aggregate, score, exponentiate.
pub fn discriminative_weight(
    obs: &GraphObservation,
    particle: &GraphParticle,
    knn: usize,
    sigma: f64,
) -> Result<f64> {
    let agg = knn_aggregate(obs, knn)?;
    Ok(discriminative_log_weight(&agg, &particle.features, sigma)?.exp())
}

/// Normalizes non-negative raw weights to sum exactly 1, compensated
/// summation. The standalone primitive for untaped callers.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::input("cannot normalize an empty weight vector"));
    }
    for w in raw {
        if !w.is_finite() || *w < 0.0 {
            return Err(Error::numerical(format!("invalid raw weight {w}")));
        }
    }
    let total = kahan_sum(raw.iter().copied());
    if total <= 0.0 {
        return Err(Error::numerical("particle collapse: all likelihoods vanished"));
    }
    Ok(raw.iter().map(|w| w / total).collect())
}

/// Log-domain normalization by max-shifted exponentials. Summation runs in
/// plain left-to-right order because the tape replays exactly this loop.
pub fn normalize_log_weights(logs: &[f64]) -> Result<Vec<f64>> {
    if logs.is_empty() {
        return Err(Error::input("cannot normalize an empty weight vector"));
    }
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::numerical("particle collapse: all likelihoods vanished"));
    }
    let exps: Vec<f64> = logs.iter().map(|l| (l + (-m)).exp()).collect();
    let mut total = 0.0;
    for e in &exps {
        total += e;
    }
    Ok(exps.iter().map(|e| e / total).collect())
}

/// Linear-domain naive-order normalization used after resampling; mirrored
/// on the tape like [`normalize_log_weights`].
pub fn normalize_naive(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::input("cannot normalize an empty weight vector"));
    }
    let mut total = 0.0;
    for w in raw {
        total += w;
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::numerical("particle collapse: all likelihoods vanished"));
    }
    Ok(raw.iter().map(|w| w / total).collect())
}

/// ESS = 1/Σw², clamped into [1, K] against rounding.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sum_sq = kahan_sum(weights.iter().map(|w| w * w));
    if sum_sq <= 0.0 {
        return 1.0;
    }
    (1.0 / sum_sq).clamp(1.0, weights.len() as f64)
}

/// Draws K i.i.d. indices from q = α·w + (1−α)/K and returns them with the
/// pre-normalization corrected weights w/q. The α = 0 and α = 1 limits are
/// taken exactly: uniform selection with ratio K·w, and selection by w with
/// ratio 1.
pub fn soft_resample_indices(
    rng: &mut ChaCha8Rng,
    weights: &[f64],
    alpha: f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::input(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let k = weights.len();
    if k == 0 {
        return Err(Error::input("cannot resample an empty ensemble"));
    }
    let kf = k as f64;
    let q: Vec<f64> = if alpha == 1.0 {
        weights.to_vec()
    } else if alpha == 0.0 {
        vec![1.0 / kf; k]
    } else {
        weights.iter().map(|w| alpha * w + (1.0 - alpha) / kf).collect()
    };
    let mut cumulative = Vec::with_capacity(k);
    let mut acc = 0.0;
    for qi in &q {
        acc += qi;
        cumulative.push(acc);
    }
    let total = acc;
    if !(total > 0.0) {
        return Err(Error::numerical("particle collapse: all likelihoods vanished"));
    }
    let mut indices = Vec::with_capacity(k);
    let mut raws = Vec::with_capacity(k);
    for _ in 0..k {
        let u = rng.random::<f64>() * total;
        let idx = cumulative.partition_point(|c| *c <= u).min(k - 1);
        indices.push(idx);
        raws.push(match alpha {
            a if a == 1.0 => 1.0,
            a if a == 0.0 => kf * weights[idx],
            _ => weights[idx] / q[idx],
        });
    }
    Ok((indices, raws))
}

/// Replaces the ensemble with K draws from the softened distribution,
/// weights corrected by w/q and renormalized; lineage records sources.
pub fn soft_resample(ensemble: &mut ParticleEnsemble, cfg: &SoftResampleConfig) -> Result<()> {
    cfg.validate()?;
    let weights = ensemble.weights();
    let (indices, raws) = soft_resample_indices(&mut ensemble.rng, &weights, cfg.alpha)?;
    let normalized = normalize_naive(&raws)?;
    ensemble.particles = indices
        .iter()
        .zip(normalized)
        .map(|(&src, weight)| GraphParticle {
            adjacency: ensemble.particles[src].adjacency.clone(),
            features: ensemble.particles[src].features.clone(),
            weight,
            lineage_id: src,
        })
        .collect();
    Ok(())
}

/// One full filter step: transition, observation fusion, discriminative
/// reweighting, then soft resampling when ESS falls to the trigger
/// fraction (at the default trigger of 1 that is every step, since
/// ESS ≤ K always). Prediction weights are taken before resampling.
pub fn step(
    ensemble: &mut ParticleEnsemble,
    obs: &GraphObservation,
    params: &ModelParameters,
    cfg: &StepConfig,
) -> Result<StepOutput> {
    cfg.resample.validate()?;
    let embeddings = transition(ensemble, params)?;
    let sparsified = topk_sparsify(&obs.adjacency, cfg.k_top)?;
    for p in &mut ensemble.particles {
        apply_update(p, &sparsified, &obs.features)?;
        rescale_unit_radius(&mut p.adjacency);
    }
    let aggregated = knn_aggregate(obs, cfg.knn)?;
    let logs: Vec<f64> = ensemble
        .particles
        .iter()
        .map(|p| {
            // The floor keeps ln finite when a weight underflows to zero,
            // which would otherwise poison gradients through this path.
            discriminative_log_weight(&aggregated, &p.features, cfg.sigma)
                .map(|lf| p.weight.max(WEIGHT_FLOOR).ln() + lf)
        })
        .collect::<Result<_>>()?;
    let normalized = normalize_log_weights(&logs)?;
    for (p, w) in ensemble.particles.iter_mut().zip(normalized.iter()) {
        p.weight = *w;
    }
    let prediction_weights = normalized;
    let ess = effective_sample_size(&prediction_weights);
    let k = ensemble.k();
    let resampled = ess <= cfg.resample.trigger * k as f64 + 1e-9;
    if resampled {
        soft_resample(ensemble, &cfg.resample)?;
    }
    let lineage = ensemble.particles.iter().map(|p| p.lineage_id).collect();
    ensemble.timestamp += 1;
    Ok(StepOutput {
        embeddings,
        prediction_weights,
        ess,
        resampled,
        lineage,
    })
}

/// Scalar-state models pluggable into the shared filter skeleton.
pub trait StateModel {
    type State: Clone;
    fn init(&self, rng: &mut ChaCha8Rng) -> Self::State;
    fn transition(&self, state: &Self::State, rng: &mut ChaCha8Rng) -> Self::State;
    fn log_likelihood(&self, obs: f64, state: &Self::State) -> f64;
    fn estimate(&self, state: &Self::State) -> f64;
}

/// The graph engine's weighting/resampling machinery instantiated for any
/// [`StateModel`]; used to validate the filter against closed-form oracles.
pub struct GenericFilter<'m, M: StateModel> {
    model: &'m M,
    pub states: Vec<M::State>,
    pub weights: Vec<f64>,
    rng: ChaCha8Rng,
}

impl<'m, M: StateModel> GenericFilter<'m, M> {
    pub fn new(model: &'m M, k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::input("particle count must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states = (0..k).map(|_| model.init(&mut rng)).collect();
        Ok(GenericFilter {
            model,
            states,
            weights: vec![1.0 / k as f64; k],
            rng,
        })
    }

    /// Weighted posterior mean of the model's scalar estimate.
    pub fn posterior_mean(&self) -> f64 {
        kahan_sum(
            self.states
                .iter()
                .zip(self.weights.iter())
                .map(|(s, w)| w * self.model.estimate(s)),
        )
    }

    /// Transition, reweight by likelihood, then soft-resample on the same
    /// trigger rule as the graph filter. Returns the post-update posterior
    /// mean and the ESS before resampling.
    pub fn step(&mut self, obs: f64, cfg: &SoftResampleConfig) -> Result<(f64, f64)> {
        cfg.validate()?;
        for s in &mut self.states {
            *s = self.model.transition(s, &mut self.rng);
        }
        let logs: Vec<f64> = self
            .states
            .iter()
            .zip(self.weights.iter())
            .map(|(s, w)| w.ln() + self.model.log_likelihood(obs, s))
            .collect();
        self.weights = normalize_log_weights(&logs)?;
        let mean = self.posterior_mean();
        let ess = effective_sample_size(&self.weights);
        if ess <= cfg.trigger * self.states.len() as f64 + 1e-9 {
            let (indices, raws) = soft_resample_indices(&mut self.rng, &self.weights, cfg.alpha)?;
            self.states = indices.iter().map(|&i| self.states[i].clone()).collect();
            self.weights = normalize_naive(&raws)?;
        }
        Ok((mean, ess))
    }
}
