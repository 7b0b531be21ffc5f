//! Filtering over a full window sequence, in two interchangeable forms: a
//! plain driver for inference, and a taped driver that records the same
//! arithmetic for backpropagation. Both replay identical operation order,
//! so their predictions and diagnostics agree bitwise; the consistency
//! tests below pin that down.
//!
//! The first window initializes the ensemble; every later window is
//! filtered and scored, so a sequence of T windows yields T−1 predictions.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::gcn::{cheb_forward_tape, scaled_laplacian};
use crate::head;
use crate::ingest::{topk_sparsify, GraphObservation};
use crate::linalg::symmetrize;
use crate::model::{ModelParameters, TapedModel};
use crate::smc::{
    self, effective_sample_size, init_ensemble, knn_aggregate, rescale_unit_radius,
    soft_resample_indices, StepConfig, WEIGHT_FLOOR,
};
use crate::tape::{Tape, Var};

/// Ensemble size, initialization noise and per-step knobs for one run.
#[derive(Debug, Clone, Copy)]
pub struct FilterSettings {
    pub particles: usize,
    pub init_noise: f64,
    pub seed: u64,
    pub step: StepConfig,
}

/// Per-step record kept alongside the prediction.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub window_index: usize,
    /// Post-update, pre-resample weights; these weighted the prediction.
    pub weights: Vec<f64>,
    pub ess: f64,
    pub resampled: bool,
    pub lineage: Vec<usize>,
}

/// Predictions and diagnostics for every filtered window.
#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub predictions: Vec<Array2<f64>>,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// A taped run: the recorded graph, its scalar loss, the parameter handles
/// for gradient absorption, and the same outputs the plain driver returns.
pub struct TapedRun {
    pub tape: Tape,
    pub bound: TapedModel,
    pub loss: Var,
    pub run: SequenceRun,
}

fn check_sequence(observations: &[GraphObservation]) -> Result<()> {
    if observations.len() < 2 {
        return Err(Error::input(
            "filtering needs at least two windows: one to initialize, one to score",
        ));
    }
    Ok(())
}

/// Runs the filter over the sequence and collects one class-probability
/// prediction per filtered window.
pub fn run_sequence_plain(
    observations: &[GraphObservation],
    params: &ModelParameters,
    settings: &FilterSettings,
) -> Result<SequenceRun> {
    check_sequence(observations)?;
    let mut ensemble = init_ensemble(
        &observations[0],
        settings.particles,
        settings.init_noise,
        settings.seed,
    )?;
    let mut predictions = Vec::new();
    let mut diagnostics = Vec::new();
    for obs in &observations[1..] {
        let out = smc::step(&mut ensemble, obs, params, &settings.step)?;
        let yhat = head::predict(&out.prediction_weights, &out.embeddings, &params.head)?;
        predictions.push(yhat);
        diagnostics.push(StepDiagnostics {
            window_index: obs.window_index,
            weights: out.prediction_weights,
            ess: out.ess,
            resampled: out.resampled,
            lineage: out.lineage,
        });
    }
    Ok(SequenceRun {
        predictions,
        diagnostics,
    })
}

/// Convenience: run the plain filter and reduce to the sequence loss.
pub fn sequence_loss_plain(
    observations: &[GraphObservation],
    params: &ModelParameters,
    settings: &FilterSettings,
    label: usize,
) -> Result<f64> {
    let run = run_sequence_plain(observations, params, settings)?;
    head::sequence_loss(&run.predictions, label)
}

struct TapedParticle {
    adjacency: Array2<f64>,
    features: Var,
    weight: Var,
}

fn rollout_tape(
    tape: &mut Tape,
    features: Var,
    l_tilde: Var,
    bound: &TapedModel,
) -> Result<(Var, Var)> {
    let n = bound.layers.len();
    let mut h = features;
    let mut embedding = None;
    for (i, layer) in bound.layers.iter().enumerate() {
        let relu = i + 1 < n;
        h = cheb_forward_tape(tape, h, l_tilde, &layer.weights, layer.bias, relu)?;
        if i + 2 == n || n == 1 {
            embedding = Some(h);
        }
    }
    Ok((h, embedding.expect("at least one layer")))
}

/// Records the exact arithmetic of [`run_sequence_plain`] plus the
/// cross-entropy loss on an autodiff tape. Adjacencies, Laplacians and
/// observation aggregates stay plain because no parameter influences them;
/// everything downstream of the features flows through tape nodes,
/// including the soft-resampling importance ratios.
pub fn run_sequence_tape(
    observations: &[GraphObservation],
    params: &ModelParameters,
    settings: &FilterSettings,
    label: usize,
) -> Result<TapedRun> {
    check_sequence(observations)?;
    settings.step.resample.validate()?;
    if settings.step.sigma <= 0.0 {
        return Err(Error::input("bandwidth sigma must be positive"));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let ensemble = init_ensemble(
        &observations[0],
        settings.particles,
        settings.init_noise,
        settings.seed,
    )?;
    let mut rng = ensemble.rng.clone();
    let k = ensemble.k();
    let kf = k as f64;
    let alpha = settings.step.resample.alpha;
    let inv_two_sigma_sq = -1.0 / (2.0 * settings.step.sigma * settings.step.sigma);
    let mut particles: Vec<TapedParticle> = ensemble
        .particles
        .iter()
        .map(|p| TapedParticle {
            adjacency: p.adjacency.clone(),
            features: tape.constant(p.features.clone()),
            weight: tape.constant(Array2::from_elem((1, 1), p.weight)),
        })
        .collect();
    let mut predictions = Vec::new();
    let mut prediction_vars = Vec::new();
    let mut diagnostics = Vec::new();

    for obs in &observations[1..] {
        let mut embeddings = Vec::with_capacity(k);
        for p in &mut particles {
            let l_tilde = scaled_laplacian(&p.adjacency)?;
            let l_var = tape.constant(l_tilde);
            let (features, embedding) = rollout_tape(&mut tape, p.features, l_var, &bound)?;
            p.features = features;
            embeddings.push(embedding);
        }

        let sparsified = topk_sparsify(&obs.adjacency, settings.step.k_top)?;
        if particles[0].adjacency.dim() != sparsified.dim()
            || tape.value(particles[0].features).dim() != obs.features.dim()
        {
            return Err(Error::input(format!(
                "particle state {}x{} does not match observation {}x{}",
                particles[0].adjacency.nrows(),
                particles[0].adjacency.ncols(),
                sparsified.nrows(),
                sparsified.ncols()
            )));
        }
        let obs_features = tape.constant(obs.features.clone());
        for p in &mut particles {
            p.adjacency = &p.adjacency + &sparsified;
            symmetrize(&mut p.adjacency);
            rescale_unit_radius(&mut p.adjacency);
            p.features = tape.mul(p.features, obs_features);
        }

        let aggregated = tape.constant(knn_aggregate(obs, settings.step.knn)?);
        let mut log_weights = Vec::with_capacity(k);
        for p in &particles {
            let diff = tape.sub(aggregated, p.features);
            let sq = tape.mul(diff, diff);
            let total = tape.sum_all(sq);
            let logf = tape.scale(total, inv_two_sigma_sq);
            let floored = tape.clamp_min(p.weight, WEIGHT_FLOOR);
            let lnw = tape.ln(floored);
            log_weights.push(tape.add(lnw, logf));
        }
        // Log normalization mirrors smc::normalize_log_weights; the max
        // shift is held constant because the normalized weights, and hence
        // their gradients, do not depend on it.
        let m = log_weights
            .iter()
            .map(|&v| tape.scalar_value(v))
            .fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::numerical("particle collapse: all likelihoods vanished"));
        }
        let exps: Vec<Var> = log_weights
            .iter()
            .map(|&v| {
                let shifted = tape.offset(v, -m);
                tape.exp(shifted)
            })
            .collect();
        let mut total = exps[0];
        for &e in &exps[1..] {
            total = tape.add(total, e);
        }
        let normalized: Vec<Var> = exps.iter().map(|&e| tape.div(e, total)).collect();
        for (p, &w) in particles.iter_mut().zip(normalized.iter()) {
            p.weight = w;
        }
        let weight_values: Vec<f64> = normalized.iter().map(|&w| tape.scalar_value(w)).collect();
        let ess = effective_sample_size(&weight_values);
        let resampled = ess <= settings.step.resample.trigger * kf + 1e-9;

        let yhat = head::predict_tape(&mut tape, &normalized, &embeddings, &bound.head)?;
        predictions.push(tape.value(yhat).clone());
        prediction_vars.push(yhat);

        let mut lineage: Vec<usize> = (0..k).collect();
        if resampled {
            let (indices, _) = soft_resample_indices(&mut rng, &weight_values, alpha)?;
            let raws: Vec<Var> = indices
                .iter()
                .map(|&src| {
                    let w = particles[src].weight;
                    if alpha == 1.0 {
                        tape.constant(Array2::from_elem((1, 1), 1.0))
                    } else if alpha == 0.0 {
                        tape.scale(w, kf)
                    } else {
                        let scaled = tape.scale(w, alpha);
                        let q = tape.offset(scaled, (1.0 - alpha) / kf);
                        tape.div(w, q)
                    }
                })
                .collect();
            let mut raw_total = raws[0];
            for &r in &raws[1..] {
                raw_total = tape.add(raw_total, r);
            }
            let tv = tape.scalar_value(raw_total);
            if !(tv > 0.0) || !tv.is_finite() {
                return Err(Error::numerical("particle collapse: all likelihoods vanished"));
            }
            particles = indices
                .iter()
                .zip(raws.iter())
                .map(|(&src, &raw)| TapedParticle {
                    adjacency: particles[src].adjacency.clone(),
                    features: particles[src].features,
                    weight: tape.div(raw, raw_total),
                })
                .collect();
            lineage = indices;
        }
        diagnostics.push(StepDiagnostics {
            window_index: obs.window_index,
            weights: weight_values,
            ess,
            resampled,
            lineage,
        });
    }

    let loss = head::sequence_loss_tape(&mut tape, &prediction_vars, label)?;
    Ok(TapedRun {
        tape,
        bound,
        loss,
        run: SequenceRun {
            predictions,
            diagnostics,
        },
    })
}

/// Checks every parameter's analytic gradient of the taped sequence loss
/// against central finite differences on the plain path, and returns the
/// worst relative error. Parameter values are restored afterwards.
pub fn finite_difference_worst_error(
    observations: &[GraphObservation],
    params: &mut ModelParameters,
    settings: &FilterSettings,
    label: usize,
    epsilon: f64,
) -> Result<f64> {
    if epsilon <= 0.0 {
        return Err(Error::input("epsilon must be positive"));
    }
    params.zero_grads();
    let mut taped = run_sequence_tape(observations, params, settings, label)?;
    taped.tape.backward(taped.loss)?;
    params.absorb_grads(&taped.tape, &taped.bound);
    let analytic: Vec<Array2<f64>> = params.params().iter().map(|p| p.grad.clone()).collect();

    let mut worst = 0.0f64;
    for ti in 0..analytic.len() {
        let (rows, cols) = analytic[ti].dim();
        for i in 0..rows {
            for j in 0..cols {
                let orig = params.params()[ti].value[[i, j]];
                params.params_mut()[ti].value[[i, j]] = orig + epsilon;
                let plus = sequence_loss_plain(observations, params, settings, label)?;
                params.params_mut()[ti].value[[i, j]] = orig - epsilon;
                let minus = sequence_loss_plain(observations, params, settings, label)?;
                params.params_mut()[ti].value[[i, j]] = orig;
                let fd = (plus - minus) / (2.0 * epsilon);
                let g = analytic[ti][[i, j]];
                let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
                if rel > worst {
                    worst = rel;
                }
            }
        }
    }
    Ok(worst)
}
