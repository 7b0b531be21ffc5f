//! Stratified cross-validated training: window preparation, fold
//! assignment, the Adam training loop with validation-loss early stopping,
//! test-fold evaluation, and the particle-count ablation.
//!
//! Every random choice derives from (master seed, purpose tag, fold,
//! epoch or sample id), so serial and parallel runs produce identical
//! results fold for fold.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::metrics::{FoldMetrics, MetricsReport};
use crate::harness::synthetic::LabeledSample;
use crate::head::{self, PredictionRecord};
use crate::ingest::{graph_observations, GraphObservation, WindowSpec};
use crate::linalg::derive_seed;
use crate::model::ModelParameters;
use crate::pipeline::{
    run_sequence_plain, run_sequence_tape, FilterSettings, StepDiagnostics,
};
use crate::smc::StepConfig;

/// One subject reduced to its windowed graph observations.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub id: usize,
    pub label: usize,
    pub observations: Vec<GraphObservation>,
}

/// Windows every sample once so epochs and folds reuse the same graphs.
pub fn prepare_dataset(
    samples: &[LabeledSample],
    window: WindowSpec,
    shrinkage: f64,
    k_top: usize,
    max_windows: Option<usize>,
) -> Result<Vec<PreparedSample>> {
    samples
        .iter()
        .map(|s| {
            Ok(PreparedSample {
                id: s.id,
                label: s.label,
                observations: graph_observations(
                    &s.series, window, shrinkage, k_top, max_windows,
                )?,
            })
        })
        .collect()
}

/// Everything the training loop needs besides the data.
#[derive(Debug, Clone, Copy)]
pub struct TrainSettings {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden_dim: usize,
    pub mlp_dim: usize,
    pub layers: usize,
    pub cheb_order: usize,
    pub classes: usize,
    pub particles: usize,
    pub init_noise: f64,
    pub step: StepConfig,
    pub jobs: usize,
    pub seed: u64,
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::input("epoch budget must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::input("patience must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::input("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::input("learning rate must be positive"));
        }
        if self.jobs == 0 {
            return Err(Error::input("jobs must be at least 1"));
        }
        self.step.resample.validate()
    }

    /// Filter settings for one sample; the per-sample seed is fixed across
    /// epochs so the loss landscape stays stationary during training, and
    /// evaluation reuses the identical filter.
    pub fn filter_for(&self, sample_id: usize) -> FilterSettings {
        FilterSettings {
            particles: self.particles,
            init_noise: self.init_noise,
            seed: derive_seed(self.seed, &[2, sample_id as u64]),
            step: self.step,
        }
    }
}

/// Index sets for one fold: test = fold f, validation = fold f+1 (mod n),
/// training = the rest, giving the 60/20/20 split at five folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Deals samples into `n_folds` buckets stratified by class (and by the
/// optional secondary group key), then derives train/val/test index sets.
pub fn stratified_folds(
    labels: &[usize],
    n_folds: usize,
    groups: Option<&[usize]>,
    seed: u64,
) -> Result<Vec<FoldAssignment>> {
    if n_folds < 2 {
        return Err(Error::input("need at least 2 folds"));
    }
    if labels.len() < n_folds {
        return Err(Error::input(format!(
            "{} samples cannot fill {n_folds} folds",
            labels.len()
        )));
    }
    if let Some(g) = groups {
        if g.len() != labels.len() {
            return Err(Error::input("group key length does not match labels"));
        }
    }
    let mut strata: Vec<(u64, u64, Vec<usize>)> = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        let group = groups.map_or(0, |g| g[i]) as u64;
        match strata
            .iter_mut()
            .find(|(l, g, _)| *l == label as u64 && *g == group)
        {
            Some((_, _, members)) => members.push(i),
            None => strata.push((label as u64, group, vec![i])),
        }
    }
    strata.sort_by_key(|(l, g, _)| (*l, *g));
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n_folds];
    for (label, group, mut members) in strata {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[5, label, group]));
        members.shuffle(&mut rng);
        for (pos, idx) in members.into_iter().enumerate() {
            buckets[pos % n_folds].push(idx);
        }
    }
    let classes: Vec<usize> = {
        let mut c: Vec<usize> = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    for (f, bucket) in buckets.iter().enumerate() {
        for &class in &classes {
            if !bucket.iter().any(|&i| labels[i] == class) {
                return Err(Error::input(format!("class {class} absent from fold {f}")));
            }
        }
    }
    for bucket in &mut buckets {
        bucket.sort_unstable();
    }
    Ok((0..n_folds)
        .map(|f| {
            let val_fold = (f + 1) % n_folds;
            let mut train = Vec::new();
            for (b, bucket) in buckets.iter().enumerate() {
                if b != f && b != val_fold {
                    train.extend(bucket.iter().copied());
                }
            }
            FoldAssignment {
                fold: f,
                train,
                val: buckets[val_fold].clone(),
                test: buckets[f].clone(),
            }
        })
        .collect())
}

/// A trained fold: best model by validation loss plus test-fold outputs.
pub struct FoldOutcome {
    pub fold: usize,
    pub assignment: FoldAssignment,
    pub metrics: FoldMetrics,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub model: ModelParameters,
    pub records: Vec<PredictionRecord>,
    pub diagnostics: Vec<(usize, Vec<StepDiagnostics>)>,
}

fn node_width(prepared: &[PreparedSample]) -> Result<usize> {
    let first = prepared
        .first()
        .and_then(|s| s.observations.first())
        .ok_or_else(|| Error::input("dataset has no windows"))?;
    let r = first.nodes();
    for s in prepared {
        for obs in &s.observations {
            if obs.nodes() != r {
                return Err(Error::input(format!(
                    "sample {} has {} nodes, expected {r}",
                    s.id,
                    obs.nodes()
                )));
            }
        }
    }
    Ok(r)
}

fn mean_plain_loss(
    prepared: &[PreparedSample],
    indices: &[usize],
    model: &ModelParameters,
    settings: &TrainSettings,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::input("cannot evaluate an empty index set"));
    }
    let mut total = 0.0;
    for &idx in indices {
        let sample = &prepared[idx];
        let run = run_sequence_plain(&sample.observations, model, &settings.filter_for(sample.id))?;
        total += head::sequence_loss(&run.predictions, sample.label)?;
    }
    let loss = total / indices.len() as f64;
    if !loss.is_finite() {
        return Err(Error::numerical(format!("non-finite validation loss {loss}")));
    }
    Ok(loss)
}

fn argmax(probabilities: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probabilities.iter().enumerate().skip(1) {
        if *p > probabilities[best] {
            best = i;
        }
    }
    best
}

/// Trains one fold: Adam over shuffled mini-batches, snapshot at the best
/// validation loss, stop after `patience` epochs without improvement, then
/// evaluate the snapshot on the test fold.
pub fn train_fold(
    prepared: &[PreparedSample],
    assignment: &FoldAssignment,
    settings: &TrainSettings,
) -> Result<FoldOutcome> {
    settings.validate()?;
    let width = node_width(prepared)?;
    let mut model = ModelParameters::init(
        width,
        settings.hidden_dim,
        settings.mlp_dim,
        settings.classes,
        settings.layers,
        settings.cheb_order,
        derive_seed(settings.seed, &[3, assignment.fold as u64]),
    )?;
    let mut best: Option<(f64, ModelParameters)> = None;
    let mut stall = 0;
    let mut epochs_run = 0;
    for epoch in 0..settings.epochs {
        epochs_run = epoch + 1;
        let mut order = assignment.train.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            settings.seed,
            &[4, assignment.fold as u64, epoch as u64],
        ));
        order.shuffle(&mut rng);
        for batch in order.chunks(settings.batch_size) {
            model.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let sample = &prepared[idx];
                let mut taped = run_sequence_tape(
                    &sample.observations,
                    &model,
                    &settings.filter_for(sample.id),
                    sample.label,
                )?;
                let scaled = taped.tape.scale(taped.loss, scale);
                if !taped.tape.scalar_value(scaled).is_finite() {
                    return Err(Error::numerical(format!(
                        "non-finite loss on sample {}",
                        sample.id
                    )));
                }
                taped.tape.backward(scaled)?;
                model.absorb_grads(&taped.tape, &taped.bound);
            }
            model.adam_step(settings.learning_rate, 0.9, 0.999, 1e-8)?;
        }
        let val_loss = mean_plain_loss(prepared, &assignment.val, &model, settings)?;
        let improved = best.as_ref().is_none_or(|(b, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, model.clone()));
            stall = 0;
        } else {
            stall += 1;
            if stall >= settings.patience {
                break;
            }
        }
    }
    let (best_val_loss, best_model) = best.expect("at least one epoch ran");

    let mut pairs = Vec::with_capacity(assignment.test.len());
    let mut scores = Vec::with_capacity(assignment.test.len());
    let mut records = Vec::with_capacity(assignment.test.len());
    let mut diagnostics = Vec::with_capacity(assignment.test.len());
    for &idx in &assignment.test {
        let sample = &prepared[idx];
        let run = run_sequence_plain(
            &sample.observations,
            &best_model,
            &settings.filter_for(sample.id),
        )?;
        let record = PredictionRecord::from_steps(sample.id, sample.label, &run.predictions)?;
        pairs.push((sample.label, argmax(&record.averaged)));
        scores.push((record.averaged[1], sample.label));
        records.push(record);
        diagnostics.push((sample.id, run.diagnostics));
    }
    let metrics = FoldMetrics::from_predictions(assignment.fold, &pairs, &scores)?;
    Ok(FoldOutcome {
        fold: assignment.fold,
        assignment: assignment.clone(),
        metrics,
        best_val_loss,
        epochs_run,
        model: best_model,
        records,
        diagnostics,
    })
}

/// Full stratified cross-validation. With `jobs` > 1 the folds run on a
/// rayon pool of that size; fold outputs are identical either way because
/// every fold derives its own RNG streams.
pub fn cross_validate(
    prepared: &[PreparedSample],
    settings: &TrainSettings,
    n_folds: usize,
) -> Result<(MetricsReport, Vec<FoldOutcome>)> {
    settings.validate()?;
    let labels: Vec<usize> = prepared.iter().map(|s| s.label).collect();
    let assignments = stratified_folds(&labels, n_folds, None, derive_seed(settings.seed, &[6]))?;
    let outcomes: Vec<FoldOutcome> = if settings.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.jobs)
            .build()
            .map_err(|e| Error::input(format!("cannot build a {}-thread pool: {e}", settings.jobs)))?;
        pool.install(|| {
            assignments
                .par_iter()
                .map(|a| train_fold(prepared, a, settings))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        assignments
            .iter()
            .map(|a| train_fold(prepared, a, settings))
            .collect::<Result<Vec<_>>>()?
    };
    let report = MetricsReport::from_folds(outcomes.iter().map(|o| o.metrics.clone()).collect())?;
    Ok((report, outcomes))
}

/// One row of the particle-count ablation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub particles: usize,
    pub accuracy: f64,
    pub auc: f64,
    pub seconds: f64,
}

/// Runs a full cross-validation per particle count, sharing every seed, and
/// records the wall-clock per cell.
pub fn ablate_particles(
    prepared: &[PreparedSample],
    k_values: &[usize],
    settings: &TrainSettings,
    n_folds: usize,
) -> Result<Vec<AblationRow>> {
    if k_values.is_empty() {
        return Err(Error::input("ablation needs at least one particle count"));
    }
    if k_values.iter().any(|&k| k == 0) {
        return Err(Error::input("particle counts must be at least 1"));
    }
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let cell = TrainSettings {
            particles: k,
            ..*settings
        };
        let started = Instant::now();
        let (report, _) = cross_validate(prepared, &cell, n_folds)?;
        rows.push(AblationRow {
            particles: k,
            accuracy: report.mean_accuracy(),
            auc: report.mean_auc(),
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synthetic::{generate_synthetic, SyntheticSpec};
    use crate::smc::SoftResampleConfig;
    use proptest::prelude::*;

    fn tiny_settings(seed: u64) -> TrainSettings {
        TrainSettings {
            epochs: 2,
            patience: 1,
            batch_size: 4,
            learning_rate: 0.01,
            hidden_dim: 4,
            mlp_dim: 4,
            layers: 2,
            cheb_order: 2,
            classes: 2,
            particles: 3,
            init_noise: 0.05,
            step: StepConfig {
                knn: 2,
                sigma: 1.0,
                k_top: 2,
                resample: SoftResampleConfig {
                    alpha: 0.5,
                    trigger: 1.0,
                },
            },
            jobs: 1,
            seed,
        }
    }

    fn tiny_prepared(samples_per_class: usize, seed: u64) -> Vec<PreparedSample> {
        let spec = SyntheticSpec::standard(8, 60, 30, 0.1, samples_per_class, seed).unwrap();
        let samples = generate_synthetic(&spec).unwrap();
        prepare_dataset(
            &samples,
            WindowSpec {
                window_length: 20,
                stride: 20,
            },
            0.5,
            1,
            None,
        )
        .unwrap()
    }

    #[test]
    fn folds_are_disjoint_and_cover_everything() {
        let labels: Vec<usize> = (0..23).map(|i| i % 2).collect();
        let folds = stratified_folds(&labels, 5, None, 9).unwrap();
        let mut seen = vec![0usize; labels.len()];
        for f in &folds {
            for &i in &f.test {
                seen[i] += 1;
            }
            let total = f.train.len() + f.val.len() + f.test.len();
            assert_eq!(total, labels.len());
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn every_fold_keeps_both_classes() {
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let folds = stratified_folds(&labels, 5, None, 4).unwrap();
        for f in &folds {
            for bucket in [&f.train, &f.val, &f.test] {
                assert!(bucket.iter().any(|&i| labels[i] == 0));
                assert!(bucket.iter().any(|&i| labels[i] == 1));
            }
        }
    }

    #[test]
    fn missing_class_in_a_fold_is_an_error() {
        let mut labels = vec![0usize; 17];
        labels.extend([1, 1, 1]);
        let err = stratified_folds(&labels, 5, None, 1).unwrap_err();
        assert!(err.to_string().contains("absent from fold"));
    }

    #[test]
    fn secondary_group_key_is_accepted() {
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let groups: Vec<usize> = (0..40).map(|i| (i / 2) % 2).collect();
        let folds = stratified_folds(&labels, 5, Some(&groups), 4).unwrap();
        assert_eq!(folds.len(), 5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn fold_partition_property(n in 10usize..60, seed in 0u64..50) {
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            if let Ok(folds) = stratified_folds(&labels, 5, None, seed) {
                let mut count = vec![0usize; n];
                for f in &folds {
                    for &i in &f.test { count[i] += 1; }
                }
                prop_assert!(count.iter().all(|&c| c == 1));
            }
        }
    }

    #[test]
    fn perfect_and_constant_stubs_hit_the_expected_metrics() {
        // perfect classifier on a balanced fold
        let pairs: Vec<(usize, usize)> = (0..10).map(|i| (i % 2, i % 2)).collect();
        let scores: Vec<(f64, usize)> = (0..10).map(|i| ((i % 2) as f64, i % 2)).collect();
        let perfect = FoldMetrics::from_predictions(0, &pairs, &scores).unwrap();
        assert!((perfect.accuracy - 1.0).abs() < 1e-15);
        assert!((perfect.auc - 1.0).abs() < 1e-15);
        // constant-class classifier on balanced data
        let pairs: Vec<(usize, usize)> = (0..10).map(|i| (i % 2, 0)).collect();
        let scores: Vec<(f64, usize)> = (0..10).map(|i| (0.5, i % 2)).collect();
        let constant = FoldMetrics::from_predictions(0, &pairs, &scores).unwrap();
        assert!((constant.accuracy - 0.5).abs() < 1e-15);
        assert!((constant.auc - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cross_validation_runs_and_reports_sane_metrics() {
        let prepared = tiny_prepared(6, 31);
        let settings = tiny_settings(7);
        let (report, outcomes) = cross_validate(&prepared, &settings, 5).unwrap();
        assert_eq!(report.folds.len(), 5);
        assert_eq!(outcomes.len(), 5);
        for f in &report.folds {
            for v in [f.accuracy, f.sensitivity, f.specificity, f.auc] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        for o in &outcomes {
            assert!(o.best_val_loss.is_finite());
            assert!(o.epochs_run >= 1);
            assert!(!o.records.is_empty());
        }
    }

    #[test]
    fn cross_validation_is_deterministic() {
        let prepared = tiny_prepared(6, 31);
        let settings = tiny_settings(7);
        let (a, _) = cross_validate(&prepared, &settings, 5).unwrap();
        let (b, _) = cross_validate(&prepared, &settings, 5).unwrap();
        for (x, y) in a.folds.iter().zip(b.folds.iter()) {
            assert_eq!(x.accuracy.to_bits(), y.accuracy.to_bits());
            assert_eq!(x.auc.to_bits(), y.auc.to_bits());
        }
    }

    #[test]
    fn parallel_folds_match_serial_folds() {
        let prepared = tiny_prepared(6, 31);
        let serial = tiny_settings(7);
        let parallel = TrainSettings { jobs: 2, ..serial };
        let (a, _) = cross_validate(&prepared, &serial, 5).unwrap();
        let (b, _) = cross_validate(&prepared, &parallel, 5).unwrap();
        for (x, y) in a.folds.iter().zip(b.folds.iter()) {
            assert_eq!(x.accuracy.to_bits(), y.accuracy.to_bits());
            assert_eq!(x.auc.to_bits(), y.auc.to_bits());
        }
    }

    #[test]
    fn single_count_ablation_matches_cross_validate() {
        let prepared = tiny_prepared(6, 31);
        let settings = tiny_settings(7);
        let rows = ablate_particles(&prepared, &[3], &settings, 5).unwrap();
        assert_eq!(rows.len(), 1);
        let (report, _) = cross_validate(&prepared, &settings, 5).unwrap();
        assert_eq!(rows[0].particles, 3);
        assert_eq!(rows[0].accuracy.to_bits(), report.mean_accuracy().to_bits());
        assert_eq!(rows[0].auc.to_bits(), report.mean_auc().to_bits());
        assert!(rows[0].seconds > 0.0);
        assert!(ablate_particles(&prepared, &[0], &settings, 5).is_err());
    }
}
