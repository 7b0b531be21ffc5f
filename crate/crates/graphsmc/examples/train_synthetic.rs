//! End-to-end training on a small regime-switching dataset: windowed graph
//! observations, stratified 5-fold cross-validation, early stopping on
//! validation loss, and per-fold test metrics.
//!
//! Run with `cargo run --example train_synthetic`. Takes a minute or two;
//! the CLI `train` subcommand runs the same procedure at full scale.

use graphsmc::error::Result;
use graphsmc::harness::synthetic::{generate_synthetic, SyntheticSpec};
use graphsmc::harness::train::{cross_validate, prepare_dataset, TrainSettings};
use graphsmc::ingest::WindowSpec;
use graphsmc::smc::{SoftResampleConfig, StepConfig};

fn main() -> Result<()> {
    let spec = SyntheticSpec::standard(12, 200, 100, 0.1, 15, 42)?;
    let samples = generate_synthetic(&spec)?;
    let prepared = prepare_dataset(
        &samples,
        WindowSpec {
            window_length: 100,
            stride: 50,
        },
        0.1,
        2,
        None,
    )?;
    println!(
        "{} samples, {} windows each",
        prepared.len(),
        prepared[0].observations.len()
    );

    let settings = TrainSettings {
        epochs: 8,
        patience: 3,
        batch_size: 6,
        learning_rate: 0.01,
        hidden_dim: 16,
        mlp_dim: 8,
        layers: 2,
        cheb_order: 3,
        classes: 2,
        particles: 10,
        init_noise: 0.05,
        step: StepConfig {
            knn: 5,
            sigma: 1.0,
            k_top: 2,
            resample: SoftResampleConfig {
                alpha: 0.5,
                trigger: 1.0,
            },
        },
        jobs: 1,
        seed: 42,
    };
    let (report, outcomes) = cross_validate(&prepared, &settings, 5)?;

    for (f, outcome) in report.folds.iter().zip(&outcomes) {
        println!(
            "fold {}: accuracy {:.3} auc {:.3} ({} epochs, best val loss {:.4})",
            f.fold, f.accuracy, f.auc, outcome.epochs_run, outcome.best_val_loss
        );
    }
    println!(
        "mean accuracy {:.3} ± {:.3}, mean auc {:.3} ± {:.3}",
        report.mean[0], report.std[0], report.mean[3], report.std[3]
    );
    Ok(())
}
