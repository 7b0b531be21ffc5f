//! Sweeps the particle count and reports cross-validated accuracy, AUC, and
//! wall-clock time per setting. More particles buy a richer posterior
//! approximation at linear cost in time.
//!
//! Run with `cargo run --example particle_ablation`.

use graphsmc::error::Result;
use graphsmc::harness::synthetic::{generate_synthetic, SyntheticSpec};
use graphsmc::harness::train::{ablate_particles, prepare_dataset, TrainSettings};
use graphsmc::ingest::WindowSpec;
use graphsmc::smc::{SoftResampleConfig, StepConfig};

fn main() -> Result<()> {
    let spec = SyntheticSpec::standard(12, 200, 100, 0.1, 10, 42)?;
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

    let settings = TrainSettings {
        epochs: 4,
        patience: 2,
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

    println!("particles  accuracy  auc     seconds");
    for row in ablate_particles(&prepared, &[5, 15, 30], &settings, 5)? {
        println!(
            "{:9}  {:8.3}  {:.3}  {:7.2}",
            row.particles, row.accuracy, row.auc, row.seconds
        );
    }
    Ok(())
}
