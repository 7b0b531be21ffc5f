//! Checks analytic gradients of the full filter loss against central finite
//! differences. The loss runs through the convolutional transition, the
//! observation fusion, importance weighting, soft resampling, and the
//! weighted classifier head; every parameter entry is perturbed.
//!
//! Run with `cargo run --example gradient_check`.

use graphsmc::error::Result;
use graphsmc::harness::synthetic::{generate_synthetic, SyntheticSpec};
use graphsmc::ingest::{graph_observations, WindowSpec};
use graphsmc::model::ModelParameters;
use graphsmc::pipeline::{finite_difference_worst_error, FilterSettings};
use graphsmc::smc::{SoftResampleConfig, StepConfig};

fn main() -> Result<()> {
    let spec = SyntheticSpec::standard(8, 90, 45, 0.1, 1, 3)?;
    let sample = &generate_synthetic(&spec)?[0];
    let window = WindowSpec {
        window_length: 30,
        stride: 30,
    };
    let observations = graph_observations(&sample.series, window, 0.1, 1, None)?;

    let mut model = ModelParameters::init(8, 6, 5, 2, 2, 3, 21)?;
    let settings = FilterSettings {
        particles: 4,
        init_noise: 0.05,
        seed: 17,
        step: StepConfig {
            knn: 3,
            sigma: 1.0,
            k_top: 1,
            resample: SoftResampleConfig {
                alpha: 0.5,
                trigger: 1.0,
            },
        },
    };

    let n_params: usize = model.params().iter().map(|p| p.value.len()).sum();
    println!(
        "{} windows, {} particles, {} parameter entries",
        observations.len(),
        settings.particles,
        n_params
    );
    let worst = finite_difference_worst_error(&observations, &mut model, &settings, 0, 1e-4)?;
    println!("worst relative error vs central differences: {worst:.3e}");
    assert!(worst <= 1e-3, "gradient check failed");
    println!("gradients verified");
    Ok(())
}
