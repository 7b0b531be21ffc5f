//! Shows how the soft-resampling mixture weight trades variance reduction
//! against gradient flow. Particles are drawn from q = α·w + (1−α)/K; the
//! post-draw weights w/q stay non-degenerate for α < 1, which is what lets
//! gradients pass through the resampling step during training.
//!
//! Run with `cargo run --example soft_resampling`.

use graphsmc::error::Result;
use graphsmc::smc::soft_resample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let weights = [0.55, 0.25, 0.12, 0.05, 0.03];
    println!("input weights: {weights:?}\n");

    for &alpha in &[1.0, 0.5, 0.0] {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut counts = [0usize; 5];
        let mut raw = Vec::new();
        for _ in 0..10_000 {
            let (indices, raw_weights) = soft_resample_indices(&mut rng, &weights, alpha)?;
            for &i in &indices {
                counts[i] += 1;
            }
            raw = raw_weights;
        }
        let total: usize = counts.iter().sum();
        let frequencies: Vec<String> = counts
            .iter()
            .map(|c| format!("{:.3}", *c as f64 / total as f64))
            .collect();
        let carried: Vec<String> = raw.iter().map(|w| format!("{w:.3}")).collect();
        println!("alpha = {alpha}");
        println!("  selection frequency: [{}]", frequencies.join(", "));
        println!("  carried weights w/q: [{}]", carried.join(", "));
    }

    println!("\nalpha = 1 reproduces multinomial(w) with uniform carried weights;");
    println!("alpha = 0 never touches the draw distribution, only reweights.");
    Ok(())
}
