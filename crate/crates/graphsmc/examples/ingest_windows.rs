//! Windows a multivariate time series and builds one graph observation per
//! window: partial-correlation adjacency (shrinkage-regularized precision),
//! top-k sparsified, plus the raw correlation features.
//!
//! Run with `cargo run --example ingest_windows`.

use graphsmc::error::Result;
use graphsmc::harness::synthetic::SyntheticSpec;
use graphsmc::ingest::{graph_observations, sliding_windows, WindowSpec};

fn main() -> Result<()> {
    // Two-community series: the filter's observations come from exactly this
    // kind of windowed connectivity estimate.
    let spec = SyntheticSpec::standard(12, 160, 80, 0.1, 1, 7)?;
    let sample = graphsmc::harness::synthetic::generate_synthetic(&spec)?
        .into_iter()
        .next()
        .expect("one sample per class requested");

    let window = WindowSpec {
        window_length: 100,
        stride: 3,
    };
    let ranges = sliding_windows(&sample.series, window)?;
    println!(
        "{} timestamps, window {} stride {} -> {} windows",
        sample.series.timestamps(),
        window.window_length,
        window.stride,
        ranges.len()
    );

    let observations = graph_observations(&sample.series, window, 0.1, 2, None)?;
    for obs in observations.iter().take(3) {
        let nonzero = obs.adjacency.iter().filter(|v| **v != 0.0).count();
        let max_edge = obs.adjacency.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!(
            "window {:2} [{:3}, {:3}): {} nonzero edges, max |weight| {:.4}",
            obs.window_index,
            ranges[obs.window_index].start,
            ranges[obs.window_index].end,
            nonzero,
            max_edge
        );
    }
    println!("... ({} windows total)", observations.len());
    Ok(())
}
