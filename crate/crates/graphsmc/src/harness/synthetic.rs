//! Regime-switching community time series: class 0 keeps one community
//! partition for the whole series, class 1 re-partitions the nodes at the
//! switch time. Within a community, signals share a latent factor, so
//! windowed correlations recover the block structure.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TimeSeries;
use crate::linalg::derive_seed;

/// A community partition: disjoint node lists covering 0..nodes.
pub type Partition = Vec<Vec<usize>>;

/// Generator settings. `blocks[class]` holds the pre- and post-switch
/// partitions for that class; class 0 conventionally repeats its partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub length: usize,
    pub switch_time: usize,
    pub blocks: Vec<[Partition; 2]>,
    /// Within-community correlation of the clean signal.
    pub within_correlation: f64,
    /// Scale of the white noise added on top of the unit-variance signal.
    pub noise: f64,
    pub samples_per_class: usize,
    pub seed: u64,
}

/// One generated subject: its series and its class label.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub id: usize,
    pub series: TimeSeries,
    pub label: usize,
}

fn check_partition(partition: &Partition, nodes: usize) -> Result<()> {
    let mut seen = vec![false; nodes];
    for community in partition {
        for &node in community {
            if node >= nodes {
                return Err(Error::input(format!(
                    "community node {node} out of range for {nodes} nodes"
                )));
            }
            if seen[node] {
                return Err(Error::input(format!(
                    "node {node} assigned to more than one community"
                )));
            }
            seen[node] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::input("communities do not cover every node"));
    }
    Ok(())
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::input("need at least 2 nodes"));
        }
        if self.switch_time == 0 || self.switch_time >= self.length {
            return Err(Error::input(format!(
                "switch time {} must lie strictly inside the series length {}",
                self.switch_time, self.length
            )));
        }
        if self.blocks.len() != 2 {
            return Err(Error::input("exactly two classes are supported"));
        }
        for class_blocks in &self.blocks {
            for partition in class_blocks {
                check_partition(partition, self.nodes)?;
            }
        }
        if !(0.0..1.0).contains(&self.within_correlation) {
            return Err(Error::input(format!(
                "within-community correlation must be in [0, 1), got {}",
                self.within_correlation
            )));
        }
        if self.noise < 0.0 {
            return Err(Error::input("noise level must be non-negative"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::input("need at least one sample per class"));
        }
        Ok(())
    }

    /// The standard two-class layout: halves of the node set for class 0
    /// throughout; class 1 starts with halves and re-partitions into
    /// interleaved quarters at the switch.
    pub fn standard(
        nodes: usize,
        length: usize,
        switch_time: usize,
        noise: f64,
        samples_per_class: usize,
        seed: u64,
    ) -> Result<Self> {
        if nodes < 4 || nodes % 4 != 0 {
            return Err(Error::input(format!(
                "the standard layout needs a node count divisible by 4, got {nodes}"
            )));
        }
        let half = nodes / 2;
        let quarter = nodes / 4;
        let halves: Partition = vec![(0..half).collect(), (half..nodes).collect()];
        let interleaved: Partition = vec![
            (0..quarter).chain(half..half + quarter).collect(),
            (quarter..half).chain(half + quarter..nodes).collect(),
        ];
        let spec = SyntheticSpec {
            nodes,
            length,
            switch_time,
            blocks: vec![[halves.clone(), halves.clone()], [halves, interleaved]],
            within_correlation: 0.6,
            noise,
            samples_per_class,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn community_of(partition: &Partition, nodes: usize) -> Vec<usize> {
    let mut assignment = vec![0usize; nodes];
    for (c, community) in partition.iter().enumerate() {
        for &node in community {
            assignment[node] = c;
        }
    }
    assignment
}

fn sample_series(spec: &SyntheticSpec, label: usize, rng: &mut ChaCha8Rng) -> TimeSeries {
    let rho = spec.within_correlation;
    let shared = rho.sqrt();
    let own = (1.0 - rho).sqrt();
    let pre = community_of(&spec.blocks[label][0], spec.nodes);
    let post = community_of(&spec.blocks[label][1], spec.nodes);
    let n_communities = spec.blocks[label]
        .iter()
        .map(|p| p.len())
        .max()
        .expect("two regimes");
    let mut values = Array2::<f64>::zeros((spec.nodes, spec.length));
    let mut factors = vec![0.0; n_communities];
    for t in 0..spec.length {
        let assignment = if t < spec.switch_time { &pre } else { &post };
        for f in factors.iter_mut() {
            *f = rng.sample::<f64, _>(StandardNormal);
        }
        for i in 0..spec.nodes {
            let signal =
                shared * factors[assignment[i]] + own * rng.sample::<f64, _>(StandardNormal);
            values[[i, t]] = signal + spec.noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let labels = (0..spec.nodes).map(|i| format!("roi{i}")).collect();
    TimeSeries::new(values, labels).expect("generated series is valid")
}

/// Generates `samples_per_class` series per class, deterministically under
/// `spec.seed`. Sample ids interleave classes: sample 2i has class 0,
/// sample 2i+1 class 1.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<LabeledSample>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(2 * spec.samples_per_class);
    for pair in 0..spec.samples_per_class {
        for label in 0..2 {
            let id = 2 * pair + label;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                spec.seed,
                &[label as u64, pair as u64],
            ));
            out.push(LabeledSample {
                id,
                series: sample_series(spec, label, &mut rng),
                label,
            });
        }
    }
    Ok(out)
}
