//! Turns multivariate time series into sequences of graph observations.
//!
//! A window of the series yields one observation: Pearson correlations as
//! node features and shrinkage partial correlations, sparsified to the top-k
//! edges per node, as the adjacency. Windows are fixed-length strided slices
//! ordered by start column.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::{one_norm, spd_inverse, symmetrize, symmetry_defect};

/// ROI-by-timestamp signal matrix with one label per ROI row.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    values: Array2<f64>,
    roi_labels: Vec<String>,
}

impl TimeSeries {
    /// Validates shape (R ≥ 2, N ≥ 2), finiteness and label uniqueness.
    pub fn new(values: Array2<f64>, roi_labels: Vec<String>) -> Result<Self> {
        let (r, n) = values.dim();
        if r < 2 || n < 2 {
            return Err(Error::input(format!(
                "time series must be at least 2x2, got {r} ROIs x {n} timestamps"
            )));
        }
        if roi_labels.len() != r {
            return Err(Error::input(format!(
                "{} ROI labels for {} ROI rows",
                roi_labels.len(),
                r
            )));
        }
        for (i, row) in values.rows().into_iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::input(format!(
                    "non-finite value for ROI {i} at timestamp {j}"
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for label in &roi_labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::input(format!("duplicate ROI label {label:?}")));
            }
        }
        Ok(TimeSeries { values, roi_labels })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn roi_labels(&self) -> &[String] {
        &self.roi_labels
    }

    /// Number of ROIs (rows).
    pub fn rois(&self) -> usize {
        self.values.nrows()
    }

    /// Number of timestamps (columns).
    pub fn timestamps(&self) -> usize {
        self.values.ncols()
    }

    /// Column slice covering `range` timestamps.
    pub fn window(&self, range: &Range<usize>) -> ArrayView2<'_, f64> {
        self.values.slice(ndarray::s![.., range.clone()])
    }
}

/// Sliding window geometry in timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WindowSpec {
    pub window_length: usize,
    pub stride: usize,
}

/// One observed graph: partial-correlation adjacency plus Pearson features.
#[derive(Debug, Clone)]
pub struct GraphObservation {
    pub adjacency: Array2<f64>,
    pub features: Array2<f64>,
    pub window_index: usize,
}

impl GraphObservation {
    pub fn nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    /// Checks the structural invariants every constructed observation obeys.
    pub fn check(&self) -> Result<()> {
        let r = self.adjacency.nrows();
        if self.adjacency.dim() != (r, r) || self.features.dim() != (r, r) {
            return Err(Error::invariant("observation matrices must be square R x R"));
        }
        if symmetry_defect(&self.adjacency) > 1e-9 {
            return Err(Error::invariant("observation adjacency is not symmetric"));
        }
        for i in 0..r {
            if self.adjacency[[i, i]] != 0.0 {
                return Err(Error::invariant("observation adjacency diagonal must be zero"));
            }
            if self.features[[i, i]] != 1.0 {
                return Err(Error::invariant("observation feature diagonal must be one"));
            }
        }
        let bounded = |m: &Array2<f64>| m.iter().all(|v| (-1.0..=1.0).contains(v));
        if !bounded(&self.adjacency) || !bounded(&self.features) {
            return Err(Error::invariant("observation entries must lie in [-1, 1]"));
        }
        Ok(())
    }
}

/// All window column ranges, ordered by start: {0, S, 2S, ...} with each
/// covering [start, start + window_length). Count is ⌊(N − Γ)/S⌋ + 1.
pub fn sliding_windows(series: &TimeSeries, spec: WindowSpec) -> Result<Vec<Range<usize>>> {
    let n = series.timestamps();
    if spec.stride == 0 {
        return Err(Error::input("invalid stride"));
    }
    if spec.window_length == 0 {
        return Err(Error::input("window length must be positive"));
    }
    if spec.window_length > n {
        return Err(Error::input("window exceeds series length"));
    }
    let count = (n - spec.window_length) / spec.stride + 1;
    Ok((0..count)
        .map(|i| {
            let start = i * spec.stride;
            start..start + spec.window_length
        })
        .collect())
}

/// Per-row mean, centered values and centered sum of squares.
fn center_rows(window: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Vec<f64>)> {
    let (r, g) = window.dim();
    let mut centered = Array2::<f64>::zeros((r, g));
    let mut norms_sq = vec![0.0; r];
    for i in 0..r {
        let mean = window.row(i).sum() / g as f64;
        let mut ss = 0.0;
        for j in 0..g {
            let c = window[[i, j]] - mean;
            centered[[i, j]] = c;
            ss += c * c;
        }
        // relative threshold so constant rows are flagged despite rounding
        if ss <= 1e-24 * g as f64 * (1.0 + mean * mean) {
            return Err(Error::input(format!("zero variance in ROI {i} within window")));
        }
        norms_sq[i] = ss;
    }
    Ok((centered, norms_sq))
}

/// Pearson correlation matrix of the window rows: symmetric, unit diagonal,
/// entries clamped into [−1, 1].
pub fn pearson_features(window: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let r = window.nrows();
    let (centered, norms_sq) = center_rows(window)?;
    let mut corr = Array2::<f64>::zeros((r, r));
    for i in 0..r {
        corr[[i, i]] = 1.0;
        for j in (i + 1)..r {
            let dot = centered.row(i).dot(&centered.row(j));
            let rho = (dot / (norms_sq[i] * norms_sq[j]).sqrt()).clamp(-1.0, 1.0);
            corr[[i, j]] = rho;
            corr[[j, i]] = rho;
        }
    }
    Ok(corr)
}

/// Partial correlations through a ridge-shrunk precision matrix.
///
/// C' = (1−λ)·C + λI is inverted to P; the returned matrix holds
/// ρ(i,j) = −P_ij/√(P_ii·P_jj) off the diagonal and zero on it. Shrinkage
/// keeps C' positive definite when the window is shorter than the node count.
pub fn partial_correlation_adjacency(
    window: ArrayView2<'_, f64>,
    shrinkage: f64,
) -> Result<Array2<f64>> {
    if !(shrinkage > 0.0 && shrinkage <= 1.0) {
        return Err(Error::input(format!(
            "shrinkage must be in (0, 1], got {shrinkage}"
        )));
    }
    let corr = pearson_features(window)?;
    let r = corr.nrows();
    let mut shrunk = corr * (1.0 - shrinkage);
    for i in 0..r {
        shrunk[[i, i]] += shrinkage;
    }
    let precision = spd_inverse(&shrunk)?;
    if one_norm(&shrunk) * one_norm(&precision) > 1e12 {
        return Err(Error::numerical("singular correlation matrix"));
    }
    let mut rho = Array2::<f64>::zeros((r, r));
    for i in 0..r {
        for j in (i + 1)..r {
            let v = (-precision[[i, j]] / (precision[[i, i]] * precision[[j, j]]).sqrt())
                .clamp(-1.0, 1.0);
            rho[[i, j]] = v;
            rho[[j, i]] = v;
        }
    }
    Ok(rho)
}

/// Row indices of the k largest-magnitude entries, ties broken toward the
/// lower column index.
fn row_topk(row: ndarray::ArrayView1<'_, f64>, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .abs()
            .partial_cmp(&row[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Keeps the k largest-magnitude entries of each row, then unions the
/// survivors symmetrically: an edge stays if either endpoint kept it, and
/// both orientations take the larger-magnitude original value. The diagonal
/// is always zero.
pub fn topk_sparsify(a: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    let r = a.nrows();
    if a.ncols() != r {
        return Err(Error::input(format!(
            "top-k sparsifier needs a square matrix, got {}x{}",
            r,
            a.ncols()
        )));
    }
    if r > 0 && k > r - 1 {
        return Err(Error::input(format!(
            "top-k {k} out of range for {r} nodes (max {})",
            r - 1
        )));
    }
    let mut keep = Array2::<bool>::from_elem((r, r), false);
    for i in 0..r {
        for j in row_topk(a.row(i), k) {
            keep[[i, j]] = true;
        }
    }
    let mut out = Array2::<f64>::zeros((r, r));
    for i in 0..r {
        for j in (i + 1)..r {
            if keep[[i, j]] || keep[[j, i]] {
                let v = if a[[i, j]].abs() >= a[[j, i]].abs() {
                    a[[i, j]]
                } else {
                    a[[j, i]]
                };
                out[[i, j]] = v;
                out[[j, i]] = v;
            }
        }
    }
    Ok(out)
}

/// Builds the full observation sequence for a series. `max_windows` truncates
/// from the front when set. Every returned observation satisfies
/// [`GraphObservation::check`].
pub fn graph_observations(
    series: &TimeSeries,
    spec: WindowSpec,
    shrinkage: f64,
    k_top: usize,
    max_windows: Option<usize>,
) -> Result<Vec<GraphObservation>> {
    let mut ranges = sliding_windows(series, spec)?;
    if let Some(cap) = max_windows {
        if cap == 0 {
            return Err(Error::input("max windows must be positive"));
        }
        ranges.truncate(cap);
    }
    let mut out = Vec::with_capacity(ranges.len());
    for (t, range) in ranges.iter().enumerate() {
        let window = series.window(range);
        let features = pearson_features(window)?;
        let dense = partial_correlation_adjacency(window, shrinkage)?;
        let mut adjacency = topk_sparsify(&dense, k_top)?;
        symmetrize(&mut adjacency);
        let obs = GraphObservation {
            adjacency,
            features,
            window_index: t,
        };
        obs.check()?;
        out.push(obs);
    }
    Ok(out)
}

/// Reads a timestamps-as-rows CSV: header row holds ROI labels, each later
/// row is one timestamp. The matrix is transposed into ROI-major order.
pub fn read_timeseries_csv(path: &Path) -> Result<TimeSeries> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
    parse_timeseries_csv(&text)
}

/// CSV body parser split out so malformed-input diagnostics are testable
/// without touching the filesystem. Row/column numbers are 1-based and count
/// the header.
pub fn parse_timeseries_csv(text: &str) -> Result<TimeSeries> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(Error::input("empty CSV: expected a header row of ROI labels"));
    };
    let labels: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let r = labels.len();
    if r < 2 {
        return Err(Error::input(format!(
            "need at least 2 ROI columns, header has {r}"
        )));
    }
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (line_idx, line) in lines {
        let row_no = line_idx + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != r {
            return Err(Error::input(format!(
                "row {row_no}: expected {r} columns, found {}",
                cells.len()
            )));
        }
        let mut parsed = Vec::with_capacity(r);
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::input(format!(
                    "row {row_no}, column {}: cannot parse {:?} as a number",
                    c + 1,
                    cell.trim()
                ))
            })?;
            parsed.push(v);
        }
        columns.push(parsed);
    }
    let n = columns.len();
    if n < 2 {
        return Err(Error::input(format!(
            "need at least 2 timestamp rows, found {n}"
        )));
    }
    let mut values = Array2::<f64>::zeros((r, n));
    for (t, row) in columns.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            values[[i, t]] = *v;
        }
    }
    TimeSeries::new(values, labels)
}

/// Writes `series` (optionally restricted to a column range) back into the
/// timestamps-as-rows CSV shape. Floats use shortest round-trip formatting,
/// so read-after-write reproduces values bit for bit.
pub fn write_timeseries_csv(
    path: &Path,
    series: &TimeSeries,
    range: Option<&Range<usize>>,
) -> Result<()> {
    let full = 0..series.timestamps();
    let range = range.unwrap_or(&full);
    let mut out = String::new();
    out.push_str(&series.roi_labels.join(","));
    out.push('\n');
    for t in range.clone() {
        for i in 0..series.rois() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", series.values[[i, t]]);
        }
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|e| Error::input(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn labeled(values: Array2<f64>) -> TimeSeries {
        let labels = (0..values.nrows()).map(|i| format!("roi{i}")).collect();
        TimeSeries::new(values, labels).unwrap()
    }

    fn gaussian_series(r: usize, n: usize, seed: u64) -> TimeSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array2::from_shape_fn((r, n), |_| rng.sample::<f64, _>(StandardNormal));
        labeled(values)
    }

    #[test]
    fn window_count_matches_explicit_examples() {
        let spec = |g, s| WindowSpec {
            window_length: g,
            stride: s,
        };
        let w = sliding_windows(&gaussian_series(2, 160, 1), spec(100, 3)).unwrap();
        assert_eq!(w.len(), 21);
        assert_eq!(w[0], 0..100);
        assert_eq!(w[1], 3..103);
        assert_eq!(w[20], 60..160);

        let w = sliding_windows(&gaussian_series(2, 50, 2), spec(50, 7)).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0], 0..50);

        let w = sliding_windows(&gaussian_series(2, 10, 3), spec(4, 4)).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].start, 0);
        assert_eq!(w[1].start, 4);
    }

    #[test]
    fn window_errors_name_the_problem() {
        let series = gaussian_series(2, 10, 4);
        let err = sliding_windows(
            &series,
            WindowSpec {
                window_length: 11,
                stride: 1,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("window exceeds series length"));
        let err = sliding_windows(
            &series,
            WindowSpec {
                window_length: 4,
                stride: 0,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("invalid stride"));
    }

    proptest! {
        #[test]
        fn window_count_equals_brute_force(n in 2usize..300, g in 1usize..300, s in 1usize..50) {
            prop_assume!(g <= n);
            let series = gaussian_series(2, n, 99);
            let spec = WindowSpec { window_length: g, stride: s };
            let windows = sliding_windows(&series, spec).unwrap();
            let brute: Vec<usize> =
                (0..n).filter(|start| start % s == 0 && start + g <= n).collect();
            prop_assert_eq!(windows.len(), brute.len());
            for (w, b) in windows.iter().zip(brute.iter()) {
                prop_assert_eq!(w.start, *b);
            }
        }

        #[test]
        fn pearson_is_invariant_under_positive_affine_maps(
            seed in 0u64..1000,
            scale in 0.05f64..20.0,
            shift in -50.0f64..50.0,
        ) {
            let series = gaussian_series(4, 60, seed);
            let base = pearson_features(series.values().view()).unwrap();
            let mut rescaled = series.values().clone();
            for v in rescaled.row_mut(2).iter_mut() {
                *v = *v * scale + shift;
            }
            let mapped = pearson_features(rescaled.view()).unwrap();
            for (a, b) in base.iter().zip(mapped.iter()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn topk_is_idempotent(seed in 0u64..500, k in 0usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = 6;
            let mut a = Array2::from_shape_fn((r, r), |_| rng.sample::<f64, _>(StandardNormal));
            for i in 0..r {
                a[[i, i]] = 0.0;
            }
            crate::linalg::symmetrize(&mut a);
            let once = topk_sparsify(&a, k).unwrap();
            let twice = topk_sparsify(&once, k).unwrap();
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn identical_and_negated_rows_correlate_at_unit_magnitude() {
        let values = array![
            [1.0, 2.0, 3.0, 4.0],
            [1.0, 2.0, 3.0, 4.0],
            [-1.0, -2.0, -3.0, -4.0]
        ];
        let corr = pearson_features(values.view()).unwrap();
        assert_eq!(corr[[0, 1]], 1.0);
        assert_eq!(corr[[0, 2]], -1.0);
        assert_eq!(corr[[1, 2]], -1.0);
    }

    #[test]
    fn pearson_matches_covariance_formula_oracle() {
        // oracle: r = (E[xy] − E[x]E[y]) / (σ_x σ_y), population moments
        let series = gaussian_series(3, 200, 7);
        let v = series.values();
        let g = v.ncols() as f64;
        let corr = pearson_features(v.view()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let xi = v.row(i);
                let xj = v.row(j);
                let exy = xi.dot(&xj) / g;
                let ex = xi.sum() / g;
                let ey = xj.sum() / g;
                let vx = xi.dot(&xi) / g - ex * ex;
                let vy = xj.dot(&xj) / g - ey * ey;
                let oracle = (exy - ex * ey) / (vx * vy).sqrt();
                assert!(
                    (corr[[i, j]] - oracle).abs() <= 1e-12,
                    "({i},{j}): {} vs {}",
                    corr[[i, j]],
                    oracle
                );
            }
        }
    }

    #[test]
    fn constant_row_is_rejected_with_its_index() {
        let values = array![[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]];
        let err = pearson_features(values.view()).unwrap_err();
        assert!(err.to_string().contains("ROI 1"), "{err}");
    }

    #[test]
    fn full_shrinkage_yields_zero_adjacency() {
        let series = gaussian_series(4, 30, 11);
        let rho = partial_correlation_adjacency(series.values().view(), 1.0).unwrap();
        assert!(rho.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_node_partial_correlation_reduces_to_pearson() {
        let series = gaussian_series(2, 80, 13);
        let pearson = pearson_features(series.values().view()).unwrap();
        let partial = partial_correlation_adjacency(series.values().view(), 1e-12).unwrap();
        assert!((partial[[0, 1]] - pearson[[0, 1]]).abs() <= 1e-9);
        assert_eq!(partial[[0, 0]], 0.0);
    }

    #[test]
    fn chain_dependence_is_suppressed_by_conditioning() {
        // z0 → z1 → z2: marginally all correlated, but 0↔2 only through 1
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 5000;
        let mut values = Array2::<f64>::zeros((3, n));
        for t in 0..n {
            let z0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            let z1 = 0.8 * z0 + 0.6 * e1;
            let z2 = 0.8 * z1 + 0.6 * e2;
            values[[0, t]] = z0;
            values[[1, t]] = z1;
            values[[2, t]] = z2;
        }
        let marginal = pearson_features(values.view()).unwrap();
        assert!(marginal[[0, 2]].abs() > 0.4, "chain should correlate marginally");
        let partial = partial_correlation_adjacency(values.view(), 1e-3).unwrap();
        assert!(partial[[0, 2]].abs() < 0.05, "got {}", partial[[0, 2]]);
        assert!(partial[[0, 1]].abs() > 0.5);
        assert!(partial[[1, 2]].abs() > 0.5);
    }

    #[test]
    fn near_collinear_rows_trip_the_condition_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 50;
        let mut values = Array2::<f64>::zeros((3, n));
        for t in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            values[[0, t]] = x;
            values[[1, t]] = x + 1e-10 * rng.sample::<f64, _>(StandardNormal);
            values[[2, t]] = y;
        }
        let err = partial_correlation_adjacency(values.view(), 1e-15).unwrap_err();
        assert!(err.to_string().contains("singular correlation matrix"));
    }

    #[test]
    fn topk_edge_cases() {
        let mut a = array![
            [0.0, 0.9, -0.2, 0.1],
            [0.9, 0.0, 0.5, -0.6],
            [-0.2, 0.5, 0.0, 0.3],
            [0.1, -0.6, 0.3, 0.0]
        ];
        symmetrize(&mut a);
        let zeroed = topk_sparsify(&a, 0).unwrap();
        assert!(zeroed.iter().all(|v| *v == 0.0));
        let unchanged = topk_sparsify(&a, 3).unwrap();
        assert_eq!(unchanged, a);
        assert!(topk_sparsify(&a, 4).is_err());
    }

    #[test]
    fn topk_matches_brute_force_union_oracle() {
        let a = array![
            [0.0, 0.9, -0.2, 0.1],
            [0.9, 0.0, 0.5, -0.6],
            [-0.2, 0.5, 0.0, 0.3],
            [0.1, -0.6, 0.3, 0.0]
        ];
        let got = topk_sparsify(&a, 1).unwrap();
        // oracle: enumerate every row's single best entry, union symmetrically
        let r = 4;
        let mut keep = vec![vec![false; r]; r];
        for i in 0..r {
            let mut best = 0usize;
            for j in 1..r {
                if a[[i, j]].abs() > a[[i, best]].abs() {
                    best = j;
                }
            }
            keep[i][best] = true;
        }
        let mut expect = Array2::<f64>::zeros((r, r));
        for i in 0..r {
            for j in 0..r {
                if i != j && (keep[i][j] || keep[j][i]) {
                    expect[[i, j]] = a[[i, j]];
                }
            }
        }
        assert_eq!(got, expect);
    }

    #[test]
    fn observations_satisfy_structural_invariants() {
        let series = gaussian_series(6, 60, 31);
        let spec = WindowSpec {
            window_length: 20,
            stride: 10,
        };
        let obs = graph_observations(&series, spec, 0.1, 2, None).unwrap();
        assert_eq!(obs.len(), 5);
        for (t, o) in obs.iter().enumerate() {
            assert_eq!(o.window_index, t);
            o.check().unwrap();
        }
    }

    #[test]
    fn max_windows_truncates_from_the_front() {
        let series = gaussian_series(4, 60, 37);
        let spec = WindowSpec {
            window_length: 20,
            stride: 10,
        };
        let all = graph_observations(&series, spec, 0.1, 1, None).unwrap();
        let capped = graph_observations(&series, spec, 0.1, 1, Some(2)).unwrap();
        assert_eq!(capped.len(), 2);
        assert_eq!(capped[0].adjacency, all[0].adjacency);
        assert_eq!(capped[1].adjacency, all[1].adjacency);
    }

    #[test]
    fn csv_parse_reports_row_and_column() {
        let err = parse_timeseries_csv("a,b\n1.0,2.0\n1.5,oops\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 3"), "{msg}");
        assert!(msg.contains("column 2"), "{msg}");

        let err = parse_timeseries_csv("a,b\n1.0\n").unwrap_err();
        assert!(err.to_string().contains("expected 2 columns"));

        let err = parse_timeseries_csv("").unwrap_err();
        assert!(err.to_string().contains("empty CSV"));

        let err = parse_timeseries_csv("a,a\n1.0,2.0\n3.0,4.0\n").unwrap_err();
        assert!(err.to_string().contains("duplicate ROI label"));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let series = gaussian_series(3, 12, 41);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        write_timeseries_csv(&path, &series, None).unwrap();
        let back = read_timeseries_csv(&path).unwrap();
        assert_eq!(back.roi_labels(), series.roi_labels());
        assert_eq!(back.values(), series.values());
    }

    #[test]
    fn csv_window_dump_preserves_the_slice() {
        let series = gaussian_series(3, 12, 43);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("window.csv");
        write_timeseries_csv(&path, &series, Some(&(4..9))).unwrap();
        let back = read_timeseries_csv(&path).unwrap();
        assert_eq!(back.timestamps(), 5);
        assert_eq!(
            back.values().view(),
            series.values().slice(ndarray::s![.., 4..9])
        );
    }
}
