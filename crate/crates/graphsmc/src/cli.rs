//! Command-line front end: dataset generation, ingestion manifests,
//! cross-validated training, checkpoint re-evaluation, the particle-count
//! ablation, and filter validation against the linear-Gaussian oracle.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure, 4 invariant
//! violation. Errors print `error: <message>` and `error-code: <tag>` on
//! stderr.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigOverrides, RunConfig};
use crate::error::{Error, Result};
use crate::harness::kalman::{rmse_bound, validate_filter, LinearGaussianSpec};
use crate::harness::metrics::{FoldMetrics, MetricsReport};
use crate::harness::synthetic::{generate_synthetic, LabeledSample, SyntheticSpec};
use crate::harness::train::{
    ablate_particles, cross_validate, prepare_dataset, AblationRow, FoldOutcome,
};
use crate::head::PredictionRecord;
use crate::ingest::{
    graph_observations, read_timeseries_csv, sliding_windows, write_timeseries_csv,
};
use crate::model::{load_checkpoint, save_checkpoint};
use crate::pipeline::run_sequence_plain;

#[derive(Parser)]
#[command(
    name = "graphsmc",
    version,
    about = "Particle-filtered graph classification over sliding-window connectivity"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic regime-switching dataset directory
    Synth(SynthArgs),
    /// Window a time-series CSV and write a manifest (plus optional graph dumps)
    Ingest(IngestArgs),
    /// Train with stratified 5-fold cross-validation into a run directory
    Train(TrainArgs),
    /// Re-evaluate a run's checkpoints on its recorded test folds
    Eval(EvalArgs),
    /// Cross-validate at several particle counts and tabulate runtime
    Ablate(AblateArgs),
    /// Compare the particle filter against the closed-form Kalman oracle
    ValidateSmc(ValidateArgs),
}

/// RunConfig fields as flags; unset flags fall back to --config, then to
/// the documented defaults.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// TOML config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sliding window length [default: 100]
    #[arg(long)]
    window_length: Option<usize>,
    /// Window stride (required unless the config file sets it)
    #[arg(long)]
    stride: Option<usize>,
    /// Particle count K [default: 30]
    #[arg(long)]
    particles: Option<usize>,
    /// Chebyshev polynomial order [default: 3]
    #[arg(long)]
    cheb_order: Option<usize>,
    /// Convolution layers [default: 2]
    #[arg(long)]
    layers: Option<usize>,
    /// Hidden feature width [default: 64]
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Classifier hidden width [default: 32]
    #[arg(long)]
    mlp_dim: Option<usize>,
    /// Adam learning rate [default: 0.01]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Mini-batch size [default: 12]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Soft-resampling mixture weight in [0, 1] [default: 0.5]
    #[arg(long)]
    alpha: Option<f64>,
    /// Neighbours per node in the observation aggregate [default: 5]
    #[arg(long)]
    knn: Option<usize>,
    /// Likelihood bandwidth [default: 1]
    #[arg(long)]
    sigma: Option<f64>,
    /// Covariance shrinkage in (0, 1] [default: 0.1]
    #[arg(long)]
    shrinkage: Option<f64>,
    /// Per-row sparsification degree [default: ceil(R/10)]
    #[arg(long)]
    top_k: Option<usize>,
    /// Master seed [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on windows per sample [default: unlimited]
    #[arg(long)]
    max_windows: Option<usize>,
    /// Ensemble initialization noise scale [default: 0.05]
    #[arg(long)]
    init_noise: Option<f64>,
    /// ESS fraction that triggers resampling, in (0, 1] [default: 1]
    #[arg(long)]
    ess_trigger: Option<f64>,
    /// Epoch budget [default: 12]
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs without validation improvement before stopping [default: 4]
    #[arg(long)]
    patience: Option<usize>,
    /// Fold parallelism [default: 1]
    #[arg(long)]
    jobs: Option<usize>,
    /// Number of classes [default: 2]
    #[arg(long)]
    classes: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let overrides = ConfigOverrides {
            window_length: self.window_length,
            stride: self.stride,
            particles: self.particles,
            cheb_order: self.cheb_order,
            layers: self.layers,
            hidden_dim: self.hidden_dim,
            mlp_dim: self.mlp_dim,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            alpha: self.alpha,
            knn: self.knn,
            sigma: self.sigma,
            shrinkage: self.shrinkage,
            top_k: self.top_k,
            seed: self.seed,
            max_windows: self.max_windows,
            init_noise: self.init_noise,
            ess_trigger: self.ess_trigger,
            epochs: self.epochs,
            patience: self.patience,
            jobs: self.jobs,
            classes: self.classes,
        };
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Nodes per graph (divisible by 4)
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    /// Series length
    #[arg(long, default_value_t = 200)]
    length: usize,
    /// Regime switch time for class 1
    #[arg(long, default_value_t = 100)]
    switch: usize,
    /// White-noise scale on top of the unit-variance signal
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Samples per class
    #[arg(long, default_value_t = 200)]
    samples_per_class: usize,
    /// Generator seed
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct IngestArgs {
    /// Input time-series CSV (header of ROI labels, one row per timestamp)
    #[arg(long)]
    input: PathBuf,
    /// Manifest output path [default: manifest.toml next to the input]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also dump per-window adjacency and feature CSVs into this directory
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (labels.csv plus sample_NNNN.csv files)
    #[arg(long)]
    data: PathBuf,
    /// Run directory for config snapshot, checkpoints and CSVs
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory produced by train
    #[arg(long)]
    run: PathBuf,
    /// Dataset directory the run was trained on
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Run directory for ablation.csv
    #[arg(long)]
    out: PathBuf,
    /// Particle counts to sweep
    #[arg(long, value_delimiter = ',', default_value = "10,30,50")]
    particle_counts: Vec<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ValidateArgs {
    /// Particle count
    #[arg(long, default_value_t = 1000)]
    particles: usize,
    /// Soft-resampling mixture weight
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Trajectory length
    #[arg(long, default_value_t = 100)]
    horizon: usize,
    /// Simulation seed
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// Parses arguments and dispatches; the binary maps errors to exit codes.
pub fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(args) => cmd_synth(&args),
        Command::Ingest(args) => cmd_ingest(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::ValidateSmc(args) => cmd_validate_smc(&args),
    }
}

fn sample_file(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("sample_{id:04}.csv"))
}

/// Writes a dataset directory: spec.toml, labels.csv, one CSV per sample.
pub fn write_dataset(dir: &Path, spec: &SyntheticSpec, samples: &[LabeledSample]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let spec_text = toml::to_string_pretty(spec)
        .map_err(|e| Error::input(format!("cannot serialize spec: {e}")))?;
    std::fs::write(dir.join("spec.toml"), spec_text)?;
    let mut labels = String::from("sample_id,label\n");
    for s in samples {
        writeln!(labels, "{},{}", s.id, s.label).expect("string write");
        write_timeseries_csv(&sample_file(dir, s.id), &s.series, None)?;
    }
    std::fs::write(dir.join("labels.csv"), labels)?;
    Ok(())
}

/// Reads a dataset directory written by [`write_dataset`] (or assembled by
/// hand in the same layout).
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledSample>> {
    let labels_path = dir.join("labels.csv");
    let text = std::fs::read_to_string(&labels_path)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", labels_path.display())))?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(id), Some(label)) = (parts.next(), parts.next()) else {
            return Err(Error::input(format!(
                "labels.csv row {}: expected sample_id,label",
                i + 1
            )));
        };
        let id: usize = id.trim().parse().map_err(|_| {
            Error::input(format!("labels.csv row {}: cannot parse id {id:?}", i + 1))
        })?;
        let label: usize = label.trim().parse().map_err(|_| {
            Error::input(format!(
                "labels.csv row {}: cannot parse label {label:?}",
                i + 1
            ))
        })?;
        samples.push(LabeledSample {
            id,
            label,
            series: read_timeseries_csv(&sample_file(dir, id))?,
        });
    }
    if samples.is_empty() {
        return Err(Error::input(format!(
            "no samples listed in {}",
            labels_path.display()
        )));
    }
    Ok(samples)
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec::standard(
        args.nodes,
        args.length,
        args.switch,
        args.noise,
        args.samples_per_class,
        args.seed,
    )?;
    let samples = generate_synthetic(&spec)?;
    write_dataset(&args.out, &spec, &samples)?;
    println!(
        "wrote {} samples ({} per class) to {}",
        samples.len(),
        args.samples_per_class,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct WindowEntry {
    index: usize,
    start: usize,
    end: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    rois: usize,
    timestamps: usize,
    window_length: usize,
    stride: usize,
    windows: usize,
    window: Vec<WindowEntry>,
}

fn write_matrix_csv(path: &Path, m: &ndarray::Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", cells.join(",")).expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let series = read_timeseries_csv(&args.input)?;
    let spec = cfg.window_spec()?;
    let mut ranges = sliding_windows(&series, spec)?;
    if let Some(cap) = cfg.max_windows {
        ranges.truncate(cap);
    }
    let manifest = Manifest {
        rois: series.rois(),
        timestamps: series.timestamps(),
        window_length: spec.window_length,
        stride: spec.stride,
        windows: ranges.len(),
        window: ranges
            .iter()
            .enumerate()
            .map(|(index, r)| WindowEntry {
                index,
                start: r.start,
                end: r.end,
            })
            .collect(),
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.input.with_file_name("manifest.toml"));
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::input(format!("cannot serialize manifest: {e}")))?;
    std::fs::write(&out, text)?;
    println!("{} windows -> {}", ranges.len(), out.display());
    if let Some(dump) = &args.dump_dir {
        std::fs::create_dir_all(dump)?;
        let observations = graph_observations(
            &series,
            spec,
            cfg.shrinkage,
            cfg.top_k_for(series.rois()),
            cfg.max_windows,
        )?;
        for obs in &observations {
            write_matrix_csv(
                &dump.join(format!("adjacency_{:04}.csv", obs.window_index)),
                &obs.adjacency,
            )?;
            write_matrix_csv(
                &dump.join(format!("features_{:04}.csv", obs.window_index)),
                &obs.features,
            )?;
        }
        println!("dumped {} window graphs to {}", observations.len(), dump.display());
    }
    Ok(())
}

fn metric_row(out: &mut String, name: &str, values: [f64; 4]) {
    writeln!(
        out,
        "{name},{},{},{},{}",
        values[0], values[1], values[2], values[3]
    )
    .expect("string write");
}

fn results_csv(report: &MetricsReport) -> String {
    let mut out = String::from("fold,accuracy,sensitivity,specificity,auc\n");
    for f in &report.folds {
        metric_row(
            &mut out,
            &f.fold.to_string(),
            [f.accuracy, f.sensitivity, f.specificity, f.auc],
        );
    }
    metric_row(&mut out, "mean", report.mean);
    metric_row(&mut out, "std", report.std);
    out
}

fn predictions_csv(outcomes: &[FoldOutcome]) -> String {
    let mut out = String::from("sample_id,timestamp,class_0_prob,class_1_prob,label\n");
    for outcome in outcomes {
        for (record, (_, diags)) in outcome.records.iter().zip(outcome.diagnostics.iter()) {
            for (probs, diag) in record.per_step.iter().zip(diags.iter()) {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    record.sample_id, diag.window_index, probs[0], probs[1], record.label
                )
                .expect("string write");
            }
        }
    }
    out
}

fn diagnostics_csv(outcomes: &[FoldOutcome]) -> String {
    let mut out = String::from("sample_id,window_index,particle,weight,lineage,ess,resampled\n");
    for outcome in outcomes {
        for (sample_id, diags) in &outcome.diagnostics {
            for d in diags {
                for (p, (w, src)) in d.weights.iter().zip(&d.lineage).enumerate() {
                    writeln!(
                        out,
                        "{sample_id},{},{p},{w},{src},{},{}",
                        d.window_index, d.ess, d.resampled
                    )
                    .expect("string write");
                }
            }
        }
    }
    out
}

fn folds_csv(outcomes: &[FoldOutcome], prepared_ids: &[usize]) -> String {
    let mut out = String::from("sample_id,fold,role\n");
    for outcome in outcomes {
        let a = &outcome.assignment;
        for (role, indices) in [("train", &a.train), ("val", &a.val), ("test", &a.test)] {
            for &idx in indices {
                writeln!(out, "{},{},{role}", prepared_ids[idx], a.fold).expect("string write");
            }
        }
    }
    out
}

fn print_report(report: &MetricsReport) {
    for f in &report.folds {
        println!(
            "fold {}: accuracy {:.4} sensitivity {:.4} specificity {:.4} auc {:.4}",
            f.fold, f.accuracy, f.sensitivity, f.specificity, f.auc
        );
    }
    println!(
        "mean: accuracy {:.4}±{:.4} sensitivity {:.4}±{:.4} specificity {:.4}±{:.4} auc {:.4}±{:.4}",
        report.mean[0],
        report.std[0],
        report.mean[1],
        report.std[1],
        report.mean[2],
        report.std[2],
        report.mean[3],
        report.std[3]
    );
}

fn prepared_from(cfg: &RunConfig, data: &Path) -> Result<Vec<crate::harness::train::PreparedSample>> {
    let samples = load_dataset(data)?;
    let nodes = samples[0].series.rois();
    prepare_dataset(
        &samples,
        cfg.window_spec()?,
        cfg.shrinkage,
        cfg.top_k_for(nodes),
        cfg.max_windows,
    )
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let prepared = prepared_from(&cfg, &args.data)?;
    let nodes = prepared[0]
        .observations
        .first()
        .map(|o| o.nodes())
        .ok_or_else(|| Error::input("dataset has no windows"))?;
    let settings = cfg.train_settings(nodes);
    let (report, outcomes) = cross_validate(&prepared, &settings, 5)?;

    std::fs::create_dir_all(&args.out)?;
    cfg.save(&args.out.join("config.toml"))?;
    let ids: Vec<usize> = prepared.iter().map(|s| s.id).collect();
    std::fs::write(args.out.join("folds.csv"), folds_csv(&outcomes, &ids))?;
    std::fs::write(args.out.join("results.csv"), results_csv(&report))?;
    std::fs::write(args.out.join("predictions.csv"), predictions_csv(&outcomes))?;
    std::fs::write(args.out.join("diagnostics.csv"), diagnostics_csv(&outcomes))?;
    for outcome in &outcomes {
        save_checkpoint(
            &args.out.join(format!("model_fold{}.json", outcome.fold)),
            &outcome.model,
        )?;
    }
    print_report(&report);
    println!("run directory: {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = RunConfig::load(
        Some(&args.run.join("config.toml")),
        &ConfigOverrides::default(),
    )?;
    let prepared = prepared_from(&cfg, &args.data)?;
    let nodes = prepared[0]
        .observations
        .first()
        .map(|o| o.nodes())
        .ok_or_else(|| Error::input("dataset has no windows"))?;
    let settings = cfg.train_settings(nodes);

    let folds_path = args.run.join("folds.csv");
    let text = std::fs::read_to_string(&folds_path)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", folds_path.display())))?;
    let mut test_sets: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::input(format!(
                "folds.csv row {}: expected sample_id,fold,role",
                i + 1
            )));
        }
        if parts[2].trim() != "test" {
            continue;
        }
        let sample_id: usize = parts[0].trim().parse().map_err(|_| {
            Error::input(format!("folds.csv row {}: bad sample id {:?}", i + 1, parts[0]))
        })?;
        let fold: usize = parts[1].trim().parse().map_err(|_| {
            Error::input(format!("folds.csv row {}: bad fold {:?}", i + 1, parts[1]))
        })?;
        match test_sets.iter_mut().find(|(f, _)| *f == fold) {
            Some((_, ids)) => ids.push(sample_id),
            None => test_sets.push((fold, vec![sample_id])),
        }
    }
    test_sets.sort_by_key(|(f, _)| *f);

    let mut folds = Vec::new();
    for (fold, sample_ids) in &test_sets {
        let model = load_checkpoint(&args.run.join(format!("model_fold{fold}.json")))?;
        let mut pairs = Vec::new();
        let mut scores = Vec::new();
        for &sample_id in sample_ids {
            let sample = prepared
                .iter()
                .find(|s| s.id == sample_id)
                .ok_or_else(|| {
                    Error::input(format!("sample {sample_id} from folds.csv is not in the dataset"))
                })?;
            let run = run_sequence_plain(
                &sample.observations,
                &model,
                &settings.filter_for(sample.id),
            )?;
            let record = PredictionRecord::from_steps(sample.id, sample.label, &run.predictions)?;
            let predicted = if record.averaged[1] > record.averaged[0] { 1 } else { 0 };
            pairs.push((sample.label, predicted));
            scores.push((record.averaged[1], sample.label));
        }
        folds.push(FoldMetrics::from_predictions(*fold, &pairs, &scores)?);
    }
    let report = MetricsReport::from_folds(folds)?;
    std::fs::write(args.run.join("results_eval.csv"), results_csv(&report))?;
    print_report(&report);
    Ok(())
}

fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("particles,accuracy,auc,seconds\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.particles, r.accuracy, r.auc, r.seconds)
            .expect("string write");
    }
    out
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let prepared = prepared_from(&cfg, &args.data)?;
    let nodes = prepared[0]
        .observations
        .first()
        .map(|o| o.nodes())
        .ok_or_else(|| Error::input("dataset has no windows"))?;
    let settings = cfg.train_settings(nodes);
    let rows = ablate_particles(&prepared, &args.particle_counts, &settings, 5)?;
    std::fs::create_dir_all(&args.out)?;
    cfg.save(&args.out.join("config.toml"))?;
    std::fs::write(args.out.join("ablation.csv"), ablation_csv(&rows))?;
    for r in &rows {
        println!(
            "K={}: accuracy {:.4} auc {:.4} ({:.2}s)",
            r.particles, r.accuracy, r.auc, r.seconds
        );
    }
    Ok(())
}

fn cmd_validate_smc(args: &ValidateArgs) -> Result<()> {
    let spec = LinearGaussianSpec::standard(args.horizon, args.seed);
    let rmse = validate_filter(&spec, args.particles, args.alpha)?;
    let bound = rmse_bound(&spec);
    let pass = rmse <= bound;
    println!(
        "particles={} alpha={} horizon={} rmse={rmse:.6} bound={bound:.6} {}",
        args.particles,
        args.alpha,
        args.horizon,
        if pass { "PASS" } else { "FAIL" }
    );
    if !pass {
        return Err(Error::numerical(format!(
            "filter RMSE {rmse:.6} exceeds the bound {bound:.6}"
        )));
    }
    Ok(())
}
