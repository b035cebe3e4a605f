//! Experiment driver: multi-run training and evaluation, loss comparisons
//! with Welch tests, alpha sweeps, kernel benchmarks and report emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, CsvSource, DatasetSplits, SyntheticSpec};
use crate::dp::{self, CostMatrix};
use crate::error::{Error, Result};
use crate::losses::{LossSpec, PenaltyMatrix};
use crate::metrics::{self, MetricValues, WelchTest};
use crate::models::{self, TrainConfig};
use crate::series::{SquareMatrix, TimeSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    Csv(CsvSource),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic(SyntheticSpec::default())
    }
}

impl DatasetConfig {
    pub fn load(&self) -> Result<DatasetSplits> {
        match self {
            DatasetConfig::Synthetic(spec) => data::generate_synthetic(spec),
            DatasetConfig::Csv(src) => data::load_csv_dataset(src),
        }
    }
}

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Training settings; `loss` and `seed` are overridden per run.
    pub train: TrainConfig,
    /// One entry for a plain run, two for a comparison.
    pub losses: Vec<LossSpec>,
    pub runs: usize,
    /// Model seed of run `i` is `seed + i`; the dataset seed stays fixed.
    pub seed: u64,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            losses: vec![LossSpec::Mse],
            runs: 1,
            seed: 0,
            out: None,
            save_checkpoints: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::usage("runs must be at least 1"));
        }
        if self.losses.is_empty() {
            return Err(Error::usage("at least one loss is required"));
        }
        for l in &self.losses {
            l.validate()?;
        }
        self.train.validate()
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub loss: String,
    pub run_index: usize,
    pub seed: u64,
    /// `None` if training failed; such runs are excluded from aggregates.
    pub metrics: Option<MetricValues>,
    pub failure: Option<String>,
    pub epochs_trained: usize,
    pub best_epoch: usize,
    pub best_valid_loss: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; zero for a single value.
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std })
    }
}

/// Aggregated metrics of one loss configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub loss: String,
    pub spec: LossSpec,
    pub completed_runs: usize,
    pub failed_runs: usize,
    pub metrics: BTreeMap<String, MeanStd>,
    pub runs: Vec<RunArtifact>,
}

impl LossSummary {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).map(|m| m.mean)
    }

    pub fn values(&self, metric: &str) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|r| r.metrics.as_ref().and_then(|m| m.get(metric)))
            .collect()
    }
}

/// Welch test of every metric between the first two losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub first: String,
    pub second: String,
    pub tests: BTreeMap<String, WelchTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub dataset_provenance: String,
    pub seed_policy: String,
    pub summaries: Vec<LossSummary>,
    pub comparison: Option<Comparison>,
    pub notices: Vec<String>,
}

impl ExperimentReport {
    pub fn summary(&self, index: usize) -> &LossSummary {
        &self.summaries[index]
    }
}

/// Test-set metrics of trained parameters.
pub fn evaluate_model(params: &models::MlpParams, test: &data::Dataset) -> Result<MetricValues> {
    let preds = models::predict(params, test)?;
    let mut acc = MetricValues::default();
    for (i, p) in preds.iter().enumerate() {
        let pred = TimeSeries::univariate(p).map_err(|_| Error::Training("non-finite prediction".into()))?;
        let target = TimeSeries::univariate(test.target(i))?;
        let m = metrics::evaluate_pair(&pred, &target)?;
        acc.mse += m.mse;
        acc.dtw += m.dtw;
        acc.tdi += m.tdi;
        acc.ramp += m.ramp;
        acc.hausdorff += m.hausdorff;
    }
    let n = preds.len() as f64;
    Ok(MetricValues {
        mse: acc.mse / n,
        dtw: acc.dtw / n,
        tdi: acc.tdi / n,
        ramp: acc.ramp / n,
        hausdorff: acc.hausdorff / n,
    })
}

fn run_one(
    splits: &DatasetSplits,
    base: &TrainConfig,
    loss: LossSpec,
    run_index: usize,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<RunArtifact> {
    let start = Instant::now();
    let cfg = TrainConfig { loss, seed, ..*base };
    let mut artifact = RunArtifact {
        loss: loss.label(),
        run_index,
        seed,
        metrics: None,
        failure: None,
        epochs_trained: 0,
        best_epoch: 0,
        best_valid_loss: None,
        checkpoint: None,
        wall_clock_secs: 0.0,
    };
    let outcome = models::train(&splits.train, &splits.valid, &cfg).and_then(|o| {
        let m = evaluate_model(&o.params, &splits.test)?;
        Ok((o, m))
    });
    match outcome {
        Ok((o, m)) => {
            artifact.metrics = Some(m);
            artifact.epochs_trained = o.trace.epochs.len();
            artifact.best_epoch = o.trace.best_epoch;
            artifact.best_valid_loss = Some(o.trace.best_valid_loss);
            if let Some(dir) = checkpoint_dir {
                let path = dir.join(format!("{}_run{run_index}.ckpt", sanitize(&artifact.loss)));
                o.params.save(&path)?;
                artifact.checkpoint = Some(path);
            }
        }
        Err(Error::Training(msg)) => artifact.failure = Some(msg),
        Err(e) => return Err(e),
    }
    artifact.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(artifact)
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn summarize(loss: LossSpec, runs: Vec<RunArtifact>) -> LossSummary {
    let completed: Vec<&MetricValues> = runs.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let mut metrics = BTreeMap::new();
    for name in MetricValues::NAMES {
        let vals: Vec<f64> = completed.iter().filter_map(|m| m.get(name)).collect();
        if let Some(ms) = MeanStd::of(&vals) {
            metrics.insert(name.to_string(), ms);
        }
    }
    LossSummary {
        loss: loss.label(),
        spec: loss,
        completed_runs: completed.len(),
        failed_runs: runs.len() - completed.len(),
        metrics,
        runs,
    }
}

/// Train `runs` models per loss on a shared dataset and evaluate them on the
/// test split. Independent runs execute on a small thread pool; results are
/// collected in a fixed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let splits = config.dataset.load()?;
    run_experiment_on(config, &splits)
}

/// [`run_experiment`] on already loaded data.
pub fn run_experiment_on(config: &ExperimentConfig, splits: &DatasetSplits) -> Result<ExperimentReport> {
    config.validate()?;
    let ckpt_dir = match (&config.out, config.save_checkpoints) {
        (Some(out), true) => {
            let d = out.join("checkpoints");
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            Some(d)
        }
        _ => None,
    };

    let jobs: Vec<(usize, usize)> = (0..config.losses.len())
        .flat_map(|l| (0..config.runs).map(move |r| (l, r)))
        .collect();
    let results = parallel_map(&jobs, |&(l, r)| {
        run_one(
            splits,
            &config.train,
            config.losses[l],
            r,
            config.seed + r as u64,
            ckpt_dir.as_deref(),
        )
    });
    let mut per_loss: Vec<Vec<RunArtifact>> = vec![Vec::new(); config.losses.len()];
    for ((l, _), res) in jobs.iter().zip(results) {
        per_loss[*l].push(res?);
    }

    let summaries: Vec<LossSummary> = config
        .losses
        .iter()
        .zip(per_loss)
        .map(|(spec, runs)| summarize(*spec, runs))
        .collect();

    let mut notices = Vec::new();
    for s in &summaries {
        if s.failed_runs > 0 {
            notices.push(format!("{}: {} run(s) failed and were excluded", s.loss, s.failed_runs));
        }
    }
    let comparison = if summaries.len() >= 2 {
        let (a, b) = (&summaries[0], &summaries[1]);
        if a.completed_runs >= 2 && b.completed_runs >= 2 {
            let mut tests = BTreeMap::new();
            for name in MetricValues::NAMES {
                tests.insert(name.to_string(), metrics::welch_t_test(&a.values(name), &b.values(name))?);
            }
            Some(Comparison {
                first: a.loss.clone(),
                second: b.loss.clone(),
                tests,
            })
        } else {
            notices.push("fewer than two completed runs per loss; significance tests skipped".into());
            None
        }
    } else {
        if config.runs < 2 {
            notices.push("single run; standard deviations are zero and no significance test applies".into());
        }
        None
    };

    Ok(ExperimentReport {
        config: config.clone(),
        dataset_provenance: splits.train.provenance.clone(),
        seed_policy: "dataset seed fixed; model seed = base seed + run index".into(),
        summaries,
        comparison,
        notices,
    })
}

/// Order-preserving map over a bounded pool of scoped threads.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let collected = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                collected.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// One row of an alpha sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub mse: MeanStd,
    pub dtw: MeanStd,
    pub tdi: MeanStd,
    pub completed_runs: usize,
}

/// Train DILATE for every alpha of the grid and report test MSE, DTW and TDI.
pub fn sweep_alpha(config: &ExperimentConfig, gamma: f64, alphas: &[f64]) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() {
        return Err(Error::usage("alpha grid is empty"));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::usage(format!("alpha {a} outside [0, 1]")));
    }
    let splits = config.dataset.load()?;
    let cfg = ExperimentConfig {
        losses: alphas.iter().map(|&alpha| LossSpec::Dilate { alpha, gamma }).collect(),
        ..config.clone()
    };
    let report = run_experiment_on(&cfg, &splits)?;
    sweep_rows(alphas, &report)
}

pub fn sweep_rows(alphas: &[f64], report: &ExperimentReport) -> Result<Vec<SweepRow>> {
    alphas
        .iter()
        .zip(&report.summaries)
        .map(|(&alpha, s)| {
            let get = |m: &str| {
                s.metrics
                    .get(m)
                    .copied()
                    .ok_or_else(|| Error::Training(format!("no completed run for alpha {alpha}")))
            };
            Ok(SweepRow {
                alpha,
                mse: get("mse")?,
                dtw: get("dtw")?,
                tdi: get("tdi")?,
                completed_runs: s.completed_runs,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,mse_mean,mse_std,dtw_mean,dtw_std,tdi_mean,tdi_std,runs\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.alpha, r.mse.mean, r.mse.std, r.dtw.mean, r.dtw.std, r.tdi.mean, r.tdi.std, r.completed_runs
        );
    }
    out
}

/// Median timings of the analytic kernels for one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelTiming {
    pub k: usize,
    pub forward_secs: f64,
    pub grad_secs: f64,
    pub jvp_secs: f64,
}

impl KernelTiming {
    pub fn total(&self) -> f64 {
        self.forward_secs + self.grad_secs + self.jvp_secs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<KernelTiming>,
    /// Slope of log(total kernel time) against log(k).
    pub scaling_exponent: f64,
    pub baseline_k: usize,
    /// Forward plus backward pass producing the full cost gradient.
    pub custom_backward_secs: f64,
    /// Central finite differences over every cost entry (`2 k^2` forwards).
    pub finite_difference_secs: f64,
    pub speedup: f64,
}

fn random_cost(k: usize, rng: &mut ChaCha8Rng, gamma: f64) -> Result<CostMatrix> {
    let a: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
    let b: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
    dp::pairwise_cost(&TimeSeries::univariate(&a)?, &TimeSeries::univariate(&b)?, gamma)
}

/// Median seconds per call, timing batches large enough to dwarf clock noise.
fn median_secs(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let calib = Instant::now();
    f()?;
    let once = calib.elapsed().as_secs_f64().max(1e-9);
    let inner = ((2e-3 / once).ceil() as usize).clamp(1, 100_000);
    let mut samples = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        for _ in 0..inner {
            f()?;
        }
        samples.push(t.elapsed().as_secs_f64() / inner as f64);
    }
    samples.sort_by(f64::total_cmp);
    Ok(samples[samples.len() / 2])
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Time forward, gradient and Hessian-vector kernels over `k_values`, and the
/// custom backward against a finite-difference gradient at `baseline_k`.
pub fn bench_kernels(k_values: &[usize], repeats: usize, baseline_k: usize, seed: u64) -> Result<BenchReport> {
    if k_values.len() < 2 || k_values.iter().any(|&k| k < 2) || baseline_k < 2 {
        return Err(Error::usage("benchmark needs at least two horizons, each >= 2"));
    }
    let gamma = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &k in k_values {
        let cost = random_cost(k, &mut rng, gamma)?;
        let omega = PenaltyMatrix::squared(k);
        let forward_secs = median_secs(repeats, || dp::soft_dtw_forward(&cost).map(|_| ()))?;
        let (_, tables) = dp::soft_dtw_forward(&cost)?;
        let grad_secs = median_secs(repeats, || {
            let mut t = tables.clone();
            dp::soft_dtw_grad(&cost, &mut t).map(|_| ())
        })?;
        let mut with_e = tables.clone();
        dp::soft_dtw_grad(&cost, &mut with_e)?;
        let jvp_secs = median_secs(repeats, || {
            let mut t = with_e.clone();
            dp::grad_jvp_with_tables(&cost, &mut t, omega.matrix()).map(|_| ())
        })?;
        rows.push(KernelTiming {
            k,
            forward_secs,
            grad_secs,
            jvp_secs,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let ys: Vec<f64> = rows.iter().map(KernelTiming::total).collect();
    let scaling_exponent = loglog_slope(&xs, &ys);

    let cost = random_cost(baseline_k, &mut rng, gamma)?;
    let custom_backward_secs = median_secs(repeats, || {
        let (_, mut t) = dp::soft_dtw_forward(&cost)?;
        dp::soft_dtw_grad(&cost, &mut t).map(|_| ())
    })?;
    let finite_difference_secs = median_secs(repeats.min(5), || finite_difference_grad(&cost, 1e-6).map(|_| ()))?;
    Ok(BenchReport {
        rows,
        scaling_exponent,
        baseline_k,
        custom_backward_secs,
        finite_difference_secs,
        speedup: finite_difference_secs / custom_backward_secs,
    })
}

/// Soft-DTW gradient by central differences on every cost entry.
pub fn finite_difference_grad(cost: &CostMatrix, step: f64) -> Result<SquareMatrix> {
    let k = cost.size();
    let mut out = SquareMatrix::zeros(k);
    let mut delta = cost.delta().clone();
    for i in 0..k {
        for j in 0..k {
            let orig = delta.get(i, j);
            delta.set(i, j, orig + step);
            let plus = dp::soft_dtw_forward(&CostMatrix::new(delta.clone(), cost.gamma())?)?.0;
            delta.set(i, j, (orig - step).max(0.0));
            let lo = orig - (orig - step).max(0.0);
            let minus = dp::soft_dtw_forward(&CostMatrix::new(delta.clone(), cost.gamma())?)?.0;
            delta.set(i, j, orig);
            out.set(i, j, (plus - minus) / (step + lo));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
    Both,
}

/// Machine-readable report (full precision).
pub fn report_json(report: &ExperimentReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

fn scale_for(metric: &str) -> (f64, &'static str) {
    match metric {
        "mse" => (100.0, "MSE (x100)"),
        "dtw" => (100.0, "DTW (x100)"),
        "tdi" => (10.0, "TDI (x10)"),
        "ramp" => (1.0, "Ramp"),
        "hausdorff" => (1.0, "Hausdorff"),
        _ => (1.0, "?"),
    }
}

/// Aligned text table: one column per loss, one row per metric, `mean ± std`.
pub fn report_table(report: &ExperimentReport) -> String {
    let mut header = vec!["Eval".to_string()];
    header.extend(report.summaries.iter().map(|s| s.loss.clone()));
    let mut rows = vec![header];
    for name in MetricValues::NAMES {
        let (scale, label) = scale_for(name);
        let mut row = vec![label.to_string()];
        for s in &report.summaries {
            row.push(match s.metrics.get(name) {
                Some(ms) => format!("{:.3} ± {:.3}", ms.mean * scale, ms.std * scale),
                None => "n/a".into(),
            });
        }
        if let Some(c) = &report.comparison {
            let sig = c.tests.get(name).is_some_and(|t| t.significant);
            row.push(if sig { "*".into() } else { String::new() });
        }
        rows.push(row);
    }
    if report.comparison.is_some() {
        rows[0].push("p<0.05".into());
    }
    let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s}{}", " ".repeat(widths[c] - s.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
        }
    }
    for n in &report.notices {
        let _ = writeln!(out, "note: {n}");
    }
    out
}

/// Write `report.json` and/or `report.txt` into `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    if report.summaries.iter().all(|s| s.runs.is_empty()) {
        return Err(Error::usage("no run artifacts to report"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        let path = dir.join("report.json");
        std::fs::write(&path, report_json(report)?).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    if matches!(format, ReportFormat::Text | ReportFormat::Both) {
        let path = dir.join("report.txt");
        std::fs::write(&path, report_table(report)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
