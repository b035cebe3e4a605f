use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use dilate::data::{self, CsvLayout, CsvSource, SyntheticSpec};
use dilate::harness::{self, DatasetConfig, ExperimentConfig, ReportFormat};
use dilate::losses::{LossSpec, TangledPenalty};
use dilate::models::{self, MlpParams, TrainConfig};
use dilate::Error;

#[derive(Parser, Debug)]
#[command(name = "dilate", version, about = "Shape and time distortion loss for multi-step forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic benchmark as CSV plus a JSON sidecar.
    Generate(CommonArgs),
    /// Train one model and save its checkpoint and training trace.
    Train(CommonArgs),
    /// Evaluate a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train two losses over several runs and test the differences.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Loss compared against `--loss`.
        #[arg(long, value_enum, default_value = "mse")]
        versus: LossKind,
    },
    /// Train DILATE over a grid of alpha values.
    SweepAlpha {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5, 0.75, 1.0])]
        alphas: Vec<f64>,
    },
    /// Time the DP kernels and the finite-difference baseline.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = vec![16, 32, 64, 128])]
        k_values: Vec<usize>,
        #[arg(long, default_value_t = 15)]
        repeats: usize,
        #[arg(long, default_value_t = 20)]
        baseline_k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum LossKind {
    Mse,
    Dtw,
    Dilate,
    DilateTWeighted,
    DilateTBand,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum DatasetKind {
    Synthetic,
    Csv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Layout {
    Rows,
    Column,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// JSON experiment config; flags given explicitly are ignored when set.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "synthetic")]
    dataset: DatasetKind,
    #[arg(long)]
    csv_path: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "rows")]
    csv_layout: Layout,
    #[arg(long)]
    csv_header: bool,
    #[arg(long, default_value_t = 20)]
    input_len: usize,
    #[arg(long, default_value_t = 20)]
    horizon: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Series per synthetic split.
    #[arg(long, default_value_t = 500)]
    n_series: usize,
    /// Seed of the synthetic dataset (kept fixed across runs).
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, value_enum, default_value = "dilate")]
    loss: LossKind,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    #[arg(long, default_value_t = 1)]
    band_width: usize,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl CommonArgs {
    fn loss_spec(&self, kind: LossKind) -> LossSpec {
        let (alpha, gamma) = (self.alpha, self.gamma);
        match kind {
            LossKind::Mse => LossSpec::Mse,
            LossKind::Dtw => LossSpec::SoftDtw { gamma },
            LossKind::Dilate => LossSpec::Dilate { alpha, gamma },
            LossKind::DilateTWeighted => LossSpec::DilateTangled {
                alpha,
                gamma,
                penalty: TangledPenalty::Weighted,
            },
            LossKind::DilateTBand => LossSpec::DilateTangled {
                alpha,
                gamma,
                penalty: TangledPenalty::Band { width: self.band_width },
            },
        }
    }

    fn dataset(&self) -> anyhow::Result<DatasetConfig> {
        Ok(match self.dataset {
            DatasetKind::Synthetic => DatasetConfig::Synthetic(SyntheticSpec {
                n_train: self.n_series,
                n_valid: self.n_series,
                n_test: self.n_series,
                seed: self.data_seed,
                ..SyntheticSpec::default()
            }),
            DatasetKind::Csv => DatasetConfig::Csv(CsvSource {
                path: self
                    .csv_path
                    .clone()
                    .ok_or_else(|| Error::Usage("--csv-path is required with --dataset csv".into()))?,
                layout: match self.csv_layout {
                    Layout::Rows => CsvLayout::Rows,
                    Layout::Column => CsvLayout::Column,
                },
                has_header: self.csv_header,
                input_len: self.input_len,
                horizon: self.horizon,
                stride: self.stride,
                fractions: [0.6, 0.2, 0.2],
            }),
        })
    }

    fn experiment(&self, losses: Vec<LossSpec>) -> anyhow::Result<ExperimentConfig> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(Error::from)?;
            return Ok(cfg);
        }
        Ok(ExperimentConfig {
            dataset: self.dataset()?,
            train: TrainConfig {
                max_epochs: self.epochs,
                patience: self.patience,
                batch_size: self.batch_size,
                learning_rate: self.lr,
                seed: self.seed,
                loss: losses[0],
                ..TrainConfig::default()
            },
            losses,
            runs: self.runs,
            seed: self.seed,
            out: Some(self.out.clone()),
            save_checkpoints: false,
        })
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let DatasetConfig::Synthetic(spec) = args.dataset()? else {
                return Err(Error::Usage("generate only supports the synthetic dataset".into()).into());
            };
            let splits = data::generate_synthetic(&spec)?;
            for p in data::save_synthetic(&args.out, &spec, &splits)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Train(args) => {
            let cfg = args.experiment(vec![args.loss_spec(args.loss)])?;
            let splits = cfg.dataset.load()?;
            let train_cfg = TrainConfig {
                loss: cfg.losses[0],
                seed: cfg.seed,
                ..cfg.train
            };
            let outcome = models::train(&splits.train, &splits.valid, &train_cfg)?;
            let out = cfg.out.clone().unwrap_or_else(|| args.out.clone());
            ensure_dir(&out)?;
            let ckpt = out.join("model.ckpt");
            outcome.params.save(&ckpt)?;
            write_json(&out.join("trace.json"), &outcome.trace)?;
            println!(
                "trained {} epochs (best {} with valid loss {:.6}); wrote {}",
                outcome.trace.epochs.len(),
                outcome.trace.best_epoch,
                outcome.trace.best_valid_loss,
                ckpt.display()
            );
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = common.experiment(vec![common.loss_spec(common.loss)])?;
            let splits = cfg.dataset.load()?;
            let params = MlpParams::load(&checkpoint)?;
            let metrics = harness::evaluate_model(&params, &splits.test)?;
            ensure_dir(&common.out)?;
            write_json(&common.out.join("metrics.json"), &metrics)?;
            println!("{}", serde_json::to_string_pretty(&metrics).context("serialising metrics")?);
        }
        Command::Compare { common, versus } => {
            let cfg = common.experiment(vec![common.loss_spec(common.loss), common.loss_spec(versus)])?;
            let report = harness::run_experiment(&cfg)?;
            let out = cfg.out.clone().unwrap_or(common.out);
            for p in harness::emit_report(&report, &out, ReportFormat::Both)? {
                eprintln!("wrote {}", p.display());
            }
            print!("{}", harness::report_table(&report));
        }
        Command::SweepAlpha { common, alphas } => {
            let cfg = common.experiment(vec![common.loss_spec(LossKind::Dilate)])?;
            let rows = harness::sweep_alpha(&cfg, common.gamma, &alphas)?;
            let out = cfg.out.clone().unwrap_or(common.out);
            ensure_dir(&out)?;
            let csv = harness::sweep_csv(&rows);
            let path = out.join("sweep_alpha.csv");
            std::fs::write(&path, &csv).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            write_json(&out.join("sweep_alpha.json"), &rows)?;
            print!("{csv}");
        }
        Command::Bench {
            k_values,
            repeats,
            baseline_k,
            seed,
            out,
        } => {
            let report = harness::bench_kernels(&k_values, repeats, baseline_k, seed)?;
            println!("{:>6} {:>14} {:>14} {:>14}", "k", "forward (s)", "grad (s)", "jvp (s)");
            for r in &report.rows {
                println!("{:>6} {:>14.3e} {:>14.3e} {:>14.3e}", r.k, r.forward_secs, r.grad_secs, r.jvp_secs);
            }
            println!("scaling exponent: {:.3}", report.scaling_exponent);
            println!(
                "k={}: custom backward {:.3e}s, finite differences {:.3e}s, speedup x{:.1}",
                report.baseline_k, report.custom_backward_secs, report.finite_difference_secs, report.speedup
            );
            if let Some(dir) = out {
                ensure_dir(&dir)?;
                write_json(&dir.join("bench.json"), &report)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<Error>().map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
