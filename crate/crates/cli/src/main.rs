//! Command-line surface for the slim CNN pipeline: `split`, `summary`,
//! `train`, `evaluate`, and `explain`.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, malformed
//! ratios), 2 on runtime errors (I/O, bad data, failed training).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use slimcnn::checkpoint;
use slimcnn::data::{DatasetIndex, SplitCounts, SplitSpec};
use slimcnn::gradcam::CaseSource;
use slimcnn::metrics::{classification_report, confusion_matrix};
use slimcnn::model::{build_slim_cnn, LayerKind, Model};
use slimcnn::train::{evaluate_dataset, fit, init_weights, AdamConfig, FitConfig};

#[derive(Parser)]
#[command(
    name = "slimcnn",
    version,
    about = "Slim CNN MRI classifier: dataset splitting, training, evaluation, and Grad-CAM explanations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a class-per-folder image tree into train/val/test folders.
    Split {
        /// Source directory with one subfolder per class.
        #[arg(long)]
        src: PathBuf,
        /// Destination root; receives train/, val/, and test/.
        #[arg(long)]
        dst: PathBuf,
        /// Shuffle seed.
        #[arg(long, default_value_t = 888)]
        seed: u64,
        /// Train/val/test fractions; must sum to 1.
        #[arg(
            long,
            num_args = 3,
            value_names = ["TRAIN", "VAL", "TEST"],
            default_values_t = [0.8, 0.1, 0.1]
        )]
        ratios: Vec<f64>,
    },
    /// Print the model architecture table.
    Summary,
    /// Train on <DATA>/train, validating each epoch on <DATA>/val.
    Train {
        /// Split root containing train/ and val/.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        /// Mini-batch size.
        #[arg(long, default_value_t = 32)]
        batch: usize,
        /// Weight-init and shuffle seed.
        #[arg(long, default_value_t = 888)]
        seed: u64,
        /// Adam learning rate.
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        /// Output directory for epoch checkpoints and history.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on <DATA>/test.
    Evaluate {
        /// Split root containing test/.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file written by `train`.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 32)]
        batch: usize,
    },
    /// Render Grad-CAM heatmaps for explicit cases or sampled test images.
    Explain {
        /// Checkpoint file written by `train`.
        #[arg(long)]
        ckpt: PathBuf,
        /// Explicit case image paths.
        #[arg(long, num_args = 1.., conflicts_with = "data")]
        cases: Vec<PathBuf>,
        /// Split root (samples from its test/ subfolder, or from the
        /// directory itself when it has no test/).
        #[arg(long, required_unless_present = "cases")]
        data: Option<PathBuf>,
        /// Number of cases to sample from the dataset.
        #[arg(long, default_value_t = 4)]
        m: usize,
        /// Heatmap blend weight.
        #[arg(long, default_value_t = 0.4)]
        alpha: f32,
        /// Case-sampling seed.
        #[arg(long, default_value_t = 888)]
        seed: u64,
        /// Output directory for per-case PNGs and cases_grid.png.
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Runtime(slimcnn::Error),
}

impl From<slimcnn::Error> for CliError {
    fn from(e: slimcnn::Error) -> CliError {
        CliError::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Split {
            src,
            dst,
            seed,
            ratios,
        } => {
            let sum: f64 = ratios.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|r| *r < 0.0) {
                return Err(CliError::Usage(format!(
                    "ratios must be non-negative and sum to 1 (got {ratios:?})"
                )));
            }
            let spec = SplitSpec::new((ratios[0], ratios[1], ratios[2]), seed)?;
            let counts = slimcnn::data::split_folders(&src, &dst, &spec)?;
            print!("{}", counts_table(&counts));
            Ok(())
        }
        Command::Summary => {
            println!("{}", build_slim_cnn().summary());
            Ok(())
        }
        Command::Train {
            data,
            epochs,
            batch,
            seed,
            lr,
            out,
        } => {
            if batch == 0 {
                return Err(CliError::Usage("--batch must be at least 1".into()));
            }
            if !(lr.is_finite() && lr > 0.0) {
                return Err(CliError::Usage("--lr must be a positive number".into()));
            }
            let train_ds = DatasetIndex::from_dir(&data.join("train"))?;
            let val_ds = DatasetIndex::from_dir(&data.join("val"))?;
            let mut model = build_slim_cnn();
            check_classes(&model, &train_ds)?;
            check_classes(&model, &val_ds)?;
            init_weights(&mut model, seed);
            println!(
                "training on {} images, validating on {} ({} classes)",
                train_ds.len(),
                val_ds.len(),
                train_ds.num_classes()
            );
            println!(
                "epochs {epochs}, batch {batch}, lr {lr}, seed {seed} -> {}",
                out.display()
            );
            println!("per-epoch progress is appended to {}", out.join("history.csv").display());
            let cfg = FitConfig {
                epochs,
                batch_size: batch,
                adam: AdamConfig {
                    lr,
                    ..AdamConfig::default()
                },
                seed,
                out_dir: out,
            };
            let history = fit(&mut model, &train_ds, &val_ds, &cfg)?;
            for e in &history.epochs {
                println!(
                    "epoch {:>3}: train loss {:.4} acc {:.4} | val loss {:.4} acc {:.4}",
                    e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc
                );
            }
            Ok(())
        }
        Command::Evaluate { data, ckpt, batch } => {
            if batch == 0 {
                return Err(CliError::Usage("--batch must be at least 1".into()));
            }
            let model = checkpoint::load(&ckpt)?;
            let test_ds = DatasetIndex::from_dir(&data.join("test"))?;
            check_classes(&model, &test_ds)?;
            let eval = evaluate_dataset(&model, &test_ds, batch)?;
            let cm = confusion_matrix(&eval.truths, &eval.preds, test_ds.num_classes())?;
            println!("confusion matrix (rows = true class):");
            print!("{}", cm.to_text(&test_ds.classes));
            println!();
            let report = classification_report(&cm, &test_ds.classes)?;
            print!("{}", report.to_text());
            println!();
            println!("test loss: {:.4}", eval.loss);
            println!("test accuracy: {}", report.accuracy_4dp());
            Ok(())
        }
        Command::Explain {
            ckpt,
            cases,
            data,
            m,
            alpha,
            seed,
            out,
        } => {
            if !(alpha.is_finite() && alpha >= 0.0) {
                return Err(CliError::Usage("--alpha must be non-negative".into()));
            }
            if m == 0 {
                return Err(CliError::Usage("--m must be at least 1".into()));
            }
            let model = checkpoint::load(&ckpt)?;
            let last_conv = last_conv_name(&model)?;
            let source = if cases.is_empty() {
                let root = data.expect("clap enforces --data when --cases is absent");
                let test = root.join("test");
                let dir = if test.is_dir() { test } else { root };
                CaseSource::Sample { dir, m, seed }
            } else {
                CaseSource::Paths(cases)
            };
            let explanations =
                slimcnn::gradcam::render_cases(&model, &source, &last_conv, alpha, None)?;
            let written = explanations.write_to(&out)?;
            for (case, path) in explanations.cases.iter().zip(&written) {
                let truth = case
                    .truth
                    .map_or("?".to_string(), |t| explanations.class_names[t].clone());
                println!(
                    "{}: predicted {} (true {truth})",
                    path.display(),
                    explanations.class_names[case.predicted]
                );
            }
            println!("{}", written.last().expect("grid is always written").display());
            Ok(())
        }
    }
}

/// Per-class split counts plus a totals row, aligned for the console.
fn counts_table(counts: &SplitCounts) -> String {
    let name_w = counts
        .classes
        .iter()
        .map(|c| c.len())
        .max()
        .unwrap_or(0)
        .max("total".len());
    let mut out = format!(
        "{:name_w$}  {:>7}  {:>7}  {:>7}  {:>7}\n",
        "class", "train", "val", "test", "total"
    );
    for (name, row) in counts.classes.iter().zip(&counts.per_class) {
        out.push_str(&format!(
            "{name:name_w$}  {:>7}  {:>7}  {:>7}  {:>7}\n",
            row[0],
            row[1],
            row[2],
            row[0] + row[1] + row[2]
        ));
    }
    let totals = counts.totals();
    out.push_str(&format!(
        "{:name_w$}  {:>7}  {:>7}  {:>7}  {:>7}\n",
        "total",
        totals[0],
        totals[1],
        totals[2],
        totals[0] + totals[1] + totals[2]
    ));
    out
}

fn check_classes(model: &Model, ds: &DatasetIndex) -> Result<(), CliError> {
    if ds.num_classes() != model.num_classes() {
        return Err(CliError::Runtime(slimcnn::Error::InvalidArgument(format!(
            "the model has {} output classes but the dataset has {} class folders",
            model.num_classes(),
            ds.num_classes()
        ))));
    }
    Ok(())
}

/// Name of the deepest convolution layer — the Grad-CAM target.
fn last_conv_name(model: &Model) -> Result<String, CliError> {
    model
        .layers()
        .iter()
        .rev()
        .find(|l| matches!(l.kind, LayerKind::Conv2d { .. }))
        .map(|l| l.name.clone())
        .ok_or_else(|| {
            CliError::Runtime(slimcnn::Error::InvalidArgument(
                "the checkpointed model has no convolution layers".into(),
            ))
        })
}
