use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rsmatch::benchgen::{build_benchmark, make_toy, BuildOptions, ProceduralConfig, ToyConfig};
use rsmatch::config::load_config;
use rsmatch::engine::run::{BEST_CHECKPOINT, EVALS_FILE, LAST_CHECKPOINT, STEPS_FILE};
use rsmatch::engine::{run_training, Checkpoint, RunOptions, StepReport, TrainData};
use rsmatch::evalcli::plot::write_line_chart;
use rsmatch::evalcli::{
    evaluate_classifier, evaluate_detector, evaluate_detector_full, export_embeddings, run_ablation, utilization_ratio, AblationGrid,
    EmbeddingRecord, MetricSeries,
};
use rsmatch::manifest::load_benchmark;
use rsmatch::nets::ModelBundle;
use rsmatch::{Error, Result};

#[derive(Parser)]
#[command(name = "rsmatch", version, about = "Semi-supervised training with synthetic-image contamination")]
struct Cli {
    /// Disable data-parallel execution.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the toy real dataset.
    MakeToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 525)]
        train_per_class: usize,
        #[arg(long, default_value_t = 100)]
        test_per_class: usize,
        /// Pixel noise standard deviation.
        #[arg(long, default_value_t = 0.15)]
        noise: f64,
        /// Chance of a small distractor shape from another class.
        #[arg(long, default_value_t = 0.5)]
        clutter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mix synthetic images into a real dataset.
    BuildBenchmark {
        /// Real-image manifest; `split = test` records become the test set.
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        labels_per_class: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        prompts_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML file with procedural generator parameters.
        #[arg(long)]
        generator_config: Option<PathBuf>,
    },
    /// Train on a benchmark directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        /// Parent directory; the run goes to `<out>/<method>-<config hash>`.
        #[arg(long)]
        out: PathBuf,
        /// Also log detector accuracy on the unlabeled set at each evaluation.
        #[arg(long)]
        track_detector: bool,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
    },
    /// Run a one-axis ablation grid.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot metric files (step logs or series JSON lines) to SVG.
    Plot {
        #[arg(long, num_args = 1.., required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "metrics")]
        title: String,
    },
    /// Write encoder features of benchmark images as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Unlabeled)]
        split: SplitArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Labeled,
    Unlabeled,
    Test,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.sequential {
        rsmatch::exec::set_parallel(false);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_data(benchmark: &Path, num_classes: usize) -> Result<(rsmatch::manifest::LoadedManifest, TrainData, rsmatch::engine::EvalSet)> {
    let manifest = load_benchmark(benchmark)?;
    let (data, test) = TrainData::load(&manifest, num_classes)?;
    Ok((manifest, data, test))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::MakeToy {
            out,
            classes,
            size,
            train_per_class,
            test_per_class,
            noise,
            clutter,
            seed,
        } => {
            let cfg = ToyConfig {
                num_classes: classes,
                size,
                train_per_class,
                test_per_class,
                noise,
                clutter_probability: clutter,
                seed,
            };
            let recs = make_toy(&cfg, &out)?;
            println!("wrote {} images to {}", recs.len(), out.display());
        }
        Command::BuildBenchmark {
            real,
            alpha,
            labels_per_class,
            out,
            prompts_per_class,
            seed,
            generator_config,
        } => {
            let procedural = match generator_config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|source| Error::Io { path: p.clone(), source })?;
                    toml::from_str(&text).map_err(|e| Error::ConfigParse {
                        line: 0,
                        message: e.to_string(),
                    })?
                }
                None => ProceduralConfig::default(),
            };
            let meta = build_benchmark(&BuildOptions {
                real_manifest: real,
                alpha,
                labeled_per_class: labels_per_class,
                prompts_per_class,
                seed,
                procedural,
                out: out.clone(),
            })?;
            println!("{}", serde_json::to_string_pretty(&meta.mix)?);
        }
        Command::Train {
            config,
            benchmark,
            out,
            track_detector,
        } => {
            let cfg = load_config(&config)?;
            let (manifest, data, test) = load_data(&benchmark, cfg.num_classes)?;
            let dir = out.join(format!("{}-{}", method_name(&cfg), cfg.hash()));
            let probe = |m: &ModelBundle| evaluate_detector(m, &data.unlabeled, &data.unlabeled_ids, &manifest.sidecar);
            let outcome = run_training(
                &cfg,
                &data,
                &test,
                RunOptions {
                    out_dir: Some(&dir),
                    detector_probe: (track_detector && cfg.method == rsmatch::config::Method::RsMatch).then_some(&probe as _),
                },
            )?;
            println!(
                "run {}: {} steps, best test accuracy {}",
                dir.display(),
                outcome.reports.len(),
                outcome.best_accuracy().map_or("n/a".into(), |a| format!("{a:.4}"))
            );
            println!("  {}", dir.join(STEPS_FILE).display());
            println!("  {}", dir.join(EVALS_FILE).display());
            println!("  {}", dir.join(LAST_CHECKPOINT).display());
            if outcome.best.is_some() {
                println!("  {}", dir.join(BEST_CHECKPOINT).display());
            }
        }
        Command::Eval { checkpoint, benchmark } => {
            let ck = Checkpoint::read(&checkpoint)?;
            let (manifest, data, test) = load_data(&benchmark, ck.header.num_classes)?;
            let accuracy = evaluate_classifier(&ck.load_inference()?, &test)?;
            let detector = if ck.header.has_detector {
                let d = evaluate_detector_full(&ck.load_models()?, &data.unlabeled, &data.unlabeled_ids, &manifest.sidecar)?;
                Some(serde_json::json!({
                    "accuracy": d.accuracy(),
                    "recall": d.recall(),
                    "false_alarm_rate": d.false_alarm_rate(),
                    "counts": d,
                }))
            } else {
                None
            };
            let out = serde_json::json!({
                "checkpoint": checkpoint,
                "iteration": ck.header.iteration,
                "test_accuracy": accuracy,
                "detector_accuracy": detector,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Ablate { grid, benchmark, out } => {
            let text = std::fs::read_to_string(&grid).map_err(|source| Error::Io { path: grid.clone(), source })?;
            let grid = AblationGrid::parse(&text)?;
            let (manifest, data, test) = load_data(&benchmark, grid.base.num_classes)?;
            let dir = out.join(format!("ablate-{}-{}", grid.axis.name(), grid.base.hash()));
            let (table, _) = run_ablation(&grid, &data, &test, &manifest.sidecar, Some(&dir))?;
            print!("{}", table.to_csv());
            println!("outputs in {}", dir.display());
        }
        Command::Plot { metrics, out, title } => {
            let mut series = Vec::new();
            for path in &metrics {
                series.extend(read_series(path)?);
            }
            write_line_chart(&out, &series, &title, "value")?;
            println!("wrote {}", out.display());
        }
        Command::ExportEmbeddings {
            checkpoint,
            benchmark,
            out,
            split,
        } => {
            let ck = Checkpoint::read(&checkpoint)?;
            let model = ck.load_inference()?;
            let (manifest, data, test) = load_data(&benchmark, ck.header.num_classes)?;
            let records: Vec<EmbeddingRecord> = match split {
                SplitArg::Labeled => data
                    .labeled
                    .iter()
                    .zip(&data.labeled_ids)
                    .zip(&data.labels)
                    .map(|((image, id), &l)| EmbeddingRecord { id, class: Some(l), image })
                    .collect(),
                SplitArg::Unlabeled => data
                    .unlabeled
                    .iter()
                    .zip(&data.unlabeled_ids)
                    .map(|(image, id)| EmbeddingRecord { id, class: None, image })
                    .collect(),
                SplitArg::Test => test
                    .images
                    .iter()
                    .zip(&test.ids)
                    .zip(&test.labels)
                    .map(|((image, id), &l)| EmbeddingRecord { id, class: Some(l), image })
                    .collect(),
            };
            let n = export_embeddings(&model, &records, Some(&manifest.sidecar), &out)?;
            println!("wrote {n} rows to {}", out.display());
        }
    }
    Ok(())
}

fn method_name(cfg: &rsmatch::config::TrainConfig) -> &'static str {
    match cfg.method {
        rsmatch::config::Method::RsMatch => "rsmatch",
        rsmatch::config::Method::FixMatch => "fixmatch",
    }
}

/// Series JSON lines as-is; step logs become utilization and loss curves.
fn read_series(path: &Path) -> Result<Vec<MetricSeries>> {
    if let Ok(s) = MetricSeries::read_jsonl(path) {
        if !s.is_empty() {
            return Ok(s);
        }
    }
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reports: Vec<StepReport> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?;
    let tag = path.display().to_string();
    let (mut real, mut dummy) = utilization_ratio(&reports, "", &tag)?;
    real.name = format!("{tag} real");
    dummy.name = format!("{tag} dummy");
    Ok(vec![real, dummy])
}
