use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use cps_sentinel::benchmark::simulate_splits;
use cps_sentinel::config::PipelineConfig;
use cps_sentinel::dataio::{load_csv_inferred, TimeSeriesFrame};
use cps_sentinel::detectors::VerdictSeries;
use cps_sentinel::errorspace::{augment, embed, ErrorSeries};
use cps_sentinel::gaopt::{evolve, threads_from_env, PipelineEvaluator};
use cps_sentinel::metrics::score;
use cps_sentinel::pipeline::{labels_at, Pipeline};
use cps_sentinel::{Error, Result};
use log::info;

/// Prediction-error anomaly detection for plant sensor/actuator traces.
#[derive(Debug, Parser)]
#[command(name = "cps-sentinel", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the configured plant and write normal and attacked CSVs.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the forecaster and detector; write the artifact and history.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a CSV with a trained artifact.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare verdicts against labels (a labeled data CSV or a verdict CSV).
    Evaluate {
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Search hyperparameters with the genetic algorithm.
    Optimize {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write plot-ready CSVs of an error series and its embedding.
    Report {
        #[arg(long)]
        errors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        lag: usize,
        /// Append this fraction of synthetic attack-like points.
        #[arg(long)]
        augment: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Train { config } => train(&config),
        Command::Detect { model, data, out } => detect(&model, &data, &out),
        Command::Evaluate { verdicts, labels } => evaluate(&verdicts, &labels),
        Command::Optimize { config } => optimize(&config),
        Command::Report {
            errors,
            out,
            lag,
            augment,
            seed,
        } => report(&errors, &out, lag, augment, seed),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn simulate(config: &Path, out: &Path) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let section = cfg
        .plant
        .as_ref()
        .ok_or_else(|| Error::Config("simulate needs a [plant] section".into()))?;
    let (normal, validation, attack) = simulate_splits(
        &section.plant()?,
        &section.plan(),
        &cfg.validation_attacks()?,
        &cfg.attacks()?,
    )?;
    create_dir(out)?;
    normal.write_csv(&out.join("normal.csv"))?;
    attack.write_csv(&out.join("attack.csv"))?;
    if let Some(v) = validation {
        v.write_csv(&out.join("validation.csv"))?;
    }
    println!("wrote {} normal and {} attack-trace rows to {}", normal.rows(), attack.rows(), out.display());
    Ok(())
}

fn output_dir(cfg: &PipelineConfig, model: &Path) -> PathBuf {
    cfg.paths
        .output
        .clone()
        .unwrap_or_else(|| model.parent().unwrap_or(Path::new(".")).to_path_buf())
}

fn train(config: &Path) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let frame = load_csv_inferred(cfg.require(&cfg.paths.train, "train")?)?;
    let model_path = cfg.require(&cfg.paths.model, "model")?;
    let (pipeline, history) = Pipeline::fit(&frame, &cfg.pipeline_settings())?;
    let out = output_dir(&cfg, model_path);
    create_dir(&out)?;
    if let Some(parent) = model_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    pipeline.save(model_path)?;
    write(&out.join("train_history.csv"), &history.to_csv())?;
    println!(
        "trained {} epochs, best validation loss {:.6}, delta {:.6}; model at {}",
        history.stopped_epoch,
        history.best_validation_loss(),
        pipeline.train_delta,
        model_path.display()
    );
    Ok(())
}

fn detect(model: &Path, data: &Path, out: &Path) -> Result<()> {
    let pipeline = Pipeline::load(model)?;
    let frame = load_csv_inferred(data)?;
    let detection = pipeline.detect(&frame)?;
    create_dir(out)?;
    detection.verdicts.write_csv(&out.join("verdicts.csv"))?;
    detection.errors.write_csv(&out.join("errors.csv"))?;
    println!(
        "{} of {} scored steps flagged as attack",
        detection.verdicts.attack_count(),
        detection.verdicts.len()
    );
    Ok(())
}

fn is_verdict_csv(path: &Path) -> Result<bool> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first).map_err(|e| Error::io(path, e))?;
    Ok(first.trim_start_matches('\u{feff}').starts_with("index,flag"))
}

fn evaluate(verdicts: &Path, labels: &Path) -> Result<()> {
    let v = VerdictSeries::read_csv(verdicts)?;
    let actual = if is_verdict_csv(labels)? {
        let l = VerdictSeries::read_csv(labels)?;
        if l.indices != v.indices {
            return Err(Error::Shape("verdict and label files cover different indices".into()));
        }
        l.flags
    } else {
        let frame: TimeSeriesFrame = load_csv_inferred(labels)?;
        labels_at(&frame, &v.indices)?
    };
    let (counts, report) = score(&v.flags, &actual)?;
    print!("{}", report.key_values(&counts));
    Ok(())
}

fn optimize(config: &Path) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let train = load_csv_inferred(cfg.require(&cfg.paths.train, "train")?)?;
    let validation = load_csv_inferred(cfg.require(&cfg.paths.validation, "validation")?)?;
    let out = cfg.require(&cfg.paths.output, "output")?.to_path_buf();
    let (ga, space, budget) = cfg.ga_settings();
    let evaluator = PipelineEvaluator::new(train.clone(), validation, budget, cfg.seed)?;
    let result = evolve(&ga, &space, threads_from_env()?, |g| evaluator.evaluate(g))?;
    create_dir(&out)?;
    write(&out.join("evolution_log.csv"), &result.log_csv())?;
    write(&out.join("history.csv"), &result.history_csv())?;
    let best = &result.best.genome;
    let genome_json = serde_json::to_string_pretty(best).map_err(|e| Error::Serialization(e.to_string()))?;
    write(&out.join("best_genome.json"), &genome_json)?;

    info!("retraining best genome {} at full budget", best.key());
    let settings = best.settings(&cfg.train, cfg.seed);
    let (pipeline, history) = Pipeline::fit(&train, &settings)?;
    pipeline.save(&out.join("best_model.json"))?;
    write(&out.join("best_train_history.csv"), &history.to_csv())?;
    println!(
        "best fitness {:.4} after {} evaluations: {}",
        result.best.fitness.unwrap_or(0.0),
        result.evaluations,
        best.key()
    );
    Ok(())
}

fn report(errors: &Path, out: &Path, lag: usize, fraction: Option<f64>, seed: u64) -> Result<()> {
    let series = ErrorSeries::read_csv(errors)?;
    let mut embedding = embed(&series, lag)?;
    if let Some(f) = fraction {
        embedding = augment(&embedding, series.delta, series.sigma, f, seed)?;
    }
    create_dir(out)?;
    series.write_csv(&out.join("errors.csv"))?;
    embedding.write_csv(&out.join("embedding.csv"))?;
    println!(
        "{} errors (delta {:.6}, sigma {:.6}), {} embedding points ({} synthetic)",
        series.len(),
        series.delta,
        series.sigma,
        embedding.len(),
        embedding.synthetic_len()
    );
    Ok(())
}
