use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vucal::harness::{self, ExperimentConfig, Workspace};
use vucal::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "vucal",
    version,
    about = "Verbal uncertainty calibration toolkit"
)]
struct Cli {
    /// Experiment config (flat JSON).
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory. For init-toy, the directory to create.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the dataset and report the record count.
    IngestCheck,
    /// Write a planted toy model, a synthetic dataset and a config.
    InitToy {
        #[arg(long, default_value_t = 200)]
        questions: usize,
    },
    Sample,
    Score,
    ExtractVuf,
    /// Cosine between the extracted feature and the planted direction.
    Cosine,
    /// Two-component projection of the contrastive sets.
    Pca {
        #[arg(long)]
        layer: Option<usize>,
    },
    Sweep,
    TrainProbe,
    TrainDetector,
    Detect,
    Calibrate,
    Report,
    RunAll,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.4}"))
}

fn run(cli: &Cli) -> Result<String> {
    if let Command::InitToy { questions } = cli.command {
        let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("toy"));
        let files = harness::init_toy(&dir, cli.seed.unwrap_or(0), questions)?;
        return Ok(format!(
            "init-toy: wrote {} {} {}",
            files.model.display(),
            files.dataset.display(),
            files.config.display()
        ));
    }
    let cfg = load_config(cli)?;
    if let Command::IngestCheck = cli.command {
        let records = harness::ingest(&cfg.dataset_path)?;
        return Ok(format!("ingest-check: {} records ok", records.len()));
    }
    if let Command::RunAll = cli.command {
        let out = harness::run_pipeline(cfg)?;
        return Ok(format!(
            "run-all: before [{}] after [{}] auroc_combined={:.4} artifacts={}",
            out.before.summary_line(),
            out.after.summary_line(),
            out.detection.auroc_combined,
            out.manifest.artifacts.len()
        ));
    }
    let ws = Workspace::new(cfg)?;
    Ok(match &cli.command {
        Command::Sample => {
            let sets = harness::stage_sample(&ws)?;
            format!("sample: {} questions", sets.len())
        }
        Command::Score => {
            let scored = harness::stage_score(&ws)?;
            let n = scored.len() as f64;
            let su = scored.iter().map(|(_, s)| s.su_norm).sum::<f64>() / n;
            let vu = scored.iter().map(|(_, s)| s.vu).sum::<f64>() / n;
            format!(
                "score: {} questions mean_su_norm={su:.4} mean_vu={vu:.4}",
                scored.len()
            )
        }
        Command::ExtractVuf => {
            let dir = harness::stage_extract(&ws)?;
            format!(
                "extract-vuf: {} layers, source {}",
                dir.layers.len(),
                dir.meta.source
            )
        }
        Command::Cosine => {
            let cos = harness::stage_cosine(&ws)?;
            let parts: Vec<String> = cos
                .iter()
                .map(|(l, c)| format!("L{l}={}", fmt_opt(*c)))
                .collect();
            format!("cosine: {}", parts.join(" "))
        }
        Command::Pca { layer } => {
            let layer = match layer {
                Some(l) => *l,
                None => ws
                    .model()?
                    .planted
                    .map(|p| p.injection_layer)
                    .ok_or_else(|| Error::Config("--layer is required for this model".into()))?,
            };
            let p = harness::stage_pca(&ws, layer)?;
            format!(
                "pca: layer {} explained=[{:.4}, {:.4}] separability={:.4}",
                p.layer, p.explained_variance[0], p.explained_variance[1], p.separability
            )
        }
        Command::Sweep => {
            let r = harness::stage_sweep(&ws)?;
            let parts: Vec<String> = r
                .alphas
                .iter()
                .zip(&r.mean_vu)
                .map(|(a, v)| format!("{a}:{v:.4}"))
                .collect();
            format!("sweep: {}", parts.join(" "))
        }
        Command::TrainProbe => {
            let (su, vu) = harness::stage_train_probes(&ws)?;
            format!(
                "train-probe: su and vu probes over {} inputs",
                su.weights.len().max(vu.weights.len())
            )
        }
        Command::TrainDetector => {
            let (calc, _) = harness::stage_train_detector(&ws)?;
            format!(
                "train-detector: weights={:?} threshold={:.4}",
                calc.weights, calc.threshold
            )
        }
        Command::Detect => {
            let d = harness::stage_detect(&ws)?;
            format!(
                "detect: n={} hallucinated={} auroc_combined={:.4} auroc_su={:.4} auroc_vu={:.4}",
                d.n, d.n_hallucinated, d.auroc_combined, d.auroc_su_only, d.auroc_vu_only
            )
        }
        Command::Calibrate => {
            let recs = harness::stage_calibrate(&ws)?;
            let steered = recs.iter().filter(|r| r.alpha > 0.0).count();
            format!("calibrate: {} regenerated, {steered} steered", recs.len())
        }
        Command::Report => {
            let (b, a) = harness::stage_report(&ws)?;
            format!(
                "report: before [{}] after [{}]",
                b.summary_line(),
                a.summary_line()
            )
        }
        Command::InitToy { .. } | Command::IngestCheck | Command::RunAll => unreachable!(),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
