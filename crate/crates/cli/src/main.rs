use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use psad_core::pipeline::{
    ablate, build_dataset_banks, evaluate, train_segmenter, write_json, Dataset, PipelineConfig,
};
use psad_core::segtrain::{load_checkpoint, save_checkpoint};
use psad_core::tensorio::read_tensor;
use psad_core::{BankSet, PsadError, Result};
use serde_json::json;

/// Part-segmentation anomaly detection on synthetic product images.
#[derive(Parser)]
#[command(name = "psad", version)]
struct Cli {
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Blueprint family; overrides the config file.
        #[arg(long)]
        family: Option<String>,
    },
    /// Train the part segmenter on a generated dataset.
    TrainSeg {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the three memory banks from the unlabeled training images.
    BuildBanks {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score one image and print its scores as JSON.
    Score {
        #[arg(long)]
        banks: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
    },
    /// Score the test split and write an AUROC report.
    Evaluate {
        #[arg(long)]
        banks: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also write one score-histogram CSV per score into this directory.
        #[arg(long)]
        csv_dir: Option<PathBuf>,
    },
    /// Bank-subset and reduced-data ablations.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("PSAD_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| PsadError::Config(format!("PSAD_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| PsadError::Config(format!("cannot size worker pool: {e}")))
}

fn or_default(flag: &Option<PathBuf>, default: &Path) -> PathBuf {
    flag.clone().unwrap_or_else(|| default.to_path_buf())
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("json values always serialize")
    );
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let mut cfg = load_config(&cli)?;
    let paths = cfg.paths.clone();
    let started = Instant::now();
    match &cli.command {
        Command::Generate { out, family } => {
            if let Some(f) = family {
                cfg.family = f.clone();
            }
            cfg.validate()?;
            let out = or_default(out, &paths.data);
            let data = Dataset::generate(&cfg, &out)?;
            eprintln!(
                "generated {} images of family {} in {}",
                data.manifest.images.len(),
                cfg.family,
                out.display()
            );
        }
        Command::TrainSeg { data, out } => {
            let data = Dataset::open(&or_default(data, &paths.data))?;
            let out = or_default(out, &paths.checkpoint);
            let tcfg = cfg.train_config();
            let total = tcfg.warmup_iterations + tcfg.main_iterations;
            let clf = train_segmenter(&data, &tcfg, |it, loss| {
                if (it + 1) % 50 == 0 || it + 1 == total {
                    eprintln!(
                        "iter {:>4}/{total}  loss {:.4}  dice {:.4}  ce {:.4}  entropy {:.4}  hist {:.4}",
                        it + 1,
                        loss.total,
                        loss.dice,
                        loss.ce,
                        loss.entropy,
                        loss.hist
                    );
                }
            })?;
            save_checkpoint(&clf, &tcfg, &out)?;
            eprintln!("saved segmenter to {}", out.display());
        }
        Command::BuildBanks { data, ckpt, out } => {
            let data = Dataset::open(&or_default(data, &paths.data))?;
            let (clf, _) = load_checkpoint(&or_default(ckpt, &paths.checkpoint))?;
            let out = or_default(out, &paths.banks);
            let banks = build_dataset_banks(&data, &clf, cfg.stride)?;
            banks.save(&out)?;
            eprintln!(
                "built banks from {} images (scales hist {:.4e}, comp {:.4e}, patch {:.4e}) into {}",
                banks.hist.num_groups(),
                banks.hist.scale(),
                banks.comp.scale(),
                banks.patch.scale(),
                out.display()
            );
        }
        Command::Score { banks, image } => {
            let banks = BankSet::load(or_default(banks, &paths.banks))?;
            let s = banks.score_image(&read_tensor(image)?)?;
            print_json(&json!({
                "s_hist": s.normalized[0],
                "s_comp": s.normalized[1],
                "s_patch": s.normalized[2],
                "s_final": s.final_score(),
            }));
        }
        Command::Evaluate {
            banks,
            data,
            report,
            csv_dir,
        } => {
            let banks = BankSet::load(or_default(banks, &paths.banks))?;
            let data = Dataset::open(&or_default(data, &paths.data))?;
            let report_path = or_default(report, &paths.report);
            let rep = evaluate(&data, &banks, cfg.histogram_bins)?;
            write_json(&rep, &report_path)?;
            if let Some(dir) = csv_dir {
                std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
                for h in &rep.histograms {
                    let path = dir.join(format!("{}.csv", h.selector.name()));
                    std::fs::write(&path, h.to_csv()).map_err(|e| io_error(&path, e))?;
                }
            }
            print_json(&json!({
                "report": report_path,
                "la_auroc": rep.la_auroc,
                "sa_auroc": rep.sa_auroc,
                "per_score": rep.per_score,
                "class_iou": rep.class_iou,
                "min_class_iou": rep.min_class_iou,
            }));
        }
        Command::Ablate { data, ckpt, report } => {
            let data = Dataset::open(&or_default(data, &paths.data))?;
            let (clf, _) = load_checkpoint(&or_default(ckpt, &paths.checkpoint))?;
            let report_path = or_default(report, &paths.report);
            let rep = ablate(&data, &clf, cfg.stride, cfg.seed)?;
            write_json(&rep, &report_path)?;
            for row in &rep.grid {
                eprintln!(
                    "{:<18} AS {:<3}  LA {:.3}  SA {:.3}",
                    row.banks.join("+"),
                    if row.adaptive_scaling { "on" } else { "off" },
                    row.la_auroc,
                    row.sa_auroc
                );
            }
            for row in &rep.reduced {
                eprintln!(
                    "N_train {:>3} ({:>5.1}%)  LA {:.3}",
                    row.n_train,
                    row.fraction * 100.0,
                    row.la_auroc
                );
            }
        }
    }
    eprintln!("done in {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn io_error(path: &Path, source: std::io::Error) -> PsadError {
    PsadError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}
