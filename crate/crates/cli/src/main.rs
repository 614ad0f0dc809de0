use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use strokeseg::evaluation::{aggregate, evaluate_case, read_case_csv, write_case_csv, AggregateReport, CaseMetrics};
use strokeseg::fsutil::{read_json, write_atomic, write_json_atomic, DirLock};
use strokeseg::io::{read_mask, write_mask, write_phantom_dataset, DatasetManifest, PhantomDatasetConfig};
use strokeseg::model::{Extents, LabelSchema};
use strokeseg::network::{Checkpoint, ResEncUNet};
use strokeseg::preprocess::pipeline::load_case;
use strokeseg::preprocess::{
    compute_dataset_fingerprint, preprocess_dataset, restore_prediction, DatasetFingerprint, PreprocessedIndex,
};
use strokeseg::report::{render_markdown, render_overlay, results_table, select_slice, PipelineConfig};
use strokeseg::training::{
    predict_volume, run_cross_validation, train_on_slices, SliceDataset, FINAL_CHECKPOINT,
};
use strokeseg::{Error, ErrorKind, ResultExt};

const FINGERPRINT_FILE: &str = "fingerprint.json";
const CASES_CSV: &str = "cases.csv";
const AGGREGATE_JSON: &str = "aggregate.json";

#[derive(Parser)]
#[command(name = "strokeseg", version, about = "Infarct segmentation on non-contrast CT")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset with a manifest.
    Phantom {
        #[arg(long)]
        cases: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Slices per case.
        #[arg(long)]
        slices: Option<usize>,
    },
    /// Compute intensity statistics over the training cases.
    Fingerprint,
    /// Normalize, resample and pad every case into the preprocessed directory.
    Preprocess,
    /// Train one model (all cases, one held-out fold, or cross-validation).
    Train {
        #[arg(long, conflicts_with = "cv")]
        fold: Option<usize>,
        #[arg(long)]
        cv: bool,
    },
    /// Segment preprocessed cases and write masks in original geometry.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Only cases in this fold.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Score predictions against reference masks.
    Evaluate {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Build the results table from evaluation outputs.
    Report {
        /// Also render one overlay PNG per case.
        #[arg(long)]
        overlays: bool,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let lib = e.chain().find_map(|c| c.downcast_ref::<Error>());
            let kind = lib.map_or(ErrorKind::Runtime, Error::kind);
            let line = json!({
                "error": kind.to_string(),
                "message": e.to_string(),
                "case_id": lib.and_then(Error::case_id),
            });
            eprintln!("{line}");
            ExitCode::from(match kind {
                ErrorKind::Config => 1,
                ErrorKind::Data => 2,
                ErrorKind::Runtime => 3,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Phantom {
        cases,
        out,
        seed,
        folds,
        slices,
    } = &cli.command
    {
        return phantom(*cases, out, *seed, *folds, *slices);
    }
    let cfg = PipelineConfig::load(cli.common.config.as_deref(), &cli.common.overrides)?;
    match cli.command {
        Command::Phantom { .. } => unreachable!(),
        Command::Fingerprint => fingerprint(&cfg).map(|_| ()),
        Command::Preprocess => preprocess(&cfg),
        Command::Train { fold, cv } => train(&cfg, fold, cv),
        Command::Predict { checkpoint, fold } => predict(&cfg, checkpoint, fold),
        Command::Evaluate { predictions, fold } => evaluate(&cfg, predictions, fold),
        Command::Report { overlays, predictions } => report(&cfg, overlays, predictions),
    }
}

fn phantom(cases: usize, out: &Path, seed: u64, folds: usize, slices: Option<usize>) -> Result<()> {
    let mut pc = PhantomDatasetConfig::default();
    if let Some(s) = slices {
        if s == 0 {
            return Err(Error::Config("--slices must be >= 1".into()).into());
        }
        pc.extents = Extents::new(s, pc.extents.rows, pc.extents.cols);
    }
    let _lock = DirLock::acquire(out)?;
    let m = write_phantom_dataset(out, cases, seed, &pc, folds)?;
    println!("wrote {} phantom cases to {}", m.cases.len(), out.display());
    Ok(())
}

fn manifest(cfg: &PipelineConfig) -> Result<DatasetManifest> {
    let path = cfg.paths.raw_data.join("manifest.json");
    let m = DatasetManifest::load(&path)?;
    m.validate_files()?;
    Ok(m)
}

fn fingerprint(cfg: &PipelineConfig) -> Result<DatasetFingerprint> {
    let m = manifest(cfg)?;
    let fp = compute_dataset_fingerprint(&m)?;
    let out = cfg.paths.preprocessed.join(FINGERPRINT_FILE);
    write_json_atomic(&out, &fp)?;
    println!("fingerprint written to {}", out.display());
    Ok(fp)
}

fn preprocess(cfg: &PipelineConfig) -> Result<()> {
    let dir = &cfg.paths.preprocessed;
    let _lock = DirLock::acquire(dir)?;
    let m = manifest(cfg)?;
    let fp_path = dir.join(FINGERPRINT_FILE);
    let fp: DatasetFingerprint = if fp_path.is_file() {
        read_json(&fp_path)?
    } else {
        let fp = compute_dataset_fingerprint(&m)?;
        write_json_atomic(&fp_path, &fp)?;
        fp
    };
    let index = preprocess_dataset(&m, &cfg.label_remap, &fp, &cfg.preprocess, dir)?;
    println!("preprocessed {} cases into {}", index.cases.len(), dir.display());
    Ok(())
}

fn train(cfg: &PipelineConfig, fold: Option<usize>, cv: bool) -> Result<()> {
    let index = PreprocessedIndex::load(&cfg.paths.preprocessed)?;
    let data = SliceDataset::from_index(&index)?;
    let root = &cfg.paths.checkpoints;
    let _lock = DirLock::acquire(root)?;
    if cv {
        let s = run_cross_validation(&data, &cfg.network, &cfg.train, Some(root))?;
        for r in &s.runs {
            println!("fold {}: mean dice {:.4} over {} cases", r.fold, r.mean_dice, r.n_cases);
        }
        println!("max mean dice {:.4} (fold {})", s.max_mean_dice, s.max_fold);
        return Ok(());
    }
    let (held_out, dir) = match fold {
        Some(f) if f >= cfg.train.folds => {
            return Err(Error::Config(format!("fold {f} out of range for {} folds", cfg.train.folds)).into())
        }
        Some(f) => (vec![f], root.join(format!("fold_{f}"))),
        None => (vec![], root.join("all")),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let r = train_on_slices(&data, &held_out, &cfg.network, &cfg.train, Some(&dir))?;
    println!(
        "trained {} epochs, final loss {:.4}, best epoch {}; checkpoints in {}",
        r.epochs.len(),
        r.final_train_loss(),
        r.best_epoch,
        dir.display()
    );
    Ok(())
}

fn predict(cfg: &PipelineConfig, checkpoint: Option<PathBuf>, fold: Option<usize>) -> Result<()> {
    let ckpt_path = checkpoint.unwrap_or_else(|| cfg.paths.checkpoints.join("all").join(FINAL_CHECKPOINT));
    let ckpt = Checkpoint::<f32>::load(&ckpt_path)?;
    let net = ResEncUNet::new(ckpt.network.clone())?;
    let index = PreprocessedIndex::load(&cfg.paths.preprocessed)?;
    let out = &cfg.paths.predictions;
    let _lock = DirLock::acquire(out)?;
    let mut n = 0;
    for entry in index.cases.iter().filter(|e| fold.is_none() || e.fold == fold) {
        let id = entry.case_id.as_str();
        let image = index.load_image(entry)?;
        let sidecar = index.load_sidecar(entry)?;
        let pred = predict_volume(&net, &ckpt.params, &image, cfg.train.batch_size).for_case(id)?;
        let restored = restore_prediction(&pred, &sidecar, &index.config).for_case(id)?;
        write_mask(&restored, out.join(format!("{id}.nii.gz"))).for_case(id)?;
        n += 1;
    }
    println!("wrote {n} predictions to {}", out.display());
    Ok(())
}

fn evaluate(cfg: &PipelineConfig, predictions: Option<PathBuf>, fold: Option<usize>) -> Result<()> {
    let pred_dir = predictions.unwrap_or_else(|| cfg.paths.predictions.clone());
    let m = manifest(cfg)?;
    let rules = cfg.evaluation.outlier_rules.compile()?;
    let binary = LabelSchema::binary("lesion");
    let mut cases: Vec<CaseMetrics> = Vec::new();
    for rec in m.cases.iter().filter(|r| r.mask_path.is_some()) {
        if fold.is_some() && rec.fold_index != fold {
            continue;
        }
        let id = rec.case_id.as_str();
        let (_, gt) = load_case(&m, id, &cfg.label_remap)?;
        let gt = gt.expect("filtered on mask presence");
        let pred = read_mask(pred_dir.join(format!("{id}.nii.gz")), &binary).for_case(id)?;
        cases.push(evaluate_case(id, &pred, &gt, &rules)?);
    }
    let dir = &cfg.paths.reports;
    let _lock = DirLock::acquire(dir)?;
    write_case_csv(&dir.join(CASES_CSV), &cases)?;
    let agg = aggregate(&cases, cfg.evaluation.exclude_outliers, &cfg.evaluation.outlier_rules)?;
    write_json_atomic(&dir.join(AGGREGATE_JSON), &agg)?;
    println!(
        "{} cases: mean dice {:.4}, mean iou {:.4}, adjusted mean dice {:.4} ({} excluded)",
        agg.n_cases,
        agg.mean_dice,
        agg.mean_iou,
        agg.adjusted_mean_dice,
        agg.excluded_case_ids.len()
    );
    Ok(())
}

fn report(cfg: &PipelineConfig, overlays: bool, predictions: Option<PathBuf>) -> Result<()> {
    let dir = &cfg.paths.reports;
    let agg: AggregateReport = read_json(&dir.join(AGGREGATE_JSON))?;
    let table = results_table(&agg);
    let _lock = DirLock::acquire(dir)?;
    write_json_atomic(&dir.join("results.json"), &table)?;
    write_atomic(&dir.join("results.md"), render_markdown(&table).as_bytes())?;
    if overlays {
        let pred_dir = predictions.unwrap_or_else(|| cfg.paths.predictions.clone());
        let cases = read_case_csv(&dir.join(CASES_CSV))?;
        let m = manifest(cfg)?;
        let binary = LabelSchema::binary("lesion");
        for c in &cases {
            let id = c.case_id.as_str();
            let (image, gt) = load_case(&m, id, &cfg.label_remap)?;
            let gt = gt.ok_or_else(|| Error::Data("no reference mask".into()).for_case(id))?;
            let pred = read_mask(pred_dir.join(format!("{id}.nii.gz")), &binary).for_case(id)?;
            let s = select_slice(&gt, cfg.overlay.slice).for_case(id)?;
            let img = render_overlay(&image.slice_extract(s)?, &gt.slice(s)?, &pred.slice(s)?, &cfg.overlay).for_case(id)?;
            write_atomic(&dir.join("overlays").join(format!("{id}.png")), &img.to_png()?)?;
        }
    }
    print!("{}", render_markdown(&table));
    Ok(())
}
