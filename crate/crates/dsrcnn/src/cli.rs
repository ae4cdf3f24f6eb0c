//! Command implementations behind the `dsrcnn` binary: train, infer, eval,
//! selftest. Each command writes all of its artifacts under its output
//! directory and echoes the fully resolved configuration next to them, so a
//! run can be reproduced from its own outputs.

use crate::config::RunConfig;
use crate::dataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_dataset, EvalPair, MetricsReport};
use crate::model::{build_model, Model};
use crate::ops::Mode;
use crate::report;
use crate::seeded_rng;
use crate::selftest::{run_selftest, SelftestReport};
use crate::training::{train, LossBreakdown};
use crate::weights::{load_weights, save_weights};
use std::path::{Path, PathBuf};

pub const WEIGHTS_FILE: &str = "model.weights";
pub const LOSS_FILE: &str = "loss_history.csv";
pub const CONFIG_ECHO_FILE: &str = "config.toml";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const METRICS_JSON_FILE: &str = "metrics.json";
pub const PR_CURVE_FILE: &str = "pr_curve.svg";

/// Flag-level overrides applied on top of a config file (or the defaults).
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub clip_norm: Option<f64>,
    pub rcl_iterations: Option<usize>,
    pub block_channels: Option<[usize; 5]>,
    pub dropout_ratio: Option<f64>,
    pub beta_sq: Option<f64>,
    pub thresholds: Option<usize>,
}

/// Load the config file when given, then apply flag overrides.
pub fn resolve_config(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut config = match file {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = overrides.seed {
        config.override_seed(seed);
    }
    if let Some(v) = overrides.iterations {
        config.sgd.iterations = v;
    }
    if let Some(v) = overrides.learning_rate {
        config.sgd.learning_rate = v;
    }
    if let Some(v) = overrides.momentum {
        config.sgd.momentum = v;
    }
    if let Some(v) = overrides.clip_norm {
        config.sgd.clip_norm = Some(v);
    }
    if let Some(v) = overrides.rcl_iterations {
        config.model.rcl_iterations = v;
    }
    if let Some(v) = overrides.block_channels {
        config.model.block_channels = v;
    }
    if let Some(v) = overrides.dropout_ratio {
        config.model.dropout_ratio = v;
    }
    if let Some(v) = overrides.beta_sq {
        config.metrics.beta_sq = v;
    }
    if let Some(v) = overrides.thresholds {
        config.metrics.thresholds = v;
    }
    config.validate()?;
    Ok(config)
}

/// Parse a `--channels` list like "8,16,32,64,64".
pub fn parse_channels(text: &str) -> Result<[usize; 5]> {
    let values: Vec<usize> = text
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad channel count `{part}`")))
        })
        .collect::<Result<_>>()?;
    values
        .try_into()
        .map_err(|_| Error::Config("--channels needs exactly five values".into()))
}

pub struct TrainOutcome {
    pub weights_path: PathBuf,
    pub history: Vec<LossBreakdown>,
    pub used_pairs: usize,
    pub skipped: Vec<(String, String)>,
}

pub fn cmd_train(dataset_root: &Path, out_dir: &Path, config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let loaded = dataset::load_dataset(dataset_root, config.model.input_channels)?;
    for (name, reason) in &loaded.skipped {
        eprintln!("skipping {name}: {reason}");
    }
    if loaded.pairs.is_empty() {
        return Err(Error::Dataset(format!(
            "no usable image/mask pairs under {}",
            dataset_root.display()
        )));
    }

    let corpus: Vec<_> = loaded
        .pairs
        .iter()
        .map(|p| (p.image.clone(), p.mask.clone()))
        .collect();
    let mut model = build_model(&config.model, &mut seeded_rng(config.model.seed))?;
    let history = train(&mut model, &corpus, &config.sgd)?;

    // Per-epoch progress: mean total over each pass of the corpus.
    for (epoch, chunk) in history.chunks(corpus.len()).enumerate() {
        let mean = chunk.iter().map(|b| b.total).sum::<f64>() / chunk.len() as f64;
        println!("epoch {epoch}: mean total loss {mean:.4} over {} iterations", chunk.len());
    }

    let weights_path = out_dir.join(WEIGHTS_FILE);
    save_weights(&model, &weights_path)?;
    report::write_loss_history_csv(&history, &out_dir.join(LOSS_FILE))?;
    config.write(&out_dir.join(CONFIG_ECHO_FILE))?;

    Ok(TrainOutcome {
        weights_path,
        history,
        used_pairs: corpus.len(),
        skipped: loaded.skipped,
    })
}

pub struct InferOutcome {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<(String, String)>,
}

/// Predict saliency maps for one image or a directory of images. Each output
/// is an 8-bit grayscale PNG of the fused map at the input's exact size;
/// `side_maps` additionally writes the five per-block maps.
pub fn cmd_infer(
    weights: &Path,
    input: &Path,
    out_dir: &Path,
    side_maps: bool,
) -> Result<InferOutcome> {
    let model: Model = load_weights(weights)?;
    std::fs::create_dir_all(out_dir)?;

    let inputs: Vec<(String, PathBuf)> = if input.is_dir() {
        dataset::list_image_files(input)?.into_iter().collect()
    } else {
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("bad input path {}", input.display())))?;
        vec![(stem.to_string(), input.to_path_buf())]
    };
    if inputs.is_empty() {
        return Err(Error::Dataset(format!(
            "no readable images under {}",
            input.display()
        )));
    }

    let mut outcome = InferOutcome {
        written: Vec::new(),
        skipped: Vec::new(),
    };
    for (stem, path) in inputs {
        let image = match dataset::read_image(&path) {
            Ok(i) => i,
            Err(e) => {
                eprintln!("skipping {stem}: unreadable ({e})");
                outcome.skipped.push((stem, e.to_string()));
                continue;
            }
        };
        let tensor = dataset::image_to_tensor(&image, model.config.input_channels)?;
        let result = match model.forward(&tensor, Mode::Infer, &mut seeded_rng(0)) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("skipping {stem}: {e}");
                outcome.skipped.push((stem, e.to_string()));
                continue;
            }
        };
        let fused_path = out_dir.join(format!("{stem}.png"));
        dataset::save_saliency_png(&result.fused_map, &fused_path)?;
        outcome.written.push(fused_path);
        if side_maps {
            for (m, map) in result.side_maps.iter().enumerate() {
                let side_path = out_dir.join(format!("{stem}.side{}.png", m + 1));
                dataset::save_saliency_png(map, &side_path)?;
                outcome.written.push(side_path);
            }
        }
    }
    Ok(outcome)
}

/// Evaluate a directory of predicted maps against a directory of masks with
/// filename-matched stems. Writes the CSV and JSON reports, the PR curve
/// plot, and the resolved config echo.
pub fn cmd_eval(
    pred_dir: &Path,
    gt_dir: &Path,
    out_dir: &Path,
    config: &RunConfig,
) -> Result<MetricsReport> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let preds = dataset::list_image_files(pred_dir)?;
    let mut gts = dataset::list_image_files(gt_dir)?;
    let mut pairs = Vec::new();
    for (stem, pred_path) in preds {
        let Some(gt_path) = gts.remove(&stem) else {
            eprintln!("skipping {stem}: no matching ground truth");
            continue;
        };
        let map = dataset::load_saliency_map(&pred_path)?;
        let gt = dataset::mask_from_image(&dataset::read_image(&gt_path)?);
        pairs.push(EvalPair {
            name: stem,
            map,
            gt,
        });
    }
    for (stem, _) in gts {
        eprintln!("skipping {stem}: no matching prediction");
    }

    let metrics_report = evaluate_dataset(&pairs, &config.metrics)?;
    for rejected in &metrics_report.rejected {
        eprintln!("rejected {}: {}", rejected.name, rejected.reason);
    }
    report::write_metrics_csv(&metrics_report, &out_dir.join(METRICS_CSV_FILE))?;
    report::write_metrics_json(&metrics_report, &out_dir.join(METRICS_JSON_FILE))?;
    report::write_pr_curve_svg(&metrics_report.pr_curve, &out_dir.join(PR_CURVE_FILE))?;
    config.write(&out_dir.join(CONFIG_ECHO_FILE))?;

    let s = &metrics_report.summary;
    println!(
        "{} images: mean F {:.4}, adaptive F {:.4} (P {:.4} / R {:.4}), MAE {:.4}, weighted F {}",
        s.images,
        s.mean_f,
        s.adaptive_f,
        s.adaptive_precision,
        s.adaptive_recall,
        s.mae,
        s.weighted_f
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".into()),
    );
    Ok(metrics_report)
}

/// Run the reduced verification suite, printing one line per check.
pub fn cmd_selftest(inject_fault: bool) -> SelftestReport {
    let report = run_selftest(inject_fault);
    for check in &report.checks {
        let status = if check.passed { "ok  " } else { "FAIL" };
        println!("{status} {} ({})", check.name, check.detail);
    }
    if report.all_passed() {
        println!("selftest passed ({} checks)", report.checks.len());
    } else {
        println!("selftest FAILED");
    }
    report
}
