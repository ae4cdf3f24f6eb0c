//! Evaluate a directory of predicted saliency maps against ground-truth
//! masks: per-image metrics, dataset means, and a PR-curve SVG.
//!
//!     cargo run --release --example evaluate_maps <pred_dir> <gt_dir> [out_dir]

use dsrcnn::cli;
use dsrcnn::RunConfig;
use std::path::PathBuf;

fn main() {
    let mut args = std::env::args().skip(1);
    let (Some(pred), Some(gt)) = (args.next(), args.next()) else {
        eprintln!("usage: evaluate_maps <pred_dir> <gt_dir> [out_dir]");
        std::process::exit(2);
    };
    let out: PathBuf = args.next().map(Into::into).unwrap_or_else(|| "target/eval".into());

    let report = cli::cmd_eval(pred.as_ref(), gt.as_ref(), &out, &RunConfig::default()).unwrap();
    println!();
    println!("{:<16} {:>8} {:>8} {:>8} {:>10}", "image", "mean F", "adapt F", "MAE", "weighted F");
    for m in &report.per_image {
        println!(
            "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>10}",
            m.name,
            m.mean_f,
            m.adaptive_f,
            m.mae,
            m.weighted_f
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "skipped".into())
        );
    }
    println!("\nreports under {}", out.display());
}
