//! The whole pipeline in one run: synthesize a dataset on disk, train, infer
//! on the training images, and evaluate the predictions against the masks.
//! Everything lands under `target/end_to_end` (or the given directory).
//!
//!     cargo run --release --example end_to_end [work_dir]

use dsrcnn::cli::{self, Overrides};
use dsrcnn::dataset::{save_mask_png, save_rgb_png};
use dsrcnn::seeded_rng;
use dsrcnn::synthetic::shape_corpus;
use std::path::PathBuf;

fn main() {
    let work: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| "target/end_to_end".into());
    let dataset = work.join("dataset");
    std::fs::create_dir_all(dataset.join("images")).unwrap();
    std::fs::create_dir_all(dataset.join("masks")).unwrap();

    println!("[1/4] writing 10 synthetic image/mask pairs");
    for (i, (image, mask)) in shape_corpus(10, 32, 32, &mut seeded_rng(2024))
        .iter()
        .enumerate()
    {
        save_rgb_png(image, &dataset.join(format!("images/img{i:02}.png"))).unwrap();
        save_mask_png(mask, &dataset.join(format!("masks/img{i:02}.png"))).unwrap();
    }

    println!("[2/4] training (toy widths, 2000 iterations)");
    let overrides = Overrides {
        seed: Some(7),
        iterations: Some(2000),
        learning_rate: Some(1e-4),
        clip_norm: Some(300.0),
        block_channels: Some([4, 4, 8, 8, 8]),
        dropout_ratio: Some(0.0),
        ..Overrides::default()
    };
    let config = cli::resolve_config(None, &overrides).unwrap();
    let train_out = work.join("train");
    let outcome = cli::cmd_train(&dataset, &train_out, &config).unwrap();

    println!("[3/4] predicting saliency maps for the training images");
    let infer_out = work.join("pred");
    cli::cmd_infer(&outcome.weights_path, &dataset.join("images"), &infer_out, false).unwrap();

    println!("[4/4] evaluating predictions against the masks");
    let eval_out = work.join("eval");
    cli::cmd_eval(&infer_out, &dataset.join("masks"), &eval_out, &config).unwrap();

    println!("\nartifacts under {}", work.display());
    println!("  weights      {}", outcome.weights_path.display());
    println!("  predictions  {}", infer_out.display());
    println!("  reports      {}", eval_out.display());
}
