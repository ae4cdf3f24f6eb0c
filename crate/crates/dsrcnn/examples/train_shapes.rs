//! Train the toy model on a synthetic shape corpus and watch the per-head
//! losses fall. Writes the weight file and loss history under the given
//! output directory (default `target/train_shapes`).
//!
//!     cargo run --release --example train_shapes [out_dir]

use dsrcnn::model::{build_model, ModelConfig};
use dsrcnn::ops::Mode;
use dsrcnn::report::write_loss_history_csv;
use dsrcnn::synthetic::shape_corpus;
use dsrcnn::training::{total_loss, train, SgdConfig};
use dsrcnn::weights::save_weights;
use dsrcnn::seeded_rng;
use std::path::PathBuf;

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| "target/train_shapes".into());
    std::fs::create_dir_all(&out).unwrap();

    let config = ModelConfig {
        block_channels: [4, 4, 8, 8, 8],
        dropout_ratio: 0.0,
        ..ModelConfig::default()
    };
    let corpus = shape_corpus(10, 32, 32, &mut seeded_rng(2024));
    let mut model = build_model(&config, &mut seeded_rng(7)).unwrap();

    let mean_loss = |m: &dsrcnn::Model| -> f64 {
        corpus
            .iter()
            .map(|(img, gt)| {
                let r = m.forward(img, Mode::Infer, &mut seeded_rng(0)).unwrap();
                total_loss(&r, gt).unwrap().total
            })
            .sum::<f64>()
            / corpus.len() as f64
    };

    println!("initial mean loss: {:.2}", mean_loss(&model));
    let mut history = Vec::new();
    for round in 1..=5 {
        let sgd = SgdConfig {
            learning_rate: 1e-4,
            momentum: 0.9,
            iterations: 400,
            seed: round,
            clip_norm: Some(300.0),
            ..SgdConfig::default()
        };
        history.extend(train(&mut model, &corpus, &sgd).unwrap());
        println!(
            "after {:>4} iterations: mean loss {:.2}",
            round * 400,
            mean_loss(&model)
        );
    }

    save_weights(&model, &out.join("model.weights")).unwrap();
    write_loss_history_csv(&history, &out.join("loss_history.csv")).unwrap();
    println!("wrote {}", out.join("model.weights").display());
    println!("wrote {}", out.join("loss_history.csv").display());
}
