//! Check analytic gradients against central finite differences on a small
//! model, sampling a few entries from every parameter group.
//!
//!     cargo run --release --example gradient_check

use dsrcnn::model::{build_model, ModelConfig};
use dsrcnn::ops::Mode;
use dsrcnn::training::attach_total_loss;
use dsrcnn::{seeded_rng, GroundTruthMask, Shape, Tensor};
use rand::Rng as _;

fn main() {
    let config = ModelConfig {
        block_channels: [2, 2, 3, 3, 3],
        convs_per_block: [1, 1, 1, 1, 1],
        ..ModelConfig::default()
    };
    let model = build_model(&config, &mut seeded_rng(1)).unwrap();
    let mut rng = seeded_rng(2);
    let image = Tensor::from_vec(
        Shape::new(1, 3, 16, 16),
        (0..3 * 256).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let gt = GroundTruthMask::new(16, 16, (0..256).map(|i| i % 5 < 2).collect()).unwrap();

    let eval = |m: &dsrcnn::Model| -> f64 {
        let mut traced = m
            .trace_forward(&image, Mode::Train, &mut seeded_rng(3))
            .unwrap();
        let ids = attach_total_loss(&mut traced.graph, &traced.outputs, &gt).unwrap();
        ids.breakdown(&traced.graph).total
    };

    let mut traced = model
        .trace_forward(&image, Mode::Train, &mut seeded_rng(3))
        .unwrap();
    let ids = attach_total_loss(&mut traced.graph, &traced.outputs, &gt).unwrap();
    traced.graph.backward(ids.total).unwrap();

    let step = 1e-5;
    let mut worst: f64 = 0.0;
    println!("{:<38} {:>14} {:>14} {:>10}", "parameter", "analytic", "numeric", "rel err");
    for (name, id) in &traced.params.flat {
        let analytic = traced.graph.grad_or_zeros(*id);
        for index in 0..analytic.len().min(2) {
            let mut plus = model.clone();
            plus.for_each_param_mut(&mut |n, t| {
                if n == name {
                    t.data_mut()[index] += step;
                }
            });
            let mut minus = model.clone();
            minus.for_each_param_mut(&mut |n, t| {
                if n == name {
                    t.data_mut()[index] -= step;
                }
            });
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
            let a = analytic.data()[index];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            if index == 0 {
                println!("{name:<38} {a:>14.6e} {numeric:>14.6e} {rel:>10.2e}");
            }
        }
    }
    println!("\nworst relative error over sampled entries: {worst:.3e}");
    assert!(worst < 1e-4, "gradient check failed");
    println!("gradient check passed");
}
