//! Load a weight file and predict a saliency map for one image, writing the
//! fused map and the five side maps as PNGs.
//!
//!     cargo run --release --example infer_image <weights> <image> [out_dir]
//!
//! Train a weight file first, e.g. with the `train_shapes` example.

use dsrcnn::dataset::{image_to_tensor, read_image, save_saliency_png};
use dsrcnn::ops::Mode;
use dsrcnn::seeded_rng;
use dsrcnn::weights::load_weights;
use std::path::PathBuf;

fn main() {
    let mut args = std::env::args().skip(1);
    let (Some(weights), Some(input)) = (args.next(), args.next()) else {
        eprintln!("usage: infer_image <weights> <image> [out_dir]");
        std::process::exit(2);
    };
    let out: PathBuf = args.next().map(Into::into).unwrap_or_else(|| "target/infer".into());
    std::fs::create_dir_all(&out).unwrap();

    let model = load_weights(weights.as_ref()).unwrap();
    let image = read_image(input.as_ref()).unwrap();
    let tensor = image_to_tensor(&image, model.config.input_channels).unwrap();
    let result = model.forward(&tensor, Mode::Infer, &mut seeded_rng(0)).unwrap();

    let stem = PathBuf::from(&input)
        .file_stem()
        .unwrap()
        .to_string_lossy()
        .into_owned();
    let fused = out.join(format!("{stem}.png"));
    save_saliency_png(&result.fused_map, &fused).unwrap();
    println!("fused map -> {}", fused.display());
    for (m, map) in result.side_maps.iter().enumerate() {
        let path = out.join(format!("{stem}.side{}.png", m + 1));
        save_saliency_png(map, &path).unwrap();
        println!("side {} (stride {:>2}) -> {}", m + 1, 1 << m, path.display());
    }
}
