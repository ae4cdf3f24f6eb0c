//! Command-level integration tests: dataset ingestion quirks, config echo
//! reproducibility, inference geometry, evaluation report consistency, and
//! the selftest fault hook.

use dsrcnn::cli::{self, Overrides};
use dsrcnn::dataset::{save_mask_png, save_rgb_png, save_saliency_png};
use dsrcnn::map::SaliencyMap;
use dsrcnn::model::{build_model, ModelConfig};
use dsrcnn::synthetic::{shape_corpus, shape_pair};
use dsrcnn::weights::save_weights;
use dsrcnn::{seeded_rng, RunConfig};
use std::path::Path;

fn tiny_overrides() -> Overrides {
    Overrides {
        seed: Some(9),
        iterations: Some(12),
        learning_rate: Some(1e-4),
        clip_norm: Some(300.0),
        block_channels: Some([2, 2, 2, 2, 2]),
        ..Overrides::default()
    }
}

fn write_corpus(root: &Path, count: usize, h: usize, w: usize, seed: u64) {
    std::fs::create_dir_all(root.join("images")).unwrap();
    std::fs::create_dir_all(root.join("masks")).unwrap();
    for (i, (image, mask)) in shape_corpus(count, h, w, &mut seeded_rng(seed))
        .iter()
        .enumerate()
    {
        save_rgb_png(image, &root.join(format!("images/img{i:02}.png"))).unwrap();
        save_mask_png(mask, &root.join(format!("masks/img{i:02}.png"))).unwrap();
    }
}

fn untrained_weights(dir: &Path) -> std::path::PathBuf {
    let config = ModelConfig {
        block_channels: [2, 2, 2, 2, 2],
        convs_per_block: [1, 1, 1, 1, 1],
        ..ModelConfig::default()
    };
    let model = build_model(&config, &mut seeded_rng(3)).unwrap();
    let path = dir.join("untrained.weights");
    save_weights(&model, &path).unwrap();
    path
}

#[test]
fn zero_iterations_training_writes_the_initialization() {
    let dataset = tempfile::tempdir().unwrap();
    write_corpus(dataset.path(), 2, 32, 32, 11);
    let out = tempfile::tempdir().unwrap();

    let mut overrides = tiny_overrides();
    overrides.iterations = Some(0);
    let config = cli::resolve_config(None, &overrides).unwrap();
    cli::cmd_train(dataset.path(), out.path(), &config).unwrap();

    // The written weights equal a fresh same-seed initialization.
    let fresh = tempfile::tempdir().unwrap();
    let model = build_model(&config.model, &mut seeded_rng(config.model.seed)).unwrap();
    let fresh_path = fresh.path().join("fresh.weights");
    save_weights(&model, &fresh_path).unwrap();
    assert_eq!(
        std::fs::read(out.path().join(cli::WEIGHTS_FILE)).unwrap(),
        std::fs::read(fresh_path).unwrap()
    );
}

#[test]
fn config_echo_reproduces_the_run() {
    let dataset = tempfile::tempdir().unwrap();
    write_corpus(dataset.path(), 2, 32, 32, 13);

    let out1 = tempfile::tempdir().unwrap();
    let config = cli::resolve_config(None, &tiny_overrides()).unwrap();
    cli::cmd_train(dataset.path(), out1.path(), &config).unwrap();

    // Re-ingest the echoed config and train again: identical artifacts.
    let echoed = RunConfig::load(&out1.path().join(cli::CONFIG_ECHO_FILE)).unwrap();
    assert_eq!(config, echoed);
    let out2 = tempfile::tempdir().unwrap();
    cli::cmd_train(dataset.path(), out2.path(), &echoed).unwrap();
    assert_eq!(
        std::fs::read(out1.path().join(cli::WEIGHTS_FILE)).unwrap(),
        std::fs::read(out2.path().join(cli::WEIGHTS_FILE)).unwrap()
    );
    assert_eq!(
        std::fs::read(out1.path().join(cli::LOSS_FILE)).unwrap(),
        std::fs::read(out2.path().join(cli::LOSS_FILE)).unwrap()
    );
}

#[test]
fn empty_dataset_is_an_error() {
    let dataset = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dataset.path().join("images")).unwrap();
    std::fs::create_dir_all(dataset.path().join("masks")).unwrap();
    let out = tempfile::tempdir().unwrap();
    let config = cli::resolve_config(None, &tiny_overrides()).unwrap();
    assert!(cli::cmd_train(dataset.path(), out.path(), &config).is_err());
}

#[test]
fn infer_preserves_input_geometry_and_is_repeatable() {
    let work = tempfile::tempdir().unwrap();
    let weights = untrained_weights(work.path());

    let inputs = work.path().join("inputs");
    std::fs::create_dir_all(&inputs).unwrap();
    let (even, _) = shape_pair(64, 64, &mut seeded_rng(21));
    let (odd, _) = shape_pair(37, 41, &mut seeded_rng(22));
    save_rgb_png(&even, &inputs.join("even.png")).unwrap();
    save_rgb_png(&odd, &inputs.join("odd.png")).unwrap();

    let out1 = tempfile::tempdir().unwrap();
    let outcome = cli::cmd_infer(&weights, &inputs, out1.path(), false).unwrap();
    assert_eq!(outcome.written.len(), 2);
    let even_png = image::open(out1.path().join("even.png")).unwrap();
    assert_eq!((even_png.width(), even_png.height()), (64, 64));
    let odd_png = image::open(out1.path().join("odd.png")).unwrap();
    assert_eq!((odd_png.width(), odd_png.height()), (41, 37));

    let out2 = tempfile::tempdir().unwrap();
    cli::cmd_infer(&weights, &inputs, out2.path(), false).unwrap();
    for name in ["even.png", "odd.png"] {
        assert_eq!(
            std::fs::read(out1.path().join(name)).unwrap(),
            std::fs::read(out2.path().join(name)).unwrap(),
            "{name} not byte-identical on rerun"
        );
    }
}

#[test]
fn infer_writes_side_maps_on_request_and_skips_undersized_inputs() {
    let work = tempfile::tempdir().unwrap();
    let weights = untrained_weights(work.path());

    let inputs = work.path().join("inputs");
    std::fs::create_dir_all(&inputs).unwrap();
    let (ok_img, _) = shape_pair(32, 32, &mut seeded_rng(31));
    save_rgb_png(&ok_img, &inputs.join("ok.png")).unwrap();
    let (small, _) = shape_pair(16, 15, &mut seeded_rng(32));
    save_rgb_png(&small, &inputs.join("small.png")).unwrap();
    std::fs::write(inputs.join("garbage.png"), b"not a png").unwrap();

    let out = tempfile::tempdir().unwrap();
    let outcome = cli::cmd_infer(&weights, &inputs, out.path(), true).unwrap();
    // fused + five side maps for the one valid input
    assert_eq!(outcome.written.len(), 6);
    assert_eq!(outcome.skipped.len(), 2);
    for m in 1..=5 {
        assert!(out.path().join(format!("ok.side{m}.png")).exists());
    }
}

#[test]
fn eval_on_ground_truth_is_perfect() {
    let work = tempfile::tempdir().unwrap();
    let pred = work.path().join("pred");
    let gt = work.path().join("gt");
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    for i in 0..3 {
        let (_, mask) = shape_pair(24, 24, &mut seeded_rng(40 + i));
        save_mask_png(&mask, &gt.join(format!("m{i}.png"))).unwrap();
        save_saliency_png(&mask.to_map(), &pred.join(format!("m{i}.png"))).unwrap();
    }
    let out = tempfile::tempdir().unwrap();
    let config = RunConfig::default();
    let report = cli::cmd_eval(&pred, &gt, out.path(), &config).unwrap();
    assert_eq!(report.summary.adaptive_f, 1.0);
    assert_eq!(report.summary.mae, 0.0);
    assert_eq!(report.summary.weighted_f, Some(1.0));
    assert!(out.path().join(cli::METRICS_CSV_FILE).exists());
    assert!(out.path().join(cli::METRICS_JSON_FILE).exists());
    assert!(out.path().join(cli::PR_CURVE_FILE).exists());
    assert!(out.path().join(cli::CONFIG_ECHO_FILE).exists());
}

#[test]
fn eval_constant_half_maps_have_the_quantized_mae() {
    let work = tempfile::tempdir().unwrap();
    let pred = work.path().join("pred");
    let gt = work.path().join("gt");
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    let (_, mask) = shape_pair(20, 20, &mut seeded_rng(50));
    save_mask_png(&mask, &gt.join("m.png")).unwrap();
    let half = SaliencyMap::new(20, 20, vec![0.5; 400]).unwrap();
    save_saliency_png(&half, &pred.join("m.png")).unwrap();

    // 0.5 quantizes to gray level 128, so the exact expectation is
    // (127 |fg| + 128 |bg|) / (255 N).
    let fg = mask.foreground_count() as f64;
    let bg = 400.0 - fg;
    let expect = (127.0 * fg + 128.0 * bg) / (255.0 * 400.0);

    let out = tempfile::tempdir().unwrap();
    let report = cli::cmd_eval(&pred, &gt, out.path(), &RunConfig::default()).unwrap();
    assert!((report.summary.mae - expect).abs() < 1e-12);
    assert!((report.summary.mae - 0.5).abs() < 0.003);
}

#[test]
fn eval_summary_row_matches_hand_averaged_csv_rows() {
    let work = tempfile::tempdir().unwrap();
    let pred = work.path().join("pred");
    let gt = work.path().join("gt");
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    let mut rng = seeded_rng(60);
    for i in 0..5 {
        let (_, mask) = shape_pair(16, 16, &mut rng);
        save_mask_png(&mask, &gt.join(format!("p{i}.png"))).unwrap();
        use rand::Rng as _;
        let noise =
            SaliencyMap::new(16, 16, (0..256).map(|_| rng.random_range(0.0..1.0)).collect())
                .unwrap();
        save_saliency_png(&noise, &pred.join(format!("p{i}.png"))).unwrap();
    }
    let out = tempfile::tempdir().unwrap();
    cli::cmd_eval(&pred, &gt, out.path(), &RunConfig::default()).unwrap();

    let csv = std::fs::read_to_string(out.path().join(cli::METRICS_CSV_FILE)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7); // header + 5 rows + MEAN
    let field = |line: &str, idx: usize| -> f64 {
        line.split(',').nth(idx).unwrap().parse().unwrap()
    };
    // column 6 is mae; average the five rows and compare with MEAN
    let hand: f64 = lines[1..6].iter().map(|l| field(l, 6)).sum::<f64>() / 5.0;
    let summary = field(lines[6], 6);
    assert!((hand - summary).abs() < 1e-12);
}

#[test]
fn selftest_passes_and_fault_injection_trips_it() {
    let clean = cli::cmd_selftest(false);
    assert!(clean.all_passed());
    let faulty = cli::cmd_selftest(true);
    assert!(!faulty.all_passed());
}
