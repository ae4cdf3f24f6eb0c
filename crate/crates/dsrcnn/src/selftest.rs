//! Built-in verification: reduced-size gradient checks and metric oracles
//! that run in seconds. The CLI exposes this as the `selftest` subcommand;
//! a fault-injection hook corrupts one analytic gradient so the harness
//! itself can be shown to fail when it should.

use crate::map::{GroundTruthMask, SaliencyMap};
use crate::metrics;
use crate::model::{build_model, ForwardResult, ModelConfig};
use crate::ops::{self, Mode};
use crate::rcl::{rcl_forward, RclParams};
use crate::seeded_rng;
use crate::tensor::{Shape, Tensor};
use crate::training::{self, attach_total_loss};
use crate::ConvParams;
use rand::Rng as _;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Run every check. `inject_fault` perturbs one analytic gradient before the
/// comparison, which must make the gradient check fail.
pub fn run_selftest(inject_fault: bool) -> SelftestReport {
    let mut report = SelftestReport::default();
    let mut run = |name: &'static str, outcome: Result<(), String>| {
        report.checks.push(match outcome {
            Ok(()) => CheckResult {
                name,
                passed: true,
                detail: "ok".into(),
            },
            Err(detail) => CheckResult {
                name,
                passed: false,
                detail,
            },
        });
    };

    run("gradient-check", gradient_check(inject_fault));
    run("conv-oracle", conv_oracle());
    run("pool-oracle", pool_oracle());
    run("rcl-law", rcl_law());
    run("loss-closed-form", loss_closed_form());
    run("metric-oracles", metric_oracles());
    run("distance-transform", distance_oracle());
    run("otsu-scan", otsu_scan());
    run("weighted-f", weighted_f_checks());
    run("determinism", determinism());
    report
}

fn gradient_check(inject_fault: bool) -> Result<(), String> {
    let config = ModelConfig {
        block_channels: [2, 2, 2, 2, 2],
        convs_per_block: [1, 1, 1, 1, 1],
        ..ModelConfig::default()
    };
    let model = build_model(&config, &mut seeded_rng(41)).map_err(|e| e.to_string())?;
    let mut rng = seeded_rng(42);
    let image = Tensor::from_vec(
        Shape::new(1, 3, 16, 16),
        (0..3 * 256).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .map_err(|e| e.to_string())?;
    let gt = GroundTruthMask::new(16, 16, (0..256).map(|i| (i / 16 + i % 16) % 3 == 0).collect())
        .map_err(|e| e.to_string())?;

    let eval = |m: &crate::model::Model| -> f64 {
        let mut traced = m
            .trace_forward(&image, Mode::Train, &mut seeded_rng(7))
            .expect("valid forward");
        let ids = attach_total_loss(&mut traced.graph, &traced.outputs, &gt).expect("valid loss");
        ids.breakdown(&traced.graph).total
    };

    let mut traced = model
        .trace_forward(&image, Mode::Train, &mut seeded_rng(7))
        .map_err(|e| e.to_string())?;
    let ids = attach_total_loss(&mut traced.graph, &traced.outputs, &gt).map_err(|e| e.to_string())?;
    traced.graph.backward(ids.total).map_err(|e| e.to_string())?;

    // A spread of parameters across every group, three probes each.
    let step = 1e-5;
    let mut fault_pending = inject_fault;
    for (name, id) in &traced.params.flat {
        if !(name.ends_with("feed_forward.kernel" )
            || name.ends_with("recurrent.kernel")
            || name.ends_with("score.kernel")
            || name.ends_with("upsample.kernel")
            || name.starts_with("fusion"))
        {
            continue;
        }
        let mut analytic = traced.graph.grad_or_zeros(*id);
        if fault_pending {
            analytic.data_mut()[0] += 1e-2;
            fault_pending = false;
        }
        for index in 0..analytic.len().min(3) {
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
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            if ((a - numeric) / denom).abs() >= 1e-4 {
                return Err(format!(
                    "{name}[{index}]: analytic {a} vs numeric {numeric}"
                ));
            }
        }
    }
    Ok(())
}

fn conv_oracle() -> Result<(), String> {
    let mut rng = seeded_rng(43);
    let input = Tensor::from_vec(
        Shape::new(1, 2, 5, 5),
        (0..50).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .map_err(|e| e.to_string())?;
    let kernel = Tensor::from_vec(
        Shape::new(3, 2, 3, 3),
        (0..54).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .map_err(|e| e.to_string())?;
    let p = ConvParams::new(kernel.clone(), None, (1, 1), (1, 1)).map_err(|e| e.to_string())?;
    let out = ops::conv2d(&input, &p).map_err(|e| e.to_string())?;
    for n in 0..1 {
        for o in 0..3 {
            for i in 0..5usize {
                for j in 0..5usize {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        for a in 0..3usize {
                            for b in 0..3usize {
                                let y = (i + a) as isize - 1;
                                let x = (j + b) as isize - 1;
                                if y < 0 || x < 0 || y >= 5 || x >= 5 {
                                    continue;
                                }
                                acc += kernel.get(o, c, a, b)
                                    * input.get(n, c, y as usize, x as usize);
                            }
                        }
                    }
                    if (out.get(n, o, i, j) - acc).abs() > 1e-12 {
                        return Err(format!("site ({o},{i},{j}): {} vs {acc}", out.get(n, o, i, j)));
                    }
                }
            }
        }
    }
    Ok(())
}

fn pool_oracle() -> Result<(), String> {
    let mut rng = seeded_rng(44);
    let input = Tensor::from_vec(
        Shape::new(1, 1, 6, 6),
        (0..36).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .map_err(|e| e.to_string())?;
    let (out, argmax) = ops::max_pool2d(&input);
    for i in 0..3 {
        for j in 0..3 {
            let mut best = f64::NEG_INFINITY;
            for a in 0..2 {
                for b in 0..2 {
                    best = best.max(input.get(0, 0, i * 2 + a, j * 2 + b));
                }
            }
            if out.get(0, 0, i, j) != best {
                return Err(format!("window ({i},{j})"));
            }
        }
    }
    let grad = ops::max_pool2d_backward(input.shape(), &argmax, &Tensor::filled(out.shape(), 1.0));
    if grad.sum() != 9.0 {
        return Err("gradient routing lost mass".into());
    }
    Ok(())
}

fn rcl_law() -> Result<(), String> {
    // T = 0 degenerates to conv + relu.
    let mut rng = seeded_rng(45);
    let ff = ConvParams::new(
        Tensor::from_vec(
            Shape::new(2, 1, 3, 3),
            (0..18).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .map_err(|e| e.to_string())?,
        Some(Tensor::zeros(Shape::new(1, 2, 1, 1))),
        (1, 1),
        (1, 1),
    )
    .map_err(|e| e.to_string())?;
    let rec = ConvParams::new(
        Tensor::from_vec(
            Shape::new(2, 2, 3, 3),
            (0..36).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .map_err(|e| e.to_string())?,
        None,
        (1, 1),
        (1, 1),
    )
    .map_err(|e| e.to_string())?;
    let params = RclParams::new(ff.clone(), rec, 0).map_err(|e| e.to_string())?;
    let input = Tensor::from_vec(
        Shape::new(1, 1, 6, 6),
        (0..36).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .map_err(|e| e.to_string())?;
    let out = rcl_forward(&input, &params).map_err(|e| e.to_string())?;
    let plain = ops::relu(&ops::conv2d(&input, &ff).map_err(|e| e.to_string())?);
    if out != plain {
        return Err("T=0 does not equal conv+relu".into());
    }

    // Impulse footprint 3 / 5 / 7 for k = 3.
    for (t, expect) in [(0usize, 3usize), (1, 5), (2, 7)] {
        let params = RclParams::new(
            ConvParams::new(
                Tensor::filled(Shape::new(1, 1, 3, 3), 1.0),
                Some(Tensor::zeros(Shape::new(1, 1, 1, 1))),
                (1, 1),
                (1, 1),
            )
            .map_err(|e| e.to_string())?,
            ConvParams::new(Tensor::filled(Shape::new(1, 1, 3, 3), 1.0), None, (1, 1), (1, 1))
                .map_err(|e| e.to_string())?,
            t,
        )
        .map_err(|e| e.to_string())?;
        let mut impulse = Tensor::zeros(Shape::new(1, 1, 11, 11));
        impulse.set(0, 0, 5, 5, 1.0);
        let out = rcl_forward(&impulse, &params).map_err(|e| e.to_string())?;
        let nonzero: Vec<usize> = out
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        let rows: Vec<usize> = nonzero.iter().map(|i| i / 11).collect();
        let side = rows.iter().max().unwrap() - rows.iter().min().unwrap() + 1;
        if side != expect {
            return Err(format!("T={t}: footprint side {side}, expected {expect}"));
        }
    }
    Ok(())
}

fn loss_closed_form() -> Result<(), String> {
    let gt = GroundTruthMask::new(3, 4, {
        let mut v = vec![false; 12];
        v[0] = true;
        v[5] = true;
        v[10] = true;
        v
    })
    .map_err(|e| e.to_string())?;
    let half = SaliencyMap::new(3, 4, vec![0.5; 12]).map_err(|e| e.to_string())?;
    let result = ForwardResult {
        side_maps: [
            half.clone(),
            half.clone(),
            half.clone(),
            half.clone(),
            half.clone(),
        ],
        fused_map: half,
    };
    let breakdown = training::total_loss(&result, &gt).map_err(|e| e.to_string())?;
    let expect = 6.0 * 4.5 * std::f64::consts::LN_2;
    if (breakdown.total - expect).abs() > 1e-9 {
        return Err(format!("{} vs {expect}", breakdown.total));
    }
    Ok(())
}

fn metric_oracles() -> Result<(), String> {
    let mut rng = seeded_rng(46);
    for _ in 0..10 {
        let (h, w) = (8usize, 8usize);
        let map = SaliencyMap::new(h, w, (0..64).map(|_| rng.random_range(0.0..1.0)).collect())
            .map_err(|e| e.to_string())?;
        let gt = GroundTruthMask::new(h, w, (0..64).map(|_| rng.random::<f64>() < 0.4).collect())
            .map_err(|e| e.to_string())?;
        let mut acc = 0.0;
        for i in 0..64 {
            acc += (map.data()[i] - if gt.data()[i] { 1.0 } else { 0.0 }).abs();
        }
        if (metrics::mae(&map, &gt).map_err(|e| e.to_string())? - acc / 64.0).abs() > 1e-12 {
            return Err("mae oracle mismatch".into());
        }
        let pred = map.binarize_at(0.5);
        let (p, r) = metrics::precision_recall(&pred, &gt).map_err(|e| e.to_string())?;
        let (mut tp, mut pp, mut gp) = (0.0, 0.0, 0.0);
        for i in 0..64 {
            if pred.data()[i] {
                pp += 1.0;
            }
            if gt.data()[i] {
                gp += 1.0;
            }
            if pred.data()[i] && gt.data()[i] {
                tp += 1.0;
            }
        }
        let expect_p = if pp == 0.0 { f64::from(gp == 0.0) } else { tp / pp };
        let expect_r = if gp == 0.0 { 1.0 } else { tp / gp };
        if (p - expect_p).abs() > 1e-12 || (r - expect_r).abs() > 1e-12 {
            return Err("precision/recall oracle mismatch".into());
        }
    }
    Ok(())
}

fn distance_oracle() -> Result<(), String> {
    let mut rng = seeded_rng(47);
    for _ in 0..5 {
        let (h, w) = (12usize, 12usize);
        let mut bits: Vec<bool> = (0..h * w).map(|_| rng.random::<f64>() < 0.15).collect();
        if !bits.iter().any(|&b| b) {
            bits[17] = true;
        }
        let mask = GroundTruthMask::new(h, w, bits).map_err(|e| e.to_string())?;
        let dt = metrics::distance_transform(&mask).map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                let mut best = f64::INFINITY;
                for fy in 0..h {
                    for fx in 0..w {
                        if mask.get(fy, fx) {
                            let d = ((y as f64 - fy as f64).powi(2))
                                + ((x as f64 - fx as f64).powi(2));
                            best = best.min(d);
                        }
                    }
                }
                if dt.dist_sq[y * w + x] != best {
                    return Err(format!("({y},{x}): {} vs {best}", dt.dist_sq[y * w + x]));
                }
            }
        }
    }
    Ok(())
}

fn otsu_scan() -> Result<(), String> {
    let mut rng = seeded_rng(48);
    for _ in 0..10 {
        let map = SaliencyMap::new(7, 9, (0..63).map(|_| rng.random_range(0.0..1.0)).collect())
            .map_err(|e| e.to_string())?;
        let t = metrics::otsu_threshold(&map);
        let levels: Vec<usize> = map
            .data()
            .iter()
            .map(|&v| ((v * 255.0).round() as usize).min(255))
            .collect();
        let mut best = (0usize, f64::NEG_INFINITY);
        for cand in 0..255usize {
            let (mut w0, mut w1, mut s0, mut s1) = (0.0, 0.0, 0.0, 0.0);
            for &l in &levels {
                if l <= cand {
                    w0 += 1.0;
                    s0 += l as f64;
                } else {
                    w1 += 1.0;
                    s1 += l as f64;
                }
            }
            if w0 == 0.0 || w1 == 0.0 {
                continue;
            }
            let var = w0 * w1 * (s0 / w0 - s1 / w1).powi(2);
            if var > best.1 {
                best = (cand, var);
            }
        }
        if t != (best.0 as f64 + 0.5) / 255.0 {
            return Err(format!("threshold {t} does not attain the scan maximum"));
        }
    }
    Ok(())
}

fn weighted_f_checks() -> Result<(), String> {
    let mut rng = seeded_rng(49);
    for _ in 0..5 {
        let (h, w) = (12usize, 12usize);
        let mut bits: Vec<bool> = (0..h * w).map(|_| rng.random::<f64>() < 0.3).collect();
        if !bits.iter().any(|&b| b) {
            bits[0] = true;
        }
        let gt = GroundTruthMask::new(h, w, bits).map_err(|e| e.to_string())?;
        let score = metrics::weighted_f(&gt.to_map(), &gt, 1.0).map_err(|e| e.to_string())?;
        if score != 1.0 {
            return Err(format!("weighted_f(gt, gt) = {score}"));
        }
        if metrics::mae(&gt.to_map(), &gt).map_err(|e| e.to_string())? != 0.0 {
            return Err("mae(gt, gt) != 0".into());
        }
    }
    Ok(())
}

fn determinism() -> Result<(), String> {
    let config = ModelConfig {
        block_channels: [2, 2, 2, 2, 2],
        convs_per_block: [1, 1, 1, 1, 1],
        ..ModelConfig::default()
    };
    let model = build_model(&config, &mut seeded_rng(50)).map_err(|e| e.to_string())?;
    let mut rng = seeded_rng(51);
    let image = Tensor::from_vec(
        Shape::new(1, 3, 16, 16),
        (0..3 * 256).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .map_err(|e| e.to_string())?;
    let a = model
        .forward(&image, Mode::Infer, &mut seeded_rng(0))
        .map_err(|e| e.to_string())?;
    let b = model
        .forward(&image, Mode::Infer, &mut seeded_rng(0))
        .map_err(|e| e.to_string())?;
    if a.fused_map != b.fused_map {
        return Err("repeated inference differs".into());
    }
    let m2 = build_model(&config, &mut seeded_rng(50)).map_err(|e| e.to_string())?;
    let mut same = true;
    let mut params_a = Vec::new();
    model.for_each_param(&mut |_, t| params_a.push(t.clone()));
    let mut i = 0;
    m2.for_each_param(&mut |_, t| {
        same &= params_a[i].data() == t.data();
        i += 1;
    });
    if !same {
        return Err("same-seed builds differ".into());
    }
    Ok(())
}
