//! Class-balanced cross-entropy over the six output maps and SGD training.
//!
//! Each side output and the fused output is scored against the ground truth
//! with a cross-entropy whose positive term is weighted by the background
//! fraction alpha = |Y-| / (|Y+| + |Y-|) and whose negative term is weighted
//! by 1 - alpha, compensating the salient/background pixel imbalance. Losses
//! are summed over pixels, not averaged. The joint objective is the plain sum
//! of the five side losses and the fused loss, minimized by momentum SGD one
//! image at a time.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::map::{GroundTruthMask, SaliencyMap};
use crate::model::{BoundForward, ForwardResult, Model, BLOCK_COUNT};
use crate::ops::{self, Mode};
use crate::seeded_rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;

/// Loss of one forward pass, split by head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub side: [f64; BLOCK_COUNT],
    pub fuse: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(side: [f64; BLOCK_COUNT], fuse: f64) -> LossBreakdown {
        LossBreakdown {
            side,
            fuse,
            total: side.iter().sum::<f64>() + fuse,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub seed: u64,
    /// When set, gradients are rescaled so their global L2 norm never exceeds
    /// this value before the update. The summed-over-pixels loss produces
    /// occasional very large per-image gradients that can otherwise knock
    /// relu units permanently dead early in training.
    pub clip_norm: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 0.0,
            iterations: 1000,
            seed: 0,
            clip_norm: None,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!(
                    "clip norm must be positive when set, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Rescale `grads` in place so their global L2 norm is at most `max_norm`.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) {
    let norm: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}

/// Background fraction |Y-| / (|Y+| + |Y-|), the weight on the positive term.
pub fn class_balance_alpha(gt: &GroundTruthMask) -> f64 {
    let total = gt.len();
    let positive = gt.foreground_count();
    (total - positive) as f64 / total as f64
}

fn check_dims(pred: (usize, usize), gt: &GroundTruthMask, context: &str) -> Result<()> {
    if pred != gt.dims() {
        return Err(Error::ShapeMismatch {
            context: context.into(),
            expected: format!("{}x{}", gt.height(), gt.width()),
            got: format!("{}x{}", pred.0, pred.1),
        });
    }
    Ok(())
}

/// Per-pixel log-loss coefficient maps for the balanced cross-entropy.
fn balance_coeffs(gt: &GroundTruthMask) -> (Tensor, Tensor) {
    let alpha = class_balance_alpha(gt);
    let shape = crate::tensor::Shape::new(1, 1, gt.height(), gt.width());
    let mut coeff_pos = Tensor::zeros(shape);
    let mut coeff_neg = Tensor::zeros(shape);
    for (i, &fg) in gt.data().iter().enumerate() {
        if fg {
            coeff_pos.data_mut()[i] = -alpha;
        } else {
            coeff_neg.data_mut()[i] = -(1.0 - alpha);
        }
    }
    (coeff_pos, coeff_neg)
}

/// Balanced cross-entropy of a prediction map against a binary mask:
/// -alpha * sum over salient pixels of ln p - (1-alpha) * sum over
/// background pixels of ln(1-p), with p clamped away from 0 and 1.
pub fn balanced_bce(pred: &SaliencyMap, gt: &GroundTruthMask) -> Result<f64> {
    check_dims(pred.dims(), gt, "balanced_bce")?;
    let (coeff_pos, coeff_neg) = balance_coeffs(gt);
    ops::log_mix(&pred.to_tensor(), &coeff_pos, &coeff_neg)
}

/// Record the balanced cross-entropy of a graph-held prediction map.
pub fn attach_balanced_bce(
    graph: &mut Graph,
    pred: TensorId,
    gt: &GroundTruthMask,
) -> Result<TensorId> {
    let shape = graph.value(pred).shape();
    check_dims((shape.height, shape.width), gt, "balanced_bce")?;
    let (coeff_pos, coeff_neg) = balance_coeffs(gt);
    graph.log_mix(pred, coeff_pos, coeff_neg)
}

/// Graph ids of the per-head losses and their sum.
#[derive(Clone, Copy, Debug)]
pub struct LossIds {
    pub side: [TensorId; BLOCK_COUNT],
    pub fuse: TensorId,
    pub total: TensorId,
}

/// Attach the joint objective to a traced forward pass: one balanced
/// cross-entropy per side map, one for the fused map, summed into a single
/// scalar so one backward pass reaches the trunk, side heads, and fusion
/// weights together.
pub fn attach_total_loss(
    graph: &mut Graph,
    outputs: &BoundForward,
    gt: &GroundTruthMask,
) -> Result<LossIds> {
    let mut side = [outputs.fused_map; BLOCK_COUNT]; // placeholder ids, overwritten below
    for (m, &map) in outputs.side_maps.iter().enumerate() {
        side[m] = attach_balanced_bce(graph, map, gt)?;
    }
    let fuse = attach_balanced_bce(graph, outputs.fused_map, gt)?;
    let mut total = side[0];
    for &s in &side[1..] {
        total = graph.add(total, s)?;
    }
    total = graph.add(total, fuse)?;
    Ok(LossIds { side, fuse, total })
}

impl LossIds {
    pub fn breakdown(&self, graph: &Graph) -> LossBreakdown {
        let mut side = [0.0; BLOCK_COUNT];
        for (v, &id) in side.iter_mut().zip(&self.side) {
            *v = graph.value(id).as_scalar().expect("loss nodes are scalar");
        }
        LossBreakdown::new(side, graph.value(self.fuse).as_scalar().expect("scalar"))
    }
}

/// Evaluate the joint objective on already-materialized output maps.
pub fn total_loss(result: &ForwardResult, gt: &GroundTruthMask) -> Result<LossBreakdown> {
    let mut side = [0.0; BLOCK_COUNT];
    for (v, map) in side.iter_mut().zip(&result.side_maps) {
        *v = balanced_bce(map, gt)?;
    }
    let fuse = balanced_bce(&result.fused_map, gt)?;
    Ok(LossBreakdown::new(side, fuse))
}

/// Momentum buffers, one per parameter in canonical order.
pub struct Velocity(Vec<Tensor>);

impl Velocity {
    pub fn zeros(model: &Model) -> Velocity {
        let mut slots = Vec::new();
        model.for_each_param(&mut |_, t| slots.push(Tensor::zeros(t.shape())));
        Velocity(slots)
    }
}

/// One SGD update over every parameter:
/// v <- momentum * v - lr * (g + weight_decay * theta); theta <- theta + v.
/// A non-finite gradient aborts with the offending parameter's name.
pub fn sgd_step(
    model: &mut Model,
    grads: &[Tensor],
    cfg: &SgdConfig,
    velocity: &mut Velocity,
) -> Result<()> {
    cfg.validate()?;
    if grads.len() != velocity.0.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} gradient arrays, got {}",
            velocity.0.len(),
            grads.len()
        )));
    }
    let mut index = 0;
    let mut failure: Option<Error> = None;
    model.for_each_param_mut(&mut |name, theta| {
        if failure.is_some() {
            return;
        }
        let grad = &grads[index];
        let vel = &mut velocity.0[index];
        index += 1;
        if !grad.all_finite() {
            failure = Some(Error::NonFiniteGradient { param: name.into() });
            return;
        }
        for ((t, v), &g) in theta
            .data_mut()
            .iter_mut()
            .zip(vel.data_mut())
            .zip(grad.data())
        {
            *v = cfg.momentum * *v - cfg.learning_rate * (g + cfg.weight_decay * *t);
            *t += *v;
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// One training step on a single image: trace a train-mode forward pass,
/// attach the joint loss, backpropagate, and update the model. Returns the
/// loss measured before the update.
pub fn train_step(
    model: &mut Model,
    image: &Tensor,
    gt: &GroundTruthMask,
    cfg: &SgdConfig,
    velocity: &mut Velocity,
    rng: &mut crate::Rng,
) -> Result<LossBreakdown> {
    let mut traced = model.trace_forward(image, Mode::Train, rng)?;
    let loss_ids = attach_total_loss(&mut traced.graph, &traced.outputs, gt)?;
    let breakdown = loss_ids.breakdown(&traced.graph);
    traced.graph.backward(loss_ids.total)?;
    let mut grads: Vec<Tensor> = traced
        .params
        .flat
        .iter()
        .map(|&(_, id)| traced.graph.grad_or_zeros(id))
        .collect();
    if let Some(max_norm) = cfg.clip_norm {
        clip_gradients(&mut grads, max_norm);
    }
    sgd_step(model, &grads, cfg, velocity)?;
    Ok(breakdown)
}

/// Minimize the joint objective over a corpus of (image, mask) pairs with
/// per-image SGD. Visit order is reshuffled every epoch from the config seed,
/// so a fixed seed reproduces the loss history exactly. Returns one
/// [`LossBreakdown`] per iteration.
pub fn train(
    model: &mut Model,
    corpus: &[(Tensor, GroundTruthMask)],
    cfg: &SgdConfig,
) -> Result<Vec<LossBreakdown>> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Dataset("training corpus is empty".into()));
    }
    for (i, (image, gt)) in corpus.iter().enumerate() {
        let s = image.shape();
        if (s.height, s.width) != gt.dims() {
            return Err(Error::Dataset(format!(
                "corpus pair {i}: image is {}x{} but mask is {}x{}",
                s.height,
                s.width,
                gt.height(),
                gt.width()
            )));
        }
    }

    let mut rng = seeded_rng(cfg.seed);
    let mut velocity = Velocity::zeros(model);
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    'epochs: loop {
        order.shuffle(&mut rng);
        for &idx in &order {
            if history.len() == cfg.iterations {
                break 'epochs;
            }
            let (image, gt) = &corpus[idx];
            let breakdown = train_step(model, image, gt, cfg, &mut velocity, &mut rng)?;
            history.push(breakdown);
        }
        if cfg.iterations == 0 {
            break;
        }
    }
    Ok(history)
}

/// Mean joint loss over a corpus, evaluated deterministically (no dropout).
pub fn corpus_loss(model: &Model, corpus: &[(Tensor, GroundTruthMask)]) -> Result<f64> {
    let mut acc = 0.0;
    for (image, gt) in corpus {
        let result = model.forward(image, Mode::Infer, &mut seeded_rng(0))?;
        acc += total_loss(&result, gt)?.total;
    }
    Ok(acc / corpus.len() as f64)
}
