//! Synthetic training corpora: random geometric shapes rendered as bright
//! foreground on a darker background, with the shape as the salient mask.
//! Used by the self-check suites and the runnable examples; real datasets go
//! through [`crate::dataset`] instead.

use crate::map::GroundTruthMask;
use crate::tensor::{Shape, Tensor};
use crate::Rng;
use rand::Rng as _;

/// One image/mask pair: a corner-anchored rectangle spanning 40-75% of each
/// axis, drawn as bright foreground over a darker background with mild pixel
/// noise. Anchoring the shape to a random corner keeps the mask expressible
/// at every feature stride, so even the coarsest side head has a learnable
/// target at small image sizes. Images are 3-channel, values in [0, 1].
pub fn shape_pair(height: usize, width: usize, rng: &mut Rng) -> (Tensor, GroundTruthMask) {
    let corner = rng.random_range(0..4u32);
    let span_h = rng.random_range(height * 2 / 5..=height * 3 / 4);
    let span_w = rng.random_range(width * 2 / 5..=width * 3 / 4);
    let (y0, y1, x0, x1) = match corner {
        0 => (0, span_h, 0, span_w),
        1 => (0, span_h, width - span_w, width),
        2 => (height - span_h, height, 0, span_w),
        _ => (height - span_h, height, width - span_w, width),
    };

    let mut mask = vec![false; height * width];
    for y in y0..y1 {
        for x in x0..x1 {
            mask[y * width + x] = true;
        }
    }

    let background: [f64; 3] = [
        rng.random_range(0.05..0.30),
        rng.random_range(0.05..0.30),
        rng.random_range(0.05..0.30),
    ];
    let foreground: [f64; 3] = [
        rng.random_range(0.70..0.95),
        rng.random_range(0.70..0.95),
        rng.random_range(0.70..0.95),
    ];

    let mut data = vec![0.0; 3 * height * width];
    for (i, &fg) in mask.iter().enumerate() {
        for c in 0..3 {
            let base = if fg { foreground[c] } else { background[c] };
            let noisy = base + rng.random_range(-0.03..0.03);
            data[c * height * width + i] = noisy.clamp(0.0, 1.0);
        }
    }

    (
        Tensor::from_vec(Shape::new(1, 3, height, width), data).expect("sized above"),
        GroundTruthMask::new(height, width, mask).expect("sized above"),
    )
}

/// A corpus of `count` independent shape pairs.
pub fn shape_corpus(
    count: usize,
    height: usize,
    width: usize,
    rng: &mut Rng,
) -> Vec<(Tensor, GroundTruthMask)> {
    (0..count).map(|_| shape_pair(height, width, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn corpus_is_deterministic_and_well_formed() {
        let a = shape_corpus(4, 32, 32, &mut seeded_rng(7));
        let b = shape_corpus(4, 32, 32, &mut seeded_rng(7));
        for ((ia, ga), (ib, gb)) in a.iter().zip(&b) {
            assert_eq!(ia.data(), ib.data());
            assert_eq!(ga, gb);
        }
        for (image, gt) in &a {
            assert!(image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let fg = gt.foreground_count();
            assert!(fg > 0 && fg < gt.len(), "degenerate mask ({fg} fg)");
        }
    }
}
