//! Parameter initializers.

use crate::tensor::{Shape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Fan-in-scaled uniform kernel init: U(-a, a) with a = sqrt(gain / fan_in),
/// fan_in = in_channels * k_h * k_w. Gain 6 preserves activation scale
/// through a conv + relu stage; smaller gains damp a branch. Draws happen in
/// row-major element order so a fixed seed yields bit-identical kernels.
pub fn fan_in_uniform(shape: Shape, gain: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let fan_in = (shape.channels * shape.height * shape.width).max(1);
    let bound = (gain / fan_in as f64).sqrt();
    let data = (0..shape.count())
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_vec(shape, data).expect("count matches shape")
}

/// Gain for feed-forward trunk kernels (scale-preserving under relu).
pub const FEED_FORWARD_GAIN: f64 = 6.0;

/// Gain for recurrent kernels. Keeping the recurrent branch a contraction
/// bounds the activation growth of the unfolded recurrence for any iteration
/// count (the per-stage variance series converges instead of doubling).
pub const RECURRENT_GAIN: f64 = 1.5;

/// Gain for the 1x1 side-output scoring kernels; small so the side maps start
/// near 0.5 instead of saturating the sigmoid before training begins.
pub const SCORE_GAIN: f64 = 0.1;

/// Trunk biases draw from U(-BIAS_BOUND, BIAS_BOUND) rather than starting at
/// zero. A zero bias parks every dead region's pre-activation exactly on the
/// relu kink, where the subgradient convention and central differences
/// legitimately disagree; a generic offset keeps gradient checks meaningful.
pub const BIAS_BOUND: f64 = 0.05;

pub fn bias_uniform(channels: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..channels)
        .map(|_| rng.random_range(-BIAS_BOUND..BIAS_BOUND))
        .collect();
    Tensor::from_vec(Shape::new(1, channels, 1, 1), data).expect("count matches shape")
}

/// Bilinear interpolation weights for a transposed-conv upsampler with the
/// given integer factor. Kernel side is 2*factor - (factor % 2); the weights
/// tile into a partition of unity away from borders. Channels are mapped
/// one-to-one (diagonal), which for the side-output heads is just 1 -> 1.
pub fn bilinear_kernel(channels: usize, factor: usize) -> Tensor {
    let side = 2 * factor - factor % 2;
    let center = if side % 2 == 1 {
        (factor - 1) as f64
    } else {
        factor as f64 - 0.5
    };
    let mut kernel = Tensor::zeros(Shape::new(channels, channels, side, side));
    for c in 0..channels {
        for a in 0..side {
            for b in 0..side {
                let wy = 1.0 - (a as f64 - center).abs() / factor as f64;
                let wx = 1.0 - (b as f64 - center).abs() / factor as f64;
                kernel.set(c, c, a, b, wy * wx);
            }
        }
    }
    kernel
}

/// Kernel side used for a factor-f bilinear upsampler.
pub fn bilinear_kernel_side(factor: usize) -> usize {
    2 * factor - factor % 2
}
