//! Numeric kernels: forward passes and their reverse-mode gradients.
//!
//! Everything here is a pure function over [`Tensor`] values. The op graph in
//! [`crate::graph`] records which of these ran and replays the matching
//! backward rule. All convolutions are direct loops; at desk scale clarity
//! beats blocking tricks.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Convolution parameters: kernel laid out as (out_c, in_c, k_h, k_w),
/// optional per-output-channel bias stored as (1, out_c, 1, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub kernel: Tensor,
    pub bias: Option<Tensor>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvParams {
    pub fn new(kernel: Tensor, bias: Option<Tensor>, stride: (usize, usize), padding: (usize, usize)) -> Result<ConvParams> {
        let p = ConvParams {
            kernel,
            bias,
            stride,
            padding,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape().batch
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape().channels
    }

    pub fn kernel_extent(&self) -> (usize, usize) {
        (self.kernel.shape().height, self.kernel.shape().width)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.kernel.shape();
        if let Some(b) = &self.bias {
            let bs = b.shape();
            if bs.channels != k.batch || bs.batch != 1 || bs.height != 1 || bs.width != 1 {
                return Err(Error::shape(
                    "conv bias",
                    format!("1x{}x1x1", k.batch),
                    bs,
                ));
            }
        }
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::InvalidArgument("conv stride must be positive".into()));
        }
        if self.padding.0 >= k.height || self.padding.1 >= k.width {
            return Err(Error::InvalidArgument(format!(
                "padding {:?} must be smaller than kernel extent {}x{}",
                self.padding, k.height, k.width
            )));
        }
        Ok(())
    }
}

fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::InvalidArgument(format!(
            "conv input extent {input} with padding {padding} is smaller than kernel {kernel}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Direct 2-D cross-correlation with zero padding.
///
/// out[n,o,i,j] = bias[o] + sum over (c,a,b) of
///   kernel[o,c,a,b] * input[n, c, i*sh + a - ph, j*sw + b - pw]
/// where coordinates outside the input read as zero.
pub fn conv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    p.validate()?;
    conv2d_parts(input, &p.kernel, p.bias.as_ref(), p.stride, p.padding)
}

pub fn conv2d_parts(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor> {
    let is = input.shape();
    let ks = kernel.shape();
    if is.channels != ks.channels {
        return Err(Error::shape(
            "conv2d input channels",
            format!("{} channels", ks.channels),
            is,
        ));
    }
    let (sh, sw) = stride;
    let (ph, pw) = padding;
    let oh = conv_output_extent(is.height, ks.height, sh, ph)?;
    let ow = conv_output_extent(is.width, ks.width, sw, pw)?;
    let os = Shape::new(is.batch, ks.batch, oh, ow);
    let mut out = Tensor::zeros(os);

    for n in 0..is.batch {
        for o in 0..ks.batch {
            let base = bias.map_or(0.0, |b| b.data()[o]);
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = base;
                    for c in 0..ks.channels {
                        for a in 0..ks.height {
                            let y = (i * sh + a).wrapping_sub(ph);
                            if y >= is.height {
                                continue;
                            }
                            for b in 0..ks.width {
                                let x = (j * sw + b).wrapping_sub(pw);
                                if x >= is.width {
                                    continue;
                                }
                                acc += kernel.get(o, c, a, b) * input.get(n, c, y, x);
                            }
                        }
                    }
                    out.set(n, o, i, j, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] w.r.t. input, kernel, and bias.
pub fn conv2d_backward(
    input: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Option<Tensor>) {
    conv2d_backward_parts(
        input,
        &p.kernel,
        p.bias.is_some(),
        p.stride,
        p.padding,
        grad_out,
    )
}

pub fn conv2d_backward_parts(
    input: &Tensor,
    kernel: &Tensor,
    has_bias: bool,
    stride: (usize, usize),
    padding: (usize, usize),
    grad_out: &Tensor,
) -> (Tensor, Tensor, Option<Tensor>) {
    let is = input.shape();
    let ks = kernel.shape();
    let os = grad_out.shape();
    let (sh, sw) = stride;
    let (ph, pw) = padding;

    let mut grad_input = Tensor::zeros(is);
    let mut grad_kernel = Tensor::zeros(ks);
    let mut grad_bias = has_bias.then(|| Tensor::zeros(Shape::new(1, ks.batch, 1, 1)));

    for n in 0..is.batch {
        for o in 0..ks.batch {
            for i in 0..os.height {
                for j in 0..os.width {
                    let g = grad_out.get(n, o, i, j);
                    if let Some(gb) = grad_bias.as_mut() {
                        gb.data_mut()[o] += g;
                    }
                    for c in 0..ks.channels {
                        for a in 0..ks.height {
                            let y = (i * sh + a).wrapping_sub(ph);
                            if y >= is.height {
                                continue;
                            }
                            for b in 0..ks.width {
                                let x = (j * sw + b).wrapping_sub(pw);
                                if x >= is.width {
                                    continue;
                                }
                                let gi = is.index(n, c, y, x);
                                let gk = ks.index(o, c, a, b);
                                grad_input.data_mut()[gi] += g * kernel.data()[gk];
                                grad_kernel.data_mut()[gk] += g * input.data()[gi];
                            }
                        }
                    }
                }
            }
        }
    }
    (grad_input, grad_kernel, grad_bias)
}

/// Geometry of a transposed convolution: the uncropped extent and the
/// centered crop offsets for the requested output size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransposeGeom {
    pub full: (usize, usize),
    pub offset: (usize, usize),
    pub out: (usize, usize),
}

pub fn transpose_geom(
    input: (usize, usize),
    kernel: (usize, usize),
    stride: (usize, usize),
    out: (usize, usize),
) -> Result<TransposeGeom> {
    let full_h = (input.0 - 1) * stride.0 + kernel.0;
    let full_w = (input.1 - 1) * stride.1 + kernel.1;
    if out.0 == 0 || out.1 == 0 || out.0 > full_h || out.1 > full_w {
        return Err(Error::InvalidArgument(format!(
            "transposed conv cannot reach output {}x{} from input {}x{} (stride {:?}, kernel {:?}, full {}x{})",
            out.0, out.1, input.0, input.1, stride, kernel, full_h, full_w
        )));
    }
    Ok(TransposeGeom {
        full: (full_h, full_w),
        offset: ((full_h - out.0) / 2, (full_w - out.1) / 2),
        out,
    })
}

/// Transposed convolution (the adjoint of the strided convolution's linear
/// map), center-cropped to `out_size`. Kernel layout is (out_c, in_c, k, k)
/// where in_c matches the input being upsampled.
///
/// out_full[n,o, i*sh + a, j*sw + b] += kernel[o,c,a,b] * input[n,c,i,j]
pub fn conv_transpose2d(
    input: &Tensor,
    p: &ConvParams,
    out_size: (usize, usize),
) -> Result<Tensor> {
    p.validate()?;
    conv_transpose2d_parts(input, &p.kernel, p.bias.as_ref(), p.stride, out_size)
}

pub fn conv_transpose2d_parts(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    out_size: (usize, usize),
) -> Result<Tensor> {
    let is = input.shape();
    let ks = kernel.shape();
    if is.channels != ks.channels {
        return Err(Error::shape(
            "conv_transpose2d input channels",
            format!("{} channels", ks.channels),
            is,
        ));
    }
    let geom = transpose_geom(is.spatial(), (ks.height, ks.width), stride, out_size)?;
    let mut full = Tensor::zeros(Shape::new(is.batch, ks.batch, geom.full.0, geom.full.1));

    for n in 0..is.batch {
        for c in 0..ks.channels {
            for i in 0..is.height {
                for j in 0..is.width {
                    let v = input.get(n, c, i, j);
                    if v == 0.0 {
                        continue;
                    }
                    for o in 0..ks.batch {
                        for a in 0..ks.height {
                            for b in 0..ks.width {
                                let y = i * stride.0 + a;
                                let x = j * stride.1 + b;
                                let fi = full.shape().index(n, o, y, x);
                                full.data_mut()[fi] += kernel.get(o, c, a, b) * v;
                            }
                        }
                    }
                }
            }
        }
    }

    let mut out = Tensor::zeros(Shape::new(is.batch, ks.batch, out_size.0, out_size.1));
    for n in 0..is.batch {
        for o in 0..ks.batch {
            let base = bias.map_or(0.0, |b| b.data()[o]);
            for y in 0..out_size.0 {
                for x in 0..out_size.1 {
                    let v = full.get(n, o, y + geom.offset.0, x + geom.offset.1) + base;
                    out.set(n, o, y, x, v);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv_transpose2d`] w.r.t. input, kernel, and bias.
pub fn conv_transpose2d_backward(
    input: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    conv_transpose2d_backward_parts(input, &p.kernel, p.bias.is_some(), p.stride, grad_out)
}

pub fn conv_transpose2d_backward_parts(
    input: &Tensor,
    kernel: &Tensor,
    has_bias: bool,
    stride: (usize, usize),
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let is = input.shape();
    let ks = kernel.shape();
    let os = grad_out.shape();
    let geom = transpose_geom(is.spatial(), (ks.height, ks.width), stride, os.spatial())?;

    // Embed the cropped gradient back into the full uncropped extent.
    let mut grad_full = Tensor::zeros(Shape::new(is.batch, ks.batch, geom.full.0, geom.full.1));
    for n in 0..is.batch {
        for o in 0..ks.batch {
            for y in 0..os.height {
                for x in 0..os.width {
                    grad_full.set(
                        n,
                        o,
                        y + geom.offset.0,
                        x + geom.offset.1,
                        grad_out.get(n, o, y, x),
                    );
                }
            }
        }
    }

    let mut grad_input = Tensor::zeros(is);
    let mut grad_kernel = Tensor::zeros(ks);
    let grad_bias = has_bias.then(|| {
        let mut gb = Tensor::zeros(Shape::new(1, ks.batch, 1, 1));
        for n in 0..os.batch {
            for o in 0..ks.batch {
                for y in 0..os.height {
                    for x in 0..os.width {
                        gb.data_mut()[o] += grad_out.get(n, o, y, x);
                    }
                }
            }
        }
        gb
    });

    for n in 0..is.batch {
        for c in 0..ks.channels {
            for i in 0..is.height {
                for j in 0..is.width {
                    let mut acc = 0.0;
                    for o in 0..ks.batch {
                        for a in 0..ks.height {
                            for b in 0..ks.width {
                                let y = i * stride.0 + a;
                                let x = j * stride.1 + b;
                                let g = grad_full.get(n, o, y, x);
                                acc += g * kernel.get(o, c, a, b);
                                let gk = ks.index(o, c, a, b);
                                grad_kernel.data_mut()[gk] += g * input.get(n, c, i, j);
                            }
                        }
                    }
                    let gi = is.index(n, c, i, j);
                    grad_input.data_mut()[gi] += acc;
                }
            }
        }
    }
    Ok((grad_input, grad_kernel, grad_bias))
}

/// Predictions are clamped to [PRED_CLAMP, 1 - PRED_CLAMP] inside log terms
/// so a saturated map cannot produce an infinite loss.
pub const PRED_CLAMP: f64 = 1e-9;

/// Weighted log loss: sum_i cp_i * ln(clamp(p_i)) + cn_i * ln(clamp(1 - p_i)).
/// Negative coefficients encode cross-entropy losses.
pub fn log_mix(pred: &Tensor, coeff_pos: &Tensor, coeff_neg: &Tensor) -> Result<f64> {
    if pred.shape() != coeff_pos.shape() || pred.shape() != coeff_neg.shape() {
        return Err(Error::shape("log_mix", pred.shape(), coeff_pos.shape()));
    }
    let lo = PRED_CLAMP;
    let hi = 1.0 - PRED_CLAMP;
    let mut acc = 0.0;
    for ((&p, &cp), &cn) in pred
        .data()
        .iter()
        .zip(coeff_pos.data())
        .zip(coeff_neg.data())
    {
        if cp != 0.0 {
            acc += cp * p.clamp(lo, hi).ln();
        }
        if cn != 0.0 {
            acc += cn * (1.0 - p).clamp(lo, hi).ln();
        }
    }
    Ok(acc)
}

/// Gradient of [`log_mix`] w.r.t. pred; zero where the clamp is active so the
/// analytic gradient agrees with finite differences piecewise.
pub fn log_mix_backward(
    pred: &Tensor,
    coeff_pos: &Tensor,
    coeff_neg: &Tensor,
    upstream: f64,
) -> Tensor {
    let lo = PRED_CLAMP;
    let hi = 1.0 - PRED_CLAMP;
    let mut grad = Tensor::zeros(pred.shape());
    for (i, &p) in pred.data().iter().enumerate() {
        let cp = coeff_pos.data()[i];
        let cn = coeff_neg.data()[i];
        let mut g = 0.0;
        if cp != 0.0 && p > lo && p < hi {
            g += cp / p;
        }
        if cn != 0.0 && (1.0 - p) > lo && (1.0 - p) < hi {
            g -= cn / (1.0 - p);
        }
        grad.data_mut()[i] = g * upstream;
    }
    grad
}

/// 2x2 max pooling with stride 2 in ceil mode, so odd extents keep their
/// trailing row/column as a partial window. Returns the pooled tensor and the
/// flat input index of each window's maximum (first scanned wins ties).
pub fn max_pool2d(input: &Tensor) -> (Tensor, Vec<usize>) {
    let is = input.shape();
    let oh = is.height.div_ceil(2);
    let ow = is.width.div_ceil(2);
    let os = Shape::new(is.batch, is.channels, oh, ow);
    let mut out = Tensor::zeros(os);
    let mut argmax = vec![0usize; os.count()];

    for n in 0..is.batch {
        for c in 0..is.channels {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for a in 0..2 {
                        let y = i * 2 + a;
                        if y >= is.height {
                            continue;
                        }
                        for b in 0..2 {
                            let x = j * 2 + b;
                            if x >= is.width {
                                continue;
                            }
                            let v = input.get(n, c, y, x);
                            if v > best {
                                best = v;
                                best_idx = is.index(n, c, y, x);
                            }
                        }
                    }
                    let oi = os.index(n, c, i, j);
                    out.data_mut()[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
    }
    (out, argmax)
}

/// Routes the upstream gradient to each window's recorded argmax site.
pub fn max_pool2d_backward(input_shape: Shape, argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut grad_input = Tensor::zeros(input_shape);
    for (oi, &ii) in argmax.iter().enumerate() {
        grad_input.data_mut()[ii] += grad_out.data()[oi];
    }
    grad_input
}

/// Largest pre-activation magnitude that still keeps sigmoid strictly inside
/// (0, 1) in f64; inputs are clamped here so saturated maps never round to
/// exactly 0 or 1.
const SIGMOID_CLAMP: f64 = 36.0;

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(scalar_sigmoid)
}

#[inline]
pub fn scalar_sigmoid(x: f64) -> f64 {
    let z = x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// d sigmoid = out * (1 - out), expressed from the saved output.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut grad = grad_out.clone();
    for (g, &o) in grad.data_mut().iter_mut().zip(output.data()) {
        *g *= o * (1.0 - o);
    }
    grad
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Subgradient at 0 is taken as 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    grad
}

/// Execution mode for stochastic layers.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Infer,
}

/// Inverted dropout. In train mode each element is zeroed with probability
/// `ratio` and survivors are scaled by 1/(1-ratio); the returned mask holds
/// the per-element multiplier. Infer mode is the identity and draws nothing
/// from the rng.
pub fn dropout(
    input: &Tensor,
    ratio: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "dropout ratio must be in [0, 1), got {ratio}"
        )));
    }
    if mode == Mode::Infer || ratio == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep_scale = 1.0 / (1.0 - ratio);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| {
            if rng.random::<f64>() < ratio {
                0.0
            } else {
                keep_scale
            }
        })
        .collect();
    let mut out = input.clone();
    for (v, m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((out, Some(mask)))
}

pub fn dropout_backward(mask: Option<&Vec<f64>>, grad_out: &Tensor) -> Tensor {
    match mask {
        None => grad_out.clone(),
        Some(mask) => {
            let mut grad = grad_out.clone();
            for (g, m) in grad.data_mut().iter_mut().zip(mask) {
                *g *= m;
            }
            grad
        }
    }
}

/// Concatenate along the channel dimension, preserving order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat_channels needs at least one input".into()))?;
    let fs = first.shape();
    let mut channels = 0;
    for t in inputs {
        let s = t.shape();
        if s.batch != fs.batch || s.height != fs.height || s.width != fs.width {
            return Err(Error::shape("concat_channels", fs, s));
        }
        channels += s.channels;
    }
    let os = Shape::new(fs.batch, channels, fs.height, fs.width);
    let mut out = Tensor::zeros(os);
    for n in 0..fs.batch {
        let mut c_off = 0;
        for t in inputs {
            let s = t.shape();
            for c in 0..s.channels {
                for y in 0..s.height {
                    for x in 0..s.width {
                        out.set(n, c_off + c, y, x, t.get(n, c, y, x));
                    }
                }
            }
            c_off += s.channels;
        }
    }
    Ok(out)
}

/// Splits the upstream gradient back into per-input slices by channel offset.
pub fn concat_channels_backward(input_shapes: &[Shape], grad_out: &Tensor) -> Vec<Tensor> {
    let os = grad_out.shape();
    let mut grads = Vec::with_capacity(input_shapes.len());
    let mut c_off = 0;
    for s in input_shapes {
        let mut g = Tensor::zeros(*s);
        for n in 0..s.batch {
            for c in 0..s.channels {
                for y in 0..s.height {
                    for x in 0..s.width {
                        g.set(n, c, y, x, grad_out.get(n, c_off + c, y, x));
                    }
                }
            }
        }
        let _ = os;
        c_off += s.channels;
        grads.push(g);
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_tensor(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..shape.count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Brute-force convolution oracle: independent quadruple loop over
    /// (c, a, b) per output site, padding handled by explicit bounds checks.
    #[allow(clippy::needless_range_loop)]
    fn conv_oracle(input: &Tensor, kernel: &Tensor, bias: &[f64], stride: (usize, usize), padding: (usize, usize)) -> Tensor {
        let is = input.shape();
        let ks = kernel.shape();
        let oh = (is.height + 2 * padding.0 - ks.height) / stride.0 + 1;
        let ow = (is.width + 2 * padding.1 - ks.width) / stride.1 + 1;
        let mut out = Tensor::zeros(Shape::new(is.batch, ks.batch, oh, ow));
        for n in 0..is.batch {
            for o in 0..ks.batch {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = bias[o];
                        for c in 0..ks.channels {
                            for a in 0..ks.height {
                                for b in 0..ks.width {
                                    let y = (i * stride.0 + a) as isize - padding.0 as isize;
                                    let x = (j * stride.1 + b) as isize - padding.1 as isize;
                                    if y < 0 || x < 0 || y >= is.height as isize || x >= is.width as isize {
                                        continue;
                                    }
                                    acc += kernel.get(o, c, a, b) * input.get(n, c, y as usize, x as usize);
                                }
                            }
                        }
                        out.set(n, o, i, j, acc);
                    }
                }
            }
        }
        out
    }

    fn assert_close(a: &Tensor, b: &Tensor, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn conv2d_scalar_kernel_scales_and_shifts() {
        let input = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = ConvParams::new(
            Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![2.0]).unwrap(),
            Some(Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![1.0]).unwrap()),
            (1, 1),
            (0, 0),
        )
        .unwrap();
        let out = conv2d(&input, &p).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0, 7.0, 9.0]);
    }

    #[test]
    fn conv2d_identity_kernel_preserves_input() {
        let mut rng = rng(7);
        let input = random_tensor(Shape::new(1, 1, 3, 3), &mut rng);
        let mut kernel = Tensor::zeros(Shape::new(1, 1, 3, 3));
        kernel.set(0, 0, 1, 1, 1.0);
        let p = ConvParams::new(kernel, None, (1, 1), (1, 1)).unwrap();
        let out = conv2d(&input, &p).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv2d_matches_brute_force_oracle() {
        let mut rng = rng(11);
        let input = random_tensor(Shape::new(1, 2, 5, 5), &mut rng);
        let kernel = random_tensor(Shape::new(3, 2, 3, 3), &mut rng);
        let bias_values = vec![0.1, -0.2, 0.3];
        let bias = Tensor::from_vec(Shape::new(1, 3, 1, 1), bias_values.clone()).unwrap();
        let p = ConvParams::new(kernel.clone(), Some(bias), (1, 1), (1, 1)).unwrap();
        let out = conv2d(&input, &p).unwrap();
        let expect = conv_oracle(&input, &kernel, &bias_values, (1, 1), (1, 1));
        assert_close(&out, &expect, 1e-12);
    }

    #[test]
    fn conv2d_same_padding_preserves_odd_sizes() {
        let mut rng = rng(13);
        let input = random_tensor(Shape::new(1, 1, 37, 41), &mut rng);
        let kernel = random_tensor(Shape::new(2, 1, 3, 3), &mut rng);
        let p = ConvParams::new(kernel, None, (1, 1), (1, 1)).unwrap();
        let out = conv2d(&input, &p).unwrap();
        assert_eq!(out.shape().spatial(), (37, 41));
    }

    #[test]
    fn conv2d_is_linear_with_zero_bias() {
        let mut rng = rng(17);
        let xa = random_tensor(Shape::new(1, 2, 4, 4), &mut rng);
        let xb = random_tensor(Shape::new(1, 2, 4, 4), &mut rng);
        let kernel = random_tensor(Shape::new(2, 2, 3, 3), &mut rng);
        let p = ConvParams::new(kernel, None, (1, 1), (1, 1)).unwrap();
        let (a, b) = (2.5, -1.25);
        let mixed: Vec<f64> = xa
            .data()
            .iter()
            .zip(xb.data())
            .map(|(u, v)| a * u + b * v)
            .collect();
        let mixed = Tensor::from_vec(xa.shape(), mixed).unwrap();
        let lhs = conv2d(&mixed, &p).unwrap();
        let ca = conv2d(&xa, &p).unwrap();
        let cb = conv2d(&xb, &p).unwrap();
        let rhs: Vec<f64> = ca
            .data()
            .iter()
            .zip(cb.data())
            .map(|(u, v)| a * u + b * v)
            .collect();
        let rhs = Tensor::from_vec(lhs.shape(), rhs).unwrap();
        assert_close(&lhs, &rhs, 1e-12);
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let input = Tensor::zeros(Shape::new(1, 3, 4, 4));
        let p = ConvParams::new(Tensor::zeros(Shape::new(1, 2, 3, 3)), None, (1, 1), (1, 1)).unwrap();
        let err = conv2d(&input, &p).unwrap_err();
        assert!(err.to_string().contains("channels"));
    }

    #[test]
    fn conv2d_rejects_vanishing_output() {
        let input = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let p = ConvParams::new(Tensor::zeros(Shape::new(1, 1, 3, 3)), None, (1, 1), (0, 0)).unwrap();
        assert!(conv2d(&input, &p).is_err());
    }

    /// Zero-stuffing oracle: upsample by inserting stride-1 zeros between
    /// pixels, pad by k-1, then correlate with the 180-degree flipped kernel.
    fn transpose_oracle(input: &Tensor, kernel: &Tensor, stride: usize) -> Tensor {
        let is = input.shape();
        let ks = kernel.shape();
        let stuffed_h = (is.height - 1) * stride + 1;
        let stuffed_w = (is.width - 1) * stride + 1;
        let mut stuffed = Tensor::zeros(Shape::new(is.batch, is.channels, stuffed_h, stuffed_w));
        for n in 0..is.batch {
            for c in 0..is.channels {
                for i in 0..is.height {
                    for j in 0..is.width {
                        stuffed.set(n, c, i * stride, j * stride, input.get(n, c, i, j));
                    }
                }
            }
        }
        // Flip kernel spatially and swap channel roles for the correlation.
        let mut flipped = Tensor::zeros(Shape::new(ks.batch, ks.channels, ks.height, ks.width));
        for o in 0..ks.batch {
            for c in 0..ks.channels {
                for a in 0..ks.height {
                    for b in 0..ks.width {
                        flipped.set(o, c, ks.height - 1 - a, ks.width - 1 - b, kernel.get(o, c, a, b));
                    }
                }
            }
        }
        let full_h = stuffed_h + ks.height - 1;
        let full_w = stuffed_w + ks.width - 1;
        let mut out = Tensor::zeros(Shape::new(is.batch, ks.batch, full_h, full_w));
        let pad_h = ks.height - 1;
        let pad_w = ks.width - 1;
        for n in 0..is.batch {
            for o in 0..ks.batch {
                for i in 0..full_h {
                    for j in 0..full_w {
                        let mut acc = 0.0;
                        for c in 0..ks.channels {
                            for a in 0..ks.height {
                                for b in 0..ks.width {
                                    let y = (i + a) as isize - pad_h as isize;
                                    let x = (j + b) as isize - pad_w as isize;
                                    if y < 0 || x < 0 || y >= stuffed_h as isize || x >= stuffed_w as isize {
                                        continue;
                                    }
                                    acc += flipped.get(o, c, a, b) * stuffed.get(n, c, y as usize, x as usize);
                                }
                            }
                        }
                        out.set(n, o, i, j, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_transpose_identity_geometry() {
        let mut rng = rng(19);
        let input = random_tensor(Shape::new(1, 1, 4, 5), &mut rng);
        let p = ConvParams::new(
            Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![1.0]).unwrap(),
            None,
            (1, 1),
            (0, 0),
        )
        .unwrap();
        let out = conv_transpose2d(&input, &p, (4, 5)).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv_transpose_bilinear_interior_is_constant() {
        let input = Tensor::filled(Shape::new(1, 1, 4, 4), 1.0);
        let kernel = crate::init::bilinear_kernel(1, 2);
        let p = ConvParams::new(kernel, None, (2, 2), (0, 0)).unwrap();
        let out = conv_transpose2d(&input, &p, (8, 8)).unwrap();
        // Away from the border the bilinear taps form a partition of unity.
        for y in 2..6 {
            for x in 2..6 {
                assert!((out.get(0, 0, y, x) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_transpose_matches_zero_stuffing_oracle() {
        let mut rng = rng(23);
        let input = random_tensor(Shape::new(1, 2, 3, 4), &mut rng);
        let kernel = random_tensor(Shape::new(2, 2, 4, 4), &mut rng);
        let p = ConvParams::new(kernel.clone(), None, (2, 2), (0, 0)).unwrap();
        let full = transpose_oracle(&input, &kernel, 2);
        let fs = full.shape();
        let out = conv_transpose2d(&input, &p, fs.spatial()).unwrap();
        assert_close(&out, &full, 1e-12);

        // Cropped request picks the centered window of the full map.
        let cropped = conv_transpose2d(&input, &p, (5, 6)).unwrap();
        let oy = (fs.height - 5) / 2;
        let ox = (fs.width - 6) / 2;
        for y in 0..5 {
            for x in 0..6 {
                assert_eq!(cropped.get(0, 1, y, x), full.get(0, 1, y + oy, x + ox));
            }
        }
    }

    #[test]
    fn conv_transpose_rejects_unreachable_output() {
        let input = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let p = ConvParams::new(Tensor::zeros(Shape::new(1, 1, 4, 4)), None, (2, 2), (0, 0)).unwrap();
        // full extent is (2-1)*2+4 = 6; 7 is unreachable
        assert!(conv_transpose2d(&input, &p, (7, 7)).is_err());
        assert!(conv_transpose2d(&input, &p, (6, 6)).is_ok());
    }

    #[test]
    fn max_pool_basic_window() {
        let input = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, argmax) = max_pool2d(&input);
        assert_eq!(out.shape().spatial(), (1, 1));
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(argmax, vec![3]);
    }

    #[test]
    fn max_pool_single_pixel_is_identity() {
        let input = Tensor::scalar(0.7);
        let (out, argmax) = max_pool2d(&input);
        assert_eq!(out.data(), &[0.7]);
        assert_eq!(argmax, vec![0]);
    }

    #[test]
    fn max_pool_ceil_mode_keeps_odd_edges() {
        // 3x3 ramp; bottom-right output cell is the lone corner element.
        let input = Tensor::from_vec(
            Shape::new(1, 1, 3, 3),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let (out, _) = max_pool2d(&input);
        assert_eq!(out.shape().spatial(), (2, 2));
        assert_eq!(out.data(), &[5.0, 6.0, 8.0, 9.0]);
        assert_eq!(out.get(0, 0, 1, 1), 9.0);
    }

    #[test]
    fn max_pool_matches_window_oracle_and_routes_gradient() {
        let mut rng = rng(29);
        let input = random_tensor(Shape::new(1, 1, 6, 6), &mut rng);
        let (out, argmax) = max_pool2d(&input);
        for i in 0..3 {
            for j in 0..3 {
                let mut best = f64::NEG_INFINITY;
                for a in 0..2 {
                    for b in 0..2 {
                        best = best.max(input.get(0, 0, i * 2 + a, j * 2 + b));
                    }
                }
                assert_eq!(out.get(0, 0, i, j), best);
            }
        }
        let grad = max_pool2d_backward(input.shape(), &argmax, &Tensor::filled(out.shape(), 1.0));
        // Exactly one unit of gradient lands in each 2x2 window.
        for i in 0..3 {
            for j in 0..3 {
                let mut sum = 0.0;
                let mut nonzero = 0;
                for a in 0..2 {
                    for b in 0..2 {
                        let v = grad.get(0, 0, i * 2 + a, j * 2 + b);
                        sum += v;
                        if v != 0.0 {
                            nonzero += 1;
                        }
                    }
                }
                assert_eq!(sum, 1.0);
                assert_eq!(nonzero, 1);
            }
        }
    }

    #[test]
    fn sigmoid_midpoint_symmetry_and_range() {
        assert_eq!(scalar_sigmoid(0.0), 0.5);
        for &x in &[0.3, 1.7, 9.0, 40.0, 1e9] {
            let s = scalar_sigmoid(x) + scalar_sigmoid(-x);
            assert!((s - 1.0).abs() < 1e-15);
            assert!(scalar_sigmoid(x) < 1.0 && scalar_sigmoid(x) > 0.0);
            assert!(scalar_sigmoid(-x) > 0.0 && scalar_sigmoid(-x) < 1.0);
        }
    }

    #[test]
    fn sigmoid_gradient_matches_finite_difference() {
        let x = 1.2;
        let h = 1e-6;
        let fd = (scalar_sigmoid(x + h) - scalar_sigmoid(x - h)) / (2.0 * h);
        let out = Tensor::scalar(scalar_sigmoid(x));
        let grad = sigmoid_backward(&out, &Tensor::scalar(1.0));
        let analytic = grad.data()[0];
        assert!(((fd - analytic) / analytic).abs() < 1e-6);
    }

    #[test]
    fn relu_clamps_negatives() {
        let input = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&input).data(), &[0.0, 0.0, 2.0]);
        let nonneg = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.5, 0.0, 3.0]).unwrap();
        assert_eq!(relu(&nonneg).data(), nonneg.data());
    }

    #[test]
    fn relu_gradient_matches_finite_difference_away_from_zero() {
        for &x in &[-0.8, 0.6, 2.0] {
            let h = 1e-6;
            let f = |v: f64| v.max(0.0);
            let fd = (f(x + h) - f(x - h)) / (2.0 * h);
            let input = Tensor::scalar(x);
            let analytic = relu_backward(&input, &Tensor::scalar(1.0)).data()[0];
            assert!((fd - analytic).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_infer_is_identity_bit_exact() {
        let mut r = rng(31);
        let input = random_tensor(Shape::new(1, 2, 4, 4), &mut r);
        let (out, mask) = dropout(&input, 0.5, Mode::Infer, &mut r).unwrap();
        assert_eq!(out.data(), input.data());
        assert!(mask.is_none());
    }

    #[test]
    fn dropout_ratio_zero_is_identity_in_train_mode() {
        let mut r = rng(37);
        let input = random_tensor(Shape::new(1, 2, 4, 4), &mut r);
        let (out, mask) = dropout(&input, 0.0, Mode::Train, &mut r).unwrap();
        assert_eq!(out.data(), input.data());
        assert!(mask.is_none());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut r = rng(41);
        let input = Tensor::filled(Shape::new(1, 1, 100, 100), 1.0);
        let (out, _) = dropout(&input, 0.5, Mode::Train, &mut r).unwrap();
        let mean = out.sum() / out.len() as f64;
        assert!((mean - 1.0).abs() < 0.05, "sample mean {mean}");
    }

    #[test]
    fn dropout_is_deterministic_for_fixed_seed() {
        let input = Tensor::filled(Shape::new(1, 1, 8, 8), 1.0);
        let (a, _) = dropout(&input, 0.5, Mode::Train, &mut rng(99)).unwrap();
        let (b, _) = dropout(&input, 0.5, Mode::Train, &mut rng(99)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn concat_stacks_channels_in_order() {
        let a = Tensor::filled(Shape::new(1, 1, 2, 2), 1.0);
        let b = Tensor::filled(Shape::new(1, 1, 2, 2), 2.0);
        let out = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(out.shape().channels, 2);
        assert_eq!(out.get(0, 0, 0, 0), 1.0);
        assert_eq!(out.get(0, 1, 0, 0), 2.0);

        let single = concat_channels(&[&a]).unwrap();
        assert_eq!(single.data(), a.data());
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let b = Tensor::zeros(Shape::new(1, 1, 3, 2));
        assert!(concat_channels(&[&a, &b]).is_err());
    }

    #[test]
    fn concat_then_split_round_trips() {
        let mut r = rng(43);
        let a = random_tensor(Shape::new(1, 2, 3, 3), &mut r);
        let b = random_tensor(Shape::new(1, 1, 3, 3), &mut r);
        let out = concat_channels(&[&a, &b]).unwrap();
        let grads = concat_channels_backward(&[a.shape(), b.shape()], &out);
        assert_eq!(grads[0].data(), a.data());
        assert_eq!(grads[1].data(), b.data());
    }
}
