//! Recurrent convolutional layer: a convolution whose output feeds back as an
//! extra convolved input over a fixed number of iterations with shared
//! weights. Unfolding the recurrence yields a feed-forward stack of depth
//! iterations + 1, every stage reading the same kernels.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::ops::ConvParams;
use crate::tensor::Tensor;

/// Parameters of one recurrent convolutional layer. The bias lives in the
/// feed-forward convolution; the recurrent convolution has none, so the layer
/// carries exactly one bias per output channel as the recurrence prescribes.
#[derive(Clone, Debug)]
pub struct RclParams {
    pub feed_forward: ConvParams,
    pub recurrent: ConvParams,
    pub iterations: usize,
}

impl RclParams {
    pub fn new(feed_forward: ConvParams, recurrent: ConvParams, iterations: usize) -> Result<RclParams> {
        let p = RclParams {
            feed_forward,
            recurrent,
            iterations,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.feed_forward.validate()?;
        self.recurrent.validate()?;
        let out_c = self.feed_forward.out_channels();
        if self.recurrent.in_channels() != out_c || self.recurrent.out_channels() != out_c {
            return Err(Error::InvalidArgument(format!(
                "recurrent kernel must map {out_c} channels onto themselves, got {} -> {}",
                self.recurrent.in_channels(),
                self.recurrent.out_channels()
            )));
        }
        if self.recurrent.bias.is_some() {
            return Err(Error::InvalidArgument(
                "recurrent convolution must not carry its own bias".into(),
            ));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.feed_forward.out_channels()
    }
}

/// Ids of one layer's parameters inside a [`Graph`].
#[derive(Clone, Copy, Debug)]
pub struct RclBinding {
    pub feed_forward_kernel: TensorId,
    pub feed_forward_bias: Option<TensorId>,
    pub recurrent_kernel: TensorId,
}

/// Insert the layer's parameters as graph leaves.
pub fn bind_rcl(graph: &mut Graph, params: &RclParams) -> RclBinding {
    RclBinding {
        feed_forward_kernel: graph.leaf(params.feed_forward.kernel.clone()),
        feed_forward_bias: params
            .feed_forward
            .bias
            .as_ref()
            .map(|b| graph.leaf(b.clone())),
        recurrent_kernel: graph.leaf(params.recurrent.kernel.clone()),
    }
}

/// Record the unfolded recurrence on `graph` and return the final state.
///
/// The feed-forward response is computed once and reused by every iteration;
/// iteration 0 sees only the feed-forward input. Each iteration applies relu
/// to its net input, and every stage reads the same parameter leaves, so one
/// backward pass accumulates all stages' gradients into the shared kernels.
pub fn rcl_unfold(
    graph: &mut Graph,
    input: TensorId,
    binding: &RclBinding,
    params: &RclParams,
) -> Result<TensorId> {
    params.validate()?;
    let ff = graph.conv2d(
        input,
        binding.feed_forward_kernel,
        binding.feed_forward_bias,
        params.feed_forward.stride,
        params.feed_forward.padding,
    )?;
    let mut state = graph.relu(ff);
    for _ in 0..params.iterations {
        let rec = graph.conv2d(
            state,
            binding.recurrent_kernel,
            None,
            params.recurrent.stride,
            params.recurrent.padding,
        )?;
        let net = graph.add(ff, rec)?;
        state = graph.relu(net);
    }
    Ok(state)
}

/// One-shot forward pass of the layer on a plain tensor.
pub fn rcl_forward(input: &Tensor, params: &RclParams) -> Result<Tensor> {
    let mut graph = Graph::new();
    let x = graph.leaf(input.clone());
    let binding = bind_rcl(&mut graph, params);
    let out = rcl_unfold(&mut graph, x, &binding, params)?;
    Ok(graph.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;
    use crate::tensor::Shape;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_params(ff: f64, rec: f64, iterations: usize) -> RclParams {
        RclParams::new(
            ConvParams::new(
                Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![ff]).unwrap(),
                Some(Tensor::zeros(Shape::new(1, 1, 1, 1))),
                (1, 1),
                (0, 0),
            )
            .unwrap(),
            ConvParams::new(
                Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![rec]).unwrap(),
                None,
                (1, 1),
                (0, 0),
            )
            .unwrap(),
            iterations,
        )
        .unwrap()
    }

    fn square_params(
        in_c: usize,
        out_c: usize,
        k: usize,
        iterations: usize,
        rng: &mut ChaCha8Rng,
    ) -> RclParams {
        let pad = (k - 1) / 2;
        let ff_kernel = Tensor::from_vec(
            Shape::new(out_c, in_c, k, k),
            (0..out_c * in_c * k * k)
                .map(|_| rng.random_range(-0.5..0.5))
                .collect(),
        )
        .unwrap();
        let rec_kernel = Tensor::from_vec(
            Shape::new(out_c, out_c, k, k),
            (0..out_c * out_c * k * k)
                .map(|_| rng.random_range(-0.5..0.5))
                .collect(),
        )
        .unwrap();
        let bias = Tensor::from_vec(
            Shape::new(1, out_c, 1, 1),
            (0..out_c).map(|_| rng.random_range(-0.1..0.1)).collect(),
        )
        .unwrap();
        RclParams::new(
            ConvParams::new(ff_kernel, Some(bias), (1, 1), (pad, pad)).unwrap(),
            ConvParams::new(rec_kernel, None, (1, 1), (pad, pad)).unwrap(),
            iterations,
        )
        .unwrap()
    }

    #[test]
    fn zero_iterations_equals_plain_conv_relu_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = square_params(2, 3, 3, 0, &mut rng);
        let input = Tensor::from_vec(
            Shape::new(1, 2, 5, 5),
            (0..50).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let out = rcl_forward(&input, &params).unwrap();
        let plain = ops::relu(&ops::conv2d(&input, &params.feed_forward).unwrap());
        assert_eq!(out.data(), plain.data());
    }

    #[test]
    fn scalar_recurrence_unrolls_by_hand() {
        // ff = 1, rec = 0.5, input 1: states 1, 1.5, 1.75.
        let params = scalar_params(1.0, 0.5, 2);
        let input = Tensor::scalar(1.0);
        let out = rcl_forward(&input, &params).unwrap();
        assert!((out.as_scalar().unwrap() - 1.75).abs() < 1e-15);

        let one_step = scalar_params(1.0, 0.5, 1);
        assert!((rcl_forward(&input, &one_step).unwrap().as_scalar().unwrap() - 1.5).abs() < 1e-15);
    }

    fn impulse_footprint(kernel_side: usize, iterations: usize) -> (usize, usize) {
        // Positive weights keep relu transparent so the footprint is purely
        // geometric.
        let k = kernel_side;
        let pad = (k - 1) / 2;
        let params = RclParams::new(
            ConvParams::new(
                Tensor::filled(Shape::new(1, 1, k, k), 1.0),
                Some(Tensor::zeros(Shape::new(1, 1, 1, 1))),
                (1, 1),
                (pad, pad),
            )
            .unwrap(),
            ConvParams::new(
                Tensor::filled(Shape::new(1, 1, k, k), 1.0),
                None,
                (1, 1),
                (pad, pad),
            )
            .unwrap(),
            iterations,
        )
        .unwrap();
        let size = 17;
        let mut input = Tensor::zeros(Shape::new(1, 1, size, size));
        input.set(0, 0, size / 2, size / 2, 1.0);
        let out = rcl_forward(&input, &params).unwrap();
        let mut rows = (usize::MAX, 0);
        let mut cols = (usize::MAX, 0);
        for y in 0..size {
            for x in 0..size {
                if out.get(0, 0, y, x) != 0.0 {
                    rows = (rows.0.min(y), rows.1.max(y));
                    cols = (cols.0.min(x), cols.1.max(x));
                }
            }
        }
        (rows.1 - rows.0 + 1, cols.1 - cols.0 + 1)
    }

    #[test]
    fn impulse_footprint_grows_by_kernel_minus_one_per_iteration() {
        for &k in &[1usize, 3] {
            for t in 0..3usize {
                let expected = k + t * (k - 1);
                assert_eq!(impulse_footprint(k, t), (expected, expected), "k={k} t={t}");
            }
        }
    }

    #[test]
    fn footprint_is_monotone_in_iterations() {
        // Sites reached at iteration t-1 stay reached at iteration t.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = square_params(1, 1, 3, 0, &mut rng);
        // Positive weights so relu never masks a reached site.
        let positive = |t: &Tensor| t.map(|v| v.abs() + 0.01);
        params.feed_forward.kernel = positive(&params.feed_forward.kernel);
        params.recurrent.kernel = positive(&params.recurrent.kernel);
        if let Some(b) = params.feed_forward.bias.as_mut() {
            *b = Tensor::zeros(b.shape());
        }

        let size = 13;
        let mut input = Tensor::zeros(Shape::new(1, 1, size, size));
        input.set(0, 0, 6, 6, 1.0);
        let mut previous: Option<Vec<bool>> = None;
        for t in 0..3 {
            params.iterations = t;
            let out = rcl_forward(&input, &params).unwrap();
            let reached: Vec<bool> = out.data().iter().map(|&v| v != 0.0).collect();
            if let Some(prev) = &previous {
                for (i, (&was, &now)) in prev.iter().zip(&reached).enumerate() {
                    assert!(!was || now, "site {i} reached at t={} but not t={t}", t - 1);
                }
            }
            previous = Some(reached);
        }
    }

    #[test]
    fn unfold_depth_is_iterations_plus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (t, expected_depth) in [(2usize, 3usize), (0, 1)] {
            let params = square_params(1, 2, 3, t, &mut rng);
            let input = Tensor::filled(Shape::new(1, 1, 5, 5), 0.3);
            let mut graph = Graph::new();
            let x = graph.leaf(input);
            let binding = bind_rcl(&mut graph, &params);
            let out = rcl_unfold(&mut graph, x, &binding, &params).unwrap();
            assert_eq!(graph.conv_depth(out), expected_depth);
            assert_eq!(graph.conv_node_count(), t + 1);
        }
    }

    #[test]
    fn shared_weight_gradients_match_finite_differences() {
        // Perturbing the recurrent kernel perturbs every unfolded stage at
        // once; the analytic gradient must match that shared perturbation.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = square_params(2, 2, 3, 2, &mut rng);
        let input = Tensor::from_vec(
            Shape::new(1, 2, 5, 5),
            (0..50).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();

        let eval = |p: &RclParams| -> f64 {
            let mut graph = Graph::new();
            let x = graph.leaf(input.clone());
            let binding = bind_rcl(&mut graph, p);
            let out = rcl_unfold(&mut graph, x, &binding, p).unwrap();
            let s = graph.sigmoid(out);
            let loss = graph.sum(s);
            graph.value(loss).as_scalar().unwrap()
        };

        let mut graph = Graph::new();
        let x = graph.leaf(input.clone());
        let binding = bind_rcl(&mut graph, &params);
        let out = rcl_unfold(&mut graph, x, &binding, &params).unwrap();
        let s = graph.sigmoid(out);
        let loss = graph.sum(s);
        graph.backward(loss).unwrap();

        let step = 1e-5;
        let checks: [(&str, TensorId); 3] = [
            ("feed_forward.kernel", binding.feed_forward_kernel),
            ("feed_forward.bias", binding.feed_forward_bias.unwrap()),
            ("recurrent.kernel", binding.recurrent_kernel),
        ];
        for (name, id) in checks {
            let analytic = graph.grad_or_zeros(id);
            for index in 0..analytic.len() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                let (tp, tm) = match name {
                    "feed_forward.kernel" => {
                        (&mut plus.feed_forward.kernel, &mut minus.feed_forward.kernel)
                    }
                    "feed_forward.bias" => (
                        plus.feed_forward.bias.as_mut().unwrap(),
                        minus.feed_forward.bias.as_mut().unwrap(),
                    ),
                    _ => (&mut plus.recurrent.kernel, &mut minus.recurrent.kernel),
                };
                tp.data_mut()[index] += step;
                tm.data_mut()[index] -= step;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
                let a = analytic.data()[index];
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    ((a - numeric) / denom).abs() < 1e-4,
                    "{name}[{index}]: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn rejects_channel_mismatched_recurrent_kernel() {
        let ff = ConvParams::new(
            Tensor::zeros(Shape::new(3, 2, 3, 3)),
            Some(Tensor::zeros(Shape::new(1, 3, 1, 1))),
            (1, 1),
            (1, 1),
        )
        .unwrap();
        let rec = ConvParams::new(Tensor::zeros(Shape::new(3, 2, 3, 3)), None, (1, 1), (1, 1)).unwrap();
        assert!(RclParams::new(ff, rec, 2).is_err());
    }
}
