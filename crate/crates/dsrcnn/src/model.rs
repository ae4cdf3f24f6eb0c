//! The five-block deeply-supervised network: recurrent convolutional blocks
//! with pooling between them, a side-output head per block (1x1 score conv
//! plus transposed-conv upsampling back to input resolution), and a 1x1
//! weighted fusion over the five upsampled scores.
//!
//! Pooling follows blocks 1-4 only, so the deepest feature stride is 16 and
//! the side strides are 1, 2, 4, 8, 16. Every head's output and the fused map
//! are cropped to exactly the input's height and width, which keeps the
//! network total (image in, same-size saliency map out) for arbitrary sizes.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::init;
use crate::map::SaliencyMap;
use crate::ops::{ConvParams, Mode};
use crate::rcl::{bind_rcl, rcl_unfold, RclBinding, RclParams};
use crate::tensor::{Shape, Tensor};
use crate::Rng;

pub const BLOCK_COUNT: usize = 5;

/// Smallest accepted input extent; below this the stride-16 head degenerates.
pub const MIN_INPUT_SIDE: usize = 16;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub block_channels: [usize; BLOCK_COUNT],
    pub convs_per_block: [usize; BLOCK_COUNT],
    pub rcl_iterations: usize,
    pub kernel_side: usize,
    pub dropout_ratio: f64,
    pub input_channels: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            block_channels: [8, 16, 32, 64, 64],
            convs_per_block: [2, 2, 3, 3, 3],
            rcl_iterations: 2,
            kernel_side: 3,
            dropout_ratio: 0.5,
            input_channels: 3,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// The down-scaled configuration used by the self-check suites.
    pub fn toy() -> Self {
        ModelConfig {
            block_channels: [4, 4, 8, 8, 8],
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_channels.contains(&0) || self.convs_per_block.contains(&0) {
            return Err(Error::Config(
                "block channel and conv counts must be positive".into(),
            ));
        }
        if self.kernel_side == 0 || self.kernel_side.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel side must be odd for same-padding geometry, got {}",
                self.kernel_side
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_ratio) {
            return Err(Error::Config(format!(
                "dropout ratio must be in [0, 1), got {}",
                self.dropout_ratio
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input channels must be positive".into()));
        }
        Ok(())
    }

    /// Feature stride of block `m` (0-based): 1, 2, 4, 8, 16.
    pub fn side_stride(m: usize) -> usize {
        1 << m
    }
}

/// One side-output head. Block 1 runs at full resolution, so its upsampler is
/// an identity pass-through rather than a factor-1 transposed conv.
#[derive(Clone, Debug)]
pub struct SideHead {
    pub score: ConvParams,
    pub upsample: Option<ConvParams>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub blocks: Vec<Vec<RclParams>>,
    pub side_heads: Vec<SideHead>,
    pub fusion: ConvParams,
}

/// Builds a freshly initialized model. Trunk, recurrent, and score kernels
/// draw fan-in-scaled uniform values from `rng` in a fixed order, trunk
/// biases draw small uniform offsets, upsample kernels start as bilinear
/// interpolators, and fusion starts as the uniform average of the five side
/// scores (weights 1/5, bias 0). A fixed seed reproduces every array
/// bit-for-bit.
pub fn build_model(config: &ModelConfig, rng: &mut Rng) -> Result<Model> {
    config.validate()?;
    let k = config.kernel_side;
    let pad = (k - 1) / 2;

    let mut blocks = Vec::with_capacity(BLOCK_COUNT);
    let mut in_c = config.input_channels;
    for m in 0..BLOCK_COUNT {
        let out_c = config.block_channels[m];
        let mut layers = Vec::with_capacity(config.convs_per_block[m]);
        for _ in 0..config.convs_per_block[m] {
            let feed_forward = ConvParams::new(
                init::fan_in_uniform(Shape::new(out_c, in_c, k, k), init::FEED_FORWARD_GAIN, rng),
                Some(init::bias_uniform(out_c, rng)),
                (1, 1),
                (pad, pad),
            )?;
            let recurrent = ConvParams::new(
                init::fan_in_uniform(Shape::new(out_c, out_c, k, k), init::RECURRENT_GAIN, rng),
                None,
                (1, 1),
                (pad, pad),
            )?;
            layers.push(RclParams::new(feed_forward, recurrent, config.rcl_iterations)?);
            in_c = out_c;
        }
        blocks.push(layers);
    }

    let mut side_heads = Vec::with_capacity(BLOCK_COUNT);
    for m in 0..BLOCK_COUNT {
        let score = ConvParams::new(
            init::fan_in_uniform(
                Shape::new(1, config.block_channels[m], 1, 1),
                init::SCORE_GAIN,
                rng,
            ),
            Some(Tensor::zeros(Shape::new(1, 1, 1, 1))),
            (1, 1),
            (0, 0),
        )?;
        let factor = ModelConfig::side_stride(m);
        let upsample = if factor == 1 {
            None
        } else {
            Some(ConvParams::new(
                init::bilinear_kernel(1, factor),
                None,
                (factor, factor),
                (0, 0),
            )?)
        };
        side_heads.push(SideHead { score, upsample });
    }

    let fusion = ConvParams::new(
        Tensor::filled(
            Shape::new(1, BLOCK_COUNT, 1, 1),
            1.0 / BLOCK_COUNT as f64,
        ),
        Some(Tensor::zeros(Shape::new(1, 1, 1, 1))),
        (1, 1),
        (0, 0),
    )?;

    Ok(Model {
        config: config.clone(),
        blocks,
        side_heads,
        fusion,
    })
}

/// Per-head parameter ids inside a graph.
#[derive(Clone, Copy, Debug)]
pub struct SideBinding {
    pub score_kernel: TensorId,
    pub score_bias: TensorId,
    pub upsample_kernel: Option<TensorId>,
}

/// Every model parameter bound as a graph leaf, in the model's canonical
/// parameter order (also the order of `flat`).
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub blocks: Vec<Vec<RclBinding>>,
    pub side_heads: Vec<SideBinding>,
    pub fusion_kernel: TensorId,
    pub fusion_bias: TensorId,
    pub flat: Vec<(String, TensorId)>,
}

/// Graph ids of the six output maps and their pre-sigmoid scores.
#[derive(Clone, Debug)]
pub struct BoundForward {
    pub side_pre: [TensorId; BLOCK_COUNT],
    pub side_maps: [TensorId; BLOCK_COUNT],
    pub fused_pre: TensorId,
    pub fused_map: TensorId,
}

/// A forward pass together with the graph that produced it; the graph can be
/// differentiated and the bound ids map gradients back to parameters.
pub struct TracedForward {
    pub graph: Graph,
    pub params: BoundParams,
    pub outputs: BoundForward,
}

/// Six same-size saliency maps: one per side head plus the fused prediction.
#[derive(Clone, Debug)]
pub struct ForwardResult {
    pub side_maps: [SaliencyMap; BLOCK_COUNT],
    pub fused_map: SaliencyMap,
}

impl Model {
    /// Visit every parameter with its canonical name, in canonical order.
    pub fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (m, block) in self.blocks.iter().enumerate() {
            for (r, rcl) in block.iter().enumerate() {
                let prefix = format!("block{}.rcl{}", m + 1, r + 1);
                f(&format!("{prefix}.feed_forward.kernel"), &rcl.feed_forward.kernel);
                if let Some(b) = &rcl.feed_forward.bias {
                    f(&format!("{prefix}.feed_forward.bias"), b);
                }
                f(&format!("{prefix}.recurrent.kernel"), &rcl.recurrent.kernel);
            }
        }
        for (m, head) in self.side_heads.iter().enumerate() {
            let prefix = format!("side{}", m + 1);
            f(&format!("{prefix}.score.kernel"), &head.score.kernel);
            if let Some(b) = &head.score.bias {
                f(&format!("{prefix}.score.bias"), b);
            }
            if let Some(up) = &head.upsample {
                f(&format!("{prefix}.upsample.kernel"), &up.kernel);
            }
        }
        f("fusion.kernel", &self.fusion.kernel);
        if let Some(b) = &self.fusion.bias {
            f("fusion.bias", b);
        }
    }

    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (m, block) in self.blocks.iter_mut().enumerate() {
            for (r, rcl) in block.iter_mut().enumerate() {
                let prefix = format!("block{}.rcl{}", m + 1, r + 1);
                f(&format!("{prefix}.feed_forward.kernel"), &mut rcl.feed_forward.kernel);
                if let Some(b) = rcl.feed_forward.bias.as_mut() {
                    f(&format!("{prefix}.feed_forward.bias"), b);
                }
                f(&format!("{prefix}.recurrent.kernel"), &mut rcl.recurrent.kernel);
            }
        }
        for (m, head) in self.side_heads.iter_mut().enumerate() {
            let prefix = format!("side{}", m + 1);
            f(&format!("{prefix}.score.kernel"), &mut head.score.kernel);
            if let Some(b) = head.score.bias.as_mut() {
                f(&format!("{prefix}.score.bias"), b);
            }
            if let Some(up) = head.upsample.as_mut() {
                f(&format!("{prefix}.upsample.kernel"), &mut up.kernel);
            }
        }
        f("fusion.kernel", &mut self.fusion.kernel);
        if let Some(b) = self.fusion.bias.as_mut() {
            f("fusion.bias", b);
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each_param(&mut |name, _| names.push(name.to_string()));
        names
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.for_each_param(&mut |_, t| count += t.len());
        count
    }

    /// Insert every parameter as a leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        let mut flat = Vec::new();
        let mut blocks = Vec::with_capacity(BLOCK_COUNT);
        for (m, block) in self.blocks.iter().enumerate() {
            let mut bound_block = Vec::with_capacity(block.len());
            for (r, rcl) in block.iter().enumerate() {
                let binding = bind_rcl(graph, rcl);
                let prefix = format!("block{}.rcl{}", m + 1, r + 1);
                flat.push((
                    format!("{prefix}.feed_forward.kernel"),
                    binding.feed_forward_kernel,
                ));
                if let Some(b) = binding.feed_forward_bias {
                    flat.push((format!("{prefix}.feed_forward.bias"), b));
                }
                flat.push((format!("{prefix}.recurrent.kernel"), binding.recurrent_kernel));
                bound_block.push(binding);
            }
            blocks.push(bound_block);
        }

        let mut side_heads = Vec::with_capacity(BLOCK_COUNT);
        for (m, head) in self.side_heads.iter().enumerate() {
            let prefix = format!("side{}", m + 1);
            let score_kernel = graph.leaf(head.score.kernel.clone());
            flat.push((format!("{prefix}.score.kernel"), score_kernel));
            let score_bias = graph.leaf(
                head.score
                    .bias
                    .clone()
                    .expect("score convs always carry a bias"),
            );
            flat.push((format!("{prefix}.score.bias"), score_bias));
            let upsample_kernel = head.upsample.as_ref().map(|up| {
                let id = graph.leaf(up.kernel.clone());
                flat.push((format!("{prefix}.upsample.kernel"), id));
                id
            });
            side_heads.push(SideBinding {
                score_kernel,
                score_bias,
                upsample_kernel,
            });
        }

        let fusion_kernel = graph.leaf(self.fusion.kernel.clone());
        flat.push(("fusion.kernel".to_string(), fusion_kernel));
        let fusion_bias = graph.leaf(self.fusion.bias.clone().expect("fusion carries a bias"));
        flat.push(("fusion.bias".to_string(), fusion_bias));

        BoundParams {
            blocks,
            side_heads,
            fusion_kernel,
            fusion_bias,
            flat,
        }
    }

    fn check_input(&self, image: &Tensor) -> Result<(usize, usize)> {
        let s = image.shape();
        if s.batch != 1 || s.channels != self.config.input_channels {
            return Err(Error::shape(
                "model input",
                format!("1x{}xHxW", self.config.input_channels),
                s,
            ));
        }
        if s.height < MIN_INPUT_SIDE || s.width < MIN_INPUT_SIDE {
            return Err(Error::InvalidArgument(format!(
                "input {}x{} is below the minimum {MIN_INPUT_SIDE}x{MIN_INPUT_SIDE}; \
                 the stride-16 head would see an empty map",
                s.height, s.width
            )));
        }
        Ok((s.height, s.width))
    }

    /// Record a full forward pass on `graph`. Per block: run its recurrent
    /// conv layers, apply dropout (train mode only), tap the side head off
    /// the dropped-out features, then pool into the next block (blocks 1-4).
    /// The fused score is a 1x1 convolution over the five channel-stacked
    /// pre-sigmoid upsampled scores.
    pub fn forward_on(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        image: &Tensor,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<BoundForward> {
        let (h, w) = self.check_input(image)?;
        let mut x = graph.leaf(image.clone());
        let mut side_pre = Vec::with_capacity(BLOCK_COUNT);
        let mut side_maps = Vec::with_capacity(BLOCK_COUNT);

        for m in 0..BLOCK_COUNT {
            for (rcl, binding) in self.blocks[m].iter().zip(&bound.blocks[m]) {
                x = rcl_unfold(graph, x, binding, rcl)?;
            }
            x = graph.dropout(x, self.config.dropout_ratio, mode, rng)?;

            let head = &bound.side_heads[m];
            let score = graph.conv2d(x, head.score_kernel, Some(head.score_bias), (1, 1), (0, 0))?;
            let pre = match head.upsample_kernel {
                None => score,
                Some(kernel) => {
                    let factor = ModelConfig::side_stride(m);
                    graph.conv_transpose2d(score, kernel, None, (factor, factor), (h, w))?
                }
            };
            side_pre.push(pre);
            side_maps.push(graph.sigmoid(pre));

            if m + 1 < BLOCK_COUNT {
                x = graph.max_pool2d(x);
            }
        }

        let cat = graph.concat_channels(&side_pre)?;
        let fused_pre = graph.conv2d(cat, bound.fusion_kernel, Some(bound.fusion_bias), (1, 1), (0, 0))?;
        let fused_map = graph.sigmoid(fused_pre);

        Ok(BoundForward {
            side_pre: side_pre.try_into().expect("exactly five blocks"),
            side_maps: side_maps.try_into().expect("exactly five blocks"),
            fused_pre,
            fused_map,
        })
    }

    /// Forward pass keeping the graph for differentiation or inspection.
    pub fn trace_forward(&self, image: &Tensor, mode: Mode, rng: &mut Rng) -> Result<TracedForward> {
        let mut graph = Graph::new();
        let params = self.bind(&mut graph);
        let outputs = self.forward_on(&mut graph, &params, image, mode, rng)?;
        Ok(TracedForward {
            graph,
            params,
            outputs,
        })
    }

    /// Plain forward pass producing the six output maps.
    pub fn forward(&self, image: &Tensor, mode: Mode, rng: &mut Rng) -> Result<ForwardResult> {
        let traced = self.trace_forward(image, mode, rng)?;
        ForwardResult::from_traced(&traced)
    }
}

impl ForwardResult {
    pub fn from_traced(traced: &TracedForward) -> Result<ForwardResult> {
        let side_maps: Vec<SaliencyMap> = traced
            .outputs
            .side_maps
            .iter()
            .map(|&id| SaliencyMap::from_tensor(traced.graph.value(id)))
            .collect::<Result<_>>()?;
        Ok(ForwardResult {
            side_maps: side_maps.try_into().expect("exactly five side maps"),
            fused_map: SaliencyMap::from_tensor(traced.graph.value(traced.outputs.fused_map))?,
        })
    }

    /// All six maps, fused last.
    pub fn all_maps(&self) -> impl Iterator<Item = &SaliencyMap> {
        self.side_maps.iter().chain(std::iter::once(&self.fused_map))
    }
}
