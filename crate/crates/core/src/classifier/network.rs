//! Trainable DenseNet built on candle tensors.
//!
//! Parameter names follow the torchvision layout (`features.denseblock1.
//! denselayer1.norm1.weight`, ...) so compatible pretrained weights can be
//! loaded by name.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use candle_nn::{
    batch_norm, conv2d_no_bias, linear, BatchNorm, BatchNormConfig, Conv2d, Conv2dConfig, Linear,
    Module, ModuleT, VarBuilder, VarMap,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::config::DenseNetConfig;
use super::ModelError;

fn bn_config() -> BatchNormConfig {
    BatchNormConfig {
        eps: 1e-5,
        remove_mean: true,
        affine: true,
        momentum: 0.1,
    }
}

/// One composite layer: BN → ReLU → 1×1 conv → BN → ReLU → 3×3 conv,
/// emitting `growth_rate` feature maps.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    norm1: BatchNorm,
    conv1: Conv2d,
    norm2: BatchNorm,
    conv2: Conv2d,
    in_channels: usize,
}

impl DenseLayer {
    pub fn new(
        in_channels: usize,
        growth_rate: usize,
        bottleneck_factor: usize,
        vb: VarBuilder,
    ) -> candle_core::Result<Self> {
        let inner = bottleneck_factor * growth_rate;
        Ok(Self {
            norm1: batch_norm(in_channels, bn_config(), vb.pp("norm1"))?,
            conv1: conv2d_no_bias(in_channels, inner, 1, Conv2dConfig::default(), vb.pp("conv1"))?,
            norm2: batch_norm(inner, bn_config(), vb.pp("norm2"))?,
            conv2: conv2d_no_bias(
                inner,
                growth_rate,
                3,
                Conv2dConfig {
                    padding: 1,
                    ..Conv2dConfig::default()
                },
                vb.pp("conv2"),
            )?,
            in_channels,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Applies the composite function to a single (already concatenated) tensor.
    pub fn composite(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let x = self.norm1.forward_t(x, train)?.relu()?;
        let x = self.conv1.forward(&x)?;
        let x = self.norm2.forward_t(&x, train)?.relu()?;
        self.conv2.forward(&x)
    }
}

/// Dense connectivity: feeds layer `l` the channel-wise concatenation of every
/// earlier feature map `[E0, E1, …, E(l-1)]` and returns its output `El`.
pub fn dense_block_forward(layer: &DenseLayer, inputs: &[Tensor], train: bool) -> Result<Tensor, ModelError> {
    let first = inputs
        .first()
        .ok_or_else(|| ModelError::ShapeMismatch("dense layer needs at least one input".into()))?;
    let (n, _, h, w) = first.dims4()?;
    let mut channels = 0;
    for (i, t) in inputs.iter().enumerate() {
        let (tn, tc, th, tw) = t.dims4()?;
        if (tn, th, tw) != (n, h, w) {
            return Err(ModelError::ShapeMismatch(format!(
                "input {i} has batch/spatial dims {tn}x{th}x{tw}, expected {n}x{h}x{w}"
            )));
        }
        channels += tc;
    }
    if channels != layer.in_channels {
        return Err(ModelError::ShapeMismatch(format!(
            "concatenated inputs carry {channels} channels, layer expects {}",
            layer.in_channels
        )));
    }
    let x = if inputs.len() == 1 {
        inputs[0].clone()
    } else {
        Tensor::cat(inputs, 1)?
    };
    Ok(layer.composite(&x, train)?)
}

/// Reference plain chain `El = ψl(E(l-1))`: each layer sees only its
/// predecessor's output. Not used by the network; kept as a test oracle for
/// the dense connectivity.
pub fn plain_chain_forward(layers: &[DenseLayer], input: &Tensor, train: bool) -> Result<Tensor, ModelError> {
    let mut x = input.clone();
    for layer in layers {
        x = dense_block_forward(layer, std::slice::from_ref(&x), train)?;
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct DenseBlock {
    layers: Vec<DenseLayer>,
}

impl DenseBlock {
    pub fn new(
        n_layers: usize,
        in_channels: usize,
        growth_rate: usize,
        bottleneck_factor: usize,
        vb: VarBuilder,
    ) -> candle_core::Result<Self> {
        let layers = (0..n_layers)
            .map(|i| {
                DenseLayer::new(
                    in_channels + i * growth_rate,
                    growth_rate,
                    bottleneck_factor,
                    vb.pp(format!("denselayer{}", i + 1)),
                )
            })
            .collect::<candle_core::Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Returns the concatenation of the block input and every layer output.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor, ModelError> {
        let mut features = vec![x.clone()];
        for layer in &self.layers {
            let out = dense_block_forward(layer, &features, train)?;
            features.push(out);
        }
        Ok(Tensor::cat(&features, 1)?)
    }
}

#[derive(Debug, Clone)]
struct Transition {
    norm: BatchNorm,
    conv: Conv2d,
}

impl Transition {
    fn new(in_channels: usize, out_channels: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        Ok(Self {
            norm: batch_norm(in_channels, bn_config(), vb.pp("norm"))?,
            conv: conv2d_no_bias(in_channels, out_channels, 1, Conv2dConfig::default(), vb.pp("conv"))?,
        })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let x = self.norm.forward_t(x, train)?.relu()?;
        self.conv.forward(&x)?.avg_pool2d_with_stride((2, 2), (2, 2))
    }
}

/// Shape of an intermediate activation, as reported by a traced forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTrace {
    pub name: String,
    pub dims: Vec<usize>,
}

/// 3×3 max pool, stride 2, padding 1, built from strided views and
/// elementwise maxima because candle cannot differentiate overlapping pools.
/// Expects non-negative input: zero padding then equals -inf padding.
fn stem_max_pool(x: &Tensor) -> candle_core::Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (ho, wo) = ((h + 2 - 3) / 2 + 1, (w + 2 - 3) / 2 + 1);
    // One extra trailing row/column so every shifted view has length 2·out.
    let padded = x.pad_with_zeros(2, 1, 2 * ho + 1 - h)?.pad_with_zeros(3, 1, 2 * wo + 1 - w)?;
    let mut out: Option<Tensor> = None;
    for dy in 0..3 {
        let rows = padded
            .narrow(2, dy, 2 * ho)?
            .reshape((n, c, ho, 2, 2 * wo + 2))?
            .narrow(3, 0, 1)?;
        for dx in 0..3 {
            let view = rows
                .narrow(4, dx, 2 * wo)?
                .reshape((n, c, ho, 2 * wo))?
                .reshape((n, c, ho, wo, 2))?
                .narrow(4, 0, 1)?
                .reshape((n, c, ho, wo))?;
            out = Some(match out {
                None => view,
                Some(acc) => acc.maximum(&view)?,
            });
        }
    }
    Ok(out.expect("nine views"))
}

#[derive(Debug, Clone)]
pub struct DenseNet {
    conv0: Conv2d,
    norm0: BatchNorm,
    blocks: Vec<DenseBlock>,
    transitions: Vec<Transition>,
    norm5: BatchNorm,
    classifier: Linear,
}

impl DenseNet {
    pub fn new(cfg: &DenseNetConfig, vb: VarBuilder) -> Result<Self, ModelError> {
        cfg.validate()?;
        let features = vb.pp("features");
        let conv0 = conv2d_no_bias(
            cfg.input_shape.2,
            cfg.initial_channels,
            7,
            Conv2dConfig {
                padding: 3,
                stride: 2,
                ..Conv2dConfig::default()
            },
            features.pp("conv0"),
        )?;
        let norm0 = batch_norm(cfg.initial_channels, bn_config(), features.pp("norm0"))?;
        let mut channels = cfg.initial_channels;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        let n_blocks = cfg.block_layer_counts.len();
        for (i, &n_layers) in cfg.block_layer_counts.iter().enumerate() {
            blocks.push(DenseBlock::new(
                n_layers,
                channels,
                cfg.growth_rate,
                cfg.bottleneck_factor,
                features.pp(format!("denseblock{}", i + 1)),
            )?);
            channels += n_layers * cfg.growth_rate;
            if i + 1 < n_blocks {
                let out = ((channels as f64) * cfg.compression).floor() as usize;
                transitions.push(Transition::new(
                    channels,
                    out,
                    features.pp(format!("transition{}", i + 1)),
                )?);
                channels = out;
            }
        }
        let norm5 = batch_norm(channels, bn_config(), features.pp("norm5"))?;
        let classifier = linear(channels, cfg.num_classes, vb.pp("classifier"))?;
        Ok(Self {
            conv0,
            norm0,
            blocks,
            transitions,
            norm5,
            classifier,
        })
    }

    pub fn blocks(&self) -> &[DenseBlock] {
        &self.blocks
    }

    fn run(&self, x: &Tensor, train: bool, mut trace: Option<&mut Vec<ShapeTrace>>) -> Result<Tensor, ModelError> {
        let mut record = |name: String, t: &Tensor| {
            if let Some(trace) = trace.as_deref_mut() {
                trace.push(ShapeTrace {
                    name,
                    dims: t.dims().to_vec(),
                });
            }
        };
        let x = self.conv0.forward(x)?;
        record("features.conv0".into(), &x);
        let x = self.norm0.forward_t(&x, train)?.relu()?;
        let mut x = stem_max_pool(&x)?;
        record("features.pool0".into(), &x);
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward_t(&x, train)?;
            record(format!("features.denseblock{}", i + 1), &x);
            if let Some(t) = self.transitions.get(i) {
                x = t.forward_t(&x, train)?;
                record(format!("features.transition{}", i + 1), &x);
            }
        }
        let x = self.norm5.forward_t(&x, train)?.relu()?.mean((2, 3))?;
        record("features.norm5+pool".into(), &x);
        let logits = self.classifier.forward(&x)?;
        record("classifier".into(), &logits);
        Ok(logits)
    }

    /// Logits for an `N × C × H × W` batch.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor, ModelError> {
        self.run(x, train, None)
    }

    /// Eval-mode forward pass that also reports every stage's output shape.
    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, Vec<ShapeTrace>), ModelError> {
        let mut trace = Vec::new();
        let logits = self.run(x, false, Some(&mut trace))?;
        Ok((logits, trace))
    }

    /// Softmax probabilities for an eval-mode batch, shape `N × K`.
    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let logits = self.forward_t(x, false)?;
        Ok(candle_nn::ops::softmax(&logits, D::Minus1)?)
    }
}

/// Builds the network with seeded parameter initialization: Kaiming-normal
/// convolutions, unit/zero batch norms, and a uniform linear head.
pub fn build_network(cfg: &DenseNetConfig, seed: u64) -> Result<(DenseNet, VarMap), ModelError> {
    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
    let net = DenseNet::new(cfg, vb)?;
    init_parameters(&varmap, seed)?;
    Ok((net, varmap))
}

fn init_parameters(varmap: &VarMap, seed: u64) -> Result<(), ModelError> {
    let data = varmap.data().lock().expect("varmap lock poisoned");
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in names {
        let var = &data[name];
        let dims = var.dims().to_vec();
        let numel: usize = dims.iter().product();
        let values: Vec<f32> = match (name.rsplit('.').next().unwrap_or(""), dims.len()) {
            ("running_var", _) | ("weight", 1) => vec![1.0; numel],
            ("running_mean", _) | ("bias", _) => vec![0.0; numel],
            ("weight", 4) => {
                let fan_in = (dims[1] * dims[2] * dims[3]) as f32;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
                (0..numel).map(|_| normal.sample(&mut rng)).collect()
            }
            ("weight", 2) => {
                let bound = 1.0 / (dims[1] as f32).sqrt();
                let uniform = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
                (0..numel).map(|_| uniform.sample(&mut rng)).collect()
            }
            _ => {
                return Err(ModelError::ConfigError(format!(
                    "no initializer for parameter {name} with shape {dims:?}"
                )))
            }
        };
        var.set(&Tensor::from_vec(values, dims, &Device::Cpu)?)?;
    }
    Ok(())
}

/// Copies every tensor in a safetensors file whose name and shape match a
/// model parameter. Returns how many parameters were initialized this way.
pub fn load_pretrained(varmap: &VarMap, path: &Path) -> Result<usize, ModelError> {
    let tensors: HashMap<String, Tensor> = candle_core::safetensors::load(path, &Device::Cpu)?;
    let data = varmap.data().lock().expect("varmap lock poisoned");
    let mut loaded = 0;
    for (name, var) in data.iter() {
        if let Some(t) = tensors.get(name) {
            if t.dims() == var.dims() {
                var.set(&t.to_dtype(DType::F32)?)?;
                loaded += 1;
            }
        }
    }
    Ok(loaded)
}
