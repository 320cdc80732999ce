use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::label::NUM_CLASSES;

/// Structure of a densely connected classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetConfig {
    /// Composite layers per dense block.
    pub block_layer_counts: Vec<usize>,
    /// Feature maps contributed by each composite layer.
    pub growth_rate: usize,
    /// Feature maps produced by the stem convolution.
    pub initial_channels: usize,
    /// Width of the 1×1 bottleneck, as a multiple of the growth rate.
    pub bottleneck_factor: usize,
    /// Channel compression applied by transition layers.
    pub compression: f64,
    pub num_classes: usize,
    /// Input (height, width, channels).
    pub input_shape: (usize, usize, usize),
}

impl Default for DenseNetConfig {
    /// DenseNet-121 over the 25-class catalog at 224×224×3.
    fn default() -> Self {
        Self {
            block_layer_counts: vec![6, 12, 24, 16],
            growth_rate: 32,
            initial_channels: 64,
            bottleneck_factor: 4,
            compression: 0.5,
            num_classes: NUM_CLASSES,
            input_shape: (224, 224, 3),
        }
    }
}

impl DenseNetConfig {
    /// A small variant with one composite layer per block, suitable for
    /// desk-scale training on low-resolution inputs.
    pub fn tiny(input_size: usize) -> Self {
        Self {
            block_layer_counts: vec![1, 1, 1, 1],
            growth_rate: 8,
            initial_channels: 16,
            bottleneck_factor: 4,
            compression: 0.5,
            num_classes: NUM_CLASSES,
            input_shape: (input_size, input_size, 3),
        }
    }

    pub fn is_densenet121(&self) -> bool {
        self.block_layer_counts == [6, 12, 24, 16]
            && self.growth_rate == 32
            && self.initial_channels == 64
            && self.bottleneck_factor == 4
            && self.compression == 0.5
    }

    pub fn variant_name(&self) -> String {
        if self.is_densenet121() {
            "DenseNet121".to_string()
        } else {
            let blocks: Vec<String> = self.block_layer_counts.iter().map(|c| c.to_string()).collect();
            format!(
                "DenseNet(blocks={},growth={},init={})",
                blocks.join("-"),
                self.growth_rate,
                self.initial_channels
            )
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: &str| Err(ModelError::ConfigError(msg.to_string()));
        if self.block_layer_counts.is_empty() || self.block_layer_counts.contains(&0) {
            return fail("every dense block needs at least one layer");
        }
        if self.growth_rate == 0 || self.initial_channels == 0 || self.bottleneck_factor == 0 {
            return fail("growth rate, initial channels and bottleneck factor must be positive");
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return fail("compression must lie in (0, 1]");
        }
        if self.num_classes == 0 {
            return fail("num_classes must be positive");
        }
        if self.input_shape.2 != 3 {
            return fail("input must have 3 channels");
        }
        Ok(())
    }
}

/// Feature maps entering composite layer `layer` (1-based) of a dense block
/// whose input carries `initial` maps: `initial + growth · (layer − 1)`.
pub fn growth_rate_channels(initial: usize, growth: usize, layer: usize) -> Result<usize, ModelError> {
    if layer < 1 {
        return Err(ModelError::DomainError(format!(
            "layer index must be >= 1, got {layer}"
        )));
    }
    if initial == 0 || growth == 0 {
        return Err(ModelError::DomainError(
            "initial channels and growth rate must be positive".into(),
        ));
    }
    Ok(initial + growth * (layer - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// 7×7 stride-2 convolution.
    StemConv,
    /// 3×3 stride-2 max pool.
    StemPool,
    /// BN-ReLU-1×1 convolution inside a composite layer.
    Bottleneck,
    /// BN-ReLU-3×3 convolution producing the layer's new feature maps.
    Conv3x3,
    /// Channel concatenation of a block input and all layer outputs.
    Concat,
    /// BN-ReLU-1×1 compression convolution.
    TransitionConv,
    /// 2×2 stride-2 average pool.
    TransitionPool,
    /// Final BN-ReLU followed by global average pooling.
    GlobalPool,
    /// Fully connected classification layer.
    Classifier,
}

impl LayerKind {
    /// Whether the layer carries convolution or dense weights.
    pub fn is_weighted(self) -> bool {
        matches!(
            self,
            LayerKind::StemConv
                | LayerKind::Bottleneck
                | LayerKind::Conv3x3
                | LayerKind::TransitionConv
                | LayerKind::Classifier
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Spatial (height, width) of the layer output; (1, 1) after global pooling.
    pub out_hw: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDesc {
    pub layers: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub hw: (usize, usize),
}

/// Ordered layer plan with channel and spatial bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerDesc>,
    pub blocks: Vec<BlockDesc>,
    pub num_classes: usize,
}

impl ModelSpec {
    /// Number of convolution and fully connected layers (121 for DenseNet-121).
    pub fn depth(&self) -> usize {
        self.layers.iter().filter(|l| l.kind.is_weighted()).count()
    }

    pub fn head_width(&self) -> usize {
        self.layers.last().map(|l| l.out_channels).unwrap_or(0)
    }

    pub fn final_features(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find(|l| l.kind == LayerKind::GlobalPool)
            .map(|l| l.out_channels)
            .unwrap_or(0)
    }
}

fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad).saturating_sub(kernel) / stride + 1
}

/// Derives the full layer plan for `cfg`.
pub fn build_model(cfg: &DenseNetConfig) -> Result<ModelSpec, ModelError> {
    cfg.validate()?;
    let (h, w, c) = cfg.input_shape;
    if h < 7 || w < 7 {
        return Err(ModelError::ConfigError(format!(
            "input {h}x{w} is smaller than the 7x7 stem kernel"
        )));
    }
    let mut layers = Vec::new();
    let mut hw = (conv_out(h, 7, 2, 3), conv_out(w, 7, 2, 3));
    layers.push(LayerDesc {
        name: "features.conv0".into(),
        kind: LayerKind::StemConv,
        in_channels: c,
        out_channels: cfg.initial_channels,
        out_hw: hw,
    });
    hw = (conv_out(hw.0, 3, 2, 1), conv_out(hw.1, 3, 2, 1));
    layers.push(LayerDesc {
        name: "features.pool0".into(),
        kind: LayerKind::StemPool,
        in_channels: cfg.initial_channels,
        out_channels: cfg.initial_channels,
        out_hw: hw,
    });

    let mut channels = cfg.initial_channels;
    let mut blocks = Vec::new();
    let bottleneck = cfg.bottleneck_factor * cfg.growth_rate;
    let n_blocks = cfg.block_layer_counts.len();
    for (b, &n_layers) in cfg.block_layer_counts.iter().enumerate() {
        let block_in = channels;
        for l in 1..=n_layers {
            let input = growth_rate_channels(block_in, cfg.growth_rate, l)?;
            let prefix = format!("features.denseblock{}.denselayer{l}", b + 1);
            layers.push(LayerDesc {
                name: format!("{prefix}.conv1"),
                kind: LayerKind::Bottleneck,
                in_channels: input,
                out_channels: bottleneck,
                out_hw: hw,
            });
            layers.push(LayerDesc {
                name: format!("{prefix}.conv2"),
                kind: LayerKind::Conv3x3,
                in_channels: bottleneck,
                out_channels: cfg.growth_rate,
                out_hw: hw,
            });
        }
        channels = block_in + n_layers * cfg.growth_rate;
        layers.push(LayerDesc {
            name: format!("features.denseblock{}", b + 1),
            kind: LayerKind::Concat,
            in_channels: block_in,
            out_channels: channels,
            out_hw: hw,
        });
        blocks.push(BlockDesc {
            layers: n_layers,
            in_channels: block_in,
            out_channels: channels,
            hw,
        });
        if b + 1 < n_blocks {
            let compressed = ((channels as f64) * cfg.compression).floor() as usize;
            if compressed == 0 {
                return Err(ModelError::ConfigError(
                    "transition compression leaves zero channels".into(),
                ));
            }
            layers.push(LayerDesc {
                name: format!("features.transition{}.conv", b + 1),
                kind: LayerKind::TransitionConv,
                in_channels: channels,
                out_channels: compressed,
                out_hw: hw,
            });
            hw = (hw.0 / 2, hw.1 / 2);
            if hw.0 == 0 || hw.1 == 0 {
                return Err(ModelError::ConfigError(format!(
                    "input {h}x{w} is too small for {n_blocks} dense blocks"
                )));
            }
            layers.push(LayerDesc {
                name: format!("features.transition{}.pool", b + 1),
                kind: LayerKind::TransitionPool,
                in_channels: compressed,
                out_channels: compressed,
                out_hw: hw,
            });
            channels = compressed;
        }
    }
    layers.push(LayerDesc {
        name: "features.norm5+pool".into(),
        kind: LayerKind::GlobalPool,
        in_channels: channels,
        out_channels: channels,
        out_hw: (1, 1),
    });
    layers.push(LayerDesc {
        name: "classifier".into(),
        kind: LayerKind::Classifier,
        in_channels: channels,
        out_channels: cfg.num_classes,
        out_hw: (1, 1),
    });
    Ok(ModelSpec {
        layers,
        blocks,
        num_classes: cfg.num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn growth_formula() {
        assert_eq!(growth_rate_channels(64, 32, 1).unwrap(), 64);
        assert_eq!(growth_rate_channels(64, 32, 3).unwrap(), 128);
        assert_eq!(growth_rate_channels(64, 32, 7).unwrap(), 256);
        assert!(matches!(
            growth_rate_channels(64, 32, 0),
            Err(ModelError::DomainError(_))
        ));
    }

    #[test]
    fn default_plan_is_densenet121() {
        let spec = build_model(&DenseNetConfig::default()).unwrap();
        assert_eq!(spec.depth(), 121);
        assert_eq!(spec.head_width(), 25);
        let blocks: Vec<(usize, usize, (usize, usize))> = spec
            .blocks
            .iter()
            .map(|b| (b.in_channels, b.out_channels, b.hw))
            .collect();
        assert_eq!(
            blocks,
            vec![
                (64, 256, (56, 56)),
                (128, 512, (28, 28)),
                (256, 1024, (14, 14)),
                (512, 1024, (7, 7)),
            ]
        );
        assert_eq!(spec.final_features(), 1024);
        assert_eq!(DenseNetConfig::default().variant_name(), "DenseNet121");
    }

    #[test]
    fn head_width_follows_num_classes() {
        let base = build_model(&DenseNetConfig::default()).unwrap();
        let two = build_model(&DenseNetConfig {
            num_classes: 2,
            ..DenseNetConfig::default()
        })
        .unwrap();
        assert_eq!(two.head_width(), 2);
        let n = base.layers.len();
        assert_eq!(base.layers[..n - 1], two.layers[..n - 1]);
    }

    #[test]
    fn tiny_variant_channel_walk() {
        // Hand walk: stem 16; block1 16 -> 24; trans 12; block2 12 -> 20; trans 10;
        // block3 10 -> 18; trans 9; block4 9 -> 17; head 17 -> 25.
        let spec = build_model(&DenseNetConfig::tiny(32)).unwrap();
        let walk: Vec<(usize, usize)> = spec.blocks.iter().map(|b| (b.in_channels, b.out_channels)).collect();
        assert_eq!(walk, vec![(16, 24), (12, 20), (10, 18), (9, 17)]);
        let hws: Vec<_> = spec.blocks.iter().map(|b| b.hw).collect();
        assert_eq!(hws, vec![(8, 8), (4, 4), (2, 2), (1, 1)]);
        assert_eq!(spec.final_features(), 17);
        assert_eq!(spec.depth(), 1 + 4 * 2 + 3 + 1);
    }

    #[test]
    fn channel_counts_chain() {
        let spec = build_model(&DenseNetConfig::default()).unwrap();
        let mut prev = 3;
        for layer in spec.layers.iter().filter(|l| l.kind != LayerKind::Bottleneck && l.kind != LayerKind::Conv3x3) {
            assert_eq!(layer.in_channels, prev, "{}", layer.name);
            prev = layer.out_channels;
        }
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let bad = [
            DenseNetConfig { block_layer_counts: vec![], ..DenseNetConfig::default() },
            DenseNetConfig { block_layer_counts: vec![6, 0, 1, 1], ..DenseNetConfig::default() },
            DenseNetConfig { growth_rate: 0, ..DenseNetConfig::default() },
            DenseNetConfig { compression: 1.5, ..DenseNetConfig::default() },
            DenseNetConfig { num_classes: 0, ..DenseNetConfig::default() },
            DenseNetConfig { input_shape: (224, 224, 1), ..DenseNetConfig::default() },
            DenseNetConfig { input_shape: (16, 16, 3), ..DenseNetConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(build_model(&cfg), Err(ModelError::ConfigError(_))), "{cfg:?}");
        }
    }
}
