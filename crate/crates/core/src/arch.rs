//! Builders for the built-in architectures.
//!
//! Partition granularity:
//! - `vgg16`: after each of the 13 convolutions (a max-pool that directly
//!   follows a convolution stays on the enclave side of that point).
//! - `resnet50`: after the stem and after each of the four bottleneck stages.
//! - `efficientnetb0`: after the stem, after each of the first six MBConv
//!   stages, and after the seventh stage together with the 1×1 head conv.
//! - `toy4`: a four-stage desk-scale CNN used for inversion experiments.

use crate::error::{Error, Result};
use crate::graph::{
    BlockKind, BlockTag, LayerKind, LayerSpec, ModelGraph, PartitionPoint, Source,
};

pub const DEFAULT_SEED: u64 = 0x5eed;
pub const DEFAULT_INPUT: [usize; 3] = [3, 224, 224];

pub const BUILTIN_ARCHITECTURES: [&str; 4] = ["vgg16", "resnet50", "efficientnetb0", "toy4"];

/// Architectures with a shipped cost profile.
pub const PROFILED_ARCHITECTURES: [&str; 3] = ["vgg16", "resnet50", "efficientnetb0"];

pub fn build_architecture(name: &str, input_shape: &[usize]) -> Result<ModelGraph> {
    build_architecture_seeded(name, input_shape, DEFAULT_SEED)
}

pub fn build_architecture_seeded(name: &str, input_shape: &[usize], seed: u64) -> Result<ModelGraph> {
    if input_shape.len() != 3 || input_shape.contains(&0) {
        return Err(Error::InvalidShape(input_shape.to_vec()));
    }
    match name.to_ascii_lowercase().as_str() {
        "vgg16" => vgg16(input_shape, seed),
        "resnet50" => resnet50(input_shape, seed),
        "efficientnetb0" => efficientnet_b0(input_shape, seed),
        "toy4" => toy_cnn(input_shape, seed),
        _ => Err(Error::UnknownArchitecture(name.to_string())),
    }
}

struct ChainBuilder {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    points: Vec<PartitionPoint>,
    block: Option<BlockTag>,
}

impl ChainBuilder {
    fn new(input_shape: &[usize]) -> Self {
        Self {
            input_shape: input_shape.to_vec(),
            layers: Vec::new(),
            shapes: vec![input_shape.to_vec()],
            points: Vec::new(),
            block: None,
        }
    }

    fn push(&mut self, mut layer: LayerSpec) -> Result<Source> {
        let index = self.layers.len();
        if layer.block.is_none() {
            layer.block = self.block;
        }
        let input = &self.shapes[layer.primary_source(index).slot()];
        if let Some(stride) = spatial_stride(&layer.kind) {
            if input.len() == 3 && (input[1] < stride || input[2] < stride) {
                return Err(Error::InputTooSmall {
                    shape: self.input_shape.clone(),
                    reason: format!(
                        "`{}` downsamples a {}x{} map by {stride}",
                        layer.name, input[1], input[2]
                    ),
                });
            }
        }
        let aux = layer
            .kind
            .aux_source()
            .map(|s| self.shapes[s.slot()].as_slice());
        let out = layer.kind.output_shape(input, aux).map_err(|e| match e {
            Error::InputTooSmall { reason, .. } => Error::InputTooSmall {
                shape: self.input_shape.clone(),
                reason: format!("at `{}`: {reason}", layer.name),
            },
            other => other,
        })?;
        self.shapes.push(out);
        self.layers.push(layer);
        Ok(Source::Layer(index))
    }

    fn current(&self) -> Source {
        match self.layers.len() {
            0 => Source::Input,
            n => Source::Layer(n - 1),
        }
    }

    fn current_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    fn channels(&self) -> usize {
        self.current_shape()[0]
    }

    fn mark(&mut self, label: impl Into<String>) {
        self.points.push(PartitionPoint {
            label: label.into(),
            boundary: self.layers.len(),
        });
    }

    fn conv(&mut self, name: &str, out: usize, kernel: usize, stride: usize, padding: usize) -> Result<Source> {
        let in_channels = self.channels();
        self.push(LayerSpec::new(
            name,
            LayerKind::Conv2d {
                in_channels,
                out_channels: out,
                kernel,
                stride,
                padding,
            },
        ))
    }

    fn bn(&mut self, name: &str) -> Result<Source> {
        let channels = self.channels();
        self.push(LayerSpec::new(name, LayerKind::BatchNormAffine { channels }))
    }

    fn fc(&mut self, name: &str, out: usize) -> Result<Source> {
        let in_features = self.current_shape().iter().product();
        self.push(LayerSpec::new(
            name,
            LayerKind::FullyConnected {
                in_features,
                out_features: out,
            },
        ))
    }

    fn simple(&mut self, name: &str, kind: LayerKind) -> Result<Source> {
        self.push(LayerSpec::new(name, kind))
    }

    fn finish(self, name: &str, seed: u64) -> Result<ModelGraph> {
        ModelGraph::new(name, self.input_shape, self.layers, self.points, seed)
    }
}

fn spatial_stride(kind: &LayerKind) -> Option<usize> {
    match *kind {
        LayerKind::Conv2d { stride, .. }
        | LayerKind::DepthwiseConv2d { stride, .. }
        | LayerKind::MaxPool { stride, .. }
        | LayerKind::AvgPool { stride, .. } if stride > 1 => Some(stride),
        _ => None,
    }
}

const VGG16_CONVS: [(usize, bool); 13] = [
    (64, false),
    (64, true),
    (128, false),
    (128, true),
    (256, false),
    (256, false),
    (256, true),
    (512, false),
    (512, false),
    (512, true),
    (512, false),
    (512, false),
    (512, true),
];

fn vgg16(input_shape: &[usize], seed: u64) -> Result<ModelGraph> {
    let mut b = ChainBuilder::new(input_shape);
    for (i, &(channels, pooled)) in VGG16_CONVS.iter().enumerate() {
        let n = i + 1;
        b.conv(&format!("conv{n}"), channels, 3, 1, 1)?;
        b.simple(&format!("conv{n}_relu"), LayerKind::ReLU)?;
        if pooled {
            b.simple(
                &format!("pool_after_conv{n}"),
                LayerKind::MaxPool {
                    kernel: 2,
                    stride: 2,
                    padding: 0,
                },
            )?;
        }
        b.mark(format!("Layer {n}"));
    }
    b.simple("flatten", LayerKind::Flatten)?;
    b.fc("fc1", 4096)?;
    b.simple("fc1_relu", LayerKind::ReLU)?;
    b.fc("fc2", 4096)?;
    b.simple("fc2_relu", LayerKind::ReLU)?;
    b.fc("fc3", 1000)?;
    b.finish("vgg16", seed)
}

const RESNET50_STAGES: [(usize, usize, usize); 4] = [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)];

fn resnet50(input_shape: &[usize], seed: u64) -> Result<ModelGraph> {
    let mut b = ChainBuilder::new(input_shape);
    b.conv("stem_conv", 64, 7, 2, 3)?;
    b.bn("stem_bn")?;
    b.simple("stem_relu", LayerKind::ReLU)?;
    b.simple(
        "stem_pool",
        LayerKind::MaxPool {
            kernel: 3,
            stride: 2,
            padding: 1,
        },
    )?;
    b.mark("Layer 1");

    let mut block_index = 0;
    for (stage, &(width, blocks, first_stride)) in RESNET50_STAGES.iter().enumerate() {
        for blk in 0..blocks {
            let stride = if blk == 0 { first_stride } else { 1 };
            let p = format!("s{}b{}", stage + 1, blk + 1);
            b.block = Some(BlockTag {
                kind: BlockKind::Residual,
                index: block_index,
            });
            block_index += 1;

            let block_input = b.current();
            let in_channels = b.channels();
            let out_channels = width * 4;
            b.conv(&format!("{p}_conv1"), width, 1, 1, 0)?;
            b.bn(&format!("{p}_bn1"))?;
            b.simple(&format!("{p}_relu1"), LayerKind::ReLU)?;
            b.conv(&format!("{p}_conv2"), width, 3, stride, 1)?;
            b.bn(&format!("{p}_bn2"))?;
            b.simple(&format!("{p}_relu2"), LayerKind::ReLU)?;
            b.conv(&format!("{p}_conv3"), out_channels, 1, 1, 0)?;
            let main = b.bn(&format!("{p}_bn3"))?;
            if stride != 1 || in_channels != out_channels {
                b.push(
                    LayerSpec::new(
                        format!("{p}_proj"),
                        LayerKind::Conv2d {
                            in_channels,
                            out_channels,
                            kernel: 1,
                            stride,
                            padding: 0,
                        },
                    )
                    .reading(block_input)
                    .as_shortcut(),
                )?;
                b.push(
                    LayerSpec::new(
                        format!("{p}_proj_bn"),
                        LayerKind::BatchNormAffine {
                            channels: out_channels,
                        },
                    )
                    .as_shortcut(),
                )?;
                b.simple(&format!("{p}_add"), LayerKind::Add { skip_source: main })?;
            } else {
                b.simple(
                    &format!("{p}_add"),
                    LayerKind::Add {
                        skip_source: block_input,
                    },
                )?;
            }
            b.simple(&format!("{p}_relu3"), LayerKind::ReLU)?;
            b.block = None;
        }
        b.mark(format!("Layer {}", stage + 2));
    }
    b.simple("gap", LayerKind::GlobalAvgPool)?;
    b.simple("flatten", LayerKind::Flatten)?;
    b.fc("fc", 1000)?;
    b.finish("resnet50", seed)
}

/// (expansion, kernel, first stride, output channels, repeats)
const EFFICIENTNET_B0_STAGES: [(usize, usize, usize, usize, usize); 7] = [
    (1, 3, 1, 16, 1),
    (6, 3, 2, 24, 2),
    (6, 5, 2, 40, 2),
    (6, 3, 2, 80, 3),
    (6, 5, 1, 112, 3),
    (6, 5, 2, 192, 4),
    (6, 3, 1, 320, 1),
];

fn mbconv(
    b: &mut ChainBuilder,
    prefix: &str,
    expansion: usize,
    kernel: usize,
    stride: usize,
    out_channels: usize,
) -> Result<()> {
    let block_input = b.current();
    let in_channels = b.channels();
    let hidden = in_channels * expansion;
    if expansion != 1 {
        b.conv(&format!("{prefix}_expand"), hidden, 1, 1, 0)?;
        b.bn(&format!("{prefix}_expand_bn"))?;
        b.simple(&format!("{prefix}_expand_swish"), LayerKind::Swish)?;
    }
    b.simple(
        &format!("{prefix}_dw"),
        LayerKind::DepthwiseConv2d {
            channels: hidden,
            kernel,
            stride,
            padding: kernel / 2,
        },
    )?;
    b.bn(&format!("{prefix}_dw_bn"))?;
    let excited = b.simple(&format!("{prefix}_dw_swish"), LayerKind::Swish)?;

    let squeezed = (in_channels / 4).max(1);
    b.simple(&format!("{prefix}_se_pool"), LayerKind::GlobalAvgPool)?;
    b.fc(&format!("{prefix}_se_reduce"), squeezed)?;
    b.simple(&format!("{prefix}_se_swish"), LayerKind::Swish)?;
    b.fc(&format!("{prefix}_se_expand"), hidden)?;
    b.simple(&format!("{prefix}_se_gate"), LayerKind::Sigmoid)?;
    b.simple(
        &format!("{prefix}_se_scale"),
        LayerKind::ChannelScale { source: excited },
    )?;

    b.conv(&format!("{prefix}_project"), out_channels, 1, 1, 0)?;
    b.bn(&format!("{prefix}_project_bn"))?;
    if stride == 1 && in_channels == out_channels {
        b.simple(
            &format!("{prefix}_add"),
            LayerKind::Add {
                skip_source: block_input,
            },
        )?;
    }
    Ok(())
}

fn efficientnet_b0(input_shape: &[usize], seed: u64) -> Result<ModelGraph> {
    let mut b = ChainBuilder::new(input_shape);
    b.conv("stem_conv", 32, 3, 2, 1)?;
    b.bn("stem_bn")?;
    b.simple("stem_swish", LayerKind::Swish)?;
    b.mark("Layer 1");

    let mut block_index = 0;
    let last_stage = EFFICIENTNET_B0_STAGES.len() - 1;
    for (stage, &(expansion, kernel, first_stride, out, repeats)) in
        EFFICIENTNET_B0_STAGES.iter().enumerate()
    {
        for r in 0..repeats {
            let stride = if r == 0 { first_stride } else { 1 };
            b.block = Some(BlockTag {
                kind: BlockKind::MbConv,
                index: block_index,
            });
            mbconv(
                &mut b,
                &format!("s{}b{}", stage + 1, r + 1),
                expansion,
                kernel,
                stride,
                out,
            )?;
            b.block = None;
            block_index += 1;
        }
        if stage == last_stage {
            b.conv("head_conv", 1280, 1, 1, 0)?;
            b.bn("head_bn")?;
            b.simple("head_swish", LayerKind::Swish)?;
        }
        b.mark(format!("Layer {}", stage + 2));
    }
    b.simple("gap", LayerKind::GlobalAvgPool)?;
    b.simple("flatten", LayerKind::Flatten)?;
    b.fc("fc", 1000)?;
    b.finish("efficientnetb0", seed)
}

/// Four conv stages (8, 8, 16, 16 channels; the last three end in a 2×2
/// max-pool) and a 10-way classifier. Partition points `L1`..`L4`.
pub fn toy_cnn(input_shape: &[usize], seed: u64) -> Result<ModelGraph> {
    let mut b = ChainBuilder::new(input_shape);
    let pool = LayerKind::MaxPool {
        kernel: 2,
        stride: 2,
        padding: 0,
    };
    for (i, &(channels, pooled)) in [(8, false), (8, true), (16, true), (16, true)].iter().enumerate() {
        let n = i + 1;
        b.conv(&format!("conv{n}"), channels, 3, 1, 1)?;
        b.simple(&format!("relu{n}"), LayerKind::ReLU)?;
        if pooled {
            b.simple(&format!("pool{n}"), pool.clone())?;
        }
        b.mark(format!("L{n}"));
    }
    b.simple("flatten", LayerKind::Flatten)?;
    b.fc("fc", 10)?;
    b.finish("toy4", seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_is_rejected() {
        assert!(matches!(
            build_architecture("alexnet", &DEFAULT_INPUT),
            Err(Error::UnknownArchitecture(_))
        ));
    }

    #[test]
    fn tiny_input_is_too_small() {
        for name in PROFILED_ARCHITECTURES {
            let err = build_architecture(name, &[3, 8, 8]).unwrap_err();
            assert!(matches!(err, Error::InputTooSmall { .. }), "{name}: {err}");
        }
    }

    #[test]
    fn non_chw_input_is_rejected() {
        assert!(build_architecture("vgg16", &[224, 224]).is_err());
    }

    #[test]
    fn vgg16_layer5_is_first_256_channel_conv() {
        let g = build_architecture("vgg16", &DEFAULT_INPUT).unwrap();
        let b = g.boundary("Layer 5").unwrap();
        let before = &g.layers()[b - 2];
        assert_eq!(before.name, "conv5");
        assert!(matches!(
            before.kind,
            LayerKind::Conv2d {
                out_channels: 256,
                kernel: 3,
                ..
            }
        ));
        assert_eq!(g.layers()[b - 1].kind, LayerKind::ReLU);
        assert_eq!(g.census(0..b).conv, 5);
    }

    #[test]
    fn builtin_outputs_are_class_logits() {
        for name in PROFILED_ARCHITECTURES {
            let g = build_architecture(name, &DEFAULT_INPUT).unwrap();
            assert_eq!(g.output_shape(), &[1000], "{name}");
        }
    }

    #[test]
    fn resnet50_has_fifty_counted_layers() {
        let g = build_architecture("resnet50", &DEFAULT_INPUT).unwrap();
        let c = g.census(0..g.layers().len());
        assert_eq!(c.conv + c.fc, 50);
        assert_eq!(g.output_shape(), &[1000]);
        assert_eq!(g.shape_at(g.boundary("Layer 5").unwrap()), &[2048, 7, 7]);
    }

    #[test]
    fn efficientnet_b0_has_sixteen_mbconv_blocks() {
        let g = build_architecture("efficientnetb0", &DEFAULT_INPUT).unwrap();
        let c = g.census(0..g.layers().len());
        assert_eq!(c.mbconv, 16);
        assert_eq!(c.conv, 2);
        assert_eq!(c.fc, 1);
        assert_eq!(g.shape_at(g.boundary("Layer 8").unwrap()), &[1280, 7, 7]);
    }
}
