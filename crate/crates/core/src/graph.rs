//! Layered model description with enumerable partition points.
//!
//! A [`ModelGraph`] is a linear chain of layers. A layer normally consumes the
//! previous layer's output, but it may instead read any earlier activation
//! (`input`), and `Add`/`ChannelScale` combine the current activation with a
//! second earlier one. That is enough for residual shortcuts and
//! squeeze-and-excitation without a general DAG.
//!
//! Partition point boundaries count layers: boundary `b` keeps `layers[..b]`
//! in the enclave and sends `layers[b..]` to the accelerator.

use std::borrow::Cow;
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ELEMENT_BYTES;

/// Where a layer reads an activation from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// The graph input.
    Input,
    /// Output of the layer at this index.
    Layer(usize),
}

impl Source {
    /// Index into the activation list where slot 0 is the graph input and
    /// slot `j + 1` is the output of layer `j`.
    pub(crate) fn slot(self) -> usize {
        match self {
            Source::Input => 0,
            Source::Layer(j) => j + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    DepthwiseConv2d {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    FullyConnected {
        in_features: usize,
        out_features: usize,
    },
    ReLU,
    Swish,
    Sigmoid,
    /// Inference-mode batch norm: per-channel `scale * x + shift`.
    BatchNormAffine {
        channels: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Padded positions are excluded from the average.
    AvgPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    GlobalAvgPool,
    Add {
        skip_source: Source,
    },
    /// Multiplies each channel of `source` (C×H×W) by the matching entry of
    /// the current activation (C elements). Closes a squeeze-and-excitation
    /// branch.
    ChannelScale {
        source: Source,
    },
    Flatten,
}

impl LayerKind {
    pub fn short_name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "Conv2d",
            LayerKind::DepthwiseConv2d { .. } => "DepthwiseConv2d",
            LayerKind::FullyConnected { .. } => "FullyConnected",
            LayerKind::ReLU => "ReLU",
            LayerKind::Swish => "Swish",
            LayerKind::Sigmoid => "Sigmoid",
            LayerKind::BatchNormAffine { .. } => "BatchNormAffine",
            LayerKind::MaxPool { .. } => "MaxPool",
            LayerKind::AvgPool { .. } => "AvgPool",
            LayerKind::GlobalAvgPool => "GlobalAvgPool",
            LayerKind::Add { .. } => "Add",
            LayerKind::ChannelScale { .. } => "ChannelScale",
            LayerKind::Flatten => "Flatten",
        }
    }

    /// Second operand of binary layers.
    pub fn aux_source(&self) -> Option<Source> {
        match *self {
            LayerKind::Add { skip_source } => Some(skip_source),
            LayerKind::ChannelScale { source } => Some(source),
            _ => None,
        }
    }

    fn aux_source_mut(&mut self) -> Option<&mut Source> {
        match self {
            LayerKind::Add { skip_source } => Some(skip_source),
            LayerKind::ChannelScale { source } => Some(source),
            _ => None,
        }
    }

    /// `(weight_len, bias_len, fan_in)` for parameterized kinds.
    pub fn param_layout(&self) -> Option<(usize, usize, usize)> {
        match *self {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let fan_in = in_channels * kernel * kernel;
                Some((out_channels * fan_in, out_channels, fan_in))
            }
            LayerKind::DepthwiseConv2d {
                channels, kernel, ..
            } => Some((channels * kernel * kernel, channels, kernel * kernel)),
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => Some((in_features * out_features, out_features, in_features)),
            LayerKind::BatchNormAffine { channels } => Some((channels, channels, 1)),
            _ => None,
        }
    }

    fn positive_hyperparameters(&self) -> bool {
        match *self {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0,
            LayerKind::DepthwiseConv2d {
                channels,
                kernel,
                stride,
                ..
            } => channels > 0 && kernel > 0 && stride > 0,
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => in_features > 0 && out_features > 0,
            LayerKind::BatchNormAffine { channels } => channels > 0,
            LayerKind::MaxPool {
                kernel,
                stride,
                padding,
            }
            | LayerKind::AvgPool {
                kernel,
                stride,
                padding,
            } => kernel > 0 && stride > 0 && padding < kernel,
            _ => true,
        }
    }

    /// Shape inference. `aux` is the shape of the second operand for binary
    /// kinds.
    pub fn output_shape(&self, input: &[usize], aux: Option<&[usize]>) -> Result<Vec<usize>> {
        if !self.positive_hyperparameters() {
            return Err(Error::InvalidGraph(format!(
                "{} has a non-positive hyperparameter",
                self.short_name()
            )));
        }
        let numel: usize = input.iter().product();
        let mismatch = |expected: Vec<usize>| Error::ShapeMismatch {
            expected,
            actual: input.to_vec(),
        };
        match *self {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let (c, h, w) = chw(input)?;
                if c != in_channels {
                    return Err(mismatch(vec![in_channels, h, w]));
                }
                Ok(vec![
                    out_channels,
                    window_extent(h, kernel, stride, padding, input)?,
                    window_extent(w, kernel, stride, padding, input)?,
                ])
            }
            LayerKind::DepthwiseConv2d {
                channels,
                kernel,
                stride,
                padding,
            } => {
                let (c, h, w) = chw(input)?;
                if c != channels {
                    return Err(mismatch(vec![channels, h, w]));
                }
                Ok(vec![
                    channels,
                    window_extent(h, kernel, stride, padding, input)?,
                    window_extent(w, kernel, stride, padding, input)?,
                ])
            }
            LayerKind::MaxPool {
                kernel,
                stride,
                padding,
            }
            | LayerKind::AvgPool {
                kernel,
                stride,
                padding,
            } => {
                let (c, h, w) = chw(input)?;
                Ok(vec![
                    c,
                    window_extent(h, kernel, stride, padding, input)?,
                    window_extent(w, kernel, stride, padding, input)?,
                ])
            }
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => {
                if numel != in_features {
                    return Err(mismatch(vec![in_features]));
                }
                Ok(vec![out_features])
            }
            LayerKind::BatchNormAffine { channels } => {
                if input[0] != channels {
                    let mut expected = input.to_vec();
                    expected[0] = channels;
                    return Err(mismatch(expected));
                }
                Ok(input.to_vec())
            }
            LayerKind::ReLU | LayerKind::Swish | LayerKind::Sigmoid => Ok(input.to_vec()),
            LayerKind::GlobalAvgPool => {
                let (c, _, _) = chw(input)?;
                Ok(vec![c, 1, 1])
            }
            LayerKind::Flatten => Ok(vec![numel]),
            LayerKind::Add { .. } => {
                let aux = aux.expect("binary layer without second operand");
                if aux != input {
                    return Err(Error::ShapeMismatch {
                        expected: input.to_vec(),
                        actual: aux.to_vec(),
                    });
                }
                Ok(input.to_vec())
            }
            LayerKind::ChannelScale { .. } => {
                let aux = aux.expect("binary layer without second operand");
                let (c, _, _) = chw(aux)?;
                if numel != c {
                    return Err(mismatch(vec![c, 1, 1]));
                }
                Ok(aux.to_vec())
            }
        }
    }
}

fn chw(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::InvalidShape(shape.to_vec())),
    }
}

fn window_extent(
    n: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    shape: &[usize],
) -> Result<usize> {
    if n + 2 * padding < kernel {
        return Err(Error::InputTooSmall {
            shape: shape.to_vec(),
            reason: format!("extent {n} with padding {padding} is smaller than kernel {kernel}"),
        });
    }
    Ok((n + 2 * padding - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Residual,
    MbConv,
}

/// Marks a layer as part of a composite block. Partition points never fall
/// between two layers of the same block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockTag {
    pub kind: BlockKind,
    pub index: usize,
}

/// Weights for one parameterized layer. For batch norm `weight` holds the
/// per-channel scale and `bias` the shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    /// Primary operand; `None` means the previous layer (or the graph input
    /// for the first layer).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<BlockTag>,
    /// Projection on a residual shortcut; not counted as a network layer.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub shortcut: bool,
    #[serde(default)]
    pub output_shape: Vec<usize>,
    /// Explicit weights. When absent they are drawn from the graph seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Arc<LayerParams>>,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
            input: None,
            block: None,
            shortcut: false,
            output_shape: Vec::new(),
            params: None,
        }
    }

    pub fn reading(mut self, source: Source) -> Self {
        self.input = Some(source);
        self
    }

    pub fn in_block(mut self, tag: BlockTag) -> Self {
        self.block = Some(tag);
        self
    }

    pub fn as_shortcut(mut self) -> Self {
        self.shortcut = true;
        self
    }

    pub fn with_params(mut self, params: LayerParams) -> Self {
        self.params = Some(Arc::new(params));
        self
    }

    /// Primary operand of layer `index`.
    pub fn primary_source(&self, index: usize) -> Source {
        self.input.unwrap_or(if index == 0 {
            Source::Input
        } else {
            Source::Layer(index - 1)
        })
    }

    pub(crate) fn sources(&self, index: usize) -> impl Iterator<Item = Source> {
        std::iter::once(self.primary_source(index)).chain(self.kind.aux_source())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPoint {
    pub label: String,
    pub boundary: usize,
}

/// Layer counts at the granularity used for partition tables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCensus {
    pub conv: usize,
    pub mbconv: usize,
    pub fc: usize,
}

impl fmt::Display for LayerCensus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.conv > 0 {
            parts.push(format!("{} conv", self.conv));
        }
        if self.mbconv > 0 {
            parts.push(format!("{} MBConv", self.mbconv));
        }
        if self.fc > 0 {
            parts.push(format!("{} FC", self.fc));
        }
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(" + "))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionAssignment {
    pub boundary_label: String,
    pub boundary: usize,
    pub enclave_layers: Range<usize>,
    pub accelerator_layers: Range<usize>,
    pub exposed_tensor_shape: Vec<usize>,
    pub exposed_tensor_bytes: u64,
    pub enclave_census: LayerCensus,
    pub accelerator_census: LayerCensus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelGraphDoc {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    partition_points: Vec<PartitionPoint>,
    #[serde(default)]
    seed: u64,
}

/// Immutable, validated model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelGraphDoc", into = "ModelGraphDoc")]
pub struct ModelGraph {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    partition_points: Vec<PartitionPoint>,
    seed: u64,
}

impl TryFrom<ModelGraphDoc> for ModelGraph {
    type Error = Error;

    fn try_from(doc: ModelGraphDoc) -> Result<Self> {
        ModelGraph::new(
            doc.name,
            doc.input_shape,
            doc.layers,
            doc.partition_points,
            doc.seed,
        )
    }
}

impl From<ModelGraph> for ModelGraphDoc {
    fn from(g: ModelGraph) -> Self {
        Self {
            name: g.name,
            input_shape: g.input_shape,
            layers: g.layers,
            partition_points: g.partition_points,
            seed: g.seed,
        }
    }
}

impl ModelGraph {
    /// Validates the chain, runs shape inference and checks that every
    /// partition point sits on a block boundary that no reference crosses.
    /// Any `output_shape` already present on a layer must agree with the
    /// inferred one.
    pub fn new(
        name: impl Into<String>,
        input_shape: Vec<usize>,
        mut layers: Vec<LayerSpec>,
        partition_points: Vec<PartitionPoint>,
        seed: u64,
    ) -> Result<Self> {
        let name = name.into();
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidShape(input_shape));
        }
        let mut shapes: Vec<Vec<usize>> = vec![input_shape.clone()];
        for i in 0..layers.len() {
            for src in layers[i].sources(i) {
                if let Source::Layer(j) = src {
                    if j >= i {
                        return Err(Error::InvalidGraph(format!(
                            "layer {i} (`{}`) reads layer {j}, which is not earlier",
                            layers[i].name
                        )));
                    }
                }
            }
            let layer = &layers[i];
            let input = &shapes[layer.primary_source(i).slot()];
            let aux = layer.kind.aux_source().map(|s| shapes[s.slot()].as_slice());
            let out = layer.kind.output_shape(input, aux).map_err(|e| match e {
                Error::InputTooSmall { .. } => Error::InputTooSmall {
                    shape: input_shape.clone(),
                    reason: format!("layer `{}`: {e}", layer.name),
                },
                other => Error::InvalidGraph(format!("layer `{}`: {other}", layer.name)),
            })?;
            if let Some(params) = &layer.params {
                let (w, b, _) = layer.kind.param_layout().ok_or_else(|| {
                    Error::InvalidGraph(format!("layer `{}` takes no parameters", layer.name))
                })?;
                if params.weight.len() != w || params.bias.len() != b {
                    return Err(Error::InvalidGraph(format!(
                        "layer `{}` expects {w} weights and {b} biases",
                        layer.name
                    )));
                }
            }
            if !layer.output_shape.is_empty() && layer.output_shape != out {
                return Err(Error::InvalidGraph(format!(
                    "layer `{}` declares output shape {:?} but inference gives {out:?}",
                    layer.name, layer.output_shape
                )));
            }
            shapes.push(out);
        }
        for (layer, shape) in layers.iter_mut().zip(shapes.into_iter().skip(1)) {
            layer.output_shape = shape;
        }

        let mut names = std::collections::HashSet::new();
        for layer in &layers {
            if !names.insert(layer.name.as_str()) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate layer name `{}`",
                    layer.name
                )));
            }
        }

        let graph = Self {
            name,
            input_shape,
            layers,
            partition_points,
            seed,
        };
        graph.validate_partition_points()?;
        Ok(graph)
    }

    fn validate_partition_points(&self) -> Result<()> {
        let mut labels = std::collections::HashSet::new();
        let mut previous = 0;
        for point in &self.partition_points {
            if !labels.insert(point.label.as_str()) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate partition label `{}`",
                    point.label
                )));
            }
            let b = point.boundary;
            if b <= previous || b > self.layers.len() {
                return Err(Error::InvalidGraph(format!(
                    "partition `{}` boundary {b} is out of order or out of range",
                    point.label
                )));
            }
            previous = b;
            if b < self.layers.len() {
                let (before, after) = (&self.layers[b - 1], &self.layers[b]);
                if before.block.is_some() && before.block == after.block {
                    return Err(Error::InvalidGraph(format!(
                        "partition `{}` falls inside block `{}`/`{}`",
                        point.label, before.name, after.name
                    )));
                }
            }
            for (i, layer) in self.layers.iter().enumerate().skip(b) {
                for src in layer.sources(i) {
                    let crosses = match src {
                        Source::Input => true,
                        Source::Layer(j) => j + 1 < b,
                    };
                    if crosses {
                        return Err(Error::InvalidGraph(format!(
                            "layer `{}` reads across partition `{}`",
                            layer.name, point.label
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model graph serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn partition_points(&self) -> &[PartitionPoint] {
        &self.partition_points
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same graph with weights drawn from a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut g = self.clone();
        g.seed = seed;
        g
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shape_at(self.layers.len())
    }

    /// Activation shape after the first `boundary` layers.
    pub fn shape_at(&self, boundary: usize) -> &[usize] {
        if boundary == 0 {
            &self.input_shape
        } else {
            &self.layers[boundary - 1].output_shape
        }
    }

    pub(crate) fn slot_shape(&self, slot: usize) -> &[usize] {
        self.shape_at(slot)
    }

    pub fn partition(&self, label: &str) -> Result<&PartitionPoint> {
        self.partition_points
            .iter()
            .find(|p| p.label == label)
            .ok_or_else(|| Error::UnknownBoundary(label.to_string()))
    }

    pub fn boundary(&self, label: &str) -> Result<usize> {
        self.partition(label).map(|p| p.boundary)
    }

    pub fn census(&self, range: Range<usize>) -> LayerCensus {
        let mut census = LayerCensus::default();
        let mut seen_blocks = std::collections::HashSet::new();
        for layer in &self.layers[range] {
            if let Some(tag) = layer.block.filter(|t| t.kind == BlockKind::MbConv) {
                if seen_blocks.insert(tag.index) {
                    census.mbconv += 1;
                }
                continue;
            }
            match layer.kind {
                LayerKind::Conv2d { .. } | LayerKind::DepthwiseConv2d { .. } if !layer.shortcut => {
                    census.conv += 1
                }
                LayerKind::FullyConnected { .. } => census.fc += 1,
                _ => {}
            }
        }
        census
    }

    pub fn assignment(&self, point: &PartitionPoint) -> PartitionAssignment {
        let b = point.boundary;
        let shape = self.shape_at(b).to_vec();
        let bytes = shape.iter().product::<usize>() as u64 * ELEMENT_BYTES;
        PartitionAssignment {
            boundary_label: point.label.clone(),
            boundary: b,
            enclave_layers: 0..b,
            accelerator_layers: b..self.layers.len(),
            exposed_tensor_shape: shape,
            exposed_tensor_bytes: bytes,
            enclave_census: self.census(0..b),
            accelerator_census: self.census(b..self.layers.len()),
        }
    }

    pub fn assignment_for(&self, label: &str) -> Result<PartitionAssignment> {
        Ok(self.assignment(self.partition(label)?))
    }

    /// One assignment per partition point, in boundary order.
    pub fn enumerate_partitions(&self) -> Vec<PartitionAssignment> {
        self.partition_points
            .iter()
            .map(|p| self.assignment(p))
            .collect()
    }

    /// Splits into the enclave prefix and the accelerator suffix. The suffix
    /// reads the prefix's final activation as its graph input; layer names
    /// and the seed carry over so both halves compute with the same weights.
    pub fn split(&self, label: &str) -> Result<(ModelGraph, ModelGraph)> {
        let b = self.boundary(label)?;
        let head_layers = self.layers[..b].to_vec();
        let head_points = self
            .partition_points
            .iter()
            .filter(|p| p.boundary <= b)
            .cloned()
            .collect();
        let head = ModelGraph::new(
            format!("{}:enclave", self.name),
            self.input_shape.clone(),
            head_layers,
            head_points,
            self.seed,
        )?;

        let rebase = |src: Source| match src {
            Source::Layer(j) if j + 1 == b => Source::Input,
            Source::Layer(j) if j >= b => Source::Layer(j - b),
            // validate_partition_points rejects anything else
            other => unreachable!("reference {other:?} crosses boundary {b}"),
        };
        let tail_layers = self.layers[b..]
            .iter()
            .enumerate()
            .map(|(k, layer)| {
                let mut layer = layer.clone();
                let primary = layer.primary_source(b + k);
                layer.input = if k == 0 {
                    None
                } else {
                    layer.input.map(|_| rebase(primary))
                };
                if let Some(aux) = layer.kind.aux_source_mut() {
                    *aux = rebase(*aux);
                }
                layer
            })
            .collect();
        let tail_points = self
            .partition_points
            .iter()
            .filter(|p| p.boundary > b)
            .map(|p| PartitionPoint {
                label: p.label.clone(),
                boundary: p.boundary - b,
            })
            .collect();
        let tail = ModelGraph::new(
            format!("{}:accelerator", self.name),
            self.shape_at(b).to_vec(),
            tail_layers,
            tail_points,
            self.seed,
        )?;
        Ok((head, tail))
    }

    /// Parameters of layer `index`: the explicit ones, or a deterministic
    /// He-uniform draw keyed by the graph seed and the layer name.
    pub fn params(&self, index: usize) -> Option<Cow<'_, LayerParams>> {
        let layer = &self.layers[index];
        if let Some(p) = &layer.params {
            return Some(Cow::Borrowed(p.as_ref()));
        }
        layer
            .kind
            .param_layout()
            .map(|layout| Cow::Owned(generate_params(self.seed, layer, layout)))
    }

    pub fn parameter_count(&self, range: Range<usize>) -> u64 {
        self.layers[range]
            .iter()
            .filter_map(|l| l.kind.param_layout())
            .map(|(w, b, _)| (w + b) as u64)
            .sum()
    }
}

fn layer_key(seed: u64, name: &str) -> u64 {
    // FNV-1a; stable across platforms and toolchains.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in seed.to_le_bytes().iter().chain(name.as_bytes()) {
        h ^= *byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn generate_params(seed: u64, layer: &LayerSpec, layout: (usize, usize, usize)) -> LayerParams {
    let (weight_len, bias_len, fan_in) = layout;
    let mut rng = ChaCha8Rng::seed_from_u64(layer_key(seed, &layer.name));
    match layer.kind {
        LayerKind::BatchNormAffine { .. } => {
            let jitter = Uniform::new_inclusive(-0.1, 0.1);
            LayerParams {
                weight: (0..weight_len)
                    .map(|_| 1.0 + jitter.sample(&mut rng))
                    .collect(),
                bias: (0..bias_len).map(|_| jitter.sample(&mut rng)).collect(),
            }
        }
        _ => {
            let bound = (6.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            LayerParams {
                weight: (0..weight_len).map(|_| dist.sample(&mut rng)).collect(),
                bias: vec![0.0; bias_len],
            }
        }
    }
}
