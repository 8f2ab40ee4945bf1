//! Oracles shared by the integration tests. Each is written directly from
//! its definition without reusing library internals.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use splitpoint_core::{LayerKind, LayerSpec, ModelGraph, PartitionPoint, Source, Tensor};

/// Windowed SSIM computed position by position with an explicit 2-D Gaussian
/// weight table and centered second moments.
pub fn ssim_double_loop(a: &Tensor, b: &Tensor) -> f64 {
    let (win, sigma, k1, k2, range) = (11usize, 1.5f64, 0.01f64, 0.03f64, 1.0f64);
    let c1 = (k1 * range) * (k1 * range);
    let c2 = (k2 * range) * (k2 * range);
    let centre = (win / 2) as f64;
    let mut weights = vec![0.0; win * win];
    for u in 0..win {
        for v in 0..win {
            let d2 = (u as f64 - centre).powi(2) + (v as f64 - centre).powi(2);
            weights[u * win + v] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (ad, bd) = (a.data(), b.data());
    let mut channel_sum = 0.0;
    for ch in 0..c {
        let at = |y: usize, x: usize| ad[ch * h * w + y * w + x];
        let bt = |y: usize, x: usize| bd[ch * h * w + y * w + x];
        let mut map_sum = 0.0;
        let mut count = 0usize;
        for y in 0..=h - win {
            for x in 0..=w - win {
                let (mut ma, mut mb) = (0.0, 0.0);
                for u in 0..win {
                    for v in 0..win {
                        let wt = weights[u * win + v];
                        ma += wt * at(y + u, x + v);
                        mb += wt * bt(y + u, x + v);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for u in 0..win {
                    for v in 0..win {
                        let wt = weights[u * win + v];
                        let da = at(y + u, x + v) - ma;
                        let db = bt(y + u, x + v) - mb;
                        va += wt * da * da;
                        vb += wt * db * db;
                        cov += wt * da * db;
                    }
                }
                map_sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        channel_sum += map_sum / count as f64;
    }
    channel_sum / c as f64
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[order[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Every layer kind, in the order the gradient corpus cycles through them.
pub const FEATURED_KINDS: [&str; 13] = [
    "Conv2d",
    "DepthwiseConv2d",
    "FullyConnected",
    "ReLU",
    "Swish",
    "Sigmoid",
    "BatchNormAffine",
    "MaxPool",
    "AvgPool",
    "GlobalAvgPool",
    "Add",
    "ChannelScale",
    "Flatten",
];

fn activation(rng: &mut ChaCha8Rng) -> LayerKind {
    match rng.gen_range(0..3) {
        0 => LayerKind::ReLU,
        1 => LayerKind::Swish,
        _ => LayerKind::Sigmoid,
    }
}

fn conv(c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize) -> LayerKind {
    LayerKind::Conv2d {
        in_channels: c_in,
        out_channels: c_out,
        kernel,
        stride,
        padding,
    }
}

/// A model of at most four layers over an input of at most 3×8×8 that
/// contains `featured` (one of [`FEATURED_KINDS`]). The only partition point
/// sits after the last layer.
pub fn gradient_model(featured: &str, rng: &mut ChaCha8Rng, seed: u64) -> ModelGraph {
    let c = rng.gen_range(1..=3);
    let h = rng.gen_range(5..=8);
    let w = rng.gen_range(5..=8);
    let mut kinds: Vec<(LayerKind, Option<Source>)> = Vec::new();
    let c2 = rng.gen_range(1..=3);
    match featured {
        "Conv2d" => {
            let (k, s, p) = [(3, 1, 1), (3, 2, 0), (2, 1, 0), (1, 1, 0)][rng.gen_range(0..4)];
            kinds.push((conv(c, c2, k, s, p), None));
            kinds.push((activation(rng), None));
        }
        "DepthwiseConv2d" => {
            let (k, s, p) = [(3, 1, 1), (3, 2, 1), (2, 1, 0)][rng.gen_range(0..3)];
            kinds.push((
                LayerKind::DepthwiseConv2d {
                    channels: c,
                    kernel: k,
                    stride: s,
                    padding: p,
                },
                None,
            ));
        }
        "FullyConnected" | "Flatten" => {
            kinds.push((conv(c, c2, 3, 2, 0), None));
            kinds.push((LayerKind::Flatten, None));
            // FC input size depends on the conv output, filled in below
            kinds.push((
                LayerKind::FullyConnected {
                    in_features: 0,
                    out_features: rng.gen_range(2..=6),
                },
                None,
            ));
            kinds.push((activation(rng), None));
        }
        "ReLU" => {
            kinds.push((conv(c, c2, 3, 1, 1), None));
            kinds.push((LayerKind::ReLU, None));
        }
        "Swish" => kinds.push((LayerKind::Swish, None)),
        "Sigmoid" => kinds.push((LayerKind::Sigmoid, None)),
        "BatchNormAffine" => {
            kinds.push((LayerKind::BatchNormAffine { channels: c }, None));
            kinds.push((activation(rng), None));
        }
        "MaxPool" => {
            let (k, s, p) = [(2, 2, 0), (3, 1, 1), (3, 2, 1), (2, 1, 0)][rng.gen_range(0..4)];
            kinds.push((conv(c, c2, 3, 1, 1), None));
            kinds.push((
                LayerKind::MaxPool {
                    kernel: k,
                    stride: s,
                    padding: p,
                },
                None,
            ));
        }
        "AvgPool" => {
            let (k, s, p) = [(2, 2, 0), (3, 1, 1), (3, 2, 1)][rng.gen_range(0..3)];
            kinds.push((
                LayerKind::AvgPool {
                    kernel: k,
                    stride: s,
                    padding: p,
                },
                None,
            ));
            kinds.push((activation(rng), None));
        }
        "GlobalAvgPool" => {
            kinds.push((conv(c, c2, 3, 1, 0), None));
            kinds.push((activation(rng), None));
            kinds.push((LayerKind::GlobalAvgPool, None));
        }
        "Add" => {
            kinds.push((conv(c, c, 3, 1, 1), None));
            kinds.push((activation(rng), None));
            kinds.push((
                LayerKind::Add {
                    skip_source: Source::Input,
                },
                None,
            ));
        }
        "ChannelScale" => {
            kinds.push((conv(c, c2, 3, 1, 1), None));
            kinds.push((LayerKind::GlobalAvgPool, None));
            kinds.push((LayerKind::Sigmoid, None));
            kinds.push((
                LayerKind::ChannelScale {
                    source: Source::Layer(0),
                },
                None,
            ));
        }
        other => panic!("unknown kind {other}"),
    }
    // pad with shape-preserving layers up to a random length of at most 4
    let target = rng.gen_range(kinds.len()..=4);
    while kinds.len() < target {
        kinds.push((activation(rng), None));
    }

    // resolve the FC input size by shape inference on the prefix
    let input_shape = vec![c, h, w];
    let mut layers: Vec<LayerSpec> = Vec::new();
    for (i, (kind, source)) in kinds.into_iter().enumerate() {
        let kind = match kind {
            LayerKind::FullyConnected { out_features, .. } => {
                let probe = ModelGraph::new(
                    "probe",
                    input_shape.clone(),
                    layers.clone(),
                    vec![PartitionPoint {
                        label: "end".into(),
                        boundary: layers.len(),
                    }],
                    seed,
                )
                .unwrap();
                LayerKind::FullyConnected {
                    in_features: probe.output_shape().iter().product(),
                    out_features,
                }
            }
            k => k,
        };
        let mut spec = LayerSpec::new(format!("l{i}"), kind);
        if let Some(s) = source {
            spec = spec.reading(s);
        }
        layers.push(spec);
    }
    let n = layers.len();
    ModelGraph::new(
        format!("grad-{featured}"),
        input_shape,
        layers,
        vec![PartitionPoint {
            label: "end".into(),
            boundary: n,
        }],
        seed,
    )
    .unwrap()
}

fn slot_of(source: Source) -> usize {
    match source {
        Source::Input => 0,
        Source::Layer(j) => j + 1,
    }
}

/// Which side of every ReLU kink and which max-pool winner each window has.
/// Two inputs with equal fingerprints lie in the same smooth piece.
pub fn kink_fingerprint(model: &ModelGraph, x: &Tensor) -> Vec<usize> {
    let t = splitpoint_core::trace(model, x, model.layers().len()).unwrap();
    let acts = t.activations();
    let mut fp = Vec::new();
    for (j, layer) in model.layers().iter().enumerate() {
        let input = &acts[slot_of(layer.primary_source(j))];
        match layer.kind {
            LayerKind::ReLU => fp.extend(input.data().iter().map(|&v| (v > 0.0) as usize)),
            LayerKind::MaxPool {
                kernel,
                stride,
                padding,
            } => {
                let (c, ih, iw) = (input.shape()[0], input.shape()[1], input.shape()[2]);
                let oh = (ih + 2 * padding - kernel) / stride + 1;
                let ow = (iw + 2 * padding - kernel) / stride + 1;
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = (usize::MAX, f64::NEG_INFINITY);
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if iy < 0 || ix < 0 || iy as usize >= ih || ix as usize >= iw {
                                        continue;
                                    }
                                    let idx = ch * ih * iw + iy as usize * iw + ix as usize;
                                    if input.data()[idx] > best.1 {
                                        best = (idx, input.data()[idx]);
                                    }
                                }
                            }
                            fp.push(best.0);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    fp
}

pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// `a` plus uniform noise in `[-amp, amp)`, clamped to [0, 1].
pub fn perturbed(rng: &mut ChaCha8Rng, a: &Tensor, amp: f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .map(|v| (v + rng.gen_range(-amp..amp)).clamp(0.0, 1.0))
        .collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}
