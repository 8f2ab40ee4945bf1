//! Forward inference and reverse-mode input gradients.
//!
//! All kernels run on `f64` with a fixed loop order, so identical inputs give
//! bitwise identical outputs regardless of how a graph is split.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::graph::{LayerKind, LayerParams, ModelGraph};
use crate::tensor::Tensor;

/// Every activation of a forward pass up to some boundary: slot 0 is the
/// input, slot `i + 1` the output of layer `i`.
#[derive(Clone, Debug)]
pub struct Trace {
    activations: Vec<Tensor>,
}

impl Trace {
    pub fn activations(&self) -> &[Tensor] {
        &self.activations
    }

    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace holds the input")
    }

    pub fn boundary(&self) -> usize {
        self.activations.len() - 1
    }
}

fn check_input(model: &ModelGraph, input: &Tensor) -> Result<()> {
    input.expect_shape(model.input_shape())?;
    if !input.is_finite() {
        return Err(Error::NonFinite("input".into()));
    }
    Ok(())
}

fn check_output(t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite("activation".into()))
    }
}

pub fn forward(model: &ModelGraph, input: &Tensor) -> Result<Tensor> {
    forward_prefix(model, input, model.layers().len())
}

/// Activation at a named partition point: the exposed feature map.
pub fn forward_until(model: &ModelGraph, input: &Tensor, boundary_label: &str) -> Result<Tensor> {
    let b = model.boundary(boundary_label)?;
    forward_prefix(model, input, b)
}

/// Runs the first `boundary` layers, releasing activations once no later
/// layer reads them.
pub fn forward_prefix(model: &ModelGraph, input: &Tensor, boundary: usize) -> Result<Tensor> {
    check_input(model, input)?;
    let layers = &model.layers()[..boundary];
    let mut pending_reads = vec![0usize; boundary + 1];
    for (i, layer) in layers.iter().enumerate() {
        for src in layer.sources(i) {
            pending_reads[src.slot()] += 1;
        }
    }
    let mut slots: Vec<Option<Tensor>> = Vec::with_capacity(boundary + 1);
    slots.push(Some(input.clone()));
    for (i, layer) in layers.iter().enumerate() {
        let primary = layer.primary_source(i).slot();
        let aux = layer.kind.aux_source().map(|s| s.slot());
        let params = model.params(i);
        let out = {
            let x = slots[primary].as_ref().expect("activation still live");
            let a = aux.map(|s| slots[s].as_ref().expect("activation still live"));
            apply_layer(&layer.kind, params.as_deref(), x, a, &layer.output_shape)
        };
        for s in std::iter::once(primary).chain(aux) {
            pending_reads[s] -= 1;
            if pending_reads[s] == 0 {
                slots[s] = None;
            }
        }
        let keep = pending_reads[i + 1] > 0 || i + 1 == boundary;
        slots.push(keep.then_some(out));
    }
    check_output(slots.pop().flatten().expect("final activation is kept"))
}

/// Forward pass keeping every activation, for gradient computation.
pub fn trace(model: &ModelGraph, input: &Tensor, boundary: usize) -> Result<Trace> {
    check_input(model, input)?;
    let mut activations = Vec::with_capacity(boundary + 1);
    activations.push(input.clone());
    for (i, layer) in model.layers()[..boundary].iter().enumerate() {
        let params = model.params(i);
        let x = &activations[layer.primary_source(i).slot()];
        let a = layer.kind.aux_source().map(|s| &activations[s.slot()]);
        let out = apply_layer(&layer.kind, params.as_deref(), x, a, &layer.output_shape);
        activations.push(out);
    }
    let trace = Trace { activations };
    if !trace.output().is_finite() {
        return Err(Error::NonFinite("activation".into()));
    }
    Ok(trace)
}

/// Gradient of `<activation at boundary, cotangent>` with respect to the
/// input.
pub fn input_gradient(
    model: &ModelGraph,
    boundary_label: &str,
    input: &Tensor,
    cotangent: &Tensor,
) -> Result<Tensor> {
    let b = model.boundary(boundary_label)?;
    cotangent.expect_shape(model.shape_at(b))?;
    let t = trace(model, input, b)?;
    backward(model, &t, cotangent)
}

/// Reverse pass over a recorded trace, seeded with `cotangent` at the trace's
/// final activation.
pub fn backward(model: &ModelGraph, trace: &Trace, cotangent: &Tensor) -> Result<Tensor> {
    let boundary = trace.boundary();
    cotangent.expect_shape(trace.output().shape())?;
    let acts = &trace.activations;
    let mut grads: Vec<Option<Tensor>> = vec![None; boundary + 1];
    grads[boundary] = Some(cotangent.clone());
    for i in (0..boundary).rev() {
        let Some(gy) = grads[i + 1].take() else {
            continue;
        };
        let layer = &model.layers()[i];
        let primary = layer.primary_source(i).slot();
        let aux = layer.kind.aux_source().map(|s| s.slot());
        let params = model.params(i);
        let (gx, gaux) = layer_backward(
            &layer.kind,
            params.as_deref(),
            &acts[primary],
            aux.map(|s| &acts[s]),
            &acts[i + 1],
            &gy,
        );
        accumulate(&mut grads[primary], gx);
        if let (Some(slot), Some(g)) = (aux, gaux) {
            accumulate(&mut grads[slot], g);
        }
    }
    let grad = grads[0]
        .take()
        .unwrap_or_else(|| Tensor::zeros(model.input_shape()));
    check_output(grad)
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn params_of<'a>(params: Option<&'a LayerParams>, kind: &LayerKind) -> &'a LayerParams {
    params.unwrap_or_else(|| panic!("{} requires parameters", kind.short_name()))
}

fn dims3(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2])
}

/// Output positions `o` whose input coordinate `o * stride + offset - padding`
/// lands inside `0..in_len`.
fn valid_outputs(offset: usize, padding: usize, stride: usize, in_len: usize, out_len: usize) -> Range<usize> {
    let lo = if padding > offset {
        (padding - offset).div_ceil(stride)
    } else {
        0
    };
    let hi = if in_len + padding > offset {
        ((in_len + padding - offset - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    lo..hi.max(lo)
}

struct Window {
    kernel: usize,
    stride: usize,
    padding: usize,
}

fn conv_forward(
    x: &Tensor,
    p: &LayerParams,
    out_shape: &[usize],
    w: &Window,
    depthwise: bool,
) -> Tensor {
    let (ic, ih, iw) = dims3(x.shape());
    let (oc, oh, ow) = dims3(out_shape);
    let k = w.kernel;
    let xd = x.data();
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(p.bias[o]);
        let inputs = if depthwise { o..o + 1 } else { 0..ic };
        for c in inputs {
            let in_plane = &xd[c * ih * iw..(c + 1) * ih * iw];
            let kbase = if depthwise { o * k * k } else { (o * ic + c) * k * k };
            for ky in 0..k {
                let rows = valid_outputs(ky, w.padding, w.stride, ih, oh);
                for kx in 0..k {
                    let weight = p.weight[kbase + ky * k + kx];
                    let cols = valid_outputs(kx, w.padding, w.stride, iw, ow);
                    for oy in rows.clone() {
                        let iy = oy * w.stride + ky - w.padding;
                        let in_row = &in_plane[iy * iw..(iy + 1) * iw];
                        let out_row = &mut plane[oy * ow..(oy + 1) * ow];
                        for ox in cols.clone() {
                            out_row[ox] += weight * in_row[ox * w.stride + kx - w.padding];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(out_shape.to_vec(), out)
}

fn conv_backward(x: &Tensor, p: &LayerParams, gy: &Tensor, w: &Window, depthwise: bool) -> Tensor {
    let (ic, ih, iw) = dims3(x.shape());
    let (oc, oh, ow) = dims3(gy.shape());
    let k = w.kernel;
    let gyd = gy.data();
    let mut gx = vec![0.0; ic * ih * iw];
    for o in 0..oc {
        let g_plane = &gyd[o * oh * ow..(o + 1) * oh * ow];
        let inputs = if depthwise { o..o + 1 } else { 0..ic };
        for c in inputs {
            let kbase = if depthwise { o * k * k } else { (o * ic + c) * k * k };
            let gx_plane = &mut gx[c * ih * iw..(c + 1) * ih * iw];
            for ky in 0..k {
                let rows = valid_outputs(ky, w.padding, w.stride, ih, oh);
                for kx in 0..k {
                    let weight = p.weight[kbase + ky * k + kx];
                    let cols = valid_outputs(kx, w.padding, w.stride, iw, ow);
                    for oy in rows.clone() {
                        let iy = oy * w.stride + ky - w.padding;
                        let g_row = &g_plane[oy * ow..(oy + 1) * ow];
                        let gx_row = &mut gx_plane[iy * iw..(iy + 1) * iw];
                        for ox in cols.clone() {
                            gx_row[ox * w.stride + kx - w.padding] += weight * g_row[ox];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), gx)
}

/// Flat input index of the maximum in each pooling window; ties resolve to
/// the lowest index because the window is scanned in row-major order and
/// only a strictly larger value replaces the current best.
fn max_pool_argmax(x: &Tensor, out_shape: &[usize], w: &Window) -> Vec<usize> {
    let (c, ih, iw) = dims3(x.shape());
    let (_, oh, ow) = dims3(out_shape);
    let xd = x.data();
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best: Option<(usize, f64)> = None;
                for ky in 0..w.kernel {
                    let iy = (oy * w.stride + ky) as isize - w.padding as isize;
                    if iy < 0 || iy as usize >= ih {
                        continue;
                    }
                    for kx in 0..w.kernel {
                        let ix = (ox * w.stride + kx) as isize - w.padding as isize;
                        if ix < 0 || ix as usize >= iw {
                            continue;
                        }
                        let idx = ch * ih * iw + iy as usize * iw + ix as usize;
                        if best.is_none_or(|(_, v)| xd[idx] > v) {
                            best = Some((idx, xd[idx]));
                        }
                    }
                }
                argmax.push(best.expect("padding < kernel keeps windows nonempty").0);
            }
        }
    }
    argmax
}

/// Input indices covered by each average-pool window (padding excluded).
fn avg_pool_windows(x_shape: &[usize], out_shape: &[usize], w: &Window) -> Vec<Vec<usize>> {
    let (c, ih, iw) = dims3(x_shape);
    let (_, oh, ow) = dims3(out_shape);
    let mut windows = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut members = Vec::with_capacity(w.kernel * w.kernel);
                for ky in 0..w.kernel {
                    let iy = (oy * w.stride + ky) as isize - w.padding as isize;
                    if iy < 0 || iy as usize >= ih {
                        continue;
                    }
                    for kx in 0..w.kernel {
                        let ix = (ox * w.stride + kx) as isize - w.padding as isize;
                        if ix < 0 || ix as usize >= iw {
                            continue;
                        }
                        members.push(ch * ih * iw + iy as usize * iw + ix as usize);
                    }
                }
                windows.push(members);
            }
        }
    }
    windows
}

pub(crate) fn apply_layer(
    kind: &LayerKind,
    params: Option<&LayerParams>,
    x: &Tensor,
    aux: Option<&Tensor>,
    out_shape: &[usize],
) -> Tensor {
    match *kind {
        LayerKind::Conv2d {
            kernel,
            stride,
            padding,
            ..
        } => conv_forward(
            x,
            params_of(params, kind),
            out_shape,
            &Window {
                kernel,
                stride,
                padding,
            },
            false,
        ),
        LayerKind::DepthwiseConv2d {
            kernel,
            stride,
            padding,
            ..
        } => conv_forward(
            x,
            params_of(params, kind),
            out_shape,
            &Window {
                kernel,
                stride,
                padding,
            },
            true,
        ),
        LayerKind::FullyConnected {
            in_features,
            out_features,
        } => {
            let p = params_of(params, kind);
            let xd = x.data();
            let out = (0..out_features)
                .map(|o| {
                    let row = &p.weight[o * in_features..(o + 1) * in_features];
                    p.bias[o] + row.iter().zip(xd).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            Tensor::from_parts(out_shape.to_vec(), out)
        }
        LayerKind::BatchNormAffine { channels } => {
            let p = params_of(params, kind);
            let plane = x.numel() / channels;
            let out = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let c = i / plane;
                    p.weight[c] * v + p.bias[c]
                })
                .collect();
            Tensor::from_parts(out_shape.to_vec(), out)
        }
        LayerKind::ReLU => x.map(|v| if v > 0.0 { v } else { 0.0 }),
        LayerKind::Sigmoid => x.map(sigmoid),
        LayerKind::Swish => x.map(|v| v * sigmoid(v)),
        LayerKind::MaxPool {
            kernel,
            stride,
            padding,
        } => {
            let argmax = max_pool_argmax(
                x,
                out_shape,
                &Window {
                    kernel,
                    stride,
                    padding,
                },
            );
            let xd = x.data();
            Tensor::from_parts(out_shape.to_vec(), argmax.into_iter().map(|i| xd[i]).collect())
        }
        LayerKind::AvgPool {
            kernel,
            stride,
            padding,
        } => {
            let windows = avg_pool_windows(
                x.shape(),
                out_shape,
                &Window {
                    kernel,
                    stride,
                    padding,
                },
            );
            let xd = x.data();
            let out = windows
                .iter()
                .map(|m| m.iter().map(|&i| xd[i]).sum::<f64>() / m.len() as f64)
                .collect();
            Tensor::from_parts(out_shape.to_vec(), out)
        }
        LayerKind::GlobalAvgPool => {
            let (c, h, w) = dims3(x.shape());
            let plane = h * w;
            let out = (0..c)
                .map(|ch| x.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
                .collect();
            Tensor::from_parts(out_shape.to_vec(), out)
        }
        LayerKind::Flatten => Tensor::from_parts(out_shape.to_vec(), x.data().to_vec()),
        LayerKind::Add { .. } => {
            let a = aux.expect("Add needs its skip operand");
            let out = x.data().iter().zip(a.data()).map(|(u, v)| u + v).collect();
            Tensor::from_parts(out_shape.to_vec(), out)
        }
        LayerKind::ChannelScale { .. } => {
            let src = aux.expect("ChannelScale needs its source operand");
            let gate = x.data();
            let plane = src.numel() / gate.len();
            let out = src
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| v * gate[i / plane])
                .collect();
            Tensor::from_parts(out_shape.to_vec(), out)
        }
    }
}

/// Returns the gradients for the primary operand and, for binary kinds, the
/// second operand.
pub(crate) fn layer_backward(
    kind: &LayerKind,
    params: Option<&LayerParams>,
    x: &Tensor,
    aux: Option<&Tensor>,
    y: &Tensor,
    gy: &Tensor,
) -> (Tensor, Option<Tensor>) {
    let same = |data: Vec<f64>| Tensor::from_parts(x.shape().to_vec(), data);
    let gyd = gy.data();
    match *kind {
        LayerKind::Conv2d {
            kernel,
            stride,
            padding,
            ..
        } => (
            conv_backward(
                x,
                params_of(params, kind),
                gy,
                &Window {
                    kernel,
                    stride,
                    padding,
                },
                false,
            ),
            None,
        ),
        LayerKind::DepthwiseConv2d {
            kernel,
            stride,
            padding,
            ..
        } => (
            conv_backward(
                x,
                params_of(params, kind),
                gy,
                &Window {
                    kernel,
                    stride,
                    padding,
                },
                true,
            ),
            None,
        ),
        LayerKind::FullyConnected {
            in_features,
            out_features,
        } => {
            let p = params_of(params, kind);
            let mut gx = vec![0.0; in_features];
            for o in 0..out_features {
                let g = gyd[o];
                let row = &p.weight[o * in_features..(o + 1) * in_features];
                for (acc, w) in gx.iter_mut().zip(row) {
                    *acc += w * g;
                }
            }
            (same(gx), None)
        }
        LayerKind::BatchNormAffine { channels } => {
            let p = params_of(params, kind);
            let plane = x.numel() / channels;
            let gx = gyd
                .iter()
                .enumerate()
                .map(|(i, g)| p.weight[i / plane] * g)
                .collect();
            (same(gx), None)
        }
        LayerKind::ReLU => {
            let gx = x
                .data()
                .iter()
                .zip(gyd)
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect();
            (same(gx), None)
        }
        LayerKind::Sigmoid => {
            let gx = y.data().iter().zip(gyd).map(|(s, g)| g * s * (1.0 - s)).collect();
            (same(gx), None)
        }
        LayerKind::Swish => {
            let gx = x
                .data()
                .iter()
                .zip(gyd)
                .map(|(&v, &g)| {
                    let s = sigmoid(v);
                    g * (s + v * s * (1.0 - s))
                })
                .collect();
            (same(gx), None)
        }
        LayerKind::MaxPool {
            kernel,
            stride,
            padding,
        } => {
            let argmax = max_pool_argmax(
                x,
                y.shape(),
                &Window {
                    kernel,
                    stride,
                    padding,
                },
            );
            let mut gx = vec![0.0; x.numel()];
            for (&i, g) in argmax.iter().zip(gyd) {
                gx[i] += g;
            }
            (same(gx), None)
        }
        LayerKind::AvgPool {
            kernel,
            stride,
            padding,
        } => {
            let windows = avg_pool_windows(
                x.shape(),
                y.shape(),
                &Window {
                    kernel,
                    stride,
                    padding,
                },
            );
            let mut gx = vec![0.0; x.numel()];
            for (members, g) in windows.iter().zip(gyd) {
                let share = g / members.len() as f64;
                for &i in members {
                    gx[i] += share;
                }
            }
            (same(gx), None)
        }
        LayerKind::GlobalAvgPool => {
            let plane = x.numel() / gyd.len();
            let gx = (0..x.numel()).map(|i| gyd[i / plane] / plane as f64).collect();
            (same(gx), None)
        }
        LayerKind::Flatten => (same(gyd.to_vec()), None),
        LayerKind::Add { .. } => (same(gyd.to_vec()), Some(gy.clone())),
        LayerKind::ChannelScale { .. } => {
            let src = aux.expect("ChannelScale needs its source operand");
            let gate = x.data();
            let plane = src.numel() / gate.len();
            let mut g_gate = vec![0.0; gate.len()];
            let mut g_src = vec![0.0; src.numel()];
            for (i, (&v, &g)) in src.data().iter().zip(gyd).enumerate() {
                let c = i / plane;
                g_gate[c] += g * v;
                g_src[i] = g * gate[c];
            }
            (
                same(g_gate),
                Some(Tensor::from_parts(src.shape().to_vec(), g_src)),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{LayerSpec, PartitionPoint};

    fn single(kind: LayerKind, input_shape: Vec<usize>, params: Option<LayerParams>) -> ModelGraph {
        let mut layer = LayerSpec::new("only", kind);
        if let Some(p) = params {
            layer = layer.with_params(p);
        }
        ModelGraph::new(
            "single",
            input_shape,
            vec![layer],
            vec![PartitionPoint {
                label: "P".into(),
                boundary: 1,
            }],
            0,
        )
        .unwrap()
    }

    #[test]
    fn identity_pointwise_conv_is_identity() {
        let c = 3;
        let mut weight = vec![0.0; c * c];
        for i in 0..c {
            weight[i * c + i] = 1.0;
        }
        let g = single(
            LayerKind::Conv2d {
                in_channels: c,
                out_channels: c,
                kernel: 1,
                stride: 1,
                padding: 0,
            },
            vec![c, 4, 5],
            Some(LayerParams {
                weight,
                bias: vec![0.0; c],
            }),
        );
        let x = Tensor::new(vec![c, 4, 5], (0..60).map(|i| i as f64 * 0.1 - 2.0).collect()).unwrap();
        assert_eq!(forward(&g, &x).unwrap(), x);
    }

    #[test]
    fn relu_forward_and_gradient() {
        let g = single(LayerKind::ReLU, vec![3], None);
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(forward(&g, &x).unwrap().data(), &[0.0, 0.0, 2.0]);

        let g = single(LayerKind::ReLU, vec![2], None);
        let x = Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap();
        let ct = Tensor::filled(&[2], 1.0);
        assert_eq!(input_gradient(&g, "P", &x, &ct).unwrap().data(), &[0.0, 1.0]);
        let zero = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        assert_eq!(input_gradient(&g, "P", &zero, &ct).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn fully_connected_gradient_is_transpose_product() {
        let weight = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let g = single(
            LayerKind::FullyConnected {
                in_features: 3,
                out_features: 2,
            },
            vec![3],
            Some(LayerParams {
                weight,
                bias: vec![0.5, -0.5],
            }),
        );
        let x = Tensor::new(vec![3], vec![1.0, -1.0, 2.0]).unwrap();
        assert_eq!(forward(&g, &x).unwrap().data(), &[1.0 - 2.0 + 6.0 + 0.5, 4.0 - 5.0 + 12.0 - 0.5]);
        let ct = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let grad = input_gradient(&g, "P", &x, &ct).unwrap();
        assert_eq!(grad.data(), &[1.0 - 8.0, 2.0 - 10.0, 3.0 - 12.0]);
    }

    #[test]
    fn max_pool_ties_go_to_lowest_index() {
        let g = single(
            LayerKind::MaxPool {
                kernel: 2,
                stride: 2,
                padding: 0,
            },
            vec![1, 2, 2],
            None,
        );
        let x = Tensor::filled(&[1, 2, 2], 1.0);
        let grad = input_gradient(&g, "P", &x, &Tensor::filled(&[1, 1, 1], 1.0)).unwrap();
        assert_eq!(grad.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn strided_padded_conv_matches_direct_sum() {
        let (ic, oc, k, s, p) = (2, 3, 3, 2, 1);
        let kind = LayerKind::Conv2d {
            in_channels: ic,
            out_channels: oc,
            kernel: k,
            stride: s,
            padding: p,
        };
        let g = single(kind, vec![ic, 5, 6], None);
        let params = g.params(0).unwrap().into_owned();
        let x = Tensor::new(vec![ic, 5, 6], (0..60).map(|i| ((i * 7) % 11) as f64 / 11.0).collect()).unwrap();
        let y = forward(&g, &x).unwrap();
        assert_eq!(y.shape(), &[3, 3, 3]);
        for o in 0..oc {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut acc = params.bias[o];
                    for c in 0..ic {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= 5 || ix >= 6 {
                                    continue;
                                }
                                acc += params.weight[((o * ic + c) * k + ky) * k + kx]
                                    * x.data()[c * 30 + iy as usize * 6 + ix as usize];
                            }
                        }
                    }
                    let got = y.data()[o * 9 + oy * 3 + ox];
                    assert!((got - acc).abs() < 1e-12, "{got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_and_non_finite_inputs_are_rejected() {
        let g = single(LayerKind::ReLU, vec![2], None);
        assert!(matches!(
            forward(&g, &Tensor::zeros(&[3])),
            Err(Error::ShapeMismatch { .. })
        ));
        let bad = Tensor::new(vec![2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(forward(&g, &bad), Err(Error::NonFinite(_))));
        let x = Tensor::zeros(&[2]);
        assert!(input_gradient(&g, "P", &x, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn valid_outputs_bounds() {
        // in 5, kernel offset 0, pad 1, stride 2, out 3: oy=0 reads -1
        assert_eq!(valid_outputs(0, 1, 2, 5, 3), 1..3);
        assert_eq!(valid_outputs(2, 1, 2, 5, 3), 0..2);
        assert_eq!(valid_outputs(1, 1, 2, 5, 3), 0..3);
    }
}
