//! Windowed structural similarity.
//!
//! Local statistics use a normalized Gaussian window applied separably and
//! only where the window fits entirely inside the image ("valid" filtering).
//! The score is the mean of the local SSIM map, averaged over channels.
//! Values are not clamped; the formula admits slightly negative scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window_size: usize,
    pub gaussian_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_size: 11,
            gaussian_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.window_size % 2 == 1
            && self.gaussian_sigma > 0.0
            && self.k1 > 0.0
            && self.k2 > 0.0
            && self.dynamic_range > 0.0
            && self.c1() > 0.0
            && self.c2() > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("SSIM parameters {self:?}")))
        }
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn gaussian_taps(&self) -> Vec<f64> {
        let radius = (self.window_size / 2) as f64;
        let raw: Vec<f64> = (0..self.window_size)
            .map(|i| {
                let d = i as f64 - radius;
                (-(d * d) / (2.0 * self.gaussian_sigma * self.gaussian_sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

/// Views a rank-2 (H×W) or rank-3 (C×H×W) tensor as (channels, height, width).
pub(crate) fn image_dims(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::InvalidShape(t.shape().to_vec())),
    }
}

pub fn ssim(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    a.expect_shape(b.shape())
        .map_err(|_| Error::ShapeMismatch {
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        })?;
    let (c, h, w) = image_dims(a)?;
    let ws = params.window_size;
    if h < ws || w < ws {
        return Err(Error::InputTooSmall {
            shape: a.shape().to_vec(),
            reason: format!("SSIM window {ws} does not fit"),
        });
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("SSIM operand".into()));
    }
    let taps = params.gaussian_taps();
    let (c1, c2) = (params.c1(), params.c2());
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let x = &a.data()[ch * plane..(ch + 1) * plane];
        let y = &b.data()[ch * plane..(ch + 1) * plane];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(u, v)| u * v).collect();
        let mu_x = filter_valid(x, h, w, &taps);
        let mu_y = filter_valid(y, h, w, &taps);
        let e_xx = filter_valid(&xx, h, w, &taps);
        let e_yy = filter_valid(&yy, h, w, &taps);
        let e_xy = filter_valid(&xy, h, w, &taps);
        let mut sum = 0.0;
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = e_xx[i] - mx * mx;
            let var_y = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
            sum += num / den;
        }
        total += sum / mu_x.len() as f64;
    }
    Ok(total / c as f64)
}

/// Separable valid-mode correlation of an `h`×`w` plane with `taps` along
/// both axes.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut horizontal = vec![0.0; h * ow];
    for r in 0..h {
        let row = &plane[r * w..(r + 1) * w];
        for c in 0..ow {
            horizontal[r * ow + c] = taps.iter().zip(&row[c..c + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * horizontal[(r + i) * ow + c])
                .sum();
        }
    }
    out
}
