//! Runtime cost model for split inference.
//!
//! A profile stores, per partition point, the time to run the enclave prefix
//! and the accelerator suffix. The one-off feature-map handoff ("kernel
//! switch") is affine in the exposed bytes. Unmeasured points are filled by
//! interpolating enclave time against cumulative multiply-accumulate counts.

use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::arch::{build_architecture, DEFAULT_INPUT, PROFILED_ARCHITECTURES};
use crate::error::{Error, Result};
use crate::graph::{LayerKind, ModelGraph, PartitionAssignment};

/// Handoff cost range for built-in architectures at the default input.
pub const TRANSFER_MIN_SECONDS: f64 = 0.02;
pub const TRANSFER_MAX_SECONDS: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferModel {
    pub base_seconds: f64,
    pub seconds_per_byte: f64,
    /// Optional `[low, high]` clamp applied after the affine map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp: Option<[f64; 2]>,
}

impl TransferModel {
    pub fn seconds(&self, bytes: u64) -> f64 {
        let t = self.base_seconds + self.seconds_per_byte * bytes as f64;
        match self.clamp {
            Some([lo, hi]) => t.clamp(lo, hi),
            None => t,
        }
    }

    /// Affine map sending `min_bytes` to `low` and `max_bytes` to `high`.
    pub fn spanning(min_bytes: u64, max_bytes: u64, low: f64, high: f64) -> Self {
        let rate = if max_bytes > min_bytes {
            (high - low) / (max_bytes - min_bytes) as f64
        } else {
            0.0
        };
        Self {
            base_seconds: low - rate * min_bytes as f64,
            seconds_per_byte: rate,
            clamp: Some([low, high]),
        }
    }

    /// Spans the smallest and largest exposed feature maps of the profiled
    /// architectures at 3×224×224 across [0.02, 0.1] s.
    pub fn builtin() -> Self {
        static MODEL: OnceLock<TransferModel> = OnceLock::new();
        MODEL
            .get_or_init(|| {
                let (min, max) = builtin_exposed_byte_range();
                TransferModel::spanning(min, max, TRANSFER_MIN_SECONDS, TRANSFER_MAX_SECONDS)
            })
            .clone()
    }

    fn validate(&self) -> Result<()> {
        let clamp_ok = self.clamp.is_none_or(|[lo, hi]| lo >= 0.0 && lo <= hi);
        if self.seconds_per_byte < 0.0 || !self.base_seconds.is_finite() || !clamp_ok {
            return Err(Error::InvalidParameter(format!("transfer model {self:?}")));
        }
        Ok(())
    }
}

pub(crate) fn builtin_exposed_byte_range() -> (u64, u64) {
    let mut min = u64::MAX;
    let mut max = 0;
    for name in PROFILED_ARCHITECTURES {
        let graph = build_architecture(name, &DEFAULT_INPUT).expect("built-in architecture");
        for a in graph.enumerate_partitions() {
            min = min.min(a.exposed_tensor_bytes);
            max = max.max(a.exposed_tensor_bytes);
        }
    }
    (min, max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCost {
    pub boundary_label: String,
    pub enclave_prefix_seconds: f64,
    pub accelerator_suffix_seconds: f64,
    /// Exposed feature-map size at the calibration input shape.
    pub exposed_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    pub model_name: String,
    pub full_enclave_seconds: f64,
    pub full_accelerator_seconds: f64,
    pub per_point: Vec<PointCost>,
    pub transfer: TransferModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeBreakdown {
    pub boundary_label: String,
    pub enclave_seconds: f64,
    pub transfer_seconds: f64,
    pub accelerator_seconds: f64,
    pub total_seconds: f64,
    pub speedup_vs_full_enclave: f64,
}

impl RuntimeBreakdown {
    pub fn speedup_percent(&self) -> f64 {
        self.speedup_vs_full_enclave * 100.0
    }
}

pub const FULL_ENCLAVE_LABEL: &str = "full-enclave";

impl CostProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.full_enclave_seconds > 0.0) || !(self.full_accelerator_seconds > 0.0) {
            return bad("full-enclave and full-accelerator times must be positive".into());
        }
        self.transfer.validate()?;
        let mut previous = 0.0;
        for p in &self.per_point {
            if !(p.enclave_prefix_seconds > 0.0) || !(p.accelerator_suffix_seconds >= 0.0) {
                return bad(format!("point `{}` has invalid times", p.boundary_label));
            }
            if p.enclave_prefix_seconds < previous {
                return bad(format!(
                    "enclave prefix time decreases at `{}`",
                    p.boundary_label
                ));
            }
            previous = p.enclave_prefix_seconds;
        }
        Ok(())
    }

    pub fn point(&self, label: &str) -> Result<&PointCost> {
        self.per_point
            .iter()
            .find(|p| p.boundary_label == label)
            .ok_or_else(|| Error::UnknownBoundary(label.to_string()))
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.per_point.iter().map(|p| p.boundary_label.as_str())
    }

    fn compose(&self, point: &PointCost, exposed_bytes: u64) -> RuntimeBreakdown {
        let transfer = self.transfer.seconds(exposed_bytes);
        let total = point.enclave_prefix_seconds + transfer + point.accelerator_suffix_seconds;
        RuntimeBreakdown {
            boundary_label: point.boundary_label.clone(),
            enclave_seconds: point.enclave_prefix_seconds,
            transfer_seconds: transfer,
            accelerator_seconds: point.accelerator_suffix_seconds,
            total_seconds: total,
            speedup_vs_full_enclave: (self.full_enclave_seconds - total) / self.full_enclave_seconds,
        }
    }

    /// Breakdown using the exposed size recorded at calibration time.
    pub fn breakdown(&self, label: &str) -> Result<RuntimeBreakdown> {
        let point = self.point(label)?;
        Ok(self.compose(point, point.exposed_bytes))
    }

    pub fn full_enclave_breakdown(&self) -> RuntimeBreakdown {
        RuntimeBreakdown {
            boundary_label: FULL_ENCLAVE_LABEL.into(),
            enclave_seconds: self.full_enclave_seconds,
            transfer_seconds: 0.0,
            accelerator_seconds: 0.0,
            total_seconds: self.full_enclave_seconds,
            speedup_vs_full_enclave: 0.0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let profile: Self = serde_json::from_str(text)?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Shipped profile for a profiled architecture at 3×224×224.
    ///
    /// Anchors are the quoted runtimes: full-enclave time at the full model's
    /// MAC count, each quoted split total at its boundary, and zero enclave
    /// time before the first layer. The accelerator suffix at each point is
    /// the MAC share of an assumed full-accelerator time, and the enclave
    /// prefix at a quoted point is what remains of its total.
    pub fn builtin(model_name: &str) -> Result<Self> {
        let spec = builtin_spec(model_name)?;
        let graph = build_architecture(model_name, &DEFAULT_INPUT)?;
        let quoted: Vec<(String, f64)> = spec
            .quoted_totals
            .iter()
            .map(|(l, t)| (l.to_string(), *t))
            .collect();
        fit_profile(
            &graph,
            &quoted,
            spec.full_enclave_seconds,
            spec.full_accelerator_seconds,
            TransferModel::builtin(),
            true,
        )
    }
}

struct BuiltinSpec {
    full_enclave_seconds: f64,
    full_accelerator_seconds: f64,
    quoted_totals: &'static [(&'static str, f64)],
}

fn builtin_spec(name: &str) -> Result<BuiltinSpec> {
    // Accelerator-only times are not reported; the values here are
    // assumptions in the range of a single-image PyTorch GPU pass.
    match name {
        "vgg16" => Ok(BuiltinSpec {
            full_enclave_seconds: 4.2,
            full_accelerator_seconds: 0.30,
            quoted_totals: &[("Layer 8", 1.4)],
        }),
        "resnet50" => Ok(BuiltinSpec {
            full_enclave_seconds: 4.02,
            full_accelerator_seconds: 0.20,
            quoted_totals: &[("Layer 3", 3.04), ("Layer 4", 3.6)],
        }),
        "efficientnetb0" => Ok(BuiltinSpec {
            full_enclave_seconds: 3.7,
            full_accelerator_seconds: 0.15,
            quoted_totals: &[("Layer 4", 2.5)],
        }),
        other => Err(Error::UnknownArchitecture(other.to_string())),
    }
}

/// Multiply-accumulate count of one layer. Convolutions count
/// `out_elems × k² × in_channels` (depthwise: one input channel), fully
/// connected layers `in × out`, pooling windows `out_elems × k²`, and other
/// elementwise kinds one per output element. Flatten is free.
pub fn layer_macs(model: &ModelGraph, index: usize) -> u64 {
    let layer = &model.layers()[index];
    let out: u64 = layer.output_shape.iter().product::<usize>() as u64;
    match layer.kind {
        LayerKind::Conv2d {
            in_channels,
            kernel,
            ..
        } => out * (kernel * kernel * in_channels) as u64,
        LayerKind::DepthwiseConv2d { kernel, .. } => out * (kernel * kernel) as u64,
        LayerKind::FullyConnected {
            in_features,
            out_features,
        } => (in_features * out_features) as u64,
        LayerKind::MaxPool { kernel, .. } | LayerKind::AvgPool { kernel, .. } => {
            out * (kernel * kernel) as u64
        }
        LayerKind::GlobalAvgPool => {
            let src = layer.primary_source(index).slot();
            model.slot_shape(src).iter().product::<usize>() as u64
        }
        LayerKind::Flatten => 0,
        LayerKind::ReLU
        | LayerKind::Swish
        | LayerKind::Sigmoid
        | LayerKind::BatchNormAffine { .. }
        | LayerKind::Add { .. }
        | LayerKind::ChannelScale { .. } => out,
    }
}

pub fn prefix_macs(model: &ModelGraph, boundary: usize) -> u64 {
    (0..boundary).map(|i| layer_macs(model, i)).sum()
}

/// MACs of the enclave prefix at a named partition point.
pub fn mac_count(model: &ModelGraph, up_to_boundary: &str) -> Result<u64> {
    Ok(prefix_macs(model, model.boundary(up_to_boundary)?))
}

pub fn predict(profile: &CostProfile, assignment: &PartitionAssignment) -> Result<RuntimeBreakdown> {
    let point = profile.point(&assignment.boundary_label)?;
    Ok(profile.compose(point, assignment.exposed_tensor_bytes))
}

/// Builds a profile from measured split totals. The first and last partition
/// points must be measured; the rest are interpolated. Uses the built-in
/// transfer model.
pub fn calibrate(
    model: &ModelGraph,
    measurements: &[(String, f64)],
    full_enclave_seconds: f64,
    full_accelerator_seconds: f64,
) -> Result<CostProfile> {
    calibrate_with_transfer(
        model,
        measurements,
        full_enclave_seconds,
        full_accelerator_seconds,
        TransferModel::builtin(),
    )
}

pub fn calibrate_with_transfer(
    model: &ModelGraph,
    measurements: &[(String, f64)],
    full_enclave_seconds: f64,
    full_accelerator_seconds: f64,
    transfer: TransferModel,
) -> Result<CostProfile> {
    let points = model.partition_points();
    let (first, last) = match (points.first(), points.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Calibration("model has no partition points".into())),
    };
    for endpoint in [first, last] {
        if !measurements.iter().any(|(l, _)| *l == endpoint.label) {
            return Err(Error::Calibration(format!(
                "endpoint `{}` is not measured",
                endpoint.label
            )));
        }
    }
    fit_profile(
        model,
        measurements,
        full_enclave_seconds,
        full_accelerator_seconds,
        transfer,
        false,
    )
}

fn fit_profile(
    model: &ModelGraph,
    measurements: &[(String, f64)],
    full_enclave_seconds: f64,
    full_accelerator_seconds: f64,
    transfer: TransferModel,
    anchor_model_ends: bool,
) -> Result<CostProfile> {
    if !(full_enclave_seconds > 0.0) || !(full_accelerator_seconds > 0.0) {
        return Err(Error::Calibration(
            "full-enclave and full-accelerator times must be positive".into(),
        ));
    }
    let mut seen = std::collections::HashSet::new();
    for (label, total) in measurements {
        model.partition(label)?;
        if !seen.insert(label.as_str()) {
            return Err(Error::Calibration(format!("`{label}` measured twice")));
        }
        if !(*total > 0.0) || !total.is_finite() {
            return Err(Error::Calibration(format!(
                "measurement for `{label}` must be positive"
            )));
        }
    }

    let total_macs = prefix_macs(model, model.layers().len()).max(1);
    let assignments = model.enumerate_partitions();
    let rows: Vec<(u64, f64, f64)> = assignments
        .iter()
        .map(|a| {
            let macs = prefix_macs(model, a.boundary);
            let suffix =
                full_accelerator_seconds * (total_macs - macs.min(total_macs)) as f64 / total_macs as f64;
            (macs, suffix, transfer.seconds(a.exposed_tensor_bytes))
        })
        .collect();

    let mut anchors: Vec<(u64, f64)> = Vec::new();
    if anchor_model_ends {
        anchors.push((0, 0.0));
    }
    let mut measured_prefix: Vec<Option<f64>> = vec![None; assignments.len()];
    for (i, a) in assignments.iter().enumerate() {
        if let Some((_, total)) = measurements.iter().find(|(l, _)| *l == a.boundary_label) {
            let (macs, suffix, xfer) = rows[i];
            let prefix = total - xfer - suffix;
            if !(prefix > 0.0) {
                return Err(Error::Calibration(format!(
                    "`{}`: measured total {total} s leaves no enclave time after transfer {xfer:.4} s and accelerator {suffix:.4} s",
                    a.boundary_label
                )));
            }
            if let Some(&(_, previous)) = anchors.last() {
                if prefix < previous {
                    return Err(Error::Calibration(format!(
                        "enclave prefix time decreases at `{}` ({prefix:.4} s < {previous:.4} s)",
                        a.boundary_label
                    )));
                }
            }
            anchors.push((macs, prefix));
            measured_prefix[i] = Some(prefix);
        }
    }
    if anchor_model_ends {
        let previous = anchors.last().map_or(0.0, |a| a.1);
        if full_enclave_seconds < previous {
            return Err(Error::Calibration(
                "full-enclave time is below a measured enclave prefix".into(),
            ));
        }
        anchors.push((total_macs, full_enclave_seconds));
    }

    let per_point = assignments
        .iter()
        .zip(&rows)
        .zip(measured_prefix)
        .map(|((a, &(macs, suffix, _)), measured)| PointCost {
            boundary_label: a.boundary_label.clone(),
            enclave_prefix_seconds: measured.unwrap_or_else(|| interpolate(&anchors, macs)),
            accelerator_suffix_seconds: suffix,
            exposed_bytes: a.exposed_tensor_bytes,
        })
        .collect();
    let profile = CostProfile {
        model_name: model.name().to_string(),
        full_enclave_seconds,
        full_accelerator_seconds,
        per_point,
        transfer,
    };
    profile.validate().map_err(|e| Error::Calibration(e.to_string()))?;
    Ok(profile)
}

/// Piecewise-linear interpolation over `(macs, seconds)` anchors sorted by
/// MACs. Outside the anchored range the nearest anchor is used.
fn interpolate(anchors: &[(u64, f64)], macs: u64) -> f64 {
    match anchors.iter().position(|&(m, _)| m >= macs) {
        None => anchors.last().expect("at least one anchor").1,
        Some(0) => anchors[0].1,
        Some(i) => {
            let (m0, s0) = anchors[i - 1];
            let (m1, s1) = anchors[i];
            if m1 == m0 {
                s1
            } else {
                s0 + (s1 - s0) * (macs - m0) as f64 / (m1 - m0) as f64
            }
        }
    }
}
