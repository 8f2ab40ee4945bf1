//! Per-boundary reconstructability scores and the optimal-boundary rule.

use std::io::{Read, Write};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{invert_feature_map, AttackConfig};
use crate::engine::forward_prefix;
use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::ssim::{ssim, SsimParams};
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.2;
pub const DEFAULT_SLACK: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointPrivacy {
    pub boundary_label: String,
    pub boundary: usize,
    pub mean_ssim: f64,
    pub n_samples: usize,
    /// Empty when the report was read back from CSV.
    #[serde(default)]
    pub per_sample_ssim: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub model_name: String,
    pub per_point: Vec<PointPrivacy>,
    pub threshold: f64,
    pub slack: f64,
    pub optimal_boundary: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    boundary: usize,
    label: String,
    mean_ssim: f64,
    n_samples: usize,
    below_threshold: bool,
}

impl PrivacyReport {
    pub fn new(model_name: impl Into<String>, per_point: Vec<PointPrivacy>, threshold: f64, slack: f64) -> Self {
        let scores: Vec<(&str, f64)> = per_point
            .iter()
            .map(|p| (p.boundary_label.as_str(), p.mean_ssim))
            .collect();
        let optimal_boundary = select_optimal_partition(&scores, threshold, slack).map(str::to_string);
        Self {
            model_name: model_name.into(),
            per_point,
            threshold,
            slack,
            optimal_boundary,
        }
    }

    /// Re-applies the selection rule under a different threshold and slack.
    pub fn with_threshold(&self, threshold: f64, slack: f64) -> Self {
        Self::new(self.model_name.clone(), self.per_point.clone(), threshold, slack)
    }

    pub fn scores(&self) -> Vec<(String, f64)> {
        self.per_point
            .iter()
            .map(|p| (p.boundary_label.clone(), p.mean_ssim))
            .collect()
    }

    pub fn mean_ssim(&self, label: &str) -> Option<f64> {
        self.per_point
            .iter()
            .find(|p| p.boundary_label == label)
            .map(|p| p.mean_ssim)
    }

    /// Columns `boundary,label,mean_ssim,n_samples,below_threshold`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        for p in &self.per_point {
            writer.serialize(CsvRow {
                boundary: p.boundary,
                label: p.boundary_label.clone(),
                mean_ssim: p.mean_ssim,
                n_samples: p.n_samples,
                below_threshold: p.mean_ssim <= self.threshold,
            })?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to a Vec cannot fail");
        String::from_utf8(out).expect("CSV is UTF-8")
    }

    /// Reads the CSV form. The `below_threshold` column is recomputed from
    /// `threshold`, not trusted.
    pub fn read_csv<R: Read>(r: R, model_name: &str, threshold: f64, slack: f64) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let mut per_point = Vec::new();
        for row in reader.deserialize::<CsvRow>() {
            let row = row?;
            if !row.mean_ssim.is_finite() {
                return Err(Error::Format(format!("non-finite SSIM for `{}`", row.label)));
            }
            per_point.push(PointPrivacy {
                boundary_label: row.label,
                boundary: row.boundary,
                mean_ssim: row.mean_ssim,
                n_samples: row.n_samples,
                per_sample_ssim: Vec::new(),
            });
        }
        if per_point.is_empty() {
            return Err(Error::Format("privacy report has no rows".into()));
        }
        Ok(Self::new(model_name, per_point, threshold, slack))
    }
}

/// Earliest label whose score is at or below `threshold` and after which no
/// score exceeds `threshold + slack`.
pub fn select_optimal_partition<S: AsRef<str>>(
    scores: &[(S, f64)],
    threshold: f64,
    slack: f64,
) -> Option<S>
where
    S: Clone,
{
    let ceiling = threshold + slack;
    // stays_low[i]: every score after i is <= ceiling
    let mut stays_low = vec![true; scores.len()];
    for i in (0..scores.len().saturating_sub(1)).rev() {
        stays_low[i] = stays_low[i + 1] && scores[i + 1].1 <= ceiling;
    }
    scores
        .iter()
        .zip(stays_low)
        .find(|((_, s), low)| *s <= threshold && *low)
        .map(|((label, _), _)| label.clone())
}

fn mix_seed(base: u64, point: usize, image: usize) -> u64 {
    // splitmix64 finalizer over the combined coordinates
    let mut z = base ^ ((point as u64) << 32) ^ image as u64;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Attacks every image at every partition point and scores the
/// reconstructions. Images are attacked in parallel; each gets its own seed
/// derived from `cfg.init_seed`, so results do not depend on scheduling.
pub fn evaluate_privacy(
    model: &ModelGraph,
    images: &[Tensor],
    cfg: &AttackConfig,
    params: &SsimParams,
    threshold: f64,
    slack: f64,
) -> Result<PrivacyReport> {
    let labels: Vec<String> = model
        .partition_points()
        .iter()
        .map(|p| p.label.clone())
        .collect();
    let per_point = evaluate_points(model, &labels, images, cfg, params)?;
    Ok(PrivacyReport::new(model.name(), per_point, threshold, slack))
}

/// Scores a chosen subset of partition points.
pub fn evaluate_points(
    model: &ModelGraph,
    labels: &[String],
    images: &[Tensor],
    cfg: &AttackConfig,
    params: &SsimParams,
) -> Result<Vec<PointPrivacy>> {
    evaluate_points_with_reconstructions(model, labels, images, cfg, params)
        .map(|scored| scored.into_iter().map(|(p, _)| p).collect())
}

/// As [`evaluate_points`], also returning each point's reconstructions in
/// image order.
pub fn evaluate_points_with_reconstructions(
    model: &ModelGraph,
    labels: &[String],
    images: &[Tensor],
    cfg: &AttackConfig,
    params: &SsimParams,
) -> Result<Vec<(PointPrivacy, Vec<Tensor>)>> {
    if images.is_empty() {
        return Err(Error::InvalidParameter("no images to attack".into()));
    }
    cfg.validate()?;
    params.validate()?;
    for img in images {
        img.expect_shape(model.input_shape())?;
    }
    let mut out = Vec::with_capacity(labels.len());
    for label in labels {
        let boundary = model.boundary(label)?;
        let point_index = model
            .partition_points()
            .iter()
            .position(|p| p.label == *label)
            .expect("boundary lookup succeeded");
        let scored: Vec<(Tensor, f64)> = images
            .par_iter()
            .enumerate()
            .map(|(i, img)| {
                let exposed = forward_prefix(model, img, boundary)?;
                let attack = AttackConfig {
                    init_seed: mix_seed(cfg.init_seed, point_index, i),
                    ..*cfg
                };
                let recon = invert_feature_map(model, label, &exposed, &attack)?;
                let score = ssim(&recon, img, params)?;
                Ok((recon, score))
            })
            .collect::<Result<_>>()?;
        let (recons, scores): (Vec<Tensor>, Vec<f64>) = scored.into_iter().unzip();
        out.push((
            PointPrivacy {
                boundary_label: label.clone(),
                boundary,
                mean_ssim: scores.iter().sum::<f64>() / scores.len() as f64,
                n_samples: scores.len(),
                per_sample_ssim: scores,
            },
            recons,
        ));
    }
    Ok(out)
}

/// Smooth, structured test images in [0, 1]: a few Gaussian blobs over a
/// linear ramp per channel.
pub fn synthetic_images(count: usize, shape: &[usize], seed: u64) -> Result<Vec<Tensor>> {
    let (c, h, w) = match *shape {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::InvalidShape(shape.to_vec())),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0, 1.0);
    (0..count)
        .map(|_| {
            let mut data = vec![0.0; c * h * w];
            for ch in 0..c {
                let (gx, gy) = (unit.sample(&mut rng) - 0.5, unit.sample(&mut rng) - 0.5);
                let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
                    .map(|_| {
                        (
                            unit.sample(&mut rng) * w as f64,
                            unit.sample(&mut rng) * h as f64,
                            (0.1 + 0.25 * unit.sample(&mut rng)) * w.min(h) as f64,
                            unit.sample(&mut rng) * 2.0 - 1.0,
                        )
                    })
                    .collect();
                let plane = &mut data[ch * h * w..(ch + 1) * h * w];
                for y in 0..h {
                    for x in 0..w {
                        let mut v = gx * x as f64 / w as f64 + gy * y as f64 / h as f64;
                        for &(bx, by, r, amp) in &blobs {
                            let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                            v += amp * (-d2 / (2.0 * r * r)).exp();
                        }
                        plane[y * w + x] = v;
                    }
                }
                let (lo, hi) = plane
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                let span = (hi - lo).max(1e-12);
                for v in plane.iter_mut() {
                    *v = (*v - lo) / span;
                }
            }
            Tensor::new(shape.to_vec(), data)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(values: &[f64]) -> Vec<(String, f64)> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| (format!("Layer {}", i + 1), v))
            .collect()
    }

    #[test]
    fn monotone_drop_selects_first_crossing() {
        let c = curve(&[0.5, 0.4, 0.15, 0.1, 0.08]);
        assert_eq!(select_optimal_partition(&c, 0.2, 0.05).as_deref(), Some("Layer 3"));
    }

    #[test]
    fn dip_that_rises_again_is_skipped() {
        let c = curve(&[0.5, 0.15, 0.3, 0.1, 0.08]);
        assert_eq!(select_optimal_partition(&c, 0.2, 0.05).as_deref(), Some("Layer 4"));
    }

    #[test]
    fn hovering_just_above_threshold_needs_slack() {
        let c = curve(&[0.6, 0.19, 0.22, 0.21]);
        assert_eq!(select_optimal_partition(&c, 0.2, 0.05).as_deref(), Some("Layer 2"));
        let strict = curve(&[0.19, 0.22]);
        assert_eq!(select_optimal_partition(&strict, 0.2, 0.0), None);
    }

    #[test]
    fn nothing_qualifies_when_all_scores_are_high() {
        let c = curve(&[0.9, 0.8, 0.7]);
        assert_eq!(select_optimal_partition(&c, 0.2, 0.05), None);
        let report = PrivacyReport::new(
            "m",
            c.iter()
                .enumerate()
                .map(|(i, (l, s))| PointPrivacy {
                    boundary_label: l.clone(),
                    boundary: i + 1,
                    mean_ssim: *s,
                    n_samples: 1,
                    per_sample_ssim: vec![*s],
                })
                .collect(),
            0.2,
            0.05,
        );
        assert_eq!(report.optimal_boundary, None);
        assert_eq!(report.per_point.len(), 3);
    }

    #[test]
    fn csv_round_trip_recomputes_selection() {
        let points = curve(&[0.5, 0.15, 0.1])
            .into_iter()
            .enumerate()
            .map(|(i, (l, s))| PointPrivacy {
                boundary_label: l,
                boundary: 3 * (i + 1),
                mean_ssim: s,
                n_samples: 4,
                per_sample_ssim: vec![s; 4],
            })
            .collect();
        let report = PrivacyReport::new("m", points, 0.2, 0.05);
        let text = report.to_csv();
        assert!(text.starts_with("boundary,label,mean_ssim,n_samples,below_threshold\n"));
        assert!(text.contains("6,Layer 2,0.15,4,true"));
        let back = PrivacyReport::read_csv(text.as_bytes(), "m", 0.2, 0.05).unwrap();
        assert_eq!(back.optimal_boundary.as_deref(), Some("Layer 2"));
        assert_eq!(back.scores(), report.scores());
        let stricter = PrivacyReport::read_csv(text.as_bytes(), "m", 0.12, 0.0).unwrap();
        assert_eq!(stricter.optimal_boundary.as_deref(), Some("Layer 3"));
    }

    #[test]
    fn synthetic_images_are_normalized_and_seeded() {
        let a = synthetic_images(3, &[3, 16, 16], 9).unwrap();
        let b = synthetic_images(3, &[3, 16, 16], 9).unwrap();
        assert_eq!(a, b);
        for img in &a {
            let (lo, hi) = img
                .data()
                .iter()
                .fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
            assert_eq!((lo, hi), (0.0, 1.0));
        }
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn evaluate_rejects_empty_image_list() {
        let g = crate::arch::toy_cnn(&[1, 12, 12], 1).unwrap();
        let err = evaluate_privacy(&g, &[], &AttackConfig::default(), &SsimParams::default(), 0.2, 0.05);
        assert!(err.is_err());
    }
}
