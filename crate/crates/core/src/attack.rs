//! Optimization-based feature-map inversion.
//!
//! The adversary sees the exposed activation at a partition point and the
//! enclave prefix architecture, and searches for an input whose activation
//! matches it: projected gradient descent on `‖F(x) − exposed‖²` over the
//! pixel box, with the step halved whenever a trial step would raise the
//! loss. Accepted iterates therefore never increase the loss.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{backward, trace};
use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub steps: usize,
    pub step_size: f64,
    pub init_seed: u64,
    pub pixel_bounds: [f64; 2],
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            step_size: 0.05,
            init_seed: 0,
            pixel_bounds: [0.0, 1.0],
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.pixel_bounds;
        if self.steps == 0 || !(self.step_size > 0.0) || !(lo < hi) {
            return Err(Error::InvalidParameter(format!("attack config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub image: Tensor,
    /// Loss of the current iterate after initialization and after each step.
    pub loss_history: Vec<f64>,
    pub final_step_size: f64,
}

pub fn invert_feature_map(
    model: &ModelGraph,
    boundary_label: &str,
    exposed: &Tensor,
    cfg: &AttackConfig,
) -> Result<Tensor> {
    invert_feature_map_traced(model, boundary_label, exposed, cfg).map(|r| r.image)
}

pub fn invert_feature_map_traced(
    model: &ModelGraph,
    boundary_label: &str,
    exposed: &Tensor,
    cfg: &AttackConfig,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let boundary = model.boundary(boundary_label)?;
    exposed.expect_shape(model.shape_at(boundary))?;
    let [lo, hi] = cfg.pixel_bounds;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let init = Uniform::new_inclusive(lo, hi);
    let shape = model.input_shape().to_vec();
    let numel = shape.iter().product();
    let mut x = Tensor::new(shape, (0..numel).map(|_| init.sample(&mut rng)).collect())?;

    let evaluate = |candidate: &Tensor, step: usize| {
        let t = trace(model, candidate, boundary).map_err(|e| match e {
            Error::NonFinite(_) => Error::Divergence {
                step,
                loss: f64::NAN,
            },
            other => other,
        })?;
        let loss = t.output().sum_squared_difference(exposed)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        Ok((t, loss))
    };
    let gradient = |t: &crate::engine::Trace| {
        let residual: Vec<f64> = t
            .output()
            .data()
            .iter()
            .zip(exposed.data())
            .map(|(a, b)| 2.0 * (a - b))
            .collect();
        backward(model, t, &Tensor::new(exposed.shape().to_vec(), residual)?)
    };

    let (t, mut loss) = evaluate(&x, 0)?;
    let mut grad = gradient(&t)?;
    let mut eta = cfg.step_size;
    let mut loss_history = Vec::with_capacity(cfg.steps + 1);
    loss_history.push(loss);

    for step in 1..=cfg.steps {
        if loss == 0.0 || eta < f64::MIN_POSITIVE {
            break;
        }
        let candidate = Tensor::new(
            x.shape().to_vec(),
            x.data()
                .iter()
                .zip(grad.data())
                .map(|(v, g)| (v - eta * g).clamp(lo, hi))
                .collect(),
        )?;
        let (t, trial) = evaluate(&candidate, step)?;
        if trial <= loss {
            x = candidate;
            loss = trial;
            grad = gradient(&t)?;
        } else {
            eta *= 0.5;
        }
        loss_history.push(loss);
    }

    Ok(Reconstruction {
        image: x,
        loss_history,
        final_step_size: eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::forward_until;
    use crate::graph::{LayerKind, LayerParams, LayerSpec, PartitionPoint};

    fn identity_conv_model(shape: Vec<usize>) -> ModelGraph {
        let c = shape[0];
        let mut weight = vec![0.0; c * c];
        for i in 0..c {
            weight[i * c + i] = 1.0;
        }
        ModelGraph::new(
            "identity",
            shape,
            vec![LayerSpec::new(
                "conv",
                LayerKind::Conv2d {
                    in_channels: c,
                    out_channels: c,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                },
            )
            .with_params(LayerParams {
                weight,
                bias: vec![0.0; c],
            })],
            vec![PartitionPoint {
                label: "P".into(),
                boundary: 1,
            }],
            0,
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_is_inverted_exactly() {
        let g = identity_conv_model(vec![3, 6, 6]);
        let original = Tensor::new(
            vec![3, 6, 6],
            (0..108).map(|i| ((i * 29) % 97) as f64 / 96.0).collect(),
        )
        .unwrap();
        let exposed = forward_until(&g, &original, "P").unwrap();
        let recon = invert_feature_map(&g, "P", &exposed, &AttackConfig::default()).unwrap();
        for (a, b) in recon.data().iter().zip(original.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_wrong_exposed_shape_and_bad_config() {
        let g = identity_conv_model(vec![1, 4, 4]);
        let cfg = AttackConfig::default();
        assert!(invert_feature_map(&g, "P", &Tensor::zeros(&[1, 4, 5]), &cfg).is_err());
        let bad = AttackConfig {
            pixel_bounds: [1.0, 0.0],
            ..cfg
        };
        assert!(invert_feature_map(&g, "P", &Tensor::zeros(&[1, 4, 4]), &bad).is_err());
        let zero_steps = AttackConfig { steps: 0, ..cfg };
        assert!(zero_steps.validate().is_err());
    }

    #[test]
    fn loss_history_never_increases() {
        let g = crate::arch::toy_cnn(&[3, 12, 12], 11).unwrap();
        let img = Tensor::new(
            vec![3, 12, 12],
            (0..432).map(|i| ((i * 13) % 50) as f64 / 49.0).collect(),
        )
        .unwrap();
        let exposed = forward_until(&g, &img, "L3").unwrap();
        let cfg = AttackConfig {
            steps: 60,
            step_size: 5.0,
            ..AttackConfig::default()
        };
        let r = invert_feature_map_traced(&g, "L3", &exposed, &cfg).unwrap();
        assert_eq!(r.loss_history.len(), 61);
        assert!(r.final_step_size < 5.0, "large step should have been halved");
        for w in r.loss_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }
}
