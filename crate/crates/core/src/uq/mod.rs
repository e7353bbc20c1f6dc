//! Coverage-driven training of interval radii around a fixed crisp model.

mod train;

pub use train::{evaluate_pis, train_inn, EpochRecord, InnTrainOutcome, IntervalQuality};

use serde::{Deserialize, Serialize};

use crate::adam::AdamConfig;
use crate::error::{Error, Result};
use crate::inn::{DeltaParams, Trick};
use crate::matrix::Matrix;
use crate::models::ModelParams;

/// Relaxed quantile loss of one target against `[lower, upper]`, with
/// `κ = (ŷ − lower)(ŷ − upper)`: `ακ` outside the interval and `(α − 1)κ`
/// inside.
#[inline]
pub fn rqr_loss(yhat: f64, lower: f64, upper: f64, alpha: f64) -> f64 {
    let kappa = (yhat - lower) * (yhat - upper);
    if kappa >= 0.0 {
        alpha * kappa
    } else {
        (alpha - 1.0) * kappa
    }
}

#[inline]
pub fn width_loss(lower: f64, upper: f64) -> f64 {
    let w = upper - lower;
    w * w / 2.0
}

/// Mean of `rqr_loss + λ · width_loss` over all entries.
pub fn rqrw_objective(lower: &Matrix, upper: &Matrix, target: &Matrix, alpha: f64, lambda: f64) -> Result<f64> {
    lower.expect_shape(upper.shape(), "upper bounds")?;
    lower.expect_shape(target.shape(), "targets")?;
    Ok(rqrw_mean(lower.as_slice(), upper.as_slice(), target.as_slice(), alpha, lambda))
}

pub(crate) fn rqrw_mean(lower: &[f64], upper: &[f64], target: &[f64], alpha: f64, lambda: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..lower.len() {
        acc += rqr_loss(target[i], lower[i], upper[i], alpha) + lambda * width_loss(lower[i], upper[i]);
    }
    acc / lower.len() as f64
}

fn default_alpha() -> f64 {
    0.9
}

fn default_lambda() -> f64 {
    0.001
}

fn default_epochs() -> usize {
    200
}

fn default_batch() -> usize {
    64
}

fn default_rate() -> f64 {
    1.0
}

fn default_trick() -> Trick {
    Trick::Abs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UqTrainConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Width penalty weight. At the loss optimum the coverage settles near
    /// `α − 2λ`, so values well below 0.05 are needed to keep coverage close
    /// to the target.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_rate")]
    pub r_h: f64,
    #[serde(default = "default_rate")]
    pub r_o: f64,
    #[serde(default = "default_trick")]
    pub trick: Trick,
    #[serde(default)]
    pub seed: u64,
    /// Keep the radii of recurrent LSTM weights at zero and out of training.
    #[serde(default)]
    pub freeze_recurrent: bool,
}

impl Default for UqTrainConfig {
    fn default() -> Self {
        UqTrainConfig {
            alpha: default_alpha(),
            lambda: default_lambda(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            adam: AdamConfig::default(),
            r_h: default_rate(),
            r_o: default_rate(),
            trick: default_trick(),
            seed: 0,
            freeze_recurrent: false,
        }
    }
}

impl UqTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("coverage target must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("width penalty must be finite and nonnegative, got {}", self.lambda));
        }
        for (name, r) in [("r_h", self.r_h), ("r_o", self.r_o)] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} must lie in [0, 1], got {r}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.adam.learning_rate.is_finite() && self.adam.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.adam.learning_rate));
        }
        Ok(())
    }
}

/// Raw radii whose effective values equal `|θ*| · r` on both sides, with
/// `r_o` for output-layer tensors and `r_h` elsewhere. Recurrent tensors get
/// zero radii when `freeze_recurrent` is set.
pub fn init_delta(crisp: &ModelParams, r_h: f64, r_o: f64, trick: Trick, freeze_recurrent: bool) -> DeltaParams {
    let raw: Vec<Matrix> = crisp
        .tensors()
        .into_iter()
        .zip(crisp.slots())
        .map(|(theta, slot)| {
            if freeze_recurrent && slot.recurrent {
                return Matrix::zeros(theta.rows(), theta.cols());
            }
            let r = if slot.output_layer { r_o } else { r_h };
            theta.map(|v| v.abs() * r)
        })
        .collect();
    DeltaParams {
        trick,
        lower: raw.clone(),
        upper: raw,
    }
}
