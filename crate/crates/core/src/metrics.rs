//! Point and interval accuracy metrics, parameter elasticity, and seed
//! aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inn::IntervalParams;
use crate::matrix::Matrix;
use crate::models::ModelParams;

/// Denominator used when a crisp parameter is exactly zero.
pub const ELASTICITY_EPS: f64 = 1e-12;

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: lengths {a} and {b} differ")));
    }
    if a == 0 {
        return Err(Error::InvalidArgument(format!("{what}: empty sequence")));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    same_len(pred.len(), target.len(), "rmse")?;
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Percentage of targets inside their closed intervals.
pub fn picp(lower: &[f64], upper: &[f64], target: &[f64]) -> Result<f64> {
    same_len(lower.len(), target.len(), "picp")?;
    same_len(upper.len(), target.len(), "picp")?;
    let hits = (0..target.len())
        .filter(|&k| lower[k] <= target[k] && target[k] <= upper[k])
        .count();
    Ok(100.0 * hits as f64 / target.len() as f64)
}

/// Mean interval width as a percentage of the target range.
pub fn pinaw(lower: &[f64], upper: &[f64], target: &[f64]) -> Result<f64> {
    same_len(lower.len(), target.len(), "pinaw")?;
    same_len(upper.len(), target.len(), "pinaw")?;
    let max = target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = target.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if range.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::DegenerateStatistics(format!(
            "target range is {range}; interval width cannot be normalized"
        )));
    }
    let mean_width = lower.iter().zip(upper).map(|(l, u)| u - l).sum::<f64>() / target.len() as f64;
    Ok(100.0 * mean_width / range)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    PerEntry,
    PerTensor,
}

/// Elasticity of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticityMap {
    pub layer: usize,
    pub tensor: String,
    /// Per-entry ratios, or a `1 × 1` matrix for per-tensor granularity.
    pub values: Matrix,
    /// Entries whose crisp value was zero, as `(row, col)`.
    pub guarded: Vec<(usize, usize)>,
}

/// Interval width relative to the crisp magnitude, per entry
/// (`|hi − lo| / |θ*|`) or per tensor (Frobenius-norm ratio).
pub fn elasticity(crisp: &ModelParams, iparams: &IntervalParams, granularity: Granularity) -> Result<Vec<ElasticityMap>> {
    let thetas = crisp.tensors();
    let ivs = iparams.tensors();
    if thetas.len() != ivs.len() {
        return Err(Error::Shape(format!(
            "crisp model has {} tensors, interval model {}",
            thetas.len(),
            ivs.len()
        )));
    }
    let mut out = Vec::with_capacity(thetas.len());
    for ((theta, iv), slot) in thetas.iter().zip(&ivs).zip(crisp.slots()) {
        iv.lo().expect_shape(theta.shape(), &format!("interval tensor {}", slot.name))?;
        let width = iv.width();
        let (values, guarded) = match granularity {
            Granularity::PerEntry => {
                let mut guarded = Vec::new();
                let values = Matrix::from_fn(theta.rows(), theta.cols(), |r, c| {
                    let mag = theta.get(r, c).abs();
                    let denom = if mag > 0.0 {
                        mag
                    } else {
                        guarded.push((r, c));
                        ELASTICITY_EPS
                    };
                    width.get(r, c).abs() / denom
                });
                (values, guarded)
            }
            Granularity::PerTensor => {
                let norm = theta.frobenius_norm();
                let (denom, guarded) = if norm > 0.0 { (norm, vec![]) } else { (ELASTICITY_EPS, vec![(0, 0)]) };
                (Matrix::filled(1, 1, width.frobenius_norm() / denom), guarded)
            }
        };
        out.push(ElasticityMap {
            layer: slot.layer,
            tensor: slot.name.to_string(),
            values,
            guarded,
        });
    }
    Ok(out)
}

/// `(layer, column labels, grid)`.
pub type LayerHeatmap = (usize, Vec<String>, Matrix);

/// Per-layer heatmap grid: rows are the layer's output units, columns are
/// the input-weight columns, then recurrent columns (LSTM), then one bias
/// column. Returns `(layer, column labels, grid)`.
pub fn layer_heatmaps(maps: &[ElasticityMap]) -> Result<Vec<LayerHeatmap>> {
    let mut layers: Vec<usize> = maps.iter().map(|m| m.layer).collect();
    layers.dedup();
    let mut out = Vec::new();
    for layer in layers {
        let mut labels = Vec::new();
        let mut blocks = Vec::new();
        for m in maps.iter().filter(|m| m.layer == layer) {
            let block = if m.tensor == "bias" { m.values.transpose() } else { m.values.clone() };
            let prefix = match m.tensor.as_str() {
                "weight" | "w" => "w",
                "u" => "u",
                _ => "b",
            };
            if prefix == "b" {
                labels.push("b".to_string());
            } else {
                labels.extend((0..block.cols()).map(|j| format!("{prefix}{j}")));
            }
            blocks.push(block);
        }
        let refs: Vec<&Matrix> = blocks.iter().collect();
        out.push((layer, labels, Matrix::concat_cols(&refs)?));
    }
    Ok(out)
}

/// Mean and sample standard deviation over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// Set when only one value was available, in which case `std` is 0.
    pub single_seed: bool,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    let n = values.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot aggregate an empty set of runs".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Aggregate {
        mean,
        std,
        n,
        single_seed: n == 1,
    })
}
