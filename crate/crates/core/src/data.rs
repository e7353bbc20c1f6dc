//! Input/output series: CSV ingestion, normalization, chronological splits,
//! trajectory windowing and lagged regressors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormalizationMethod {
    #[serde(rename = "z-score")]
    ZScore,
    #[serde(rename = "min-max")]
    MinMax,
    #[serde(rename = "none")]
    None,
}

impl std::str::FromStr for NormalizationMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "z-score" | "zscore" => Ok(NormalizationMethod::ZScore),
            "min-max" | "minmax" => Ok(NormalizationMethod::MinMax),
            "none" => Ok(NormalizationMethod::None),
            other => Err(Error::InvalidArgument(format!("unknown normalization `{other}`"))),
        }
    }
}

/// Affine map `x ↦ (x − offset) / scale` for one channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub offset: f64,
    pub scale: f64,
}

impl ChannelStats {
    pub const IDENTITY: ChannelStats = ChannelStats {
        offset: 0.0,
        scale: 1.0,
    };

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.scale + self.offset
    }

    fn fit(values: &[f64], method: NormalizationMethod, channel: &str) -> Result<Self> {
        match method {
            NormalizationMethod::None => Ok(ChannelStats::IDENTITY),
            NormalizationMethod::ZScore => {
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                let std = var.sqrt();
                if !(std > 0.0) {
                    return Err(Error::DegenerateStatistics(format!(
                        "channel `{channel}` has zero variance on the training prefix"
                    )));
                }
                Ok(ChannelStats {
                    offset: mean,
                    scale: std,
                })
            }
            NormalizationMethod::MinMax => {
                let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let range = max - min;
                if !(range > 0.0) {
                    return Err(Error::DegenerateStatistics(format!(
                        "channel `{channel}` has zero range on the training prefix"
                    )));
                }
                Ok(ChannelStats {
                    offset: min,
                    scale: range,
                })
            }
        }
    }
}

/// Statistics fitted on the training prefix for both channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub method: NormalizationMethod,
    /// Number of leading samples the statistics were fitted on.
    pub fitted_on: usize,
    pub u: ChannelStats,
    pub y: ChannelStats,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            method: NormalizationMethod::None,
            fitted_on: 0,
            u: ChannelStats::IDENTITY,
            y: ChannelStats::IDENTITY,
        }
    }

    pub fn denormalize_y(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&z| self.y.invert(z)).collect()
    }

    /// Output values scale by this factor when mapped back to raw units.
    pub fn y_scale(&self) -> f64 {
        self.y.scale
    }
}

/// Single-input single-output series `{(u(k), ŷ(k))}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesDataset {
    pub name: String,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub normalization: Normalization,
}

impl SeriesDataset {
    pub fn new(name: impl Into<String>, u: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if u.len() != y.len() {
            return Err(Error::Shape(format!(
                "input has {} samples but output has {}",
                u.len(),
                y.len()
            )));
        }
        if u.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a series needs at least 2 samples, got {}",
                u.len()
            )));
        }
        Ok(SeriesDataset {
            name: name.into(),
            u,
            y,
            normalization: Normalization::identity(),
        })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    fn segment(&self, start: usize, end: usize, suffix: &str) -> SeriesDataset {
        SeriesDataset {
            name: format!("{}/{suffix}", self.name),
            u: self.u[start..end].to_vec(),
            y: self.y[start..end].to_vec(),
            normalization: self.normalization,
        }
    }
}

/// Reads two numeric columns from a headed CSV file, preserving row order.
pub fn load_csv(path: impl AsRef<Path>, u_column: &str, y_column: &str) -> Result<SeriesDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    };
    let (iu, iy) = (find(u_column)?, find(y_column)?);

    let mut u = Vec::new();
    let mut y = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        for (idx, column, out) in [(iu, u_column, &mut u), (iy, y_column, &mut y)] {
            let cell = record.get(idx).unwrap_or("");
            let value: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::NonNumeric {
                path: path.to_path_buf(),
                column: column.to_string(),
                row: row + 1,
                value: cell.to_string(),
            })?;
            out.push(value);
        }
    }
    let name = path.file_stem().map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    SeriesDataset::new(name, u, y)
}

/// Fits statistics on the first `⌊train_fraction · K⌋` samples and applies
/// them to the whole series, each channel separately.
pub fn normalize(ds: &SeriesDataset, method: NormalizationMethod, train_fraction: f64) -> Result<SeriesDataset> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "training fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = ((ds.len() as f64) * train_fraction).floor() as usize;
    normalize_prefix(ds, method, n_train)
}

pub(crate) fn normalize_prefix(ds: &SeriesDataset, method: NormalizationMethod, n_train: usize) -> Result<SeriesDataset> {
    if n_train < 2 || n_train > ds.len() {
        return Err(Error::InvalidArgument(format!(
            "training prefix of {n_train} samples is unusable for a series of {}",
            ds.len()
        )));
    }
    let u_stats = ChannelStats::fit(&ds.u[..n_train], method, "u")?;
    let y_stats = ChannelStats::fit(&ds.y[..n_train], method, "y")?;
    Ok(SeriesDataset {
        name: ds.name.clone(),
        u: ds.u.iter().map(|&v| u_stats.apply(v)).collect(),
        y: ds.y.iter().map(|&v| y_stats.apply(v)).collect(),
        normalization: Normalization {
            method,
            fitted_on: n_train,
            u: u_stats,
            y: y_stats,
        },
    })
}

/// Segment lengths for a chronological split given percentages.
pub fn split_sizes(k: usize, percents: [f64; 3]) -> Result<[usize; 3]> {
    if percents.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "split percentages must be positive, got {percents:?}"
        )));
    }
    let total: f64 = percents.iter().sum();
    if (total - 100.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split percentages must sum to 100, got {total}"
        )));
    }
    let train = ((k as f64) * percents[0] / 100.0).floor() as usize;
    let val = ((k as f64) * percents[1] / 100.0).floor() as usize;
    Ok([train, val, k - train - val])
}

/// Contiguous train/validation/test segments, in that order.
pub fn split(ds: &SeriesDataset, percents: [f64; 3]) -> Result<(SeriesDataset, SeriesDataset, SeriesDataset)> {
    let [a, b, _] = split_sizes(ds.len(), percents)?;
    Ok((
        ds.segment(0, a, "train"),
        ds.segment(a, a + b, "val"),
        ds.segment(a + b, ds.len(), "test"),
    ))
}

/// `B × N` trajectory windows; row `m` is the slice starting at sample `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedBatch {
    pub u: Matrix,
    pub y: Matrix,
    pub window: usize,
}

impl WindowedBatch {
    pub fn count(&self) -> usize {
        self.u.rows()
    }

    /// Rows `indices` of both channels.
    pub fn select(&self, indices: &[usize]) -> WindowedBatch {
        let pick = |m: &Matrix| Matrix::from_fn(indices.len(), self.window, |r, c| m.get(indices[r], c));
        WindowedBatch {
            u: pick(&self.u),
            y: pick(&self.y),
            window: self.window,
        }
    }
}

/// Extracts the `K − N` windows of length `N`.
pub fn window(ds: &SeriesDataset, n: usize) -> Result<WindowedBatch> {
    let k = ds.len();
    if n == 0 || n >= k {
        return Err(Error::InvalidArgument(format!(
            "window length N={n} must satisfy 0 < N < K={k}"
        )));
    }
    let b = k - n;
    Ok(WindowedBatch {
        u: Matrix::from_fn(b, n, |m, t| ds.u[m + t]),
        y: Matrix::from_fn(b, n, |m, t| ds.y[m + t]),
        window: n,
    })
}

/// The whole series as a single window, used for evaluation rollouts.
pub fn whole(ds: &SeriesDataset) -> WindowedBatch {
    WindowedBatch {
        u: Matrix::row_vector(&ds.u),
        y: Matrix::row_vector(&ds.y),
        window: ds.len(),
    }
}

/// Normalizes with statistics fitted on the training segment, then splits.
pub fn normalize_and_split(
    ds: &SeriesDataset,
    method: NormalizationMethod,
    percents: [f64; 3],
) -> Result<(SeriesDataset, SeriesDataset, SeriesDataset)> {
    let [n_train, _, _] = split_sizes(ds.len(), percents)?;
    split(&normalize_prefix(ds, method, n_train)?, percents)
}

/// Lags and dead time of the regressor
/// `x(k) = [u(k−n_d), …, u(k−n_d−n_x), y(k−1), …, y(k−n_y)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorSpec {
    pub n_x: usize,
    pub n_d: usize,
    pub n_y: usize,
}

impl RegressorSpec {
    pub fn new(n_x: usize, n_d: usize, n_y: usize) -> Result<Self> {
        let spec = RegressorSpec { n_x, n_d, n_y };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_y == 0 {
            return Err(Error::InvalidArgument("output lag n_y must be at least 1".into()));
        }
        Ok(())
    }

    pub fn input_lags(&self) -> usize {
        self.n_x + 1
    }

    pub fn width(&self) -> usize {
        self.n_x + 1 + self.n_y
    }

    /// Number of leading samples that seed a rollout with measured outputs;
    /// the first predicted index of a window.
    pub fn warmup(&self) -> usize {
        (self.n_d + self.n_x).max(self.n_y)
    }
}

/// Regressor at (0-based) index `k` from input and output histories.
pub fn build_regressor(u: &[f64], y: &[f64], k: usize, spec: &RegressorSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if k < spec.n_d + spec.n_x || k < spec.n_y || k >= u.len() || k > y.len() {
        return Err(Error::InvalidArgument(format!(
            "insufficient history for regressor at k={k} with n_x={}, n_d={}, n_y={}",
            spec.n_x, spec.n_d, spec.n_y
        )));
    }
    let mut x = Vec::with_capacity(spec.width());
    for lag in 0..=spec.n_x {
        x.push(u[k - spec.n_d - lag]);
    }
    for lag in 1..=spec.n_y {
        x.push(y[k - lag]);
    }
    Ok(x)
}
