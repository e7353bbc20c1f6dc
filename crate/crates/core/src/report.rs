//! Report files: aggregate JSON, per-seed and box-plot CSVs, and elasticity
//! heatmaps (CSV grid plus an SVG rendering).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{aggregate, Aggregate};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    /// Test RMSE of the crisp center trajectory, de-normalized.
    pub rmse: f64,
    pub picp: f64,
    pub pinaw: f64,
    /// Per-tensor elasticity, keyed `layer<i>.<tensor>`.
    pub elasticity: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UqReport {
    pub schema_version: u32,
    pub dataset: String,
    pub variant: String,
    pub alpha: f64,
    pub split: String,
    pub seeds: Vec<SeedMetrics>,
    pub rmse: Aggregate,
    pub picp: Aggregate,
    pub pinaw: Aggregate,
}

impl UqReport {
    pub fn new(dataset: &str, variant: &str, alpha: f64, seeds: Vec<SeedMetrics>) -> Result<Self> {
        let col = |f: fn(&SeedMetrics) -> f64| seeds.iter().map(f).collect::<Vec<_>>();
        Ok(UqReport {
            schema_version: SCHEMA_VERSION,
            dataset: dataset.to_string(),
            variant: variant.to_string(),
            alpha,
            split: "test".into(),
            rmse: aggregate(&col(|s| s.rmse))?,
            picp: aggregate(&col(|s| s.picp))?,
            pinaw: aggregate(&col(|s| s.pinaw))?,
            seeds,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrispReport {
    pub schema_version: u32,
    pub dataset: String,
    pub model: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub val_mse: f64,
    pub test_rmse: f64,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_text(path, &String::from_utf8_lossy(&bytes))
}

/// One row per seed with the point and interval metrics.
pub fn write_seed_csv(path: impl AsRef<Path>, report: &UqReport) -> Result<()> {
    let header = ["seed", "rmse", "picp", "pinaw"].map(String::from);
    let rows = report
        .seeds
        .iter()
        .map(|s| vec![s.seed.to_string(), s.rmse.to_string(), s.picp.to_string(), s.pinaw.to_string()]);
    write_csv(path.as_ref(), &header, rows)
}

/// Box-plot input: coverage error `PICP − 100α` and PINAW per seed.
pub fn write_boxplot_csv(path: impl AsRef<Path>, report: &UqReport) -> Result<()> {
    let header = ["variant", "alpha", "seed", "picp_minus_target", "pinaw"].map(String::from);
    let rows = report.seeds.iter().map(|s| {
        vec![
            report.variant.clone(),
            report.alpha.to_string(),
            s.seed.to_string(),
            (s.picp - 100.0 * report.alpha).to_string(),
            s.pinaw.to_string(),
        ]
    });
    write_csv(path.as_ref(), &header, rows)
}

/// Grid with a leading `unit` column and the given column labels.
pub fn write_heatmap_csv(path: impl AsRef<Path>, labels: &[String], grid: &Matrix) -> Result<()> {
    if labels.len() != grid.cols() {
        return Err(Error::Shape(format!(
            "{} column labels for a grid with {} columns",
            labels.len(),
            grid.cols()
        )));
    }
    let header: Vec<String> = std::iter::once("unit".to_string()).chain(labels.iter().cloned()).collect();
    let rows = (0..grid.rows()).map(|r| {
        std::iter::once(r.to_string())
            .chain(grid.row(r).iter().map(|v| v.to_string()))
            .collect()
    });
    write_csv(path.as_ref(), &header, rows)
}

/// Renders a grid as coloured cells; values are clipped to `[0, 1]`.
pub fn heatmap_svg(title: &str, grid: &Matrix) -> String {
    const CELL: usize = 10;
    const TOP: usize = 24;
    let (rows, cols) = grid.shape();
    let (width, height) = (cols * CELL + 2, rows * CELL + TOP + 2);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<text x="1" y="16" font-family="sans-serif" font-size="12">{}</text>"#, escape(title));
    for r in 0..rows {
        for c in 0..cols {
            let v = grid.get(r, c);
            let t = if v.is_finite() { v.clamp(0.0, 1.0) } else { 1.0 };
            let shade = (255.0 * (1.0 - t)).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="rgb(255,{shade},{shade})"><title>{r},{c}: {v}</title></rect>"#,
                1 + c * CELL,
                TOP + 1 + r * CELL,
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_heatmap_svg(path: impl AsRef<Path>, title: &str, grid: &Matrix) -> Result<()> {
    write_text(path.as_ref(), &heatmap_svg(title, grid))
}

/// Appends one JSON object per line.
pub fn write_json_lines<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_text(path.as_ref(), &text)
}
