//! End-to-end commands: data preparation, crisp training, interval
//! training, evaluation, and the full reproduction sweep. Every output lands
//! under the configured output directory with a deterministic name.

use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{sha256_file, write_json, CrispCheckpoint, IntervalCheckpoint, CRISP_FORMAT, INTERVAL_FORMAT};
use crate::config::{ExperimentConfig, Variant};
use crate::data::{self, load_csv, normalize_and_split, whole, Normalization, RegressorSpec, SeriesDataset, WindowedBatch};
use crate::error::{Error, Result};
use crate::inn::{predict_pi, wrap};
use crate::metrics::{elasticity, layer_heatmaps, picp, pinaw, rmse, Granularity, LayerHeatmap};
use crate::models::{simulate, train_mse, ModelKind};
use crate::report::{
    write_boxplot_csv, write_heatmap_csv, write_heatmap_svg, write_json_lines, write_seed_csv, CrispReport,
    SeedMetrics, UqReport, SCHEMA_VERSION,
};
use crate::synthetic;
use crate::uq::train_inn;

/// File locations under an output root.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

fn alpha_tag(alpha: f64) -> String {
    format!("a{:.1}", alpha * 100.0)
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn split_csv(&self, split: &str) -> PathBuf {
        self.root.join("data").join(format!("{split}.csv"))
    }

    fn run_dir(&self, kind: ModelKind, seed: u64) -> PathBuf {
        self.root.join(kind.to_string()).join(format!("seed{seed}"))
    }

    pub fn crisp(&self, kind: ModelKind, seed: u64) -> PathBuf {
        self.run_dir(kind, seed).join("crisp.json")
    }

    pub fn crisp_report(&self, kind: ModelKind, seed: u64) -> PathBuf {
        self.run_dir(kind, seed).join("crisp_report.json")
    }

    pub fn crisp_log(&self, kind: ModelKind, seed: u64) -> PathBuf {
        self.run_dir(kind, seed).join("crisp_log.jsonl")
    }

    pub fn interval(&self, variant: Variant, seed: u64, alpha: f64) -> PathBuf {
        self.run_dir(variant.kind, seed)
            .join(format!("{}_{}.json", variant.slug(), alpha_tag(alpha)))
    }

    pub fn interval_log(&self, variant: Variant, seed: u64, alpha: f64) -> PathBuf {
        self.run_dir(variant.kind, seed)
            .join(format!("{}_{}.log.jsonl", variant.slug(), alpha_tag(alpha)))
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    fn report_stem(&self, variant: Variant, alpha: f64) -> String {
        format!("{}_{}", variant.slug(), alpha_tag(alpha))
    }

    pub fn report(&self, variant: Variant, alpha: f64) -> PathBuf {
        self.reports().join(format!("{}.json", self.report_stem(variant, alpha)))
    }

    pub fn seed_csv(&self, variant: Variant, alpha: f64) -> PathBuf {
        self.reports().join(format!("{}_seeds.csv", self.report_stem(variant, alpha)))
    }

    pub fn boxplot_csv(&self, variant: Variant, alpha: f64) -> PathBuf {
        self.reports().join(format!("{}_boxplot.csv", self.report_stem(variant, alpha)))
    }

    pub fn heatmap(&self, variant: Variant, alpha: f64, seed: u64, layer: usize, ext: &str) -> PathBuf {
        self.reports()
            .join(format!("{}_elasticity", self.report_stem(variant, alpha)))
            .join(format!("seed{seed}_layer{layer}.{ext}"))
    }

    pub fn summary_csv(&self) -> PathBuf {
        self.reports().join("summary.csv")
    }
}

/// Normalized splits plus the windows used for training and selection.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub raw_len: usize,
    pub train: SeriesDataset,
    pub val: SeriesDataset,
    pub test: SeriesDataset,
    pub train_windows: WindowedBatch,
    /// The whole validation segment as one window.
    pub val_window: WindowedBatch,
}

impl PreparedData {
    pub fn normalization(&self) -> &Normalization {
        &self.train.normalization
    }
}

pub fn load_series(cfg: &ExperimentConfig) -> Result<SeriesDataset> {
    let d = &cfg.dataset;
    let mut ds = match (&d.csv, &d.synthetic) {
        (Some(csv), None) => load_csv(&csv.path, &csv.u_column, &csv.y_column)?,
        (None, Some(syn)) => synthetic::generate(syn)?.0,
        _ => return Err(Error::Config("dataset needs exactly one of `csv` or `synthetic`".into())),
    };
    ds.name = d.name.clone();
    if let Some(k) = d.samples {
        if ds.len() != k {
            return Err(Error::Config(format!(
                "dataset {} has {} samples, configuration expects {k}",
                d.name,
                ds.len()
            )));
        }
    }
    Ok(ds)
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let raw = load_series(cfg)?;
    let (train, val, test) = normalize_and_split(&raw, cfg.dataset.normalization, cfg.dataset.split)?;
    let train_windows = data::window(&train, cfg.dataset.window)?;
    Ok(PreparedData {
        raw_len: raw.len(),
        val_window: whole(&val),
        train_windows,
        train,
        val,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub kind: ModelKind,
    pub regressor: RegressorSpec,
    pub warmup: usize,
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub dataset: String,
    pub samples: usize,
    /// Train/validation/test segment lengths.
    pub split: [usize; 3],
    pub window: usize,
    /// Number of training windows `B = K_train − N`.
    pub train_windows: usize,
    pub normalization: Normalization,
    pub models: Vec<ModelSummary>,
}

fn write_split_csv(path: &Path, ds: &SeriesDataset) -> Result<()> {
    let mut text = String::from("u,y\n");
    for (u, y) in ds.u.iter().zip(&ds.y) {
        text.push_str(&format!("{u},{y}\n"));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the manifest and the normalized split CSVs.
pub fn cmd_prepare(cfg: &ExperimentConfig) -> Result<Manifest> {
    let layout = Layout::new(&cfg.output_dir);
    let data = prepare_data(cfg)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        dataset: cfg.dataset.name.clone(),
        samples: data.raw_len,
        split: [data.train.len(), data.val.len(), data.test.len()],
        window: cfg.dataset.window,
        train_windows: data.train_windows.count(),
        normalization: *data.normalization(),
        models: cfg
            .models()
            .map(|(kind, m)| ModelSummary {
                kind,
                regressor: m.regressor,
                warmup: m.regressor.warmup(),
                layers: m.hidden.len() + 1,
            })
            .collect(),
    };
    write_json(layout.manifest(), &manifest)?;
    for (name, ds) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        write_split_csv(&layout.split_csv(name), ds)?;
    }
    info!(
        "prepared {}: K={} split={:?} N={} B={}",
        manifest.dataset, manifest.samples, manifest.split, manifest.window, manifest.train_windows
    );
    Ok(manifest)
}

/// De-normalized test RMSE of a closed-loop rollout over the test segment.
fn test_rmse(params: &crate::models::ModelParams, spec: &RegressorSpec, data: &PreparedData) -> Result<f64> {
    let pred = simulate(params, &data.test.u, &data.test.y, spec)?;
    let start = spec.warmup();
    let n = data.normalization();
    rmse(&n.denormalize_y(&pred[start..]), &n.denormalize_y(&data.test.y[start..]))
}

pub fn cmd_train_base(cfg: &ExperimentConfig, kind: ModelKind, seed: u64) -> Result<CrispReport> {
    let layout = Layout::new(&cfg.output_dir);
    let arch = cfg.model(kind)?.architecture(kind);
    let data = prepare_data(cfg)?;
    let train = cfg.crisp_config(seed);
    let outcome = train_mse(&arch, &data.train_windows, &data.val_window, &train)?;
    let ck = CrispCheckpoint {
        format: CRISP_FORMAT.into(),
        dataset: cfg.dataset.name.clone(),
        architecture: arch.clone(),
        normalization: *data.normalization(),
        seed,
        train,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        params: outcome.params,
    };
    write_json(layout.crisp(kind, seed), &ck)?;
    write_json_lines(layout.crisp_log(kind, seed), &outcome.history)?;
    let report = CrispReport {
        schema_version: SCHEMA_VERSION,
        dataset: cfg.dataset.name.clone(),
        model: kind.to_string(),
        seed,
        best_epoch: outcome.best_epoch,
        val_mse: outcome.best_val_loss,
        test_rmse: test_rmse(&ck.params, &arch.regressor, &data)?,
    };
    write_json(layout.crisp_report(kind, seed), &report)?;
    info!(
        "{kind} seed {seed}: best epoch {}, test RMSE {:.4}",
        report.best_epoch, report.test_rmse
    );
    Ok(report)
}

fn load_crisp(cfg: &ExperimentConfig, layout: &Layout, kind: ModelKind, seed: u64) -> Result<(PathBuf, CrispCheckpoint)> {
    let path = layout.crisp(kind, seed);
    if !path.exists() {
        return Err(Error::Io {
            path,
            source: std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "crisp checkpoint not found; run train-base first",
            ),
        });
    }
    let ck = CrispCheckpoint::load(&path)?;
    let arch = cfg.model(kind)?.architecture(kind);
    if ck.architecture != arch {
        return Err(Error::Config(format!(
            "{} was trained with a different {kind} architecture than the configuration describes",
            path.display()
        )));
    }
    Ok((path, ck))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub variant: String,
    pub seed: u64,
    pub alpha: f64,
    pub best_epoch: usize,
    pub val_objective: f64,
    pub val_picp: f64,
    pub val_pinaw: f64,
}

pub fn cmd_train_inn(cfg: &ExperimentConfig, variant: Variant, seed: u64, alpha: f64) -> Result<IntervalSummary> {
    let layout = Layout::new(&cfg.output_dir);
    let (crisp_path, crisp) = load_crisp(cfg, &layout, variant.kind, seed)?;
    let uq = cfg.uq_config(variant.kind, variant.trick, alpha, seed)?;
    uq.validate()?;
    let data = prepare_data(cfg)?;
    let spec = crisp.architecture.regressor;
    let outcome = train_inn(&crisp.params, &spec, &data.train_windows, &data.val_window, &uq)?;
    let ck = IntervalCheckpoint {
        format: INTERVAL_FORMAT.into(),
        crisp_sha256: sha256_file(&crisp_path)?,
        variant: variant.tag(),
        train: uq,
        best_epoch: outcome.best_epoch,
        best_val_objective: outcome.best_val_objective,
        delta: outcome.delta,
    };
    write_json(layout.interval(variant, seed, alpha), &ck)?;
    write_json_lines(layout.interval_log(variant, seed, alpha), &outcome.log)?;
    let best = &outcome.log[outcome.best_epoch];
    let summary = IntervalSummary {
        variant: variant.tag(),
        seed,
        alpha,
        best_epoch: outcome.best_epoch,
        val_objective: best.val_objective,
        val_picp: best.picp,
        val_pinaw: best.pinaw,
    };
    info!(
        "{variant} seed {seed} alpha {alpha}: best epoch {}, val PICP {:.2}, PINAW {:.2}",
        summary.best_epoch, summary.val_picp, summary.val_pinaw
    );
    Ok(summary)
}

/// Test-split metrics of one trained interval model.
pub fn evaluate_seed(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    variant: Variant,
    seed: u64,
    alpha: f64,
) -> Result<(SeedMetrics, Vec<LayerHeatmap>)> {
    let layout = Layout::new(&cfg.output_dir);
    let (crisp_path, crisp) = load_crisp(cfg, &layout, variant.kind, seed)?;
    let ipath = layout.interval(variant, seed, alpha);
    let ick = IntervalCheckpoint::load(&ipath, &crisp_path, &crisp)?;
    if ick.variant != variant.tag() || ick.train.alpha != alpha {
        return Err(Error::Checkpoint(format!(
            "{} holds {} at alpha {}, expected {} at alpha {alpha}",
            ipath.display(),
            ick.variant,
            ick.train.alpha,
            variant.tag()
        )));
    }
    let iparams = wrap(&crisp.params, &ick.delta)?;
    let spec = crisp.architecture.regressor;
    let pi = predict_pi(&iparams, &crisp.params, &data.test.u, &data.test.y, &spec)?;
    let n = data.normalization();
    let s = pi.start;
    let (lo, hi) = (n.denormalize_y(&pi.lower[s..]), n.denormalize_y(&pi.upper[s..]));
    let (center, target) = (n.denormalize_y(&pi.center[s..]), n.denormalize_y(&data.test.y[s..]));

    let per_tensor = elasticity(&crisp.params, &iparams, Granularity::PerTensor)?;
    let per_entry = elasticity(&crisp.params, &iparams, Granularity::PerEntry)?;
    let metrics = SeedMetrics {
        seed,
        rmse: rmse(&center, &target)?,
        picp: picp(&lo, &hi, &target)?,
        pinaw: pinaw(&lo, &hi, &target)?,
        elasticity: per_tensor
            .iter()
            .map(|m| (format!("layer{}.{}", m.layer, m.tensor), m.values.get(0, 0)))
            .collect(),
    };
    Ok((metrics, layer_heatmaps(&per_entry)?))
}

/// Aggregates the listed seeds and writes the report JSON, the per-seed and
/// box-plot CSVs, and per-layer elasticity heatmaps.
pub fn cmd_evaluate(cfg: &ExperimentConfig, variant: Variant, alpha: f64, seeds: &[u64]) -> Result<UqReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds to evaluate".into()));
    }
    let layout = Layout::new(&cfg.output_dir);
    let data = prepare_data(cfg)?;
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (metrics, grids) = evaluate_seed(cfg, &data, variant, seed, alpha)?;
        for (layer, labels, grid) in &grids {
            write_heatmap_csv(layout.heatmap(variant, alpha, seed, *layer, "csv"), labels, grid)?;
            let title = format!("{variant} seed {seed} layer {layer}");
            write_heatmap_svg(layout.heatmap(variant, alpha, seed, *layer, "svg"), &title, grid)?;
        }
        per_seed.push(metrics);
    }
    let report = UqReport::new(&cfg.dataset.name, &variant.tag(), alpha, per_seed)?;
    write_json(layout.report(variant, alpha), &report)?;
    write_seed_csv(layout.seed_csv(variant, alpha), &report)?;
    write_boxplot_csv(layout.boxplot_csv(variant, alpha), &report)?;
    info!(
        "{variant} alpha {alpha}: PICP {:.2} ± {:.2}, PINAW {:.2} ± {:.2}, RMSE {:.4} ± {:.4} over {} seed(s)",
        report.picp.mean,
        report.picp.std,
        report.pinaw.mean,
        report.pinaw.std,
        report.rmse.mean,
        report.rmse.std,
        report.picp.n
    );
    Ok(report)
}

/// Runs every command over the given variants, coverage targets and seeds,
/// then writes a one-line-per-report summary CSV.
pub fn reproduce(cfg: &ExperimentConfig, variants: &[Variant], alphas: &[f64], seeds: &[u64]) -> Result<Vec<UqReport>> {
    let layout = Layout::new(&cfg.output_dir);
    cmd_prepare(cfg)?;
    let mut kinds: Vec<ModelKind> = variants.iter().map(|v| v.kind).collect();
    kinds.dedup();
    for &kind in &kinds {
        for &seed in seeds {
            cmd_train_base(cfg, kind, seed)?;
        }
    }
    let mut reports = Vec::new();
    for &variant in variants {
        for &alpha in alphas {
            for &seed in seeds {
                cmd_train_inn(cfg, variant, seed, alpha)?;
            }
            reports.push(cmd_evaluate(cfg, variant, alpha, seeds)?);
        }
    }
    let mut text = String::from("variant,alpha,seeds,rmse_mean,rmse_std,picp_mean,picp_std,pinaw_mean,pinaw_std\n");
    for r in &reports {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.variant, r.alpha, r.picp.n, r.rmse.mean, r.rmse.std, r.picp.mean, r.picp.std, r.pinaw.mean, r.pinaw.std
        ));
    }
    let path = layout.summary_csv();
    std::fs::create_dir_all(layout.reports()).map_err(|e| Error::io(layout.reports(), e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(reports)
}
