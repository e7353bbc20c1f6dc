use std::path::Path;

use inn_sysid::adam::AdamConfig;
use inn_sysid::checkpoint::{write_json, CrispCheckpoint};
use inn_sysid::config::{ExperimentConfig, Variant};
use inn_sysid::data::{normalize_and_split, whole, window, NormalizationMethod, RegressorSpec, SeriesDataset};
use inn_sysid::inn::{predict_pi, wrap, DeltaParams, Trick};
use inn_sysid::metrics::{picp, rmse};
use inn_sysid::models::{simulate, train_mse, Architecture, CrispTrainConfig, ModelKind};
use inn_sysid::pipeline::{self, Layout};
use inn_sysid::{Activation, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn write_series(path: &Path, k: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut text = String::from("time,u,y\n");
    let mut y = 0.0;
    let mut u = 0.0;
    for i in 0..k {
        if i % 10 == 0 {
            u = rng.gen_range(-1.0..1.0);
        }
        y = 0.8 * y + 0.2 * u + rng.gen_range(-0.02..0.02);
        text.push_str(&format!("{i},{u},{y}\n"));
    }
    std::fs::write(path, text).unwrap();
}

fn config(dir: &Path, k: usize, window: usize) -> ExperimentConfig {
    std::fs::create_dir_all(dir.join("data")).unwrap();
    write_series(&dir.join("data/series.csv"), k);
    let text = format!(
        r#"
output_dir = "out"
seeds = [0, 1]

[dataset]
name = "toy"
csv = {{ path = "data/series.csv" }}
normalization = "z-score"
split = [40.0, 10.0, 50.0]
window = {window}
samples = {k}

[node]
hidden = [6]
regressor = {{ n_x = 2, n_d = 2, n_y = 3 }}
r_o = 0.5
r_h = 0.5

[crisp]
epochs = 4
batch_size = 32

[uq]
alphas = [0.9]
epochs = 3
batch_size = 32
"#
    );
    let path = dir.join("toy.toml");
    std::fs::write(&path, text).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn hair_dryer_shaped_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1000, 30);
    let m = pipeline::cmd_prepare(&cfg).unwrap();
    assert_eq!(m.samples, 1000);
    assert_eq!(m.split, [400, 100, 500]);
    assert_eq!(m.window, 30);
    assert_eq!(m.train_windows, 370);
    assert_eq!(m.models[0].warmup, 4);
    let layout = Layout::new(&cfg.output_dir);
    assert!(layout.manifest().exists());
    let train = std::fs::read_to_string(layout.split_csv("train")).unwrap();
    assert_eq!(train.lines().count(), 401);
}

#[test]
fn window_longer_than_series_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 100, 40);
    let err = pipeline::cmd_prepare(&cfg).unwrap_err();
    assert!(err.is_validation(), "{err}");
}

#[test]
fn missing_csv_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    config(dir.path(), 200, 10);
    std::fs::remove_file(dir.path().join("data/series.csv")).unwrap();
    let err = ExperimentConfig::load(dir.path().join("toy.toml")).unwrap_err();
    assert!(err.to_string().contains("series.csv"), "{err}");
    assert!(err.is_validation());
}

#[test]
fn interval_training_needs_a_crisp_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 300, 20);
    let err = pipeline::cmd_train_inn(&cfg, Variant::ALL[3], 0, 0.9).unwrap_err();
    assert!(err.to_string().contains("crisp.json"), "{err}");
}

#[test]
fn single_seed_report_and_output_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 300, 20);
    let variant: Variant = "INODE-2".parse().unwrap();
    pipeline::cmd_train_base(&cfg, ModelKind::Node, 0).unwrap();
    pipeline::cmd_train_inn(&cfg, variant, 0, 0.9).unwrap();
    let report = pipeline::cmd_evaluate(&cfg, variant, 0.9, &[0]).unwrap();
    assert_eq!(report.picp.n, 1);
    assert!(report.picp.single_seed);
    assert_eq!(report.picp.std, 0.0);

    let layout = Layout::new(&cfg.output_dir);
    for path in [
        layout.report(variant, 0.9),
        layout.seed_csv(variant, 0.9),
        layout.boxplot_csv(variant, 0.9),
        layout.interval_log(variant, 0, 0.9),
        layout.crisp_log(ModelKind::Node, 0),
    ] {
        assert!(path.exists(), "{}", path.display());
    }
    // Two layers, each with a CSV grid and an SVG rendering.
    for layer in 0..2 {
        let csv = std::fs::read_to_string(layout.heatmap(variant, 0.9, 0, layer, "csv")).unwrap();
        let rows = csv.lines().count() - 1;
        assert_eq!(rows, if layer == 0 { 6 } else { 1 });
        assert!(layout.heatmap(variant, 0.9, 0, layer, "svg").exists());
    }
    let log = std::fs::read_to_string(layout.interval_log(variant, 0, 0.9)).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn crisp_training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 300, 20);
    let layout = Layout::new(&cfg.output_dir);
    pipeline::cmd_train_base(&cfg, ModelKind::Node, 1).unwrap();
    let first = std::fs::read(layout.crisp(ModelKind::Node, 1)).unwrap();
    pipeline::cmd_train_base(&cfg, ModelKind::Node, 1).unwrap();
    assert_eq!(std::fs::read(layout.crisp(ModelKind::Node, 1)).unwrap(), first);
}

#[test]
fn evaluation_rejects_a_changed_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 300, 20);
    let variant = Variant {
        kind: ModelKind::Node,
        trick: Trick::Relu,
    };
    pipeline::cmd_train_base(&cfg, ModelKind::Node, 0).unwrap();
    pipeline::cmd_train_inn(&cfg, variant, 0, 0.9).unwrap();
    cfg.node.as_mut().unwrap().hidden = vec![7];
    let err = pipeline::cmd_evaluate(&cfg, variant, 0.9, &[0]).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn tampered_crisp_checkpoint_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 300, 20);
    let variant = Variant::ALL[3];
    pipeline::cmd_train_base(&cfg, ModelKind::Node, 0).unwrap();
    pipeline::cmd_train_inn(&cfg, variant, 0, 0.9).unwrap();
    let layout = Layout::new(&cfg.output_dir);
    let mut ck = CrispCheckpoint::load(layout.crisp(ModelKind::Node, 0)).unwrap();
    ck.best_epoch += 1;
    write_json(layout.crisp(ModelKind::Node, 0), &ck).unwrap();
    let err = pipeline::cmd_evaluate(&cfg, variant, 0.9, &[0]).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)), "{err}");
}

/// Noise-free `y(k) = 0.5 u(k−1)` under a random step input.
fn linear_series(k: usize) -> SeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut u = Vec::with_capacity(k);
    while u.len() < k {
        let level = rng.gen_range(-1.0..1.0);
        u.extend(std::iter::repeat_n(level, rng.gen_range(3..12)));
    }
    u.truncate(k);
    let y = (0..k).map(|i| if i == 0 { 0.0 } else { 0.5 * u[i - 1] }).collect();
    SeriesDataset::new("linear", u, y).unwrap()
}

#[test]
fn crisp_node_learns_a_linear_system() {
    let ds = linear_series(1200);
    let (train, val, test) = normalize_and_split(&ds, NormalizationMethod::ZScore, [60.0, 15.0, 25.0]).unwrap();
    let spec = RegressorSpec::new(0, 1, 1).unwrap();
    let arch = Architecture {
        kind: ModelKind::Node,
        hidden: vec![8],
        activation: Activation::Tanh,
        regressor: spec,
    };
    let cfg = CrispTrainConfig {
        epochs: 200,
        batch_size: 32,
        adam: AdamConfig::with_learning_rate(0.01),
        seed: 0,
    };
    let out = train_mse(&arch, &window(&train, 20).unwrap(), &whole(&val), &cfg).unwrap();
    let pred = simulate(&out.params, &test.u, &test.y, &spec).unwrap();
    let n = test.normalization;
    let s = spec.warmup();
    let err = rmse(&n.denormalize_y(&pred[s..]), &n.denormalize_y(&test.y[s..])).unwrap();
    assert!(err < 1e-2, "test RMSE {err}");
}

#[test]
fn crisp_lstm_learns_a_linear_system() {
    let ds = linear_series(1200);
    let (train, val, test) = normalize_and_split(&ds, NormalizationMethod::ZScore, [60.0, 15.0, 25.0]).unwrap();
    let spec = RegressorSpec::new(1, 0, 1).unwrap();
    let arch = Architecture {
        kind: ModelKind::Lstm,
        hidden: vec![8],
        activation: Activation::Tanh,
        regressor: spec,
    };
    let cfg = CrispTrainConfig {
        epochs: 100,
        batch_size: 32,
        adam: AdamConfig::with_learning_rate(0.01),
        seed: 0,
    };
    let out = train_mse(&arch, &window(&train, 20).unwrap(), &whole(&val), &cfg).unwrap();
    let pred = simulate(&out.params, &test.u, &test.y, &spec).unwrap();
    let n = test.normalization;
    let s = spec.warmup();
    let err = rmse(&n.denormalize_y(&pred[s..]), &n.denormalize_y(&test.y[s..])).unwrap();
    assert!(err < 0.05, "test RMSE {err}");
}

#[test]
fn zero_radii_pis_cover_only_exact_hits() {
    let ds = linear_series(400);
    let (train, val, test) = normalize_and_split(&ds, NormalizationMethod::ZScore, [60.0, 15.0, 25.0]).unwrap();
    let spec = RegressorSpec::new(0, 1, 1).unwrap();
    let arch = Architecture {
        kind: ModelKind::Node,
        hidden: vec![4],
        activation: Activation::Tanh,
        regressor: spec,
    };
    let cfg = CrispTrainConfig {
        epochs: 3,
        ..Default::default()
    };
    let crisp = train_mse(&arch, &window(&train, 20).unwrap(), &whole(&val), &cfg).unwrap().params;
    let delta = DeltaParams::zeros(&crisp, Trick::Abs);
    let pi = predict_pi(&wrap(&crisp, &delta).unwrap(), &crisp, &test.u, &test.y, &spec).unwrap();
    let s = pi.start;
    let traj = simulate(&crisp, &test.u, &test.y, &spec).unwrap();
    let hits = traj[s..].iter().zip(&test.y[s..]).filter(|(p, t)| p == t).count();
    let expected = 100.0 * hits as f64 / (test.len() - s) as f64;
    assert_eq!(picp(&pi.lower[s..], &pi.upper[s..], &test.y[s..]).unwrap(), expected);
}
