use crate::activation::Activation;
use crate::data::RegressorSpec;
use crate::error::{Error, Result};
use crate::interval::{iv_activate, iv_add_row, iv_hadamard, iv_matmul_t, iv_matrix_add, IntervalMatrix};
use crate::matrix::Matrix;
use crate::models::{simulate_batch, Feedback, LstmState, ModelParams, Rollout};

use super::{IntervalDense, IntervalLstmCell, IntervalParams};

/// Interval pass through dense layers. The input is crisp (degenerate).
pub fn iffn_forward(x: &Matrix, layers: &[IntervalDense]) -> Result<IntervalMatrix> {
    let mut a = IntervalMatrix::from_crisp(x);
    for (i, l) in layers.iter().enumerate() {
        if a.cols() != l.weight.cols() {
            return Err(Error::Shape(format!(
                "interval layer {i} expects {} inputs, got {}",
                l.weight.cols(),
                a.cols()
            )));
        }
        let z = iv_add_row(&iv_matmul_t(&a, &l.weight)?, &l.bias)?;
        a = iv_activate(&z, l.activation);
    }
    Ok(a)
}

/// One interval step `[y(k−1), y(k−1)] + g̃(x(k))` from the crisp previous
/// output.
pub fn inode_step(x: &Matrix, y_prev: &Matrix, layers: &[IntervalDense]) -> Result<IntervalMatrix> {
    let g = iffn_forward(x, layers)?;
    iv_matrix_add(&IntervalMatrix::from_crisp(y_prev), &g)
}

/// One interval LSTM step. Hidden and cell states entering the step are the
/// crisp states of the pretrained network; deeper layers receive the
/// interval hidden state of the layer below.
pub fn ilstm_step(
    x: &Matrix,
    state: &LstmState,
    cells: &[IntervalLstmCell],
    head: &IntervalDense,
) -> Result<IntervalMatrix> {
    if state.h.len() != cells.len() || state.c.len() != cells.len() {
        return Err(Error::Shape(format!(
            "state has {} layers, network has {}",
            state.h.len(),
            cells.len()
        )));
    }
    let mut input = IntervalMatrix::from_crisp(x);
    for (i, cell) in cells.iter().enumerate() {
        let hdim = cell.hidden();
        let rows = input.rows();
        state.h[i].expect_shape((rows, hdim), &format!("cell {i} hidden state"))?;
        state.c[i].expect_shape((rows, hdim), &format!("cell {i} cell state"))?;
        let zx = iv_matmul_t(&input, &cell.w)?;
        let zh = iv_matmul_t(&IntervalMatrix::from_crisp(&state.h[i]), &cell.u)?;
        let z = iv_add_row(&iv_matrix_add(&zx, &zh)?, &cell.bias)?;
        let gate = |k: usize, act: Activation| -> Result<IntervalMatrix> { Ok(iv_activate(&z.slice_cols(k * hdim, hdim)?, act)) };
        let ig = gate(0, Activation::Sigmoid)?;
        let fg = gate(1, Activation::Sigmoid)?;
        let og = gate(2, Activation::Sigmoid)?;
        let cand = gate(3, Activation::Tanh)?;
        let fc = iv_hadamard(&fg, &IntervalMatrix::from_crisp(&state.c[i]))?;
        let ic = iv_hadamard(&ig, &cand)?;
        let c = iv_matrix_add(&fc, &ic)?;
        input = iv_hadamard(&og, &iv_activate(&c, Activation::Tanh))?;
    }
    let z = iv_add_row(&iv_matmul_t(&input, &head.weight)?, &head.bias)?;
    Ok(iv_activate(&z, head.activation))
}

/// Crisp quantities feeding every interval step of a batch of windows,
/// stacked window-major: row `w · steps + j` is step `start + j` of window
/// `w`.
#[derive(Clone, Debug)]
pub struct StepBatch {
    pub windows: usize,
    pub steps: usize,
    pub start: usize,
    pub x: Matrix,
    pub y_prev: Matrix,
    /// Crisp LSTM states entering each step; empty for the ODE model.
    pub h: Vec<Matrix>,
    pub c: Vec<Matrix>,
    /// Crisp predictions at each step.
    pub center: Matrix,
    /// Measured outputs at each step.
    pub target: Matrix,
}

impl StepBatch {
    /// Runs the crisp model in simulation mode and records the inputs of
    /// every post-warm-up step.
    pub fn record(crisp: &ModelParams, u: &Matrix, y: &Matrix, spec: &RegressorSpec) -> Result<StepBatch> {
        let rollout = simulate_batch(crisp, u, y, spec, Feedback::Simulation, true)?;
        Ok(Self::from_rollout(&rollout, y))
    }

    fn from_rollout(r: &Rollout, y: &Matrix) -> StepBatch {
        let (windows, n) = y.shape();
        let steps = n - r.start;
        let rows = windows * steps;
        fn stack<'a>(rows: usize, steps: usize, f: impl Fn(usize) -> &'a Matrix) -> Matrix {
            let cols = f(0).cols();
            Matrix::from_fn(rows, cols, |row, c| f(row % steps).get(row / steps, c))
        }
        let x = stack(rows, steps, |j| &r.steps[j].x);
        let y_prev = stack(rows, steps, |j| &r.steps[j].y_prev);
        let layers = r.steps[0].state.as_ref().map_or(0, |s| s.h.len());
        let h = (0..layers)
            .map(|l| stack(rows, steps, |j| &r.steps[j].state.as_ref().expect("lstm state").h[l]))
            .collect();
        let c = (0..layers)
            .map(|l| stack(rows, steps, |j| &r.steps[j].state.as_ref().expect("lstm state").c[l]))
            .collect();
        StepBatch {
            windows,
            steps,
            start: r.start,
            x,
            y_prev,
            h,
            c,
            center: Matrix::from_fn(rows, 1, |row, _| r.predictions.get(row / steps, r.start + row % steps)),
            target: Matrix::from_fn(rows, 1, |row, _| y.get(row / steps, r.start + row % steps)),
        }
    }

    pub fn rows(&self) -> usize {
        self.windows * self.steps
    }

    /// Sub-batch made of the listed windows, in the given order.
    pub fn select(&self, windows: &[usize]) -> StepBatch {
        let steps = self.steps;
        let pick = |m: &Matrix| {
            Matrix::from_fn(windows.len() * steps, m.cols(), |row, c| {
                m.get(windows[row / steps] * steps + row % steps, c)
            })
        };
        StepBatch {
            windows: windows.len(),
            steps,
            start: self.start,
            x: pick(&self.x),
            y_prev: pick(&self.y_prev),
            h: self.h.iter().map(pick).collect(),
            c: self.c.iter().map(pick).collect(),
            center: pick(&self.center),
            target: pick(&self.target),
        }
    }

    pub fn lstm_state(&self) -> LstmState {
        LstmState {
            h: self.h.clone(),
            c: self.c.clone(),
        }
    }

    fn unstack(&self, column: &Matrix) -> Matrix {
        Matrix::from_fn(self.windows, self.steps, |w, j| column.get(w * self.steps + j, 0))
    }
}

/// Interval outputs of every recorded step, stacked like the batch rows.
pub fn interval_steps(iparams: &IntervalParams, batch: &StepBatch) -> Result<IntervalMatrix> {
    match iparams {
        IntervalParams::Node { layers } => inode_step(&batch.x, &batch.y_prev, layers),
        IntervalParams::Lstm { cells, head } => ilstm_step(&batch.x, &batch.lstm_state(), cells, head),
    }
}

/// Prediction intervals for a batch of windows; all matrices are
/// `windows × (N − start)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiBatch {
    pub start: usize,
    pub lower: Matrix,
    pub center: Matrix,
    pub upper: Matrix,
    pub target: Matrix,
}

impl PiBatch {
    pub fn from_steps(batch: &StepBatch, bounds: &IntervalMatrix) -> PiBatch {
        PiBatch {
            start: batch.start,
            lower: batch.unstack(bounds.lo()),
            center: batch.unstack(&batch.center),
            upper: batch.unstack(bounds.hi()),
            target: batch.unstack(&batch.target),
        }
    }
}

pub fn predict_pi_batch(
    iparams: &IntervalParams,
    crisp: &ModelParams,
    u: &Matrix,
    y: &Matrix,
    spec: &RegressorSpec,
) -> Result<PiBatch> {
    let batch = StepBatch::record(crisp, u, y, spec)?;
    let bounds = interval_steps(iparams, &batch)?;
    Ok(PiBatch::from_steps(&batch, &bounds))
}

/// Prediction interval along one window. Entries before `start` are the
/// measured warm-up seeds, with `lower == center == upper`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionInterval {
    pub start: usize,
    pub lower: Vec<f64>,
    pub center: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn predict_pi(
    iparams: &IntervalParams,
    crisp: &ModelParams,
    u: &[f64],
    y: &[f64],
    spec: &RegressorSpec,
) -> Result<PredictionInterval> {
    let pi = predict_pi_batch(iparams, crisp, &Matrix::row_vector(u), &Matrix::row_vector(y), spec)?;
    let seeds = &y[..pi.start];
    let join = |m: &Matrix| seeds.iter().chain(m.row(0)).copied().collect::<Vec<f64>>();
    Ok(PredictionInterval {
        start: pi.start,
        lower: join(&pi.lower),
        center: join(&pi.center),
        upper: join(&pi.upper),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inn::{wrap, DeltaParams, Trick};
    use crate::models::{ffn_forward, lstm_step, node_step, simulate, Architecture, ModelKind};
    use crate::rng::{seeded, Stream};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn model(kind: ModelKind, hidden: Vec<usize>, spec: RegressorSpec, seed: u64) -> ModelParams {
        let arch = Architecture {
            kind,
            hidden,
            activation: Activation::Tanh,
            regressor: spec,
        };
        ModelParams::init(&arch, &mut seeded(seed, Stream::Init)).unwrap()
    }

    fn random_delta(p: &ModelParams, scale: f64, rng: &mut ChaCha8Rng) -> DeltaParams {
        let mut d = DeltaParams::zeros(p, Trick::Abs);
        for m in d.lower.iter_mut().chain(d.upper.iter_mut()) {
            for v in m.as_mut_slice() {
                *v = rng.gen_range(-scale..scale);
            }
        }
        d
    }

    fn sample_inside(ip: &IntervalParams, p: &ModelParams, rng: &mut ChaCha8Rng) -> ModelParams {
        let tensors = ip
            .tensors()
            .iter()
            .map(|iv| Matrix::from_fn(iv.rows(), iv.cols(), |r, c| {
                let i = iv.get(r, c);
                if i.is_degenerate() { i.lo() } else { rng.gen_range(i.lo()..=i.hi()) }
            }))
            .collect();
        p.with_tensors(tensors).unwrap()
    }

    fn random_series(n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        (
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn zero_radii_collapse_to_crisp_trajectory() {
        let spec = RegressorSpec::new(2, 1, 2).unwrap();
        let mut rng = seeded(1, Stream::Data);
        let (u, y) = random_series(25, &mut rng);
        for kind in [ModelKind::Node, ModelKind::Lstm] {
            let p = model(kind, vec![6, 5], spec, 3);
            let ip = wrap(&p, &DeltaParams::zeros(&p, Trick::Abs)).unwrap();
            let pi = predict_pi(&ip, &p, &u, &y, &spec).unwrap();
            let crisp = simulate(&p, &u, &y, &spec).unwrap();
            assert_eq!(pi.center, crisp);
            assert_eq!(pi.lower, crisp);
            assert_eq!(pi.upper, crisp);
        }
    }

    #[test]
    fn iffn_with_zero_radii_matches_crisp_forward() {
        let spec = RegressorSpec::new(1, 0, 1).unwrap();
        let p = model(ModelKind::Node, vec![4, 3], spec, 2);
        let ModelParams::Node { layers } = &p else { unreachable!() };
        let IntervalParams::Node { layers: ilayers } = wrap(&p, &DeltaParams::zeros(&p, Trick::Relu)).unwrap() else {
            unreachable!()
        };
        let x = Matrix::from_vec(2, 3, vec![0.1, -0.4, 0.9, 1.2, 0.0, -0.3]).unwrap();
        let out = iffn_forward(&x, &ilayers).unwrap();
        let crisp = ffn_forward(&x, layers).unwrap();
        assert_eq!(out.lo(), &crisp);
        assert_eq!(out.hi(), &crisp);
    }

    #[test]
    fn widening_a_radius_never_shrinks_the_output() {
        let spec = RegressorSpec::new(1, 0, 1).unwrap();
        let p = model(ModelKind::Node, vec![5], spec, 4);
        let mut rng = seeded(2, Stream::Data);
        let d = random_delta(&p, 0.05, &mut rng);
        let IntervalParams::Node { layers: narrow } = wrap(&p, &d).unwrap() else { unreachable!() };
        let x = Matrix::row_vector(&[0.3, -0.6, 0.2]);
        let before = iffn_forward(&x, &narrow).unwrap();
        for t in 0..d.lower.len() {
            let mut wider = d.clone();
            wider.upper[t].as_mut_slice()[0] = wider.upper[t].as_slice()[0].abs() + 0.1;
            let IntervalParams::Node { layers } = wrap(&p, &wider).unwrap() else { unreachable!() };
            assert!(before.is_subset_of(&iffn_forward(&x, &layers).unwrap()));
        }
    }

    #[test]
    fn iffn_contains_sampled_parameter_outputs() {
        let spec = RegressorSpec::new(1, 0, 1).unwrap();
        let p = model(ModelKind::Node, vec![4, 3], spec, 6);
        let mut rng = seeded(3, Stream::Data);
        let ip = wrap(&p, &random_delta(&p, 0.1, &mut rng)).unwrap();
        let IntervalParams::Node { layers } = &ip else { unreachable!() };
        let x = Matrix::from_fn(5, 3, |_, _| rng.gen_range(-1.0..1.0));
        let out = iffn_forward(&x, layers).unwrap();
        for _ in 0..1000 {
            let ModelParams::Node { layers: sampled } = sample_inside(&ip, &p, &mut rng) else { unreachable!() };
            assert!(out.contains(&ffn_forward(&x, &sampled).unwrap()));
        }
    }

    #[test]
    fn output_bias_radius_gives_constant_width() {
        let spec = RegressorSpec::new(1, 0, 2).unwrap();
        let mut rng = seeded(4, Stream::Data);
        let (u, y) = random_series(30, &mut rng);
        for kind in [ModelKind::Node, ModelKind::Lstm] {
            let p = model(kind, vec![4], spec, 1);
            let mut d = DeltaParams::zeros(&p, Trick::Abs);
            let last = d.lower.len() - 1;
            d.lower[last].set(0, 0, 0.25);
            d.upper[last].set(0, 0, 0.25);
            let pi = predict_pi(&wrap(&p, &d).unwrap(), &p, &u, &y, &spec).unwrap();
            for k in pi.start..30 {
                let w = pi.upper[k] - pi.lower[k];
                assert!((w - 0.5).abs() < 1e-12, "{kind} step {k}: width {w}");
                assert!(pi.lower[k] <= pi.center[k] && pi.center[k] <= pi.upper[k]);
            }
        }
    }

    #[test]
    fn rollouts_inside_theta_tilde_stay_inside_the_pi() {
        let spec = RegressorSpec::new(1, 0, 2).unwrap();
        let mut rng = seeded(5, Stream::Data);
        let (u, y) = random_series(22, &mut rng);
        for kind in [ModelKind::Node, ModelKind::Lstm] {
            let p = model(kind, vec![4, 3], spec, 7);
            let ip = wrap(&p, &random_delta(&p, 0.08, &mut rng)).unwrap();
            let batch = StepBatch::record(&p, &Matrix::row_vector(&u), &Matrix::row_vector(&y), &spec).unwrap();
            let bounds = interval_steps(&ip, &batch).unwrap();
            for _ in 0..1000 {
                let s = sample_inside(&ip, &p, &mut rng);
                // the sampled network is run with the crisp centering of each step
                let out = match &s {
                    ModelParams::Node { layers } => node_step(&batch.x, &batch.y_prev, layers).unwrap(),
                    ModelParams::Lstm { cells, head } => lstm_step(&batch.x, &batch.lstm_state(), cells, head).unwrap().0,
                };
                assert!(bounds.contains(&out), "{kind}");
            }
        }
    }

    #[test]
    fn widening_all_radii_widens_every_step() {
        let spec = RegressorSpec::new(2, 0, 1).unwrap();
        let mut rng = seeded(6, Stream::Data);
        let (u, y) = random_series(20, &mut rng);
        let p = model(ModelKind::Lstm, vec![5, 4], spec, 9);
        let d = random_delta(&p, 0.05, &mut rng);
        let mut wider = d.clone();
        for m in wider.lower.iter_mut().chain(wider.upper.iter_mut()) {
            *m = m.map(|v| v.abs() * 1.5 + 0.01);
        }
        let a = predict_pi(&wrap(&p, &d).unwrap(), &p, &u, &y, &spec).unwrap();
        let b = predict_pi(&wrap(&p, &wider).unwrap(), &p, &u, &y, &spec).unwrap();
        for k in 0..20 {
            assert!(b.upper[k] - b.lower[k] >= a.upper[k] - a.lower[k]);
        }
    }

    #[test]
    fn select_picks_window_blocks() {
        let spec = RegressorSpec::new(0, 0, 1).unwrap();
        let p = model(ModelKind::Node, vec![2], spec, 0);
        let mut rng = seeded(7, Stream::Data);
        let u = Matrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0));
        let y = Matrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0));
        let all = StepBatch::record(&p, &u, &y, &spec).unwrap();
        let sub = all.select(&[2, 0]);
        assert_eq!(sub.rows(), 8);
        assert_eq!(sub.x.row(0), all.x.row(8));
        assert_eq!(sub.x.row(4), all.x.row(0));
        assert_eq!(&sub.target.as_slice()[..4], &y.row(2)[1..]);
        assert_eq!(&sub.target.as_slice()[4..], &y.row(0)[1..]);
    }

    #[test]
    fn stacked_steps_match_sequential_steps_bitwise() {
        let spec = RegressorSpec::new(1, 1, 2).unwrap();
        let mut rng = seeded(11, Stream::Data);
        let u = Matrix::from_fn(3, 12, |_, _| rng.gen_range(-1.0..1.0));
        let y = Matrix::from_fn(3, 12, |_, _| rng.gen_range(-1.0..1.0));
        for kind in [ModelKind::Node, ModelKind::Lstm] {
            let p = model(kind, vec![5, 4], spec, 2);
            let ip = wrap(&p, &random_delta(&p, 0.2, &mut rng)).unwrap();
            let batch = StepBatch::record(&p, &u, &y, &spec).unwrap();
            let stacked = interval_steps(&ip, &batch).unwrap();
            let rollout = simulate_batch(&p, &u, &y, &spec, Feedback::Simulation, true).unwrap();
            for (j, step) in rollout.steps.iter().enumerate() {
                let one = match &ip {
                    IntervalParams::Node { layers } => inode_step(&step.x, &step.y_prev, layers),
                    IntervalParams::Lstm { cells, head } => ilstm_step(&step.x, step.state.as_ref().unwrap(), cells, head),
                }
                .unwrap();
                for w in 0..3 {
                    let row = w * batch.steps + j;
                    assert_eq!(one.lo().get(w, 0).to_bits(), stacked.lo().get(row, 0).to_bits());
                    assert_eq!(one.hi().get(w, 0).to_bits(), stacked.hi().get(row, 0).to_bits());
                }
            }
        }
    }
}
