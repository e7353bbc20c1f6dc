use crate::activation::Activation;
use crate::data::RegressorSpec;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{Dense, LstmCell, ModelParams};

/// Forward pass through a stack of dense layers; rows of `x` are samples.
pub fn ffn_forward(x: &Matrix, layers: &[Dense]) -> Result<Matrix> {
    let mut a = x.clone();
    for (i, l) in layers.iter().enumerate() {
        if a.cols() != l.inputs() {
            return Err(Error::Shape(format!(
                "layer {i} expects {} inputs, got {}",
                l.inputs(),
                a.cols()
            )));
        }
        let z = a.matmul_t(&l.weight)?.add_row(&l.bias)?;
        a = z.map(|v| l.activation.apply(v));
    }
    Ok(a)
}

/// Hidden and cell states of every LSTM layer, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<Matrix>,
    pub c: Vec<Matrix>,
}

impl LstmState {
    pub fn zeros(cells: &[LstmCell], batch: usize) -> Self {
        LstmState {
            h: cells.iter().map(|c| Matrix::zeros(batch, c.hidden())).collect(),
            c: cells.iter().map(|c| Matrix::zeros(batch, c.hidden())).collect(),
        }
    }
}

/// Gate pre-activations `x Wᵀ + h Uᵀ + b`, summed in that order.
pub(crate) fn gate_preactivation(cell: &LstmCell, x: &Matrix, h: &Matrix) -> Result<Matrix> {
    let zx = x.matmul_t(&cell.w)?;
    let zh = h.matmul_t(&cell.u)?;
    zx.zip_map(&zh, |a, b| a + b)?.add_row(&cell.bias)
}

/// One step of the stacked LSTM followed by the affine head.
pub fn lstm_step(x: &Matrix, state: &LstmState, cells: &[LstmCell], head: &Dense) -> Result<(Matrix, LstmState)> {
    if state.h.len() != cells.len() || state.c.len() != cells.len() {
        return Err(Error::Shape(format!(
            "state has {} layers, network has {}",
            state.h.len(),
            cells.len()
        )));
    }
    let mut input = x.clone();
    let mut next = LstmState {
        h: Vec::with_capacity(cells.len()),
        c: Vec::with_capacity(cells.len()),
    };
    for (i, cell) in cells.iter().enumerate() {
        let hdim = cell.hidden();
        if input.cols() != cell.inputs() {
            return Err(Error::Shape(format!(
                "cell {i} expects {} inputs, got {}",
                cell.inputs(),
                input.cols()
            )));
        }
        state.h[i].expect_shape((input.rows(), hdim), &format!("cell {i} hidden state"))?;
        state.c[i].expect_shape((input.rows(), hdim), &format!("cell {i} cell state"))?;
        let z = gate_preactivation(cell, &input, &state.h[i])?;
        let gate = |k: usize, act: Activation| -> Result<Matrix> {
            Ok(z.slice_cols(k * hdim, hdim)?.map(|v| act.apply(v)))
        };
        let ig = gate(0, Activation::Sigmoid)?;
        let fg = gate(1, Activation::Sigmoid)?;
        let og = gate(2, Activation::Sigmoid)?;
        let cand = gate(3, Activation::Tanh)?;
        let fc = fg.zip_map(&state.c[i], |a, b| a * b)?;
        let ic = ig.zip_map(&cand, |a, b| a * b)?;
        let c = fc.zip_map(&ic, |a, b| a + b)?;
        let h = og.zip_map(&c.map(f64::tanh), |a, b| a * b)?;
        input = h.clone();
        next.h.push(h);
        next.c.push(c);
    }
    let y = ffn_forward(&input, std::slice::from_ref(head))?;
    Ok((y, next))
}

/// Euler step `y(k) = y(k−1) + g(x(k))`.
pub fn node_step(x: &Matrix, y_prev: &Matrix, layers: &[Dense]) -> Result<Matrix> {
    let g = ffn_forward(x, layers)?;
    g.expect_shape(y_prev.shape(), "previous output")?;
    y_prev.zip_map(&g, |a, b| a + b)
}

/// Source of the lagged outputs in the regressor after warm-up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feedback {
    /// The model's own past predictions (closed loop).
    Simulation,
    /// Measured outputs.
    TeacherForcing,
}

/// Inputs the model saw at one predicted step, for every row of the batch.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub t: usize,
    pub x: Matrix,
    pub y_prev: Matrix,
    /// LSTM states entering the step; empty for the ODE model.
    pub state: Option<LstmState>,
}

#[derive(Clone, Debug)]
pub struct Rollout {
    /// `B × N`: measured seeds for `t < warm-up`, predictions afterwards.
    pub predictions: Matrix,
    pub start: usize,
    pub steps: Vec<StepRecord>,
}

pub(crate) fn regressor_rows(u: &Matrix, lagged_y: &Matrix, t: usize, spec: &RegressorSpec) -> Matrix {
    Matrix::from_fn(u.rows(), spec.width(), |r, c| {
        if c <= spec.n_x {
            u.get(r, t - spec.n_d - c)
        } else {
            lagged_y.get(r, t - (c - spec.n_x))
        }
    })
}

pub(crate) fn check_window(u: &Matrix, y: &Matrix, spec: &RegressorSpec) -> Result<usize> {
    u.expect_shape(y.shape(), "output window")?;
    spec.validate()?;
    let warmup = spec.warmup();
    if u.cols() <= warmup {
        return Err(Error::InvalidArgument(format!(
            "window of length {} leaves no step after the warm-up of {warmup}",
            u.cols()
        )));
    }
    Ok(warmup)
}

/// Rolls the model over each row of `u`/`y`. The first `spec.warmup()`
/// entries of every row seed the lagged outputs; LSTM states start at zero.
pub fn simulate_batch(
    params: &ModelParams,
    u: &Matrix,
    y: &Matrix,
    spec: &RegressorSpec,
    feedback: Feedback,
    record: bool,
) -> Result<Rollout> {
    let start = check_window(u, y, spec)?;
    if params.input_width() != spec.width() {
        return Err(Error::Shape(format!(
            "model expects {} regressor entries, spec gives {}",
            params.input_width(),
            spec.width()
        )));
    }
    let (batch, n) = u.shape();
    let mut preds = Matrix::from_fn(batch, n, |r, c| if c < start { y.get(r, c) } else { 0.0 });
    let mut lstm_state = match params {
        ModelParams::Lstm { cells, .. } => Some(LstmState::zeros(cells, batch)),
        ModelParams::Node { .. } => None,
    };
    let mut steps = Vec::new();
    for t in start..n {
        let lagged = match feedback {
            Feedback::Simulation => &preds,
            Feedback::TeacherForcing => y,
        };
        let x = regressor_rows(u, lagged, t, spec);
        let y_prev = Matrix::from_fn(batch, 1, |r, _| lagged.get(r, t - 1));
        let out = match params {
            ModelParams::Node { layers } => node_step(&x, &y_prev, layers)?,
            ModelParams::Lstm { cells, head } => {
                let state = lstm_state.as_ref().expect("lstm state");
                let (out, next) = lstm_step(&x, state, cells, head)?;
                if record {
                    steps.push(StepRecord {
                        t,
                        x: x.clone(),
                        y_prev: y_prev.clone(),
                        state: Some(state.clone()),
                    });
                }
                lstm_state = Some(next);
                out
            }
        };
        if record && matches!(params, ModelParams::Node { .. }) {
            steps.push(StepRecord {
                t,
                x,
                y_prev,
                state: None,
            });
        }
        for r in 0..batch {
            preds.set(r, t, out.get(r, 0));
        }
    }
    Ok(Rollout {
        predictions: preds,
        start,
        steps,
    })
}

/// Closed-loop rollout of a single window.
pub fn simulate(params: &ModelParams, u: &[f64], y: &[f64], spec: &RegressorSpec) -> Result<Vec<f64>> {
    simulate_with(params, u, y, spec, Feedback::Simulation)
}

pub fn simulate_with(
    params: &ModelParams,
    u: &[f64],
    y: &[f64],
    spec: &RegressorSpec,
    feedback: Feedback,
) -> Result<Vec<f64>> {
    let r = simulate_batch(params, &Matrix::row_vector(u), &Matrix::row_vector(y), spec, feedback, false)?;
    Ok(r.predictions.into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::sigmoid;
    use crate::models::{Architecture, ModelKind};
    use crate::rng::{seeded, Stream};
    use rand::Rng;

    fn dense(w: Matrix, b: &[f64], act: Activation) -> Dense {
        Dense {
            weight: w,
            bias: Matrix::row_vector(b),
            activation: act,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let layers = vec![
            dense(Matrix::zeros(3, 2), &[0.0; 3], Activation::Tanh),
            dense(Matrix::zeros(1, 3), &[0.0], Activation::Identity),
        ];
        let y = ffn_forward(&Matrix::row_vector(&[0.7, -2.0]), &layers).unwrap();
        assert_eq!(y.as_slice(), &[0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let eye = Matrix::from_fn(3, 3, |r, c| (r == c) as u8 as f64);
        let x = Matrix::row_vector(&[1.5, -0.25, 3.0]);
        let y = ffn_forward(&x, &[dense(eye, &[0.0; 3], Activation::Identity)]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn two_layer_net_matches_scalar_loops() {
        let mut rng = seeded(11, Stream::Data);
        let mut rand_m = |r, c| Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let w1 = rand_m(4, 3);
        let b1 = rand_m(1, 4);
        let w2 = rand_m(2, 4);
        let b2 = rand_m(1, 2);
        let x = [0.3, -0.8, 1.1];
        let layers = vec![
            dense(w1.clone(), b1.as_slice(), Activation::Tanh),
            dense(w2.clone(), b2.as_slice(), Activation::Identity),
        ];
        let got = ffn_forward(&Matrix::row_vector(&x), &layers).unwrap();

        let mut hidden = [0.0; 4];
        for (j, hv) in hidden.iter_mut().enumerate() {
            let s: f64 = (0..3).map(|i| w1.get(j, i) * x[i]).sum::<f64>() + b1.get(0, j);
            *hv = s.tanh();
        }
        for k in 0..2 {
            let s: f64 = (0..4).map(|j| w2.get(k, j) * hidden[j]).sum::<f64>() + b2.get(0, k);
            assert!((got.get(0, k) - s).abs() < 1e-14);
        }
    }

    fn zero_lstm(inputs: usize, hidden: usize) -> (Vec<LstmCell>, Dense) {
        (
            vec![LstmCell {
                w: Matrix::zeros(4 * hidden, inputs),
                u: Matrix::zeros(4 * hidden, hidden),
                bias: Matrix::zeros(1, 4 * hidden),
            }],
            dense(Matrix::zeros(1, hidden), &[0.0], Activation::Identity),
        )
    }

    #[test]
    fn all_zero_lstm_stays_at_zero() {
        let (cells, head) = zero_lstm(2, 3);
        let state = LstmState::zeros(&cells, 1);
        let (y, next) = lstm_step(&Matrix::row_vector(&[0.4, -1.0]), &state, &cells, &head).unwrap();
        assert_eq!(y.as_slice(), &[0.0]);
        assert_eq!(next.c[0], Matrix::zeros(1, 3));
        assert_eq!(next.h[0], Matrix::zeros(1, 3));
    }

    #[test]
    fn saturated_forget_gate_keeps_memory() {
        let (mut cells, head) = zero_lstm(1, 2);
        for j in 2..4 {
            cells[0].bias.set(0, j, 50.0);
        }
        let state = LstmState {
            h: vec![Matrix::zeros(1, 2)],
            c: vec![Matrix::row_vector(&[0.7, -0.3])],
        };
        let (_, next) = lstm_step(&Matrix::zeros(1, 1), &state, &cells, &head).unwrap();
        for j in 0..2 {
            assert!((next.c[0].get(0, j) - state.c[0].get(0, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_matches_scalar_reference_for_three_steps() {
        let mut rng = seeded(5, Stream::Data);
        let (n_in, h) = (2, 3);
        let mut rand_m = |r, c| Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let cell = LstmCell {
            w: rand_m(4 * h, n_in),
            u: rand_m(4 * h, h),
            bias: rand_m(1, 4 * h),
        };
        let head = dense(rand_m(1, h), &[0.1], Activation::Identity);
        let xs = [[0.5, -0.2], [1.0, 0.3], [-0.7, 0.9]];

        let cells = vec![cell.clone()];
        let mut state = LstmState::zeros(&cells, 1);
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        for x in xs {
            let (y, next) = lstm_step(&Matrix::row_vector(&x), &state, &cells, &head).unwrap();
            state = next;

            let pre = |gate: usize, j: usize| {
                let row = gate * h + j;
                let mut s = cell.bias.get(0, row);
                for i in 0..n_in {
                    s += cell.w.get(row, i) * x[i];
                }
                for i in 0..h {
                    s += cell.u.get(row, i) * hs[i];
                }
                s
            };
            let mut new_h = vec![0.0; h];
            for j in 0..h {
                let ig = sigmoid(pre(0, j));
                let fg = sigmoid(pre(1, j));
                let og = sigmoid(pre(2, j));
                let g = pre(3, j).tanh();
                cs[j] = fg * cs[j] + ig * g;
                new_h[j] = og * cs[j].tanh();
            }
            hs = new_h;
            let y_ref: f64 = (0..h).map(|j| head.weight.get(0, j) * hs[j]).sum::<f64>() + 0.1;
            assert!((y.get(0, 0) - y_ref).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_node_holds_last_seed() {
        let spec = RegressorSpec::new(1, 0, 2).unwrap();
        let arch = Architecture {
            kind: ModelKind::Node,
            hidden: vec![4],
            activation: Activation::Tanh,
            regressor: spec,
        };
        let p = ModelParams::init(&arch, &mut seeded(0, Stream::Init)).unwrap();
        let zero = p.with_tensors(p.tensors().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect()).unwrap();
        let u = [0.1, 0.5, -0.3, 0.8, 0.2, 0.0];
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let pred = simulate(&zero, &u, &y, &spec).unwrap();
        assert_eq!(pred, vec![1.0, 2.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn short_window_is_rejected() {
        let spec = RegressorSpec::new(2, 2, 3).unwrap();
        let arch = Architecture {
            kind: ModelKind::Node,
            hidden: vec![2],
            activation: Activation::Tanh,
            regressor: spec,
        };
        let p = ModelParams::init(&arch, &mut seeded(0, Stream::Init)).unwrap();
        assert!(simulate(&p, &[0.0; 4], &[0.0; 4], &spec).is_err());
        assert!(simulate(&p, &[0.0; 5], &[0.0; 5], &spec).is_ok());
    }
}
