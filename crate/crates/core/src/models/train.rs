use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::adam::{AdamConfig, AdamState};
use crate::autodiff::{Tape, Var};
use crate::data::{RegressorSpec, WindowedBatch};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{seeded, Stream};

use super::infer::{check_window, simulate_batch, Feedback};
use super::{Architecture, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrispTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for CrispTrainConfig {
    fn default() -> Self {
        CrispTrainConfig {
            epochs: 300,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct CrispTrainOutcome {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochLoss>,
}

/// Records a closed-loop rollout of `params` (given as tape leaves in
/// [`ModelParams::tensors`] order) over a batch of windows. Returns one
/// `B × 1` node per predicted step, starting at the warm-up index.
pub fn tape_rollout(
    tape: &mut Tape,
    params: &ModelParams,
    leaves: &[Var],
    u: &Matrix,
    y: &Matrix,
    spec: &RegressorSpec,
) -> Result<Vec<Var>> {
    let start = check_window(u, y, spec)?;
    if leaves.len() != params.tensors().len() {
        return Err(Error::Shape(format!(
            "expected {} parameter leaves, got {}",
            params.tensors().len(),
            leaves.len()
        )));
    }
    let (batch, n) = u.shape();
    let seeds: Vec<Var> = (0..start)
        .map(|t| tape.leaf(Matrix::from_fn(batch, 1, |r, _| y.get(r, t))))
        .collect();
    let mut outputs: Vec<Var> = Vec::with_capacity(n - start);
    let lagged = |outputs: &[Var], t: usize| if t < start { seeds[t] } else { outputs[t - start] };

    let mut state = match params {
        ModelParams::Lstm { cells, .. } => Some(
            cells
                .iter()
                .map(|c| {
                    let h = tape.leaf(Matrix::zeros(batch, c.hidden()));
                    let cs = tape.leaf(Matrix::zeros(batch, c.hidden()));
                    (h, cs)
                })
                .collect::<Vec<_>>(),
        ),
        ModelParams::Node { .. } => None,
    };

    for t in start..n {
        let u_part = tape.leaf(Matrix::from_fn(batch, spec.n_x + 1, |r, c| u.get(r, t - spec.n_d - c)));
        let mut parts = vec![u_part];
        parts.extend((1..=spec.n_y).map(|j| lagged(&outputs, t - j)));
        let x = tape.concat_cols(&parts)?;
        let out = match params {
            ModelParams::Node { layers } => {
                let mut a = x;
                for (i, l) in layers.iter().enumerate() {
                    let z = tape.matmul_t(a, leaves[2 * i])?;
                    let z = tape.add_row(z, leaves[2 * i + 1])?;
                    a = tape.activate(z, l.activation);
                }
                tape.add(lagged(&outputs, t - 1), a)?
            }
            ModelParams::Lstm { cells, head } => {
                let st = state.as_mut().expect("lstm state");
                let mut input = x;
                for (i, cell) in cells.iter().enumerate() {
                    let hdim = cell.hidden();
                    let (h_prev, c_prev) = st[i];
                    let zx = tape.matmul_t(input, leaves[3 * i])?;
                    let zh = tape.matmul_t(h_prev, leaves[3 * i + 1])?;
                    let z = tape.add(zx, zh)?;
                    let z = tape.add_row(z, leaves[3 * i + 2])?;
                    let mut gate = |k: usize, act: Activation| -> Result<Var> {
                        let s = tape.slice_cols(z, k * hdim, hdim)?;
                        Ok(tape.activate(s, act))
                    };
                    let ig = gate(0, Activation::Sigmoid)?;
                    let fg = gate(1, Activation::Sigmoid)?;
                    let og = gate(2, Activation::Sigmoid)?;
                    let cand = gate(3, Activation::Tanh)?;
                    let fc = tape.mul(fg, c_prev)?;
                    let ic = tape.mul(ig, cand)?;
                    let c = tape.add(fc, ic)?;
                    let tc = tape.activate(c, Activation::Tanh);
                    let h = tape.mul(og, tc)?;
                    st[i] = (h, c);
                    input = h;
                }
                let k = 3 * cells.len();
                let z = tape.matmul_t(input, leaves[k])?;
                let z = tape.add_row(z, leaves[k + 1])?;
                tape.activate(z, head.activation)
            }
        };
        outputs.push(out);
    }
    Ok(outputs)
}

/// Mean squared closed-loop simulation error over the predicted steps.
pub(crate) fn simulation_mse(params: &ModelParams, batch: &WindowedBatch, spec: &RegressorSpec) -> Result<f64> {
    let r = simulate_batch(params, &batch.u, &batch.y, spec, Feedback::Simulation, false)?;
    let (b, n) = batch.y.shape();
    let mut sum = 0.0;
    for row in 0..b {
        for t in r.start..n {
            let e = r.predictions.get(row, t) - batch.y.get(row, t);
            sum += e * e;
        }
    }
    Ok(sum / (b * (n - r.start)) as f64)
}

fn batch_loss_and_grads(params: &ModelParams, batch: &WindowedBatch, spec: &RegressorSpec) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let leaves: Vec<Var> = params.tensors().into_iter().map(|m| tape.leaf(m.clone())).collect();
    let outputs = tape_rollout(&mut tape, params, &leaves, &batch.u, &batch.y, spec)?;
    let start = spec.warmup();
    let pred = tape.concat_cols(&outputs)?;
    let target = batch.y.slice_cols(start, batch.window - start)?;
    let loss = tape.mse(pred, &target)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).get(0, 0), leaves.iter().map(|&v| grads.get(v)).collect()))
}

/// Fits a crisp network by closed-loop MSE with Adam. Validation is the
/// simulation MSE over `val`; the parameters of the best validation epoch
/// (epoch 0 being the initialization) are returned.
pub fn train_mse(
    arch: &Architecture,
    train: &WindowedBatch,
    val: &WindowedBatch,
    config: &CrispTrainConfig,
) -> Result<CrispTrainOutcome> {
    arch.validate()?;
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if train.count() == 0 || val.count() == 0 {
        return Err(Error::InvalidArgument("training and validation data must be non-empty".into()));
    }
    let spec = &arch.regressor;
    let mut params = ModelParams::init(arch, &mut seeded(config.seed, Stream::Init))?;
    let mut shuffle_rng = seeded(config.seed, Stream::Shuffle);
    let mut tensors: Vec<Matrix> = params.tensors().into_iter().cloned().collect();
    let mut adam = AdamState::new(config.adam, &tensors);

    let initial_val = simulation_mse(&params, val, spec)?;
    let mut best = (0, initial_val, params.clone());
    let mut history = vec![EpochLoss {
        epoch: 0,
        train_loss: simulation_mse(&params, train, spec)?,
        val_loss: initial_val,
    }];
    let mut order: Vec<usize> = (0..train.count()).collect();
    let started = Instant::now();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train.select(chunk);
            let (loss, grads) = batch_loss_and_grads(&params, &batch, spec)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss * chunk.len() as f64;
            adam.step(&mut tensors, &grads)?;
            params = params.with_tensors(tensors.clone())?;
        }
        let train_loss = total / order.len() as f64;
        let val_loss = simulation_mse(&params, val, spec)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_loss });
        }
        if val_loss < best.1 {
            best = (epoch, val_loss, params.clone());
        }
        debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}");
        history.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
    }
    info!(
        "crisp {} training: best epoch {} (val mse {:.6e}) in {:.1?}",
        arch.kind,
        best.0,
        best.1,
        started.elapsed()
    );
    Ok(CrispTrainOutcome {
        params: best.2,
        best_epoch: best.0,
        best_val_loss: best.1,
        history,
    })
}
