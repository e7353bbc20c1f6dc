use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::autodiff::Tape;
use crate::data::{RegressorSpec, WindowedBatch};
use crate::error::{Error, Result};
use crate::inn::{interval_steps, tape_interval_steps, wrap, DeltaLeaves, DeltaParams, StepBatch};
use crate::matrix::Matrix;
use crate::metrics::{picp, pinaw};
use crate::models::ModelParams;
use crate::rng::{seeded, Stream};

use super::{init_delta, rqrw_mean, UqTrainConfig};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_objective: f64,
    pub val_objective: f64,
    pub picp: f64,
    pub pinaw: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct InnTrainOutcome {
    pub delta: DeltaParams,
    pub best_epoch: usize,
    pub best_val_objective: f64,
    pub log: Vec<EpochRecord>,
}

/// Objective, coverage and normalized width of the intervals over a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalQuality {
    pub objective: f64,
    pub picp: f64,
    pub pinaw: f64,
}

pub fn evaluate_pis(
    crisp: &ModelParams,
    delta: &DeltaParams,
    steps: &StepBatch,
    alpha: f64,
    lambda: f64,
) -> Result<IntervalQuality> {
    let bounds = interval_steps(&wrap(crisp, delta)?, steps)?;
    let (lo, hi, t) = (bounds.lo().as_slice(), bounds.hi().as_slice(), steps.target.as_slice());
    Ok(IntervalQuality {
        objective: rqrw_mean(lo, hi, t, alpha, lambda),
        picp: picp(lo, hi, t)?,
        pinaw: pinaw(lo, hi, t)?,
    })
}

fn objective_and_grads(
    crisp: &ModelParams,
    delta: &DeltaParams,
    steps: &StepBatch,
    config: &UqTrainConfig,
) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let leaves = DeltaLeaves::record(&mut tape, delta);
    let out = tape_interval_steps(&mut tape, crisp, &leaves, steps)?;
    let loss = tape.rqrw(out.lo, out.hi, &steps.target, config.alpha, config.lambda)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).get(0, 0), leaves.flat().into_iter().map(|v| grads.get(v)).collect()))
}

/// Trains the raw radii around the fixed crisp model with mini-batch Adam
/// on the coverage/width objective. The radii of the epoch with the lowest
/// validation objective (epoch 0 being the initialization) are returned.
pub fn train_inn(
    crisp: &ModelParams,
    spec: &RegressorSpec,
    train: &WindowedBatch,
    val: &WindowedBatch,
    config: &UqTrainConfig,
) -> Result<InnTrainOutcome> {
    config.validate()?;
    crisp.validate()?;
    if crisp.input_width() != spec.width() {
        return Err(Error::Shape(format!(
            "crisp model expects {} regressor entries, spec gives {}",
            crisp.input_width(),
            spec.width()
        )));
    }
    if train.count() == 0 || val.count() == 0 {
        return Err(Error::InvalidArgument("training and validation data must be non-empty".into()));
    }
    let started = Instant::now();
    let train_steps = StepBatch::record(crisp, &train.u, &train.y, spec)?;
    let val_steps = StepBatch::record(crisp, &val.u, &val.y, spec)?;

    let mut delta = init_delta(crisp, config.r_h, config.r_o, config.trick, config.freeze_recurrent);
    let frozen: Vec<bool> = {
        let per_tensor: Vec<bool> = crisp
            .slots()
            .iter()
            .map(|s| config.freeze_recurrent && s.recurrent)
            .collect();
        per_tensor.iter().chain(&per_tensor).copied().collect()
    };
    let mut flat = delta.flat();
    let mut adam = AdamState::new(config.adam, &flat);
    let mut shuffle_rng = seeded(config.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..train_steps.windows).collect();

    let q0 = evaluate_pis(crisp, &delta, &val_steps, config.alpha, config.lambda)?;
    let t0 = evaluate_pis(crisp, &delta, &train_steps, config.alpha, config.lambda)?;
    let mut log = vec![EpochRecord {
        epoch: 0,
        train_objective: t0.objective,
        val_objective: q0.objective,
        picp: q0.picp,
        pinaw: q0.pinaw,
        wall_time: started.elapsed().as_secs_f64(),
    }];
    let mut best = (0, q0.objective, delta.clone());

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train_steps.select(chunk);
            let (loss, mut grads) = objective_and_grads(crisp, &delta, &batch, config)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss * chunk.len() as f64;
            for (g, &f) in grads.iter_mut().zip(&frozen) {
                if f {
                    *g = Matrix::zeros(g.rows(), g.cols());
                }
            }
            adam.step(&mut flat, &grads)?;
            delta = DeltaParams::from_flat(config.trick, flat.clone());
        }
        let q = evaluate_pis(crisp, &delta, &val_steps, config.alpha, config.lambda)?;
        if !q.objective.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: q.objective,
            });
        }
        if q.objective < best.1 {
            best = (epoch, q.objective, delta.clone());
        }
        let record = EpochRecord {
            epoch,
            train_objective: total / order.len() as f64,
            val_objective: q.objective,
            picp: q.picp,
            pinaw: q.pinaw,
            wall_time: started.elapsed().as_secs_f64(),
        };
        debug!(
            "epoch {epoch}: train {:.6e} val {:.6e} picp {:.2} pinaw {:.2}",
            record.train_objective, record.val_objective, record.picp, record.pinaw
        );
        log.push(record);
    }
    info!(
        "interval training (alpha {}): best epoch {} (val objective {:.6e}) in {:.1?}",
        config.alpha,
        best.0,
        best.1,
        started.elapsed()
    );
    Ok(InnTrainOutcome {
        delta: best.2,
        best_epoch: best.0,
        best_val_objective: best.1,
        log,
    })
}
