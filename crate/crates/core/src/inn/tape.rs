use crate::activation::Activation;
use crate::autodiff::{IvVar, Tape, Var};
use crate::error::{Error, Result};
use crate::models::ModelParams;

use super::{DeltaParams, StepBatch, Trick};

/// Raw radii recorded as tape leaves, mirroring [`DeltaParams`].
#[derive(Clone, Debug)]
pub struct DeltaLeaves {
    pub trick: Trick,
    pub lower: Vec<Var>,
    pub upper: Vec<Var>,
}

impl DeltaLeaves {
    pub fn record(tape: &mut Tape, delta: &DeltaParams) -> Self {
        DeltaLeaves {
            trick: delta.trick,
            lower: delta.lower.iter().map(|m| tape.leaf(m.clone())).collect(),
            upper: delta.upper.iter().map(|m| tape.leaf(m.clone())).collect(),
        }
    }

    /// Lower leaves then upper leaves, matching [`DeltaParams::flat`].
    pub fn flat(&self) -> Vec<Var> {
        self.lower.iter().chain(&self.upper).copied().collect()
    }
}

fn effective(tape: &mut Tape, trick: Trick, raw: Var) -> Var {
    match trick {
        Trick::Abs => tape.abs(raw),
        Trick::Relu => tape.activate(raw, Activation::Relu),
    }
}

/// Records the interval outputs of every step in `batch` as a pair of
/// `rows × 1` nodes, with the crisp parameters as constants and the radii
/// taken from `delta`.
pub fn tape_interval_steps(
    tape: &mut Tape,
    crisp: &ModelParams,
    delta: &DeltaLeaves,
    batch: &StepBatch,
) -> Result<IvVar> {
    let tensors = crisp.tensors();
    if delta.lower.len() != tensors.len() || delta.upper.len() != tensors.len() {
        return Err(Error::Shape(format!(
            "radii cover {}/{} tensors, model has {}",
            delta.lower.len(),
            delta.upper.len(),
            tensors.len()
        )));
    }
    let mut wrapped = Vec::with_capacity(tensors.len());
    for (i, theta) in tensors.into_iter().enumerate() {
        let t = tape.leaf(theta.clone());
        let rl = effective(tape, delta.trick, delta.lower[i]);
        let ru = effective(tape, delta.trick, delta.upper[i]);
        wrapped.push(IvVar {
            lo: tape.sub(t, rl)?,
            hi: tape.add(t, ru)?,
        });
    }
    let x = IvVar::crisp(tape.leaf(batch.x.clone()));

    let dense = |tape: &mut Tape, a: IvVar, w: IvVar, b: IvVar, act: Activation| -> Result<IvVar> {
        let z = tape.iv_matmul_t(a, w)?;
        let z = tape.iv_add_row(z, b)?;
        Ok(tape.iv_activate(z, act))
    };

    match crisp {
        ModelParams::Node { layers } => {
            let mut a = x;
            for (i, l) in layers.iter().enumerate() {
                a = dense(tape, a, wrapped[2 * i], wrapped[2 * i + 1], l.activation)?;
            }
            let y_prev = IvVar::crisp(tape.leaf(batch.y_prev.clone()));
            tape.iv_add(y_prev, a)
        }
        ModelParams::Lstm { cells, head } => {
            if batch.h.len() != cells.len() || batch.c.len() != cells.len() {
                return Err(Error::Shape(format!(
                    "recorded states cover {} layers, network has {}",
                    batch.h.len(),
                    cells.len()
                )));
            }
            let mut input = x;
            for (i, cell) in cells.iter().enumerate() {
                let hdim = cell.hidden();
                let h_prev = IvVar::crisp(tape.leaf(batch.h[i].clone()));
                let c_prev = IvVar::crisp(tape.leaf(batch.c[i].clone()));
                let zx = tape.iv_matmul_t(input, wrapped[3 * i])?;
                let zh = tape.iv_matmul_t(h_prev, wrapped[3 * i + 1])?;
                let z = tape.iv_add(zx, zh)?;
                let z = tape.iv_add_row(z, wrapped[3 * i + 2])?;
                let mut gate = |k: usize, act: Activation| -> Result<IvVar> {
                    let s = tape.iv_slice_cols(z, k * hdim, hdim)?;
                    Ok(tape.iv_activate(s, act))
                };
                let ig = gate(0, Activation::Sigmoid)?;
                let fg = gate(1, Activation::Sigmoid)?;
                let og = gate(2, Activation::Sigmoid)?;
                let cand = gate(3, Activation::Tanh)?;
                let fc = tape.iv_mul(fg, c_prev)?;
                let ic = tape.iv_mul(ig, cand)?;
                let c = tape.iv_add(fc, ic)?;
                let tc = tape.iv_activate(c, Activation::Tanh);
                input = tape.iv_mul(og, tc)?;
            }
            let k = 3 * cells.len();
            dense(tape, input, wrapped[k], wrapped[k + 1], head.activation)
        }
    }
}
