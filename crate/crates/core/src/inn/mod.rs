//! Interval networks built around a pretrained crisp model. Every crisp
//! parameter tensor `θ*` becomes `[θ* − σ(Δ̲′), θ* + σ(Δ̄′)]`, where `σ` is
//! a nonnegativity trick applied to the raw radii `Δ′`.

mod infer;
mod tape;

pub use infer::{
    iffn_forward, ilstm_step, inode_step, interval_steps, predict_pi, predict_pi_batch, PiBatch, PredictionInterval, StepBatch,
};
pub use tape::{tape_interval_steps, DeltaLeaves};

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::interval::IntervalMatrix;
use crate::matrix::Matrix;
use crate::models::ModelParams;

/// Map from raw radii to nonnegative effective radii.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trick {
    Abs,
    Relu,
}

impl Trick {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Trick::Abs => x.abs(),
            Trick::Relu => Activation::Relu.apply(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Trick::Abs => "abs",
            Trick::Relu => "relu",
        }
    }
}

impl std::str::FromStr for Trick {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "abs" => Ok(Trick::Abs),
            "relu" => Ok(Trick::Relu),
            other => Err(Error::InvalidArgument(format!("unknown trick {other:?} (expected abs or relu)"))),
        }
    }
}

impl std::fmt::Display for Trick {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Raw lower/upper radii, one tensor per crisp tensor in
/// [`ModelParams::tensors`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaParams {
    pub trick: Trick,
    pub lower: Vec<Matrix>,
    pub upper: Vec<Matrix>,
}

impl DeltaParams {
    pub fn zeros(params: &ModelParams, trick: Trick) -> Self {
        let z: Vec<Matrix> = params.tensors().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        DeltaParams {
            trick,
            lower: z.clone(),
            upper: z,
        }
    }

    pub fn check_mirrors(&self, params: &ModelParams) -> Result<()> {
        let tensors = params.tensors();
        if self.lower.len() != tensors.len() || self.upper.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "radii cover {}/{} tensors, model has {}",
                self.lower.len(),
                self.upper.len(),
                tensors.len()
            )));
        }
        for (i, t) in tensors.iter().enumerate() {
            self.lower[i].expect_shape(t.shape(), &format!("lower radii of tensor {i}"))?;
            self.upper[i].expect_shape(t.shape(), &format!("upper radii of tensor {i}"))?;
        }
        Ok(())
    }

    /// Effective radii `(σ(Δ̲′), σ(Δ̄′))` per tensor.
    pub fn effective(&self) -> (Vec<Matrix>, Vec<Matrix>) {
        let t = self.trick;
        (
            self.lower.iter().map(|m| m.map(|x| t.apply(x))).collect(),
            self.upper.iter().map(|m| m.map(|x| t.apply(x))).collect(),
        )
    }

    /// Raw tensors as one list: all lower tensors, then all upper tensors.
    pub fn flat(&self) -> Vec<Matrix> {
        self.lower.iter().chain(&self.upper).cloned().collect()
    }

    pub fn from_flat(trick: Trick, mut flat: Vec<Matrix>) -> Self {
        let upper = flat.split_off(flat.len() / 2);
        DeltaParams {
            trick,
            lower: flat,
            upper,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalDense {
    pub weight: IntervalMatrix,
    pub bias: IntervalMatrix,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalLstmCell {
    pub w: IntervalMatrix,
    pub u: IntervalMatrix,
    pub bias: IntervalMatrix,
}

impl IntervalLstmCell {
    pub fn hidden(&self) -> usize {
        self.u.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum IntervalParams {
    Node { layers: Vec<IntervalDense> },
    Lstm { cells: Vec<IntervalLstmCell>, head: IntervalDense },
}

impl IntervalParams {
    pub fn tensors(&self) -> Vec<&IntervalMatrix> {
        match self {
            IntervalParams::Node { layers } => layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect(),
            IntervalParams::Lstm { cells, head } => cells
                .iter()
                .flat_map(|c| [&c.w, &c.u, &c.bias])
                .chain([&head.weight, &head.bias])
                .collect(),
        }
    }

    /// Whether every crisp tensor lies inside its interval counterpart.
    pub fn contains(&self, params: &ModelParams) -> bool {
        let crisp = params.tensors();
        let iv = self.tensors();
        crisp.len() == iv.len() && iv.iter().zip(crisp).all(|(i, c)| i.contains(c))
    }
}

/// Builds `θ̃ = [θ* − σ(Δ̲′), θ* + σ(Δ̄′)]`.
pub fn wrap(params: &ModelParams, delta: &DeltaParams) -> Result<IntervalParams> {
    delta.check_mirrors(params)?;
    let (rl, ru) = delta.effective();
    let mut wrapped = Vec::with_capacity(rl.len());
    for (i, theta) in params.tensors().into_iter().enumerate() {
        let lo = theta.zip_map(&rl[i], |t, r| t - r)?;
        let hi = theta.zip_map(&ru[i], |t, r| t + r)?;
        wrapped.push(IntervalMatrix::new(lo, hi)?);
    }
    let mut it = wrapped.into_iter();
    let mut next = || it.next().expect("length checked");
    Ok(match params {
        ModelParams::Node { layers } => IntervalParams::Node {
            layers: layers
                .iter()
                .map(|l| IntervalDense {
                    weight: next(),
                    bias: next(),
                    activation: l.activation,
                })
                .collect(),
        },
        ModelParams::Lstm { cells, head } => {
            let cells = cells
                .iter()
                .map(|_| IntervalLstmCell {
                    w: next(),
                    u: next(),
                    bias: next(),
                })
                .collect();
            IntervalParams::Lstm {
                cells,
                head: IntervalDense {
                    weight: next(),
                    bias: next(),
                    activation: head.activation,
                },
            }
        }
    })
}
