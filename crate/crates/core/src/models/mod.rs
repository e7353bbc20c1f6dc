//! Crisp networks: feedforward layers, stacked LSTM cells with an affine
//! head, and the Euler-discretized neural ODE `y(k) = y(k−1) + g(x(k))`.

mod infer;
mod train;

pub use infer::{
    ffn_forward, lstm_step, node_step, simulate, simulate_batch, simulate_with, Feedback, LstmState, Rollout,
    StepRecord,
};
pub use train::{train_mse, tape_rollout, CrispTrainConfig, CrispTrainOutcome, EpochLoss};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::data::RegressorSpec;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Node,
    Lstm,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Node => "node",
            ModelKind::Lstm => "lstm",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "node" => Ok(ModelKind::Node),
            "lstm" => Ok(ModelKind::Lstm),
            _ => Err(Error::Config(format!("unknown model kind {s:?} (expected node or lstm)"))),
        }
    }
}

fn default_activation() -> Activation {
    Activation::Tanh
}

/// Network shape. `hidden` lists the widths of all layers before the affine
/// output layer, so a network has `hidden.len() + 1` layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
    /// Hidden-layer activation of the neural ODE increment network.
    #[serde(default = "default_activation")]
    pub activation: Activation,
    pub regressor: RegressorSpec,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        self.regressor.validate()?;
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "hidden layer sizes must be a non-empty list of positive widths, got {:?}",
                self.hidden
            )));
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.hidden.len() + 1
    }
}

/// Affine layer `σ(x Wᵀ + b)` with `W: out × in` and `b: 1 × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
    pub activation: Activation,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }
}

/// LSTM layer. The four gate blocks are stacked row-wise in the order
/// input, forget, output, candidate: `w: 4H × in`, `u: 4H × H`, `bias: 1 × 4H`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub w: Matrix,
    pub u: Matrix,
    pub bias: Matrix,
}

impl LstmCell {
    pub fn hidden(&self) -> usize {
        self.u.cols()
    }

    pub fn inputs(&self) -> usize {
        self.w.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams {
    Node { layers: Vec<Dense> },
    Lstm { cells: Vec<LstmCell>, head: Dense },
}

/// Role of one parameter tensor, in [`ModelParams::tensors`] order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSlot {
    pub layer: usize,
    pub name: &'static str,
    pub output_layer: bool,
    pub recurrent: bool,
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases.
    pub fn init(arch: &Architecture, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let glorot = |rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut dyn rand::RngCore| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit))
        };
        let input = arch.regressor.width();
        Ok(match arch.kind {
            ModelKind::Node => {
                let mut layers = Vec::new();
                let mut prev = input;
                for &h in &arch.hidden {
                    layers.push(Dense {
                        weight: glorot(h, prev, prev, h, rng),
                        bias: Matrix::zeros(1, h),
                        activation: arch.activation,
                    });
                    prev = h;
                }
                layers.push(Dense {
                    weight: glorot(1, prev, prev, 1, rng),
                    bias: Matrix::zeros(1, 1),
                    activation: Activation::Identity,
                });
                ModelParams::Node { layers }
            }
            ModelKind::Lstm => {
                let mut cells = Vec::new();
                let mut prev = input;
                for &h in &arch.hidden {
                    cells.push(LstmCell {
                        w: glorot(4 * h, prev, prev, h, rng),
                        u: glorot(4 * h, h, h, h, rng),
                        bias: Matrix::zeros(1, 4 * h),
                    });
                    prev = h;
                }
                let head = Dense {
                    weight: glorot(1, prev, prev, 1, rng),
                    bias: Matrix::zeros(1, 1),
                    activation: Activation::Identity,
                };
                ModelParams::Lstm { cells, head }
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Node { .. } => ModelKind::Node,
            ModelParams::Lstm { .. } => ModelKind::Lstm,
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            ModelParams::Node { layers } => layers[0].inputs(),
            ModelParams::Lstm { cells, .. } => cells[0].inputs(),
        }
    }

    /// Parameter tensors in a fixed order: per layer `weight, bias` for the
    /// ODE network; per cell `w, u, bias` then `head.weight, head.bias` for
    /// the LSTM.
    pub fn tensors(&self) -> Vec<&Matrix> {
        match self {
            ModelParams::Node { layers } => layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect(),
            ModelParams::Lstm { cells, head } => cells
                .iter()
                .flat_map(|c| [&c.w, &c.u, &c.bias])
                .chain([&head.weight, &head.bias])
                .collect(),
        }
    }

    pub fn slots(&self) -> Vec<TensorSlot> {
        let slot = |layer, name, output_layer, recurrent| TensorSlot {
            layer,
            name,
            output_layer,
            recurrent,
        };
        match self {
            ModelParams::Node { layers } => {
                let last = layers.len() - 1;
                (0..layers.len())
                    .flat_map(|i| [slot(i, "weight", i == last, false), slot(i, "bias", i == last, false)])
                    .collect()
            }
            ModelParams::Lstm { cells, .. } => {
                let n = cells.len();
                (0..n)
                    .flat_map(|i| [slot(i, "w", false, false), slot(i, "u", false, true), slot(i, "bias", false, false)])
                    .chain([slot(n, "weight", true, false), slot(n, "bias", true, false)])
                    .collect()
            }
        }
    }

    /// Same structure with the tensors replaced (in [`Self::tensors`] order).
    pub fn with_tensors(&self, tensors: Vec<Matrix>) -> Result<ModelParams> {
        let current = self.tensors();
        if tensors.len() != current.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                current.len(),
                tensors.len()
            )));
        }
        for (i, (new, old)) in tensors.iter().zip(&current).enumerate() {
            new.expect_shape(old.shape(), &format!("parameter tensor {i}"))?;
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(match self {
            ModelParams::Node { layers } => ModelParams::Node {
                layers: layers
                    .iter()
                    .map(|l| Dense {
                        weight: next(),
                        bias: next(),
                        activation: l.activation,
                    })
                    .collect(),
            },
            ModelParams::Lstm { cells, head } => {
                let cells = cells
                    .iter()
                    .map(|_| LstmCell {
                        w: next(),
                        u: next(),
                        bias: next(),
                    })
                    .collect();
                ModelParams::Lstm {
                    cells,
                    head: Dense {
                        weight: next(),
                        bias: next(),
                        activation: head.activation,
                    },
                }
            }
        })
    }

    /// Checks that the tensors chain and that the final layer is affine.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Shape(msg));
        match self {
            ModelParams::Node { layers } => {
                if layers.is_empty() {
                    return fail("network has no layers".into());
                }
                for (i, l) in layers.iter().enumerate() {
                    l.bias.expect_shape((1, l.outputs()), &format!("layer {i} bias"))?;
                    if i > 0 && layers[i - 1].outputs() != l.inputs() {
                        return fail(format!("layer {i} expects {} inputs, previous layer emits {}", l.inputs(), layers[i - 1].outputs()));
                    }
                }
                let last = layers.last().expect("non-empty");
                if last.outputs() != 1 || last.activation != Activation::Identity {
                    return fail("output layer must be a single affine unit".into());
                }
            }
            ModelParams::Lstm { cells, head } => {
                if cells.is_empty() {
                    return fail("LSTM has no cells".into());
                }
                let mut prev = cells[0].inputs();
                for (i, c) in cells.iter().enumerate() {
                    let h = c.hidden();
                    c.w.expect_shape((4 * h, prev), &format!("cell {i} input weights"))?;
                    c.u.expect_shape((4 * h, h), &format!("cell {i} recurrent weights"))?;
                    c.bias.expect_shape((1, 4 * h), &format!("cell {i} bias"))?;
                    prev = h;
                }
                head.weight.expect_shape((1, prev), "output weights")?;
                head.bias.expect_shape((1, 1), "output bias")?;
                if head.activation != Activation::Identity {
                    return fail("output layer must be affine".into());
                }
            }
        }
        Ok(())
    }

    /// Whether the parameters fit an architecture (kind and layer widths).
    pub fn matches(&self, arch: &Architecture) -> bool {
        let widths: Vec<usize> = match self {
            ModelParams::Node { layers } => layers[..layers.len() - 1].iter().map(Dense::outputs).collect(),
            ModelParams::Lstm { cells, .. } => cells.iter().map(LstmCell::hidden).collect(),
        };
        self.kind() == arch.kind && widths == arch.hidden && self.input_width() == arch.regressor.width()
    }
}
