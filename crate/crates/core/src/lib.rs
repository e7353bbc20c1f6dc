//! Interval neural networks for uncertainty-aware system identification.
//!
//! A crisp LSTM or Euler-discretized neural ODE is first fitted to an
//! input/output series. Its parameters are then widened into intervals
//! `[θ* − Δ̲, θ* + Δ̄]`, and the radii are trained with a coverage-driven loss
//! so that interval inference emits prediction intervals around the crisp
//! trajectory.

pub mod activation;
pub mod adam;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod inn;
pub mod interval;
pub mod matrix;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod synthetic;
pub mod uq;

pub use activation::Activation;
pub use error::{Error, Result};
pub use interval::{Interval, IntervalMatrix};
pub use matrix::Matrix;
