//! Interval arithmetic over closed real ranges.
//!
//! All arithmetic is plain `f64` without directed rounding. Products report
//! which endpoint pair produced the minimum and maximum so that gradients can
//! be routed to the selected endpoints.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A closed interval `[lo, hi]` with finite endpoints and `lo <= hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl TryFrom<(f64, f64)> for Interval {
    type Error = Error;

    fn try_from((lo, hi): (f64, f64)) -> Result<Self> {
        Interval::new(lo, hi)
    }
}

impl From<Interval> for (f64, f64) {
    fn from(iv: Interval) -> Self {
        (iv.lo, iv.hi)
    }
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    /// Degenerate interval `[x, x]`.
    pub fn point(x: f64) -> Self {
        debug_assert!(x.is_finite());
        Interval { lo: x, hi: x }
    }

    // Endpoints produced by the ops below are ordered by construction.
    #[inline]
    fn raw(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi || lo.is_nan() || hi.is_nan());
        Interval { lo, hi }
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn activate(&self, kind: Activation) -> Interval {
        Interval::raw(kind.apply(self.lo), kind.apply(self.hi))
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Endpoint pairs of a product in the order `lo·lo, lo·hi, hi·lo, hi·hi`.
/// Bit 1 of the index selects the left endpoint, bit 0 the right one.
pub const ENDPOINT_PAIRS: [(Endpoint, Endpoint); 4] = [
    (Endpoint::Lo, Endpoint::Lo),
    (Endpoint::Lo, Endpoint::Hi),
    (Endpoint::Hi, Endpoint::Lo),
    (Endpoint::Hi, Endpoint::Hi),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Lo,
    Hi,
}

/// Result of an interval product together with the endpoint-pair indices
/// (into [`ENDPOINT_PAIRS`]) that attained the minimum and maximum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracedProduct {
    pub value: Interval,
    pub argmin: u8,
    pub argmax: u8,
}

/// Index of the minimum and maximum of four candidate products. Ties go to
/// the lowest index.
#[inline]
pub fn extrema4(p: [f64; 4]) -> (u8, u8) {
    let mut imin = 0u8;
    let mut imax = 0u8;
    for i in 1..4u8 {
        if p[i as usize] < p[imin as usize] {
            imin = i;
        }
        if p[i as usize] > p[imax as usize] {
            imax = i;
        }
    }
    (imin, imax)
}

#[inline]
pub(crate) fn products(alo: f64, ahi: f64, blo: f64, bhi: f64) -> [f64; 4] {
    [alo * blo, alo * bhi, ahi * blo, ahi * bhi]
}

pub fn iv_add(a: Interval, b: Interval) -> Interval {
    Interval::raw(a.lo + b.lo, a.hi + b.hi)
}

pub fn iv_sub(a: Interval, b: Interval) -> Interval {
    Interval::raw(a.lo - b.hi, a.hi - b.lo)
}

pub fn iv_mul(a: Interval, b: Interval) -> Interval {
    iv_mul_traced(a, b).value
}

pub fn iv_mul_traced(a: Interval, b: Interval) -> TracedProduct {
    let p = products(a.lo, a.hi, b.lo, b.hi);
    let (argmin, argmax) = extrema4(p);
    TracedProduct {
        value: Interval::raw(p[argmin as usize], p[argmax as usize]),
        argmin,
        argmax,
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        iv_add(self, rhs)
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        iv_sub(self, rhs)
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        iv_mul(self, rhs)
    }
}

/// Interval dot product: the sum of per-term interval products. Each term's
/// extrema sit at endpoints and the terms are independent, so the result is
/// the exact range over all endpoint combinations.
pub fn iv_dot(u: &[Interval], v: &[Interval]) -> Result<Interval> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "interval dot product of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let mut acc = Interval::point(0.0);
    for (a, b) in u.iter().zip(v) {
        acc = iv_add(acc, iv_mul(*a, *b));
    }
    Ok(acc)
}

/// Same sum as [`iv_dot`] over endpoint slices; `a` and `b` rows are
/// contiguous.
#[inline]
pub(crate) fn dot_kernel(alo: &[f64], ahi: &[f64], blo: &[f64], bhi: &[f64]) -> (f64, f64) {
    let mut lo = 0.0;
    let mut hi = 0.0;
    for i in 0..alo.len() {
        let p = products(alo[i], ahi[i], blo[i], bhi[i]);
        let (imin, imax) = extrema4(p);
        lo += p[imin as usize];
        hi += p[imax as usize];
    }
    (lo, hi)
}

/// Matrix of intervals stored as two endpoint matrices of equal shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntervalMatrixRepr", into = "IntervalMatrixRepr")]
pub struct IntervalMatrix {
    lo: Matrix,
    hi: Matrix,
}

#[derive(Serialize, Deserialize)]
struct IntervalMatrixRepr {
    lo: Matrix,
    hi: Matrix,
}

impl TryFrom<IntervalMatrixRepr> for IntervalMatrix {
    type Error = Error;
    fn try_from(r: IntervalMatrixRepr) -> Result<Self> {
        IntervalMatrix::new(r.lo, r.hi)
    }
}

impl From<IntervalMatrix> for IntervalMatrixRepr {
    fn from(m: IntervalMatrix) -> Self {
        IntervalMatrixRepr { lo: m.lo, hi: m.hi }
    }
}

impl IntervalMatrix {
    pub fn new(lo: Matrix, hi: Matrix) -> Result<Self> {
        lo.expect_shape(hi.shape(), "interval matrix upper endpoints")?;
        for (l, h) in lo.as_slice().iter().zip(hi.as_slice()) {
            if !(l.is_finite() && h.is_finite()) || l > h {
                return Err(Error::InvalidInterval { lo: *l, hi: *h });
            }
        }
        Ok(IntervalMatrix { lo, hi })
    }

    /// Degenerate interval matrix `[m, m]`.
    pub fn from_crisp(m: &Matrix) -> Self {
        IntervalMatrix {
            lo: m.clone(),
            hi: m.clone(),
        }
    }

    pub fn from_intervals(rows: usize, cols: usize, values: &[Interval]) -> Result<Self> {
        let lo = Matrix::from_vec(rows, cols, values.iter().map(|i| i.lo).collect())?;
        let hi = Matrix::from_vec(rows, cols, values.iter().map(|i| i.hi).collect())?;
        Ok(IntervalMatrix { lo, hi })
    }

    pub fn lo(&self) -> &Matrix {
        &self.lo
    }

    pub fn hi(&self) -> &Matrix {
        &self.hi
    }

    pub fn shape(&self) -> (usize, usize) {
        self.lo.shape()
    }

    pub fn rows(&self) -> usize {
        self.lo.rows()
    }

    pub fn cols(&self) -> usize {
        self.lo.cols()
    }

    pub fn get(&self, r: usize, c: usize) -> Interval {
        Interval::raw(self.lo.get(r, c), self.hi.get(r, c))
    }

    pub fn row(&self, r: usize) -> Vec<Interval> {
        (0..self.cols()).map(|c| self.get(r, c)).collect()
    }

    pub fn intervals(&self) -> impl Iterator<Item = Interval> + '_ {
        self.lo
            .as_slice()
            .iter()
            .zip(self.hi.as_slice())
            .map(|(&l, &h)| Interval::raw(l, h))
    }

    pub fn contains(&self, m: &Matrix) -> bool {
        m.shape() == self.shape() && self.intervals().zip(m.as_slice()).all(|(i, &x)| i.contains(x))
    }

    pub fn is_subset_of(&self, other: &IntervalMatrix) -> bool {
        self.shape() == other.shape()
            && self
                .intervals()
                .zip(other.intervals())
                .all(|(a, b)| a.is_subset_of(&b))
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    pub fn width(&self) -> Matrix {
        Matrix::from_fn(self.rows(), self.cols(), |r, c| self.hi.get(r, c) - self.lo.get(r, c))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<IntervalMatrix> {
        Ok(IntervalMatrix {
            lo: self.lo.slice_cols(start, len)?,
            hi: self.hi.slice_cols(start, len)?,
        })
    }
}

pub fn iv_matrix_add(a: &IntervalMatrix, b: &IntervalMatrix) -> Result<IntervalMatrix> {
    Ok(IntervalMatrix {
        lo: a.lo.zip_map(&b.lo, |x, y| x + y)?,
        hi: a.hi.zip_map(&b.hi, |x, y| x + y)?,
    })
}

pub fn iv_matrix_sub(a: &IntervalMatrix, b: &IntervalMatrix) -> Result<IntervalMatrix> {
    Ok(IntervalMatrix {
        lo: a.lo.zip_map(&b.hi, |x, y| x - y)?,
        hi: a.hi.zip_map(&b.lo, |x, y| x - y)?,
    })
}

/// `A · B` for `A: m×p`, `B: p×n`; entry `(i, j)` is the interval dot
/// product of row `i` of `A` with column `j` of `B`.
pub fn iv_matmul(a: &IntervalMatrix, b: &IntervalMatrix) -> Result<IntervalMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "interval product of {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let bt = IntervalMatrix {
        lo: b.lo.transpose(),
        hi: b.hi.transpose(),
    };
    iv_matmul_t(a, &bt)
}

/// `A · Bᵀ` for `A: m×p`, `B: n×p` (layer weights are stored `out × in`).
pub fn iv_matmul_t(a: &IntervalMatrix, b: &IntervalMatrix) -> Result<IntervalMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "interval product of {}x{} and transpose of {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let (m, n) = (a.rows(), b.rows());
    let mut lo = Matrix::zeros(m, n);
    let mut hi = Matrix::zeros(m, n);
    for i in 0..m {
        let (alo, ahi) = (a.lo.row(i), a.hi.row(i));
        for j in 0..n {
            let (l, h) = dot_kernel(alo, ahi, b.lo.row(j), b.hi.row(j));
            lo.set(i, j, l);
            hi.set(i, j, h);
        }
    }
    Ok(IntervalMatrix { lo, hi })
}

/// Adds a `1 × cols` interval row to every row.
pub fn iv_add_row(a: &IntervalMatrix, row: &IntervalMatrix) -> Result<IntervalMatrix> {
    Ok(IntervalMatrix {
        lo: a.lo.add_row(&row.lo)?,
        hi: a.hi.add_row(&row.hi)?,
    })
}

/// Elementwise interval product.
pub fn iv_hadamard(a: &IntervalMatrix, b: &IntervalMatrix) -> Result<IntervalMatrix> {
    a.lo.expect_shape(b.shape(), "interval hadamard product")?;
    let (rows, cols) = a.shape();
    let mut lo = Matrix::zeros(rows, cols);
    let mut hi = Matrix::zeros(rows, cols);
    for idx in 0..a.lo.len() {
        let p = products(
            a.lo.as_slice()[idx],
            a.hi.as_slice()[idx],
            b.lo.as_slice()[idx],
            b.hi.as_slice()[idx],
        );
        let (imin, imax) = extrema4(p);
        lo.as_mut_slice()[idx] = p[imin as usize];
        hi.as_mut_slice()[idx] = p[imax as usize];
    }
    Ok(IntervalMatrix { lo, hi })
}

/// Applies a monotone activation to both endpoints.
pub fn iv_activate(x: &IntervalMatrix, kind: Activation) -> IntervalMatrix {
    IntervalMatrix {
        lo: x.lo.map(|v| kind.apply(v)),
        hi: x.hi.map(|v| kind.apply(v)),
    }
}
