//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every node holds a [`Matrix`] value. Interval quantities are carried as a
//! pair of nodes ([`IvVar`]); the interval products record, per accumulated
//! term, which endpoint pair won the min (for the lower node) or max (for the
//! upper node), and the backward pass routes gradient only to that pair.

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::interval::{extrema4, products};
use crate::matrix::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Lower/upper endpoint nodes of an interval-valued tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IvVar {
    pub lo: Var,
    pub hi: Var,
}

impl IvVar {
    /// Degenerate interval `[x, x]`.
    pub fn crisp(x: Var) -> Self {
        IvVar { lo: x, hi: x }
    }

    pub fn is_crisp(&self) -> bool {
        self.lo == self.hi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Lower,
    Upper,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MatMulT(Var, Var),
    Activate(Var, Activation),
    Abs(Var),
    Scale(Var, f64),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    IvMatMulT {
        x: IvVar,
        w: IvVar,
        side: Side,
        sel: Vec<u8>,
    },
    IvMul {
        a: IvVar,
        b: IvVar,
        side: Side,
        sel: Vec<u8>,
    },
    Mean(Var),
    Mse {
        pred: Var,
        target: Matrix,
    },
    Rqrw {
        lo: Var,
        hi: Var,
        target: Matrix,
        alpha: f64,
        lambda: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Records a computation for one forward/backward pass. Nodes are appended in
/// evaluation order, so inputs always precede the nodes that consume them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn is_connected(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Input node: a parameter or a constant.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// `a + row` with `row` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(row))?;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// `x · wᵀ`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let v = self.value(x).matmul_t(self.value(w))?;
        Ok(self.push(v, Op::MatMulT(x, w)))
    }

    pub fn activate(&mut self, a: Var, kind: Activation) -> Var {
        let v = self.value(a).map(|x| kind.apply(x));
        self.push(v, Op::Activate(a, kind))
    }

    /// Elementwise absolute value; the derivative at 0 is taken as 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(a).slice_cols(start, len)?;
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Matrix::concat_cols(&refs)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Mean of all entries, as a `1 × 1` node.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = m.as_slice().iter().sum::<f64>() / m.len() as f64;
        self.push(Matrix::filled(1, 1, v), Op::Mean(a))
    }

    /// Mean squared error against a constant target, as a `1 × 1` node.
    pub fn mse(&mut self, pred: Var, target: &Matrix) -> Result<Var> {
        let p = self.value(pred);
        p.expect_shape(target.shape(), "mse target")?;
        let v = mse_value(p, target);
        Ok(self.push(
            Matrix::filled(1, 1, v),
            Op::Mse {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// Mean over all entries of `L_RQR(κ) + λ (hi − lo)² / 2` with
    /// `κ = (t − lo)(t − hi)`, as a `1 × 1` node.
    pub fn rqrw(&mut self, lo: Var, hi: Var, target: &Matrix, alpha: f64, lambda: f64) -> Result<Var> {
        let (l, h) = (self.value(lo), self.value(hi));
        l.expect_shape(h.shape(), "interval upper endpoints")?;
        l.expect_shape(target.shape(), "rqr-w target")?;
        let v = rqrw_value(l, h, target, alpha, lambda);
        Ok(self.push(
            Matrix::filled(1, 1, v),
            Op::Rqrw {
                lo,
                hi,
                target: target.clone(),
                alpha,
                lambda,
            },
        ))
    }

    /// Interval `x · wᵀ`. When `x` is crisp the product is still exact; the
    /// two coinciding endpoint pairs resolve by the lowest-index rule.
    pub fn iv_matmul_t(&mut self, x: IvVar, w: IvVar) -> Result<IvVar> {
        let (xlo, xhi) = (self.value(x.lo), self.value(x.hi));
        let (wlo, whi) = (self.value(w.lo), self.value(w.hi));
        xlo.expect_shape(xhi.shape(), "interval input")?;
        wlo.expect_shape(whi.shape(), "interval weight")?;
        if xlo.cols() != wlo.cols() {
            return Err(Error::Shape(format!(
                "interval product of {}x{} and transpose of {}x{}",
                xlo.rows(),
                xlo.cols(),
                wlo.rows(),
                wlo.cols()
            )));
        }
        let (lo, hi, sel_lo, sel_hi) = iv_matmul_t_forward(xlo, xhi, wlo, whi);
        let lo = self.push(
            lo,
            Op::IvMatMulT {
                x,
                w,
                side: Side::Lower,
                sel: sel_lo,
            },
        );
        let hi = self.push(
            hi,
            Op::IvMatMulT {
                x,
                w,
                side: Side::Upper,
                sel: sel_hi,
            },
        );
        Ok(IvVar { lo, hi })
    }

    /// Elementwise interval product.
    pub fn iv_mul(&mut self, a: IvVar, b: IvVar) -> Result<IvVar> {
        let (alo, ahi) = (self.value(a.lo), self.value(a.hi));
        let (blo, bhi) = (self.value(b.lo), self.value(b.hi));
        alo.expect_shape(ahi.shape(), "interval operand")?;
        alo.expect_shape(blo.shape(), "interval hadamard product")?;
        alo.expect_shape(bhi.shape(), "interval hadamard product")?;
        let (lo, hi, sel_lo, sel_hi) = iv_mul_forward(alo, ahi, blo, bhi);
        let lo = self.push(
            lo,
            Op::IvMul {
                a,
                b,
                side: Side::Lower,
                sel: sel_lo,
            },
        );
        let hi = self.push(
            hi,
            Op::IvMul {
                a,
                b,
                side: Side::Upper,
                sel: sel_hi,
            },
        );
        Ok(IvVar { lo, hi })
    }

    pub fn iv_add(&mut self, a: IvVar, b: IvVar) -> Result<IvVar> {
        Ok(IvVar {
            lo: self.add(a.lo, b.lo)?,
            hi: self.add(a.hi, b.hi)?,
        })
    }

    pub fn iv_add_row(&mut self, a: IvVar, row: IvVar) -> Result<IvVar> {
        Ok(IvVar {
            lo: self.add_row(a.lo, row.lo)?,
            hi: self.add_row(a.hi, row.hi)?,
        })
    }

    pub fn iv_activate(&mut self, a: IvVar, kind: Activation) -> IvVar {
        if a.is_crisp() {
            return IvVar::crisp(self.activate(a.lo, kind));
        }
        IvVar {
            lo: self.activate(a.lo, kind),
            hi: self.activate(a.hi, kind),
        }
    }

    pub fn iv_slice_cols(&mut self, a: IvVar, start: usize, len: usize) -> Result<IvVar> {
        if a.is_crisp() {
            return Ok(IvVar::crisp(self.slice_cols(a.lo, start, len)?));
        }
        Ok(IvVar {
            lo: self.slice_cols(a.lo, start, len)?,
            hi: self.slice_cols(a.hi, start, len)?,
        })
    }

    /// Reverse sweep from a `1 × 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got a {}x{} node",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, self.value(*a).shape(), |d| axpy(d, g, 1.0));
                accumulate(grads, *b, self.value(*b).shape(), |d| axpy(d, g, 1.0));
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, self.value(*a).shape(), |d| axpy(d, g, 1.0));
                accumulate(grads, *b, self.value(*b).shape(), |d| axpy(d, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, va.shape(), |d| {
                    for ((d, g), y) in d.as_mut_slice().iter_mut().zip(g.as_slice()).zip(vb.as_slice()) {
                        *d += g * y;
                    }
                });
                accumulate(grads, *b, vb.shape(), |d| {
                    for ((d, g), x) in d.as_mut_slice().iter_mut().zip(g.as_slice()).zip(va.as_slice()) {
                        *d += g * x;
                    }
                });
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, self.value(*a).shape(), |d| axpy(d, g, 1.0));
                accumulate(grads, *row, self.value(*row).shape(), |d| {
                    for r in 0..g.rows() {
                        for (d, gv) in d.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *d += gv;
                        }
                    }
                });
            }
            Op::MatMulT(x, w) => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                // out = x wᵀ: dx = g w, dw = gᵀ x
                accumulate(grads, *x, vx.shape(), |d| {
                    for b in 0..g.rows() {
                        let grow = g.row(b);
                        let drow = d.row_mut(b);
                        for (p, gv) in grow.iter().enumerate() {
                            if *gv == 0.0 {
                                continue;
                            }
                            for (dv, wv) in drow.iter_mut().zip(vw.row(p)) {
                                *dv += gv * wv;
                            }
                        }
                    }
                });
                accumulate(grads, *w, vw.shape(), |d| {
                    for b in 0..g.rows() {
                        let xrow = vx.row(b);
                        for (p, gv) in g.row(b).iter().enumerate() {
                            if *gv == 0.0 {
                                continue;
                            }
                            for (dv, xv) in d.row_mut(p).iter_mut().zip(xrow) {
                                *dv += gv * xv;
                            }
                        }
                    }
                });
            }
            Op::Activate(a, kind) => {
                let (vin, vout) = (self.value(*a), &node.value);
                accumulate(grads, *a, vin.shape(), |d| {
                    for i in 0..d.len() {
                        let x = vin.as_slice()[i];
                        let y = vout.as_slice()[i];
                        d.as_mut_slice()[i] += g.as_slice()[i] * kind.derivative(x, y);
                    }
                });
            }
            Op::Abs(a) => {
                let vin = self.value(*a);
                accumulate(grads, *a, vin.shape(), |d| {
                    for ((d, gv), x) in d.as_mut_slice().iter_mut().zip(g.as_slice()).zip(vin.as_slice()) {
                        *d += gv * abs_derivative(*x);
                    }
                });
            }
            Op::Scale(a, s) => {
                accumulate(grads, *a, self.value(*a).shape(), |d| axpy(d, g, *s));
            }
            Op::SliceCols(a, start) => {
                accumulate(grads, *a, self.value(*a).shape(), |d| {
                    for r in 0..g.rows() {
                        for (c, gv) in g.row(r).iter().enumerate() {
                            let cur = d.get(r, start + c);
                            d.set(r, start + c, cur + gv);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let shape = self.value(*p).shape();
                    accumulate(grads, *p, shape, |d| {
                        for r in 0..shape.0 {
                            for c in 0..shape.1 {
                                let cur = d.get(r, c);
                                d.set(r, c, cur + g.get(r, offset + c));
                            }
                        }
                    });
                    offset += shape.1;
                }
            }
            Op::IvMatMulT { x, w, side: _, sel } => {
                let xs = [self.value(x.lo), self.value(x.hi)];
                let ws = [self.value(w.lo), self.value(w.hi)];
                let (rows, outs, inner) = (g.rows(), g.cols(), xs[0].cols());
                // Gradient buffers for the four endpoint tensors, folded into
                // the tape afterwards (x.lo may equal x.hi).
                let mut dx = [Matrix::zeros(rows, inner), Matrix::zeros(rows, inner)];
                let mut dw = [Matrix::zeros(outs, inner), Matrix::zeros(outs, inner)];
                for b in 0..rows {
                    for p in 0..outs {
                        let gv = g.get(b, p);
                        if gv == 0.0 {
                            continue;
                        }
                        let base = (b * outs + p) * inner;
                        for m in 0..inner {
                            let s = sel[base + m];
                            let (ex, ew) = ((s >> 1) as usize, (s & 1) as usize);
                            let xv = xs[ex].get(b, m);
                            let wv = ws[ew].get(p, m);
                            let cur = dx[ex].get(b, m);
                            dx[ex].set(b, m, cur + gv * wv);
                            let cur = dw[ew].get(p, m);
                            dw[ew].set(p, m, cur + gv * xv);
                        }
                    }
                }
                let [dxl, dxh] = dx;
                let [dwl, dwh] = dw;
                accumulate(grads, x.lo, (rows, inner), |d| axpy(d, &dxl, 1.0));
                accumulate(grads, x.hi, (rows, inner), |d| axpy(d, &dxh, 1.0));
                accumulate(grads, w.lo, (outs, inner), |d| axpy(d, &dwl, 1.0));
                accumulate(grads, w.hi, (outs, inner), |d| axpy(d, &dwh, 1.0));
            }
            Op::IvMul { a, b, side: _, sel } => {
                let avals = [self.value(a.lo), self.value(a.hi)];
                let bvals = [self.value(b.lo), self.value(b.hi)];
                let shape = g.shape();
                let mut da = [Matrix::zeros(shape.0, shape.1), Matrix::zeros(shape.0, shape.1)];
                let mut db = [Matrix::zeros(shape.0, shape.1), Matrix::zeros(shape.0, shape.1)];
                for (i, gv) in g.as_slice().iter().enumerate() {
                    let s = sel[i];
                    let (ea, eb) = ((s >> 1) as usize, (s & 1) as usize);
                    da[ea].as_mut_slice()[i] += gv * bvals[eb].as_slice()[i];
                    db[eb].as_mut_slice()[i] += gv * avals[ea].as_slice()[i];
                }
                let [dal, dah] = da;
                let [dbl, dbh] = db;
                accumulate(grads, a.lo, shape, |d| axpy(d, &dal, 1.0));
                accumulate(grads, a.hi, shape, |d| axpy(d, &dah, 1.0));
                accumulate(grads, b.lo, shape, |d| axpy(d, &dbl, 1.0));
                accumulate(grads, b.hi, shape, |d| axpy(d, &dbh, 1.0));
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                let scale = g.get(0, 0) / v.len() as f64;
                accumulate(grads, *a, v.shape(), |d| {
                    for x in d.as_mut_slice() {
                        *x += scale;
                    }
                });
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let scale = g.get(0, 0) * 2.0 / p.len() as f64;
                accumulate(grads, *pred, p.shape(), |d| {
                    for ((d, pv), tv) in d.as_mut_slice().iter_mut().zip(p.as_slice()).zip(target.as_slice()) {
                        *d += scale * (pv - tv);
                    }
                });
            }
            Op::Rqrw {
                lo,
                hi,
                target,
                alpha,
                lambda,
            } => {
                let (l, h) = (self.value(*lo), self.value(*hi));
                let scale = g.get(0, 0) / l.len() as f64;
                let n = l.len();
                let mut dl = vec![0.0; n];
                let mut dh = vec![0.0; n];
                for i in 0..n {
                    let (lv, hv, t) = (l.as_slice()[i], h.as_slice()[i], target.as_slice()[i]);
                    let kappa = (t - lv) * (t - hv);
                    let slope = if kappa >= 0.0 { *alpha } else { alpha - 1.0 };
                    let width = hv - lv;
                    // dκ/dlo = −(t − hi), dκ/dhi = −(t − lo)
                    dl[i] = scale * (slope * -(t - hv) - lambda * width);
                    dh[i] = scale * (slope * -(t - lv) + lambda * width);
                }
                accumulate(grads, *lo, l.shape(), |d| {
                    for (d, v) in d.as_mut_slice().iter_mut().zip(&dl) {
                        *d += v;
                    }
                });
                accumulate(grads, *hi, h.shape(), |d| {
                    for (d, v) in d.as_mut_slice().iter_mut().zip(&dh) {
                        *d += v;
                    }
                });
            }
        }
    }

    /// Recomputes every node from the leaves using the recorded ops.
    pub fn replay(&self) -> Result<Vec<Matrix>> {
        let mut vals: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let v = match &node.op {
                Op::Leaf => node.value.clone(),
                Op::Add(a, b) => vals[a.0].zip_map(&vals[b.0], |x, y| x + y)?,
                Op::Sub(a, b) => vals[a.0].zip_map(&vals[b.0], |x, y| x - y)?,
                Op::Mul(a, b) => vals[a.0].zip_map(&vals[b.0], |x, y| x * y)?,
                Op::AddRow(a, r) => vals[a.0].add_row(&vals[r.0])?,
                Op::MatMulT(x, w) => vals[x.0].matmul_t(&vals[w.0])?,
                Op::Activate(a, k) => vals[a.0].map(|x| k.apply(x)),
                Op::Abs(a) => vals[a.0].map(f64::abs),
                Op::Scale(a, s) => vals[a.0].map(|x| x * s),
                Op::SliceCols(a, start) => vals[a.0].slice_cols(*start, node.value.cols())?,
                Op::ConcatCols(parts) => {
                    let refs: Vec<&Matrix> = parts.iter().map(|p| &vals[p.0]).collect();
                    Matrix::concat_cols(&refs)?
                }
                Op::IvMatMulT { x, w, side, .. } => {
                    let (lo, hi, _, _) =
                        iv_matmul_t_forward(&vals[x.lo.0], &vals[x.hi.0], &vals[w.lo.0], &vals[w.hi.0]);
                    if *side == Side::Lower { lo } else { hi }
                }
                Op::IvMul { a, b, side, .. } => {
                    let (lo, hi, _, _) =
                        iv_mul_forward(&vals[a.lo.0], &vals[a.hi.0], &vals[b.lo.0], &vals[b.hi.0]);
                    if *side == Side::Lower { lo } else { hi }
                }
                Op::Mean(a) => {
                    let m = &vals[a.0];
                    Matrix::filled(1, 1, m.as_slice().iter().sum::<f64>() / m.len() as f64)
                }
                Op::Mse { pred, target } => Matrix::filled(1, 1, mse_value(&vals[pred.0], target)),
                Op::Rqrw {
                    lo,
                    hi,
                    target,
                    alpha,
                    lambda,
                } => Matrix::filled(1, 1, rqrw_value(&vals[lo.0], &vals[hi.0], target, *alpha, *lambda)),
            };
            debug_assert_eq!(v.shape(), self.nodes[i].value.shape());
            vals.push(v);
        }
        Ok(vals)
    }

    /// Values recorded during the forward pass, in node order.
    pub fn recorded_values(&self) -> impl Iterator<Item = &Matrix> {
        self.nodes.iter().map(|n| &n.value)
    }
}

#[inline]
fn abs_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize), f: impl FnOnce(&mut Matrix)) {
    let slot = &mut grads[v.0];
    let d = slot.get_or_insert_with(|| Matrix::zeros(shape.0, shape.1));
    f(d);
}

fn axpy(d: &mut Matrix, g: &Matrix, s: f64) {
    for (d, g) in d.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *d += s * g;
    }
}

fn mse_value(p: &Matrix, t: &Matrix) -> f64 {
    let mut acc = 0.0;
    for (a, b) in p.as_slice().iter().zip(t.as_slice()) {
        let e = a - b;
        acc += e * e;
    }
    acc / p.len() as f64
}

fn rqrw_value(l: &Matrix, h: &Matrix, t: &Matrix, alpha: f64, lambda: f64) -> f64 {
    crate::uq::rqrw_mean(l.as_slice(), h.as_slice(), t.as_slice(), alpha, lambda)
}

type IvForward = (Matrix, Matrix, Vec<u8>, Vec<u8>);

fn iv_matmul_t_forward(xlo: &Matrix, xhi: &Matrix, wlo: &Matrix, whi: &Matrix) -> IvForward {
    let (rows, inner, outs) = (xlo.rows(), xlo.cols(), wlo.rows());
    let mut lo = Matrix::zeros(rows, outs);
    let mut hi = Matrix::zeros(rows, outs);
    let mut sel_lo = vec![0u8; rows * outs * inner];
    let mut sel_hi = vec![0u8; rows * outs * inner];
    let crisp_x = xlo == xhi;
    for b in 0..rows {
        let (xl, xh) = (xlo.row(b), xhi.row(b));
        for p in 0..outs {
            let (wl, wh) = (wlo.row(p), whi.row(p));
            let base = (b * outs + p) * inner;
            let mut acc_lo = 0.0;
            let mut acc_hi = 0.0;
            if crisp_x {
                // Products reduce to {x·wlo, x·whi}; indices 0 and 1 are the
                // lowest-index representatives of the generic rule.
                for m in 0..inner {
                    let a = xl[m] * wl[m];
                    let c = xl[m] * wh[m];
                    if c < a {
                        acc_lo += c;
                        sel_lo[base + m] = 1;
                        acc_hi += a;
                    } else {
                        acc_lo += a;
                        acc_hi += if c > a {
                            sel_hi[base + m] = 1;
                            c
                        } else {
                            a
                        };
                    }
                }
            } else {
                for m in 0..inner {
                    let s = products(xl[m], xh[m], wl[m], wh[m]);
                    let (imin, imax) = extrema4(s);
                    acc_lo += s[imin as usize];
                    acc_hi += s[imax as usize];
                    sel_lo[base + m] = imin;
                    sel_hi[base + m] = imax;
                }
            }
            lo.set(b, p, acc_lo);
            hi.set(b, p, acc_hi);
        }
    }
    (lo, hi, sel_lo, sel_hi)
}

fn iv_mul_forward(alo: &Matrix, ahi: &Matrix, blo: &Matrix, bhi: &Matrix) -> IvForward {
    let n = alo.len();
    let (rows, cols) = alo.shape();
    let mut lo = Matrix::zeros(rows, cols);
    let mut hi = Matrix::zeros(rows, cols);
    let mut sel_lo = vec![0u8; n];
    let mut sel_hi = vec![0u8; n];
    for i in 0..n {
        let s = products(alo.as_slice()[i], ahi.as_slice()[i], blo.as_slice()[i], bhi.as_slice()[i]);
        let (imin, imax) = extrema4(s);
        lo.as_mut_slice()[i] = s[imin as usize];
        hi.as_mut_slice()[i] = s[imax as usize];
        sel_lo[i] = imin;
        sel_hi[i] = imax;
    }
    (lo, hi, sel_lo, sel_hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivative() {
        let mut t = Tape::new();
        let w = t.leaf(Matrix::filled(1, 1, 5.0));
        let three = t.leaf(Matrix::filled(1, 1, 3.0));
        let d = t.sub(w, three).unwrap();
        let sq = t.mul(d, d).unwrap();
        let g = t.backward(sq).unwrap();
        assert_eq!(g.get(w).get(0, 0), 4.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let w = t.leaf(Matrix::zeros(2, 1));
        assert!(matches!(t.backward(w), Err(Error::Shape(_))));
    }

    #[test]
    fn disconnected_parameter_gets_zero_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::filled(2, 2, 1.0));
        let unused = t.leaf(Matrix::filled(3, 1, 1.0));
        let loss = t.mean(a);
        let g = t.backward(loss).unwrap();
        assert!(!g.is_connected(unused));
        assert_eq!(g.get(unused), Matrix::zeros(3, 1));
    }

    #[test]
    fn upper_endpoint_loss_leaves_lower_radius_untouched() {
        // θ̃ = [θ − |r_lo|, θ + |r_hi|]; loss = mean(hi)
        let mut t = Tape::new();
        let theta = t.leaf(Matrix::filled(1, 1, 1.0));
        let r_lo = t.leaf(Matrix::filled(1, 1, 0.3));
        let r_hi = t.leaf(Matrix::filled(1, 1, -0.2));
        let a_lo = t.abs(r_lo);
        let a_hi = t.abs(r_hi);
        let _lo = t.sub(theta, a_lo).unwrap();
        let hi = t.add(theta, a_hi).unwrap();
        let loss = t.mean(hi);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(r_lo).get(0, 0), 0.0);
        assert_eq!(g.get(r_hi).get(0, 0), -1.0);
    }

    #[test]
    fn abs_gradient_is_zero_at_zero() {
        let mut t = Tape::new();
        let r = t.leaf(Matrix::zeros(1, 1));
        let a = t.abs(r);
        let loss = t.mean(a);
        assert_eq!(t.backward(loss).unwrap().get(r).get(0, 0), 0.0);
    }

    #[test]
    fn iv_mul_tie_routes_to_lowest_pair() {
        // [0,0]·[−1,1]: every product is 0, pair (lo, lo) is selected.
        let mut t = Tape::new();
        let alo = t.leaf(Matrix::zeros(1, 1));
        let ahi = t.leaf(Matrix::zeros(1, 1));
        let blo = t.leaf(Matrix::filled(1, 1, -1.0));
        let bhi = t.leaf(Matrix::filled(1, 1, 1.0));
        let p = t.iv_mul(IvVar { lo: alo, hi: ahi }, IvVar { lo: blo, hi: bhi }).unwrap();
        let loss = t.mean(p.lo);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(alo).get(0, 0), -1.0);
        assert_eq!(g.get(ahi).get(0, 0), 0.0);
        assert_eq!(g.get(blo).get(0, 0), 0.0);
        assert_eq!(g.get(bhi).get(0, 0), 0.0);
    }

    #[test]
    fn crisp_fast_path_matches_generic_kernel() {
        let x = Matrix::from_vec(2, 3, vec![0.5, -1.0, 0.0, 2.0, 0.25, -0.75]).unwrap();
        let wl = Matrix::from_vec(2, 3, vec![-1.0, 0.5, 0.2, 0.3, -0.4, 1.0]).unwrap();
        let wh = wl.map(|v| v + 0.5);
        let (lo_a, hi_a, sl_a, sh_a) = iv_matmul_t_forward(&x, &x, &wl, &wh);
        // Reference: the generic four-product rule evaluated by hand.
        let x2 = x.clone();
        let mut generic_lo = Matrix::zeros(2, 2);
        let mut generic_hi = Matrix::zeros(2, 2);
        let mut gsl = vec![];
        let mut gsh = vec![];
        for b in 0..2 {
            for p in 0..2 {
                let (mut l, mut h) = (0.0, 0.0);
                for m in 0..3 {
                    let s = products(x2.get(b, m), x2.get(b, m), wl.get(p, m), wh.get(p, m));
                    let (i, j) = extrema4(s);
                    l += s[i as usize];
                    h += s[j as usize];
                    gsl.push(i);
                    gsh.push(j);
                }
                generic_lo.set(b, p, l);
                generic_hi.set(b, p, h);
            }
        }
        assert_eq!(lo_a, generic_lo);
        assert_eq!(hi_a, generic_hi);
        assert_eq!(sl_a, gsl);
        assert_eq!(sh_a, gsh);
    }

    #[test]
    fn replay_reproduces_recorded_values() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_vec(2, 2, vec![0.1, -0.2, 0.3, 0.4]).unwrap());
        let w = t.leaf(Matrix::from_vec(3, 2, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap());
        let b = t.leaf(Matrix::row_vector(&[0.1, 0.2, 0.3]));
        let z = t.matmul_t(x, w).unwrap();
        let z = t.add_row(z, b).unwrap();
        let a = t.activate(z, Activation::Tanh);
        let s = t.slice_cols(a, 1, 2).unwrap();
        let c = t.concat_cols(&[s, x]).unwrap();
        let loss = t.mean(c);
        let replayed = t.replay().unwrap();
        for (r, v) in replayed.iter().zip(t.recorded_values()) {
            assert_eq!(r, v);
        }
        assert!(t.backward(loss).is_ok());
    }
}
