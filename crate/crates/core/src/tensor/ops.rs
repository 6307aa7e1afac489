//! Differentiable operations on [`Tensor`].
//!
//! Every constructor validates shapes, computes the forward value, and
//! registers a backward closure. Reductions and matrix products always
//! accumulate in ascending index order so results are reproducible to
//! the bit across runs.

use std::sync::Once;

use super::{matmul_raw, transpose_raw, BackwardFn, Tensor};
use crate::error::{Error, Result};

/// Normalization axis for [`Tensor::softmax`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Normalize along each row.
    Row,
    /// Normalize along each column.
    Col,
}

/// Key visibility mask for attention. `true` means the key participates;
/// a single-row mask broadcasts over all query rows.
#[derive(Clone, Debug)]
pub struct KeyMask {
    rows: usize,
    cols: usize,
    visible: Vec<bool>,
}

impl KeyMask {
    pub fn new(rows: usize, cols: usize, visible: Vec<bool>) -> Result<KeyMask> {
        if rows == 0 || cols == 0 {
            return Err(Error::contract("mask dimensions must be positive"));
        }
        if visible.len() != rows * cols {
            return Err(Error::contract(format!(
                "mask wants {} flags for {rows}x{cols}, got {}",
                rows * cols,
                visible.len()
            )));
        }
        Ok(KeyMask {
            rows,
            cols,
            visible,
        })
    }

    /// Mask that hides nothing.
    pub fn all_visible(rows: usize, cols: usize) -> KeyMask {
        KeyMask {
            rows,
            cols,
            visible: vec![true; rows * cols],
        }
    }

    /// Single-row mask, broadcast over every query.
    pub fn from_row(visible: Vec<bool>) -> Result<KeyMask> {
        let cols = visible.len();
        KeyMask::new(1, cols, visible)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_visible(&self, row: usize, col: usize) -> bool {
        let r = if self.rows == 1 { 0 } else { row };
        self.visible[r * self.cols + col]
    }
}

static MASK_FALLBACK_WARNED: Once = Once::new();

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Bc {
    None,
    Scalar,
    Row,
    Col,
}

fn classify(a: (usize, usize), b: (usize, usize)) -> Result<(Bc, Bc, (usize, usize))> {
    if a == b {
        return Ok((Bc::None, Bc::None, a));
    }
    if b == (1, 1) {
        return Ok((Bc::None, Bc::Scalar, a));
    }
    if a == (1, 1) {
        return Ok((Bc::Scalar, Bc::None, b));
    }
    if b.0 == 1 && b.1 == a.1 {
        return Ok((Bc::None, Bc::Row, a));
    }
    if b.1 == 1 && b.0 == a.0 {
        return Ok((Bc::None, Bc::Col, a));
    }
    if a.0 == 1 && a.1 == b.1 {
        return Ok((Bc::Row, Bc::None, b));
    }
    if a.1 == 1 && a.0 == b.0 {
        return Ok((Bc::Col, Bc::None, b));
    }
    Err(Error::contract(format!(
        "shapes {a:?} and {b:?} neither match nor broadcast"
    )))
}

fn expand(data: &[f64], bc: Bc, (r, c): (usize, usize)) -> Vec<f64> {
    match bc {
        Bc::None => data.to_vec(),
        Bc::Scalar => vec![data[0]; r * c],
        Bc::Row => {
            let mut out = Vec::with_capacity(r * c);
            for _ in 0..r {
                out.extend_from_slice(data);
            }
            out
        }
        Bc::Col => {
            debug_assert_eq!(data.len(), r);
            let mut out = Vec::with_capacity(r * c);
            for &value in data {
                for _ in 0..c {
                    out.push(value);
                }
            }
            out
        }
    }
}

fn reduce(g: &[f64], bc: Bc, (r, c): (usize, usize)) -> Vec<f64> {
    match bc {
        Bc::None => g.to_vec(),
        Bc::Scalar => vec![g.iter().sum()],
        Bc::Row => {
            let mut out = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    out[j] += g[i * c + j];
                }
            }
            out
        }
        Bc::Col => {
            let mut out = vec![0.0; r];
            for i in 0..r {
                for j in 0..c {
                    out[i] += g[i * c + j];
                }
            }
            out
        }
    }
}

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

fn binary(a: &Tensor, b: &Tensor, kind: BinKind) -> Result<Tensor> {
    let (bca, bcb, full) = classify(a.dims(), b.dims())?;
    let fa = expand(&a.data(), bca, full);
    let fb = expand(&b.data(), bcb, full);
    let data: Vec<f64> = match kind {
        BinKind::Add => fa.iter().zip(&fb).map(|(x, y)| x + y).collect(),
        BinKind::Sub => fa.iter().zip(&fb).map(|(x, y)| x - y).collect(),
        BinKind::Mul => fa.iter().zip(&fb).map(|(x, y)| x * y).collect(),
    };
    let shape = if bca == Bc::None {
        a.shape().to_vec()
    } else {
        b.shape().to_vec()
    };
    let (pa, pb) = (a.clone(), b.clone());
    let back: BackwardFn = match kind {
        BinKind::Add => Box::new(move |g| {
            pa.add_grad(&reduce(g, bca, full));
            pb.add_grad(&reduce(g, bcb, full));
        }),
        BinKind::Sub => Box::new(move |g| {
            pa.add_grad(&reduce(g, bca, full));
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            pb.add_grad(&reduce(&neg, bcb, full));
        }),
        BinKind::Mul => Box::new(move |g| {
            if pa.is_tracked() {
                let da: Vec<f64> = g.iter().zip(&fb).map(|(gi, y)| gi * y).collect();
                pa.add_grad(&reduce(&da, bca, full));
            }
            if pb.is_tracked() {
                let db: Vec<f64> = g.iter().zip(&fa).map(|(gi, x)| gi * x).collect();
                pb.add_grad(&reduce(&db, bcb, full));
            }
        }),
    };
    let name = match kind {
        BinKind::Add => "add",
        BinKind::Sub => "sub",
        BinKind::Mul => "mul",
    };
    Tensor::from_op(shape, data, vec![a.clone(), b.clone()], back, name)
}

impl Tensor {
    /// Elementwise sum; the smaller side may be a scalar, a single row,
    /// or a single column of the larger.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinKind::Add)
    }

    /// Elementwise difference with the same broadcasting as [`Tensor::add`].
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinKind::Sub)
    }

    /// Elementwise product with the same broadcasting as [`Tensor::add`].
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinKind::Mul)
    }

    /// Elementwise `mul * x + add`.
    pub fn affine(&self, mul: f64, add: f64) -> Result<Tensor> {
        if !mul.is_finite() || !add.is_finite() {
            return Err(Error::contract("affine coefficients must be finite"));
        }
        let data: Vec<f64> = self.data().iter().map(|v| mul * v + add).collect();
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let dx: Vec<f64> = g.iter().map(|gi| mul * gi).collect();
                p.add_grad(&dx);
            }),
            "affine",
        )
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        self.affine(factor, 0.0)
    }

    pub fn add_scalar(&self, value: f64) -> Result<Tensor> {
        self.affine(1.0, value)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.affine(-1.0, 0.0)
    }

    /// `1 - x`, the complement used by gating.
    pub fn one_minus(&self) -> Result<Tensor> {
        self.affine(-1.0, 1.0)
    }

    /// Elementwise square.
    pub fn square(&self) -> Result<Tensor> {
        let x = self.to_vec();
        let data: Vec<f64> = x.iter().map(|v| v * v).collect();
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let dx: Vec<f64> = g.iter().zip(&x).map(|(gi, xi)| 2.0 * xi * gi).collect();
                p.add_grad(&dx);
            }),
            "square",
        )
    }

    /// Elementwise max(0, x).
    pub fn relu(&self) -> Result<Tensor> {
        let x = self.to_vec();
        let data: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(&x)
                    .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                    .collect();
                p.add_grad(&dx);
            }),
            "relu",
        )
    }

    /// Elementwise logistic function, computed in the overflow-safe
    /// branch form.
    pub fn sigmoid(&self) -> Result<Tensor> {
        let data: Vec<f64> = self
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let y = data.clone();
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(&y)
                    .map(|(gi, yi)| gi * yi * (1.0 - yi))
                    .collect();
                p.add_grad(&dx);
            }),
            "sigmoid",
        )
    }

    /// Elementwise hyperbolic tangent.
    pub fn tanh_act(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| v.tanh()).collect();
        let y = data.clone();
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(&y)
                    .map(|(gi, yi)| gi * (1.0 - yi * yi))
                    .collect();
                p.add_grad(&dx);
            }),
            "tanh",
        )
    }

    /// Matrix product; rank-1 operands count as single rows.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims();
        let (k2, n) = other.dims();
        if k != k2 {
            return Err(Error::contract(format!(
                "matmul inner dims differ: ({m},{k}) x ({k2},{n})"
            )));
        }
        let a = self.to_vec();
        let b = other.to_vec();
        let data = matmul_raw(&a, (m, k), &b, (k, n));
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                if pa.is_tracked() {
                    let bt = transpose_raw(&b, (k, n));
                    pa.add_grad(&matmul_raw(g, (m, n), &bt, (n, k)));
                }
                if pb.is_tracked() {
                    let at = transpose_raw(&a, (m, k));
                    pb.add_grad(&matmul_raw(&at, (k, m), g, (m, n)));
                }
            }),
            "matmul",
        )
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims();
        let data = transpose_raw(&self.to_vec(), (m, n));
        let p = self.clone();
        Tensor::from_op(
            vec![n, m],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                p.add_grad(&transpose_raw(g, (n, m)));
            }),
            "transpose",
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&self) -> Result<Tensor> {
        let s: f64 = self.data().iter().sum();
        let len = self.len();
        let p = self.clone();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g| {
                p.add_grad(&vec![g[0]; len]);
            }),
            "sum_all",
        )
    }

    /// Softmax along the chosen axis, shifted by the slice maximum for
    /// overflow safety.
    pub fn softmax(&self, axis: Axis) -> Result<Tensor> {
        match axis {
            Axis::Row => self.softmax_rows(),
            Axis::Col => self.transpose()?.softmax_rows()?.transpose(),
        }
    }

    fn softmax_rows(&self) -> Result<Tensor> {
        let (r, c) = self.dims();
        let x = self.to_vec();
        let mut y = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                y[i * c + j] = e;
                s += e;
            }
            for j in 0..c {
                y[i * c + j] /= s;
            }
        }
        let yc = y.clone();
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let mut dot = 0.0;
                    for j in 0..c {
                        dot += g[i * c + j] * yc[i * c + j];
                    }
                    for j in 0..c {
                        dx[i * c + j] = yc[i * c + j] * (g[i * c + j] - dot);
                    }
                }
                p.add_grad(&dx);
            }),
            "softmax",
        )
    }

    /// Row softmax that assigns exactly zero weight to hidden keys. A
    /// row with every key hidden falls back to uniform weights over all
    /// keys and passes no gradient; that fallback is logged once per
    /// process.
    pub fn masked_softmax_rows(&self, mask: &KeyMask) -> Result<Tensor> {
        let (r, c) = self.dims();
        if mask.cols() != c || (mask.rows() != r && mask.rows() != 1) {
            return Err(Error::contract(format!(
                "mask {}x{} does not fit logits {r}x{c}",
                mask.rows(),
                mask.cols()
            )));
        }
        let x = self.to_vec();
        let mut y = vec![0.0; r * c];
        let mut fallback = vec![false; r];
        for i in 0..r {
            let mut m = f64::NEG_INFINITY;
            for j in 0..c {
                if mask.is_visible(i, j) {
                    m = m.max(x[i * c + j]);
                }
            }
            if m == f64::NEG_INFINITY {
                fallback[i] = true;
                MASK_FALLBACK_WARNED.call_once(|| {
                    log::warn!(
                        "attention row with no visible keys; using uniform weights"
                    );
                });
                for j in 0..c {
                    y[i * c + j] = 1.0 / c as f64;
                }
                continue;
            }
            let mut s = 0.0;
            for j in 0..c {
                if mask.is_visible(i, j) {
                    let e = (x[i * c + j] - m).exp();
                    y[i * c + j] = e;
                    s += e;
                }
            }
            for j in 0..c {
                if mask.is_visible(i, j) {
                    y[i * c + j] /= s;
                }
            }
        }
        let yc = y.clone();
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    if fallback[i] {
                        continue;
                    }
                    let mut dot = 0.0;
                    for j in 0..c {
                        dot += g[i * c + j] * yc[i * c + j];
                    }
                    for j in 0..c {
                        dx[i * c + j] = yc[i * c + j] * (g[i * c + j] - dot);
                    }
                }
                p.add_grad(&dx);
            }),
            "masked_softmax",
        )
    }

    /// Log-probability of `target` under a masked softmax over a single
    /// row of logits. Numerically stable form of `log(softmax(x)[t])`;
    /// the gradient is `indicator(target) - p` on visible entries.
    pub fn masked_log_softmax_at(&self, visible: &[bool], target: usize) -> Result<Tensor> {
        let (r, c) = self.dims();
        if r != 1 {
            return Err(Error::contract(format!(
                "log softmax expects a single row of logits, got {r} rows"
            )));
        }
        if visible.len() != c {
            return Err(Error::contract(format!(
                "visibility has {} flags for {c} logits",
                visible.len()
            )));
        }
        if target >= c {
            return Err(Error::contract(format!(
                "target {target} out of range for {c} logits"
            )));
        }
        if !visible[target] {
            return Err(Error::contract(format!(
                "target {target} is masked out"
            )));
        }
        let x = self.to_vec();
        let mut m = f64::NEG_INFINITY;
        for j in 0..c {
            if visible[j] {
                m = m.max(x[j]);
            }
        }
        let mut s = 0.0;
        let mut p_vec = vec![0.0; c];
        for j in 0..c {
            if visible[j] {
                let e = (x[j] - m).exp();
                p_vec[j] = e;
                s += e;
            }
        }
        for pj in p_vec.iter_mut() {
            *pj /= s;
        }
        let out = x[target] - m - s.ln();
        let vis = visible.to_vec();
        let p = self.clone();
        Tensor::from_op(
            vec![1],
            vec![out],
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; c];
                for j in 0..c {
                    if vis[j] {
                        let ind = if j == target { 1.0 } else { 0.0 };
                        dx[j] = g[0] * (ind - p_vec[j]);
                    }
                }
                p.add_grad(&dx);
            }),
            "masked_log_softmax_at",
        )
    }

    /// Per-row layer normalization with learned gain and bias. Variance
    /// is the population variance; `eps` keeps the denominator positive.
    pub fn layernorm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let (r, c) = self.dims();
        if gain.len() != c || bias.len() != c {
            return Err(Error::contract(format!(
                "layernorm over width {c} needs gain/bias of that length, got {}/{}",
                gain.len(),
                bias.len()
            )));
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::contract("layernorm eps must be finite and >= 0"));
        }
        let x = self.to_vec();
        let gv = gain.to_vec();
        let bv = bias.to_vec();
        let mut y = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut svec = vec![0.0; r];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mu: f64 = row.iter().sum::<f64>() / c as f64;
            let var: f64 = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let s = (var + eps).sqrt();
            svec[i] = s;
            for j in 0..c {
                let xh = (row[j] - mu) / s;
                xhat[i * c + j] = xh;
                y[i * c + j] = gv[j] * xh + bv[j];
            }
        }
        let (px, pg, pb) = (self.clone(), gain.clone(), bias.clone());
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |g| {
                if px.is_tracked() {
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        let mut mh = 0.0;
                        let mut mhx = 0.0;
                        for j in 0..c {
                            let h = gv[j] * g[i * c + j];
                            mh += h;
                            mhx += h * xhat[i * c + j];
                        }
                        mh /= c as f64;
                        mhx /= c as f64;
                        for j in 0..c {
                            let h = gv[j] * g[i * c + j];
                            dx[i * c + j] = (h - mh - xhat[i * c + j] * mhx) / svec[i];
                        }
                    }
                    px.add_grad(&dx);
                }
                if pg.is_tracked() {
                    let mut dg = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            dg[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                    pg.add_grad(&dg);
                }
                if pb.is_tracked() {
                    let mut db = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += g[i * c + j];
                        }
                    }
                    pb.add_grad(&db);
                }
            }),
            "layernorm",
        )
    }

    /// Copies the selected rows into a new tensor; gradient scatters
    /// back by addition, so repeated indices accumulate.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (r, c) = self.dims();
        if indices.is_empty() {
            return Err(Error::contract("gather_rows needs at least one index"));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::contract(format!(
                "row index {bad} out of range for {r} rows"
            )));
        }
        let x = self.data();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(&x[i * c..(i + 1) * c]);
        }
        drop(x);
        let idx = indices.to_vec();
        let p = self.clone();
        Tensor::from_op(
            vec![indices.len(), c],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; r * c];
                for (pos, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        dx[i * c + j] += g[pos * c + j];
                    }
                }
                p.add_grad(&dx);
            }),
            "gather_rows",
        )
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let (r, _) = self.dims();
        if start >= end || end > r {
            return Err(Error::contract(format!(
                "row slice {start}..{end} invalid for {r} rows"
            )));
        }
        let indices: Vec<usize> = (start..end).collect();
        self.gather_rows(&indices)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (r, c) = self.dims();
        if start >= end || end > c {
            return Err(Error::contract(format!(
                "column slice {start}..{end} invalid for {c} columns"
            )));
        }
        let x = self.data();
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&x[i * c + start..i * c + end]);
        }
        drop(x);
        let p = self.clone();
        Tensor::from_op(
            vec![r, w],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                p.add_grad(&dx);
            }),
            "slice_cols",
        )
    }

    /// Stacks tensors vertically; all parts must share a column count.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::contract("concat_rows needs at least one part"));
        }
        let (_, c) = parts[0].dims();
        let mut rows = 0;
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for (i, t) in parts.iter().enumerate() {
            let (ri, ci) = t.dims();
            if ci != c {
                return Err(Error::contract(format!(
                    "part {i} has {ci} columns, expected {c}"
                )));
            }
            data.extend_from_slice(&t.data());
            rows += ri;
            row_counts.push(ri);
        }
        let parents: Vec<Tensor> = parts.iter().map(|t| (*t).clone()).collect();
        let back_parents = parents.clone();
        Tensor::from_op(
            vec![rows, c],
            data,
            parents,
            Box::new(move |g| {
                let mut offset = 0;
                for (t, &ri) in back_parents.iter().zip(&row_counts) {
                    t.add_grad(&g[offset * c..(offset + ri) * c]);
                    offset += ri;
                }
            }),
            "concat_rows",
        )
    }

    /// Stacks tensors horizontally; all parts must share a row count.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols needs at least one part"));
        }
        let (r, _) = parts[0].dims();
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for (i, t) in parts.iter().enumerate() {
            let (ri, ci) = t.dims();
            if ri != r {
                return Err(Error::contract(format!(
                    "part {i} has {ri} rows, expected {r}"
                )));
            }
            widths.push(ci);
            total += ci;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for t in parts {
                let (_, ci) = t.dims();
                let d = t.data();
                data.extend_from_slice(&d[i * ci..(i + 1) * ci]);
            }
        }
        let parents: Vec<Tensor> = parts.iter().map(|t| (*t).clone()).collect();
        let back_parents = parents.clone();
        Tensor::from_op(
            vec![r, total],
            data,
            parents,
            Box::new(move |g| {
                let mut offset = 0;
                for (t, &ci) in back_parents.iter().zip(&widths) {
                    let mut dt = vec![0.0; r * ci];
                    for i in 0..r {
                        dt[i * ci..(i + 1) * ci]
                            .copy_from_slice(&g[i * total + offset..i * total + offset + ci]);
                    }
                    t.add_grad(&dt);
                    offset += ci;
                }
            }),
            "concat_cols",
        )
    }

    /// Means over fixed-size row groups, dividing by the per-group live
    /// count instead of the group size. A group with count zero yields a
    /// zero row and passes no gradient.
    pub fn group_mean_rows(&self, group_size: usize, counts: &[usize]) -> Result<Tensor> {
        let (r, c) = self.dims();
        if group_size == 0 {
            return Err(Error::contract("group size must be positive"));
        }
        let groups = counts.len();
        if groups * group_size != r {
            return Err(Error::contract(format!(
                "{groups} groups of {group_size} rows want {} rows, tensor has {r}",
                groups * group_size
            )));
        }
        if let Some(bad) = counts.iter().find(|&&n| n > group_size) {
            return Err(Error::contract(format!(
                "group count {bad} exceeds group size {group_size}"
            )));
        }
        let x = self.data();
        let mut data = vec![0.0; groups * c];
        for (gidx, &cnt) in counts.iter().enumerate() {
            if cnt == 0 {
                continue;
            }
            for j in 0..c {
                let mut acc = 0.0;
                for k in 0..cnt {
                    acc += x[(gidx * group_size + k) * c + j];
                }
                data[gidx * c + j] = acc / cnt as f64;
            }
        }
        drop(x);
        let cnts = counts.to_vec();
        let p = self.clone();
        Tensor::from_op(
            vec![groups, c],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; r * c];
                for (gidx, &cnt) in cnts.iter().enumerate() {
                    if cnt == 0 {
                        continue;
                    }
                    let inv = 1.0 / cnt as f64;
                    for k in 0..cnt {
                        for j in 0..c {
                            dx[(gidx * group_size + k) * c + j] += g[gidx * c + j] * inv;
                        }
                    }
                }
                p.add_grad(&dx);
            }),
            "group_mean_rows",
        )
    }
}
