//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Tensors are rank 1 or 2, immutable once created by an op, and form a
//! DAG through `parents`. Calling [`Tensor::backward`] on a scalar walks
//! the graph in reverse creation order and accumulates gradients into
//! every tracked leaf. Graph nodes hold their backward pass as a closure
//! capturing the parent handles, so the graph is freed as soon as the
//! last output handle drops.
//!
//! Gradients on leaves accumulate across `backward` calls until reset;
//! intermediate nodes are scratch and reset at the start of each walk.

mod ops;

pub use ops::{Axis, KeyMask};

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

type BackwardFn = Box<dyn Fn(&[f64])>;

pub(crate) struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    tracked: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Shared handle to a node in the computation graph.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("tracked", &self.inner.tracked)
            .finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.len() > 2 {
        return Err(Error::contract(format!(
            "tensor rank must be 1 or 2, got shape {shape:?}"
        )));
    }
    let expect: usize = shape.iter().product();
    if expect == 0 {
        return Err(Error::contract(format!(
            "tensor dimensions must be positive, got shape {shape:?}"
        )));
    }
    if expect != len {
        return Err(Error::contract(format!(
            "shape {shape:?} wants {expect} elements, data has {len}"
        )));
    }
    Ok(())
}

pub(crate) fn check_finite(data: &[f64], op: &str) -> Result<()> {
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "{op} produced non-finite value {v} at flat index {i}"
            )));
        }
    }
    Ok(())
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        data: Vec<f64>,
        tracked: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        Tensor {
            inner: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                tracked,
                parents,
                backward,
            }),
        }
    }

    /// Creates an untracked constant. Fails on shape mismatch or
    /// non-finite values.
    pub fn constant(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        check_finite(&data, "constant")?;
        Ok(Tensor::build(shape.to_vec(), data, false, vec![], None))
    }

    /// Creates a tracked leaf that will receive gradients.
    pub fn parameter(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        check_finite(&data, "parameter")?;
        Ok(Tensor::build(shape.to_vec(), data, true, vec![], None))
    }

    /// Untracked scalar.
    pub fn scalar(v: f64) -> Result<Tensor> {
        Tensor::constant(&[1], vec![v])
    }

    /// Untracked all-zero tensor.
    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        Tensor::constant(shape, vec![0.0; len])
    }

    /// Builds a rank-2 constant from rows; every row must have the same
    /// length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::contract("from_rows requires at least one row"));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::contract(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Tensor::constant(&[rows.len(), cols], data)
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
        op: &str,
    ) -> Result<Tensor> {
        check_shape(&shape, data.len())?;
        check_finite(&data, op)?;
        let tracked = parents.iter().any(|p| p.inner.tracked);
        if tracked {
            Ok(Tensor::build(shape, data, true, parents, Some(backward)))
        } else {
            Ok(Tensor::build(shape, data, false, vec![], None))
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// (rows, cols) view: rank-1 tensors count as a single row.
    pub fn dims(&self) -> (usize, usize) {
        match self.inner.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("rank checked at construction"),
        }
    }

    pub fn is_tracked(&self) -> bool {
        self.inner.tracked
    }

    /// Borrows the underlying data.
    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    /// Clones the underlying data out.
    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(Error::contract(format!(
                "item() needs a single-element tensor, shape is {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data.borrow()[0])
    }

    /// Element at (row, col) under the `dims()` view.
    pub fn at(&self, row: usize, col: usize) -> Result<f64> {
        let (r, c) = self.dims();
        if row >= r || col >= c {
            return Err(Error::contract(format!(
                "index ({row},{col}) out of bounds for dims ({r},{c})"
            )));
        }
        Ok(self.inner.data.borrow()[row * c + col])
    }

    /// Current accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    /// Drops any accumulated gradient.
    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Overwrites the stored values in place. Used by the optimizer and
    /// by checkpoint loading; shape cannot change.
    pub fn set_data(&self, data: &[f64]) -> Result<()> {
        if data.len() != self.len() {
            return Err(Error::contract(format!(
                "set_data length {} does not match tensor of {} elements",
                data.len(),
                self.len()
            )));
        }
        check_finite(data, "set_data")?;
        self.inner.data.borrow_mut().copy_from_slice(data);
        Ok(())
    }

    /// Adds `delta` to one element in place. Used by finite-difference
    /// probing.
    pub fn nudge(&self, flat_index: usize, delta: f64) -> Result<()> {
        if flat_index >= self.len() {
            return Err(Error::contract(format!(
                "nudge index {flat_index} out of bounds for {} elements",
                self.len()
            )));
        }
        self.inner.data.borrow_mut()[flat_index] += delta;
        Ok(())
    }

    /// Overwrites one element in place.
    pub fn set_element(&self, flat_index: usize, value: f64) -> Result<()> {
        if flat_index >= self.len() {
            return Err(Error::contract(format!(
                "index {flat_index} out of bounds for {} elements",
                self.len()
            )));
        }
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "set_element with non-finite value {value}"
            )));
        }
        self.inner.data.borrow_mut()[flat_index] = value;
        Ok(())
    }

    pub(crate) fn add_grad(&self, contrib: &[f64]) {
        if !self.inner.tracked {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contrib.to_vec()),
        }
    }

    /// Runs reverse-mode differentiation from this scalar. Leaf
    /// gradients accumulate across calls; call [`Tensor::zero_grad`] on
    /// leaves (or `ParamStore::zero_grads`) between optimization steps.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::contract(format!(
                "backward starts from a scalar, shape is {:?}",
                self.shape()
            )));
        }
        if !self.inner.tracked {
            return Err(Error::contract(
                "backward on an untracked tensor: no parameters feed it",
            ));
        }
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.inner.tracked || !seen.insert(t.inner.id) {
                continue;
            }
            for p in &t.inner.parents {
                stack.push(p.clone());
            }
            order.push(t);
        }
        order.sort_by_key(|t| std::cmp::Reverse(t.inner.id));
        for t in &order {
            if t.inner.backward.is_some() {
                *t.inner.grad.borrow_mut() = None;
            }
        }
        self.add_grad(&[1.0]);
        for t in &order {
            let Some(back) = t.inner.backward.as_ref() else {
                continue;
            };
            let upstream = t.inner.grad.borrow().clone();
            if let Some(g) = upstream {
                back(&g);
            }
        }
        Ok(())
    }
}

/// Multiplies two row-major matrices without touching the graph.
pub(crate) fn matmul_raw(
    a: &[f64],
    (m, k): (usize, usize),
    b: &[f64],
    (k2, n): (usize, usize),
) -> Vec<f64> {
    debug_assert_eq!(k, k2);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// Transposes a row-major matrix without touching the graph.
pub(crate) fn transpose_raw(a: &[f64], (m, n): (usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_rejects_bad_shapes() {
        assert!(Tensor::constant(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::constant(&[0], vec![]).is_err());
        assert!(Tensor::constant(&[1, 2, 3], vec![0.0; 6]).is_err());
    }

    #[test]
    fn constant_rejects_non_finite() {
        assert!(Tensor::constant(&[2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::constant(&[2], vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn dims_treats_rank_one_as_row() {
        let t = Tensor::constant(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.dims(), (1, 4));
        let m = Tensor::constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.dims(), (2, 2));
        assert_eq!(m.at(1, 0).unwrap(), 3.0);
    }

    #[test]
    fn ids_are_strictly_increasing() {
        let a = Tensor::scalar(1.0).unwrap();
        let b = Tensor::scalar(2.0).unwrap();
        assert!(b.id() > a.id());
    }

    #[test]
    fn backward_requires_tracked_scalar() {
        let c = Tensor::scalar(3.0).unwrap();
        assert!(c.backward().is_err());
        let p = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
        assert!(p.backward().is_err());
    }

    #[test]
    fn gradients_accumulate_until_reset() {
        let p = Tensor::parameter(&[1], vec![3.0]).unwrap();
        let loss = p.square().unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![6.0]);
        loss.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![12.0]);
        p.zero_grad();
        assert!(p.grad().is_none());
    }

    #[test]
    fn matmul_raw_matches_hand_product() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let c = matmul_raw(&a, (2, 3), &b, (3, 2));
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transpose_raw_round_trips() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let t = transpose_raw(&a, (2, 3));
        assert_eq!(t, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let back = transpose_raw(&t, (3, 2));
        assert_eq!(back.as_slice(), a);
    }
}
