use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A minibatch of transitions, one per row. Rewards are never part of a
/// batch; they are recomputed from the current representation when needed.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch<T> {
    pub s: Array2<T>,
    pub a: Array2<T>,
    pub s_next: Array2<T>,
    pub z: Array2<T>,
}

impl<T: Scalar> TransitionBatch<T> {
    pub fn new(s: Array2<T>, a: Array2<T>, s_next: Array2<T>, z: Array2<T>) -> Result<Self> {
        let n = s.nrows();
        if a.nrows() != n || s_next.nrows() != n || z.nrows() != n {
            return Err(Error::Shape("batch components have different row counts".into()));
        }
        if s.ncols() != s_next.ncols() {
            return Err(Error::Shape("s and s_next widths differ".into()));
        }
        Ok(TransitionBatch { s, a, s_next, z })
    }

    /// Batch without actions, for representation-only computations.
    pub fn without_actions(s: Array2<T>, s_next: Array2<T>, z: Array2<T>) -> Result<Self> {
        let n = s.nrows();
        Self::new(s, Array2::zeros((n, 0)), s_next, z)
    }

    pub fn len(&self) -> usize {
        self.s.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.s.nrows() == 0
    }

    pub fn obs_dim(&self) -> usize {
        self.s.ncols()
    }

    pub fn skill_dim(&self) -> usize {
        self.z.ncols()
    }
}

/// Row-wise concatenation of several blocks with equal row counts.
pub fn hcat<T: Scalar>(blocks: &[ArrayView2<T>]) -> Result<Array2<T>> {
    ndarray::concatenate(ndarray::Axis(1), blocks).map_err(|e| Error::Shape(e.to_string()))
}

/// Stacks `top` above `bottom`.
pub fn vcat<T: Scalar>(top: ArrayView2<T>, bottom: ArrayView2<T>) -> Result<Array2<T>> {
    ndarray::concatenate(ndarray::Axis(0), &[top, bottom]).map_err(|e| Error::Shape(e.to_string()))
}

/// Multiplies each column of `x` by the matching entry of `scale`.
pub fn scale_columns<T: Scalar>(x: ArrayView2<T>, scale: Option<&Array1<T>>) -> Result<Array2<T>> {
    match scale {
        None => Ok(x.to_owned()),
        Some(c) if c.len() == x.ncols() => Ok(&x * c),
        Some(c) => Err(Error::Shape(format!("scale has {} entries for {} columns", c.len(), x.ncols()))),
    }
}
