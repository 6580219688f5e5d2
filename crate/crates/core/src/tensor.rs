//! Dense row-major `f32` tensors.
//!
//! Layout is batch-first, `(N, C, spatial...)`, with the last axis contiguous.
//! Random fills use ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded from a `u64`,
//! so a given `(shape, low, high, seed)` always yields the same bits.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 5;

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(extents: impl Into<Vec<usize>>) -> Result<Self> {
        let extents = extents.into();
        if extents.is_empty() || extents.len() > MAX_RANK {
            return Err(Error::shape(format!(
                "rank must be in 1..={MAX_RANK}, got {}",
                extents.len()
            )));
        }
        if let Some(axis) = extents.iter().position(|&e| e == 0) {
            return Err(Error::shape(format!("extent of axis {axis} is zero in {extents:?}")));
        }
        Ok(Shape(extents))
    }

    pub fn extents(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides, last axis stride 1.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for axis in (0..self.0.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * self.0[axis + 1];
        }
        strides
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.0.len() {
            return Err(Error::Index(format!(
                "index {index:?} has rank {}, shape {:?} has rank {}",
                index.len(),
                self.0,
                self.0.len()
            )));
        }
        let mut flat = 0;
        for (axis, (&i, &e)) in index.iter().zip(&self.0).enumerate() {
            if i >= e {
                return Err(Error::Index(format!(
                    "index {i} out of bounds for axis {axis} with extent {e}"
                )));
            }
            flat = flat * e + i;
        }
        Ok(flat)
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Shape::new(v)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let shape = Shape::new(shape)?;
        let data = vec![0.0; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: &[usize], value: f32) -> Result<Self> {
        let shape = Shape::new(shape)?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(shape)?;
        if shape.numel() != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Uniform samples in `[low, high)` from a ChaCha8 stream seeded with `seed`.
    pub fn uniform_fill(shape: &[usize], low: f32, high: f32, seed: u64) -> Result<Self> {
        if !(low < high) || !low.is_finite() || !high.is_finite() {
            return Err(Error::domain(format!("uniform_fill needs finite low < high, got [{low}, {high})")));
        }
        let shape = Shape::new(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span = high - low;
        let data = (0..shape.numel())
            .map(|_| {
                let v = low + span * rng.random::<f32>();
                // rounding can land exactly on `high` for wide ranges
                if v >= high { low } else { v }
            })
            .collect();
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        self.shape.extents()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> Result<f32> {
        Ok(self.data[self.shape.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f32) -> Result<()> {
        let offset = self.shape.offset(index)?;
        self.data[offset] = value;
        Ok(())
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        self.clone().into_reshaped(new_shape)
    }

    pub fn into_reshaped(self, new_shape: &[usize]) -> Result<Tensor> {
        let shape = Shape::new(new_shape)?;
        if shape.numel() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} elements) into {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data: self.data })
    }

    pub fn fill(&mut self, value: f32) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Rows `[start, start + len)` along the leading axis.
    pub fn slice_outer(&self, start: usize, len: usize) -> Result<Tensor> {
        let outer = self.shape()[0];
        if len == 0 || start + len > outer {
            return Err(Error::Index(format!("rows {start}..{} out of {outer}", start + len)));
        }
        let row = self.numel() / outer;
        let mut shape = self.shape().to_vec();
        shape[0] = len;
        Tensor::from_vec(&shape, self.data[start * row..(start + len) * row].to_vec())
    }

    /// Stacks the given leading-axis rows into a new tensor.
    pub fn gather_outer(&self, rows: &[usize]) -> Result<Tensor> {
        let outer = self.shape()[0];
        let row = self.numel() / outer;
        let mut data = Vec::with_capacity(rows.len() * row);
        for &r in rows {
            if r >= outer {
                return Err(Error::Index(format!("row {r} out of {outer}")));
            }
            data.extend_from_slice(&self.data[r * row..(r + 1) * row]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = rows.len();
        Tensor::from_vec(&shape, data)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= PREVIEW {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..PREVIEW])
        }
    }
}
