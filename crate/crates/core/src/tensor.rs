//! Dense row-major tensors of rank one to four.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Axis semantics attached to a tensor. Storage is always row-major with the
/// outermost axis first; the tag only documents what the axes mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layout {
    /// No particular axis meaning (vectors, weight blocks).
    Flat,
    /// Single-channel image.
    Hw,
    /// Channels by time.
    Ct,
    /// Channels, height, width.
    Chw,
    /// Time, channels, height, width.
    Tchw,
}

impl Layout {
    fn default_for_rank(rank: usize) -> Layout {
        match rank {
            2 => Layout::Hw,
            3 => Layout::Chw,
            4 => Layout::Tchw,
            _ => Layout::Flat,
        }
    }
}

pub const MAX_RANK: usize = 4;

#[derive(Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    layout: Layout,
}

pub(crate) fn shape_str(shape: &[usize]) -> String {
    let parts: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", parts.join("x"))
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::shape("rank 1..=4", format!("rank {}", shape.len())));
    }
    if shape.contains(&0) {
        return Err(Error::shape("all extents >= 1", shape_str(shape)));
    }
    Ok(shape.iter().product())
}

impl<S: Scalar> Tensor<S> {
    /// Builds a tensor from row-major data, rejecting bad shapes and
    /// non-finite values.
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::shape(
                format!("{} elements for {}", len, shape_str(shape)),
                format!("{} elements", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { shape: shape.to_vec(), data, layout: Layout::default_for_rank(shape.len()) })
    }

    /// Internal constructor for kernels whose outputs are finite by
    /// construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let layout = Layout::default_for_rank(shape.len());
        Self { shape, data, layout }
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], value: S) -> Result<Self> {
        let len = check_shape(shape)?;
        if !value.is_finite() {
            return Err(Error::Numeric("non-finite fill value".into()));
        }
        Ok(Self::from_parts(shape.to_vec(), vec![value; len]))
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> S) -> Result<Self> {
        let len = check_shape(shape)?;
        Self::new(shape, (0..len).map(f).collect())
    }

    pub fn with_layout(mut self, layout: Layout) -> Self {
        self.layout = layout;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Returns `(C, H, W)` for a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape("rank 3 (CxHxW)", shape_str(&self.shape))),
        }
    }

    /// Returns `(rows, cols)` for a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(Error::shape("rank 2", shape_str(&self.shape))),
        }
    }

    /// Element at a multi-index. Panics when out of range.
    pub fn at(&self, index: &[usize]) -> S {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (i, (&ix, &d)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < d, "index {ix} out of range for axis {i} of extent {d}");
            flat = flat * d + ix;
        }
        self.data[flat]
    }

    /// Contiguous slice of channel `c` of a CHW tensor.
    pub fn channel(&self, c: usize) -> &[S] {
        let plane = self.shape[self.rank() - 2..].iter().product::<usize>();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::shape(
                format!("{} elements", self.data.len()),
                format!("reshape to {}", shape_str(shape)),
            ));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data))
    }

    /// Converts every element to another scalar type.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.wide())).collect(),
            layout: self.layout,
        }
    }

    /// Elementwise map. Fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(S) -> S) -> Result<Self> {
        let data: Vec<S> = self.data.iter().map(|&v| f(v)).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("map produced a non-finite value".into()));
        }
        Ok(Self { shape: self.shape.clone(), data, layout: self.layout })
    }

    pub fn max_value(&self) -> S {
        self.data.iter().copied().fold(S::neg_infinity(), S::max_keep)
    }

    pub fn min_value(&self) -> S {
        self.data.iter().copied().fold(S::infinity(), |a, b| if b < a { b } else { a })
    }

    /// Bitwise equality of shape and every element.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.data.iter().zip(&other.data).all(|(a, b)| a.wide().to_bits() == b.wide().to_bits())
    }
}

impl<S: fmt::Debug> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{}{:?}", shape_str(&self.shape), self.layout)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}
