//! Block vectors, per-block linear operators and weight matrices.

mod io;
mod operator;
mod weight;

pub use io::{read_csv_matrix, read_matrix_market, write_csv_matrix, write_matrix_market};
pub(crate) use operator::estimate_subset_norm_sq;
pub use operator::{
    estimate_op_norm_sq, gram_cross_is_zero, residual, BlockOperator, BlockOperatorFamily, Gram, LinearMap,
    NormEstimate, OperatorKind, RowGroups,
};
pub(crate) use weight::min_eigenvalue;
pub use weight::{weighted_inner, weighted_norm_sq, WeightMatrix};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// (rows, columns) of a block; vectors are `(p, 1)`.
pub type Shape = (usize, usize);

/// Ordered list of dense blocks. Also used for values in a stacked constraint space,
/// where each block is one constraint row segment.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector<T: Scalar> {
    blocks: Vec<DMatrix<T>>,
}

impl<T: Scalar> BlockVector<T> {
    pub fn new(blocks: Vec<DMatrix<T>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Dimension("a block vector needs at least one block".into()));
        }
        Ok(BlockVector { blocks })
    }

    pub fn zeros(shapes: &[Shape]) -> Self {
        assert!(!shapes.is_empty(), "a block vector needs at least one block");
        BlockVector { blocks: shapes.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect() }
    }

    /// Builds a block vector of column vectors.
    pub fn from_vecs(vecs: Vec<Vec<T>>) -> Result<Self> {
        Self::new(vecs.into_iter().map(|v| DMatrix::from_vec(v.len(), 1, v)).collect())
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn dims(&self) -> Vec<Shape> {
        self.blocks.iter().map(|b| b.shape()).collect()
    }

    /// Total number of scalar entries.
    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, i: usize) -> &DMatrix<T> {
        &self.blocks[i]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut DMatrix<T> {
        &mut self.blocks[i]
    }

    pub fn blocks(&self) -> &[DMatrix<T>] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<DMatrix<T>> {
        self.blocks
    }

    pub fn set_block(&mut self, i: usize, value: DMatrix<T>) -> Result<()> {
        if value.shape() != self.blocks[i].shape() {
            return Err(Error::Dimension(format!(
                "block {i}: expected {:?}, got {:?}",
                self.blocks[i].shape(),
                value.shape()
            )));
        }
        self.blocks[i] = value;
        Ok(())
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.blocks.len() != other.blocks.len()
            || self.blocks.iter().zip(&other.blocks).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Dimension(format!("block layouts differ: {:?} vs {:?}", self.dims(), other.dims())));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(BlockVector { blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a + b).collect() })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(BlockVector { blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a - b).collect() })
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: T, other: &Self) -> Result<()> {
        self.check_same(other)?;
        for (s, o) in self.blocks.iter_mut().zip(&other.blocks) {
            s.zip_apply(o, |x, y| *x += a * y);
        }
        Ok(())
    }

    pub fn scale(&self, a: T) -> Self {
        BlockVector { blocks: self.blocks.iter().map(|b| b * a).collect() }
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same(other)?;
        Ok(self.blocks.iter().zip(&other.blocks).fold(T::zero(), |acc, (a, b)| acc + a.dot(b)))
    }

    pub fn norm_sq(&self) -> T {
        self.blocks.iter().fold(T::zero(), |acc, b| acc + b.norm_squared())
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    /// Largest per-block Euclidean (Frobenius) norm.
    pub fn max_block_norm(&self) -> T {
        self.blocks.iter().fold(T::zero(), |acc, b| acc.max(b.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Column-major concatenation of all blocks.
    pub fn to_flat(&self) -> Vec<T> {
        self.blocks.iter().flat_map(|b| b.as_slice().iter().copied()).collect()
    }

    /// Inverse of [`to_flat`](Self::to_flat) for the given layout.
    pub fn from_flat(shapes: &[Shape], flat: &[T]) -> Result<Self> {
        let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
        if total != flat.len() {
            return Err(Error::Dimension(format!("expected {total} entries, got {}", flat.len())));
        }
        let mut offset = 0;
        let mut blocks = Vec::with_capacity(shapes.len());
        for &(r, c) in shapes {
            blocks.push(DMatrix::from_column_slice(r, c, &flat[offset..offset + r * c]));
            offset += r * c;
        }
        Self::new(blocks)
    }
}
