//! Dense row-major f64 arrays.
//!
//! [`Array`] is the value type flowing through the autodiff graph and the
//! checkpoint container: a shape vector plus a contiguous row-major buffer.
//! Everything is 64-bit; there is no broadcasting — operations requiring
//! matching shapes assert them.

use serde::{Deserialize, Serialize};

/// Shape + row-major data. Rank 1 (vectors) and rank 2 (matrices) are the
/// only ranks the model uses, but the container itself is rank-agnostic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Array {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "array: shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Array { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Array {
        let n = shape.iter().product();
        Array { shape, data: vec![0.0; n] }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Array {
        let n = shape.iter().product();
        Array { shape, data: vec![value; n] }
    }

    /// A scalar is represented as a one-element vector.
    pub fn scalar(x: f64) -> Array {
        Array { shape: vec![1], data: vec![x] }
    }

    pub fn vector(data: Vec<f64>) -> Array {
        Array { shape: vec![data.len()], data }
    }

    /// Row-major rank-2 array.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Array {
        assert_eq!(rows * cols, data.len(), "matrix: {rows}x{cols} needs {} values", rows * cols);
        Array { shape: vec![rows, cols], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element array.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item: array has {} elements", self.data.len());
        self.data[0]
    }

    /// Rank-2 element access.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[row * self.shape[1] + col]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Euclidean norm over all elements.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// In-place `self += other` (shapes must match).
    pub fn add_assign(&mut self, other: &Array) {
        assert_eq!(self.shape, other.shape, "add_assign: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// In-place `self *= c`.
    pub fn scale_assign(&mut self, c: f64) {
        for a in &mut self.data {
            *a *= c;
        }
    }
}
