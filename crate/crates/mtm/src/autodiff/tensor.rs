//! Dense row-major f64 tensor.

use super::AutodiffError;

/// Dense n-dimensional array of finite f64 values, row-major.
///
/// Invariants, enforced at construction: every dimension is positive, the
/// value count equals the shape product, and all values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, validating shape/value consistency and finiteness.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, AutodiffError> {
        if shape.is_empty() {
            return Err(AutodiffError::InvalidTensor {
                reason: "shape must have at least one dimension".into(),
            });
        }
        if shape.contains(&0) {
            return Err(AutodiffError::InvalidTensor {
                reason: format!("shape {shape:?} has a zero dimension"),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(AutodiffError::InvalidTensor {
                reason: format!(
                    "shape {shape:?} implies {numel} values, got {}",
                    values.len()
                ),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AutodiffError::InvalidTensor {
                reason: format!("non-finite value {} at index {i}", values[i]),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![0.0; numel]).expect("zeros tensor is always valid")
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self, AutodiffError> {
        let numel = shape.iter().product();
        Self::new(shape, vec![value; numel])
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Result<Self, AutodiffError> {
        Self::new(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The value of a single-element tensor.
    ///
    /// Panics if the tensor has more than one element.
    pub fn item(&self) -> f64 {
        assert_eq!(self.values.len(), 1, "item() on tensor of {} elements", self.values.len());
        self.values[0]
    }

    /// Consume into the raw value vector.
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// In-place `self += scale * other`; shapes must match.
    pub fn axpy(&mut self, scale: f64, other: &Tensor) -> Result<(), AutodiffError> {
        if self.shape != other.shape {
            return Err(AutodiffError::ShapeMismatch {
                op: "axpy",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, b) in self.values.iter_mut().zip(other.values.iter()) {
            *a += scale * b;
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(AutodiffError::InvalidTensor {
                reason: format!("axpy produced non-finite value at index {i}"),
            });
        }
        Ok(())
    }
}
