use crate::error::{Error, Result};

/// Dense tensor: a shape plus a flat row-major `f32` buffer.
///
/// The buffer length always equals the product of the dimensions, and every
/// dimension is positive. Reductions that *produce* tensor values accumulate
/// in `f64` before rounding back to `f32` (see the layer kernels).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

pub(crate) fn elem_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        if elem_count(&shape) != data.len() {
            return Err(Error::ShapeMismatch {
                context: "Tensor::new",
                expected: shape,
                got: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "dimensions must be positive, got {shape:?}"
        );
        let n = elem_count(&shape);
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    /// Rank-1 tensor over an existing buffer.
    pub fn from_vec(data: Vec<f32>) -> Self {
        assert!(!data.is_empty(), "rank-1 tensor needs at least one element");
        Tensor {
            shape: vec![data.len()],
            data,
        }
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
        false // positive dims are enforced at construction
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

    /// Same buffer under a new shape with an equal element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        if elem_count(&shape) != self.data.len() {
            return Err(Error::ShapeMismatch {
                context: "Tensor::reshaped",
                expected: shape,
                got: self.shape.clone(),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn new_rejects_zero_dims() {
        assert!(matches!(
            Tensor::new(vec![2, 0], vec![]),
            Err(Error::InvalidShape(_))
        ));
        assert!(matches!(
            Tensor::new(vec![], vec![]),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn reshape_preserves_data_and_checks_count() {
        let t = Tensor::new(vec![2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        let r = t.reshaped(vec![3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(vec![4, 2]).is_err());
    }
}
