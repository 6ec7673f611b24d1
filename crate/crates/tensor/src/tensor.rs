use std::sync::Arc;

use crate::element::Element;
use crate::error::{Result, TensorError};

/// Dense n-dimensional array in row-major order.
///
/// The buffer is shared, so clones are cheap and tensors are immutable
/// values safe to pass across threads. All construction paths reject
/// NaN/Inf entries.
#[derive(Clone, Debug)]
pub struct Tensor<T: Element> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::Dimension(format!(
                "shape {:?} wants {} elements, buffer holds {}",
                shape,
                numel,
                data.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Dimension(format!(
                "zero extent in shape {shape:?}"
            )));
        }
        let t = Self {
            shape,
            data: Arc::new(data),
        };
        t.check_finite("new")?;
        Ok(t)
    }

    /// Construction without the finite check, for buffers built internally
    /// from already-validated values.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![T::ZERO; numel])
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; numel])
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        let n = data.len();
        Self::from_parts(vec![n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Same buffer, new shape. Element count must match.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(TensorError::Dimension(format!(
                "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                self.shape,
                self.numel(),
                shape,
                numel
            )));
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn check_finite(&self, name: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite(name.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Self::from_parts(self.shape.clone(), data)
    }

    /// Exact byte-level equality: same shape and bit-identical entries.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_f64().to_bits() == b.to_f64().to_bits())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.data.iter().map(|v| U::from_f64(v.to_f64())).collect();
        Tensor::from_parts(self.shape.clone(), data)
    }
}

impl<T: Element> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && *self.data == *other.data
    }
}

/// Largest absolute difference between two same-shaped tensors.
pub fn max_abs_diff<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x.to_f64() - y.to_f64()).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_shape_data_mismatch() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Tensor::<f32>::new(vec![2], vec![1.0, f32::NAN]).is_err());
        assert!(Tensor::<f64>::new(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn reshape_preserves_buffer() {
        let t = Tensor::<f32>::new(vec![2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        let r = t.reshaped(vec![3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(vec![4, 2]).is_err());
    }
}
