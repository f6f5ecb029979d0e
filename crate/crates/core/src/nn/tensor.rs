//! Dense f64 tensors (up to 5-D) and trainable parameters.

use crate::error::{Error, Result};

/// Dense row-major f64 buffer with an explicit shape. The buffer length
/// always equals the product of the dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(Error::ShapeMismatch {
                expected: format!("{want} values for shape {shape:?}"),
                got: format!("{}", data.len()),
            });
        }
        if shape.len() > 5 {
            return Err(Error::InvalidInput(format!("rank {} exceeds 5", shape.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Size of one leading-dimension slice (numel / shape[0]); 0-D safe.
    pub fn stride0(&self) -> usize {
        if self.shape.is_empty() {
            0
        } else {
            self.data.len() / self.shape[0]
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn assert_shape(&self, want: &[usize]) -> Result<()> {
        if self.shape != want {
            return Err(Error::ShapeMismatch {
                expected: format!("{want:?}"),
                got: format!("{:?}", self.shape),
            });
        }
        Ok(())
    }
}

/// A trainable tensor with its gradient accumulator. The gradient always has
/// the value's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Param {
        let grad = Tensor::zeros(value.shape());
        Param { name: name.into(), value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_buffer_agree() {
        let t = Tensor::zeros(&[2, 3, 4]);
        assert_eq!(t.numel(), 24);
        assert_eq!(t.stride0(), 12);
        assert!(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).is_ok());
        assert!(Tensor::from_vec(&[2, 2], vec![1.0]).is_err());
        assert!(Tensor::from_vec(&[1, 1, 1, 1, 1, 1], vec![1.0]).is_err());
        assert!(t.assert_shape(&[2, 3, 4]).is_ok());
        assert!(t.assert_shape(&[2, 3, 5]).is_err());
    }

    #[test]
    fn param_grad_tracks_value_shape() {
        let mut p = Param::new("w", Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        assert_eq!(p.grad.shape(), p.value.shape());
        p.grad.data_mut()[1] = 5.0;
        p.zero_grad();
        assert!(p.grad.data().iter().all(|&g| g == 0.0));
    }
}
