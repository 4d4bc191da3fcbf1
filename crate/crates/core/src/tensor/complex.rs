use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex-valued tensor with split real/imaginary buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexTensor {
    pub fn new(shape: &[usize], re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || re.len() != n || im.len() != n {
            return Err(Error::dim(format!(
                "complex tensor of shape {shape:?} needs {n} re/im values, got {}/{}",
                re.len(),
                im.len()
            )));
        }
        Ok(ComplexTensor {
            shape: shape.to_vec(),
            re,
            im,
        })
    }

    pub(crate) fn from_complex(shape: &[usize], values: &[Complex64]) -> Self {
        ComplexTensor {
            shape: shape.to_vec(),
            re: values.iter().map(|c| c.re).collect(),
            im: values.iter().map(|c| c.im).collect(),
        }
    }

    pub(crate) fn to_complex(&self) -> Vec<Complex64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Pointwise complex product.
    pub fn mul(&self, other: &ComplexTensor) -> Result<ComplexTensor> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "complex mul: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let (re, im) = self
            .to_complex()
            .iter()
            .zip(other.to_complex())
            .map(|(a, b)| {
                let p = a * b;
                (p.re, p.im)
            })
            .unzip();
        Ok(ComplexTensor {
            shape: self.shape.clone(),
            re,
            im,
        })
    }

    /// Largest absolute imaginary component.
    pub fn max_imag(&self) -> f64 {
        self.im.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}
