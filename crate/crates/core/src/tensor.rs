//! Dense row-major `f64` tensor. Rank is dynamic; the network code works
//! almost exclusively with rank-5 (batch, channel, time, height, width)
//! and rank-2 (batch, feature) views.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "cannot view {} elements as shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The five dimensions of a (batch, channel, time, height, width) tensor.
    pub fn dims5(&self) -> Result<[usize; 5]> {
        match self.shape.as_slice() {
            &[b, c, t, h, w] => Ok([b, c, t, h, w]),
            s => Err(Error::Shape(format!("expected rank-5 tensor, got shape {s:?}"))),
        }
    }

    pub fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape.as_slice() {
            &[a, b] => Ok([a, b]),
            s => Err(Error::Shape(format!("expected rank-2 tensor, got shape {s:?}"))),
        }
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Shape(format!("expected scalar, got shape {:?}", self.shape)))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(mut self, f: impl Fn(f64) -> f64) -> Self {
        for v in &mut self.data {
            *v = f(*v);
        }
        self
    }

    pub fn scaled(&self, c: f64) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn dims5_rejects_other_ranks() {
        let t = Tensor::zeros(&[1, 2, 3]);
        assert!(t.dims5().is_err());
        let t = Tensor::zeros(&[1, 2, 3, 4, 5]);
        assert_eq!(t.dims5().unwrap(), [1, 2, 3, 4, 5]);
    }
}
