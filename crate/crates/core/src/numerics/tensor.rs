use serde::{Deserialize, Serialize};

use super::kernels;
use crate::error::{Error, Result};

/// Dense row-major f64 tensor with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    #[serde(skip)]
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidInput(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at index {bad}"
            )));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, v)| *b += v),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// Log-softmax along `axis`, stable for large-magnitude logits.
pub fn stable_log_softmax(logits: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = logits.shape();
    if axis >= shape.len().max(1) {
        return Err(Error::InvalidInput(format!(
            "axis {axis} invalid for shape {shape:?}"
        )));
    }
    if logits.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite logits".into()));
    }
    if shape.is_empty() {
        return Ok(Tensor::scalar(0.0));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0; logits.numel()];
    let mut row = vec![0.0; len];
    let mut res = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for (j, r) in row.iter_mut().enumerate() {
                *r = logits.data[base + j * inner];
            }
            kernels::log_softmax_row(&row, &mut res);
            for (j, r) in res.iter().enumerate() {
                out[base + j * inner] = *r;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_shape_mismatch_and_non_finite() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn log_softmax_of_equal_logits() {
        let t = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        let y = stable_log_softmax(&t, 0).unwrap();
        for v in y.data() {
            assert!((v + std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn log_softmax_large_gap_stays_finite() {
        let t = Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap();
        let y = stable_log_softmax(&t, 0).unwrap();
        assert!(y.data()[0].abs() < 1e-300 || y.data()[0] == 0.0);
        assert!((y.data()[1] + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn log_softmax_along_first_axis() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 1.0, 0.0, -1.0]).unwrap();
        let y = stable_log_softmax(&t, 0).unwrap();
        for col in 0..3 {
            let s: f64 = (0..2).map(|r| y.data()[r * 3 + col].exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(stable_log_softmax(&t, 2).is_err());
    }

    #[test]
    fn log_softmax_rejects_non_finite() {
        let mut t = Tensor::zeros(vec![2]);
        t.data_mut()[0] = f64::INFINITY;
        assert!(stable_log_softmax(&t, 0).is_err());
    }
}
