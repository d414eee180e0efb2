use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::error::{contract, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Moment buffers for one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Adam with bias correction over a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub states: Vec<AdamState>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
            t: 0,
            states: sizes.iter().map(|&n| AdamState::zeros(n)).collect(),
        }
    }

    pub fn for_params(lr: f64, params: &[Tensor]) -> Self {
        let sizes: Vec<usize> = params.iter().map(Tensor::numel).collect();
        Self::new(lr, &sizes)
    }

    /// One update. Parameters without a gradient are treated as having a
    /// zero gradient, so their moments still decay.
    pub fn step(&mut self, params: &mut [Tensor], grads: &Gradients) -> Result<()> {
        if params.len() != self.states.len() {
            return Err(contract(format!(
                "optimizer tracks {} tensors but {} were given",
                self.states.len(),
                params.len()
            )));
        }
        for (pid, g) in grads.iter() {
            let n = params.get(pid).map(Tensor::numel);
            if n != Some(g.len()) {
                return Err(contract(format!(
                    "gradient {pid} does not match its parameter"
                )));
            }
        }
        for (p, s) in params.iter().zip(&self.states) {
            if p.numel() != s.m.len() {
                return Err(contract("parameter shape changed under the optimizer"));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (pid, (p, s)) in params.iter_mut().zip(self.states.iter_mut()).enumerate() {
            if !p.requires_grad {
                continue;
            }
            let g = grads.get(pid);
            let data = p.data_mut();
            for i in 0..data.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                s.m[i] = self.beta1 * s.m[i] + (1.0 - self.beta1) * gi;
                s.v[i] = self.beta2 * s.v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = s.m[i] / bc1;
                let vh = s.v[i] / bc2;
                data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Graph;

    fn param(v: f64) -> Vec<Tensor> {
        vec![Tensor::new(vec![1], vec![v]).unwrap().with_grad()]
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = param(1.5);
        let mut opt = Adam::for_params(0.1, &p);
        let mut g = Gradients::default();
        g.add(0, &[0.0]);
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p[0].data(), &[1.5]);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = param(0.0);
        let mut opt = Adam::for_params(0.01, &p);
        let mut g = Gradients::default();
        g.add(0, &[3.0]);
        opt.step(&mut p, &g).unwrap();
        assert!((p[0].data()[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let mut p = param(0.0);
        let mut opt = Adam::for_params(0.01, &p);
        let mut g = Gradients::default();
        g.add(0, &[1.0, 2.0]);
        assert!(matches!(
            opt.step(&mut p, &g),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = param(0.0);
        let mut opt = Adam::for_params(0.1, &p);
        for _ in 0..200 {
            let grads = {
                let mut gr = Graph::new();
                let w = gr.param(&p[0], 0);
                let d = gr.add_scalar(w, -5.0);
                let sq = gr.mul(d, d);
                let loss = gr.sum(sq);
                gr.backward(loss).unwrap()
            };
            opt.step(&mut p, &grads).unwrap();
        }
        assert!(
            (p[0].data()[0] - 5.0).abs() < 0.05,
            "w = {}",
            p[0].data()[0]
        );
    }
}
