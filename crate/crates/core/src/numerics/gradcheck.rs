use rand::seq::index::sample;

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Options for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Coordinates checked per parameter tensor; `None` checks all.
    pub per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            per_param: Some(24),
            seed: 0,
        }
    }
}

/// Compares analytic gradients with central differences.
///
/// `eval` returns the loss and, when asked, its gradients for the current
/// parameter values. Returns the largest
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)` seen.
pub fn grad_check<F>(params: &mut [Tensor], opts: GradCheckOptions, mut eval: F) -> Result<f64>
where
    F: FnMut(&[Tensor], bool) -> Result<(f64, Option<Gradients>)>,
{
    if !(1e-7..=1e-3).contains(&opts.h) {
        return Err(Error::InvalidInput(format!(
            "step {} outside [1e-7, 1e-3]",
            opts.h
        )));
    }
    let (l1, grads) = eval(params, true)?;
    let (l2, _) = eval(params, false)?;
    if l1.to_bits() != l2.to_bits() {
        return Err(Error::Determinism {
            first: l1,
            second: l2,
        });
    }
    let grads = grads.ok_or_else(|| Error::InvalidInput("closure returned no gradients".into()))?;
    let mut worst = 0.0f64;
    for pid in 0..params.len() {
        if !params[pid].requires_grad {
            continue;
        }
        let n = params[pid].numel();
        let coords: Vec<usize> = match opts.per_param {
            Some(k) if k < n => {
                let mut r = rng::rng(opts.seed, &[pid as u64]);
                let mut c = sample(&mut r, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = params[pid].data()[i];
            params[pid].data_mut()[i] = orig + opts.h;
            let (fp, _) = eval(params, false)?;
            params[pid].data_mut()[i] = orig - opts.h;
            let (fm, _) = eval(params, false)?;
            params[pid].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * opts.h);
            let analytic = grads.get(pid).map_or(0.0, |g| g[i]);
            let err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
