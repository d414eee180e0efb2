use super::{Layout, Policy};
use crate::error::{Error, Result};
use crate::numerics::kernels::{attention_row, gelu, matmul, rms_norm_row};

/// Per-layer fused `[q|k|v]` rows of every processed position.
#[derive(Clone, Debug)]
pub struct KvCache {
    layers: Vec<Vec<f64>>,
    len: usize,
}

impl KvCache {
    pub fn new(policy: &Policy) -> Self {
        Self {
            layers: vec![Vec::new(); policy.config.n_layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends `tokens` and returns their final-norm hidden rows.
    ///
    /// Mirrors the taped forward operation by operation, so results are
    /// bitwise equal to it.
    pub fn extend(&mut self, p: &Policy, tokens: &[u32]) -> Result<Vec<f64>> {
        let cfg = &p.config;
        let (d, n) = (cfg.d_model, tokens.len());
        if self.len + n > cfg.max_context {
            return Err(Error::ContextOverflow {
                len: self.len + n,
                max: cfg.max_context,
            });
        }
        let lay = p.layout();
        let tok = p.params[Layout::TOK].data();
        let pos = p.params[Layout::POS].data();
        let mut x = vec![0.0; n * d];
        for (r, &t) in tokens.iter().enumerate() {
            if t as usize >= cfg.vocab_size {
                return Err(Error::Vocab {
                    id: t,
                    vocab: cfg.vocab_size,
                });
            }
            let (te, pe) = (&tok[t as usize * d..][..d], &pos[(self.len + r) * d..][..d]);
            for j in 0..d {
                x[r * d + j] = te[j] + pe[j];
            }
        }
        let mut h = vec![0.0; n * d];
        let mut qkv = vec![0.0; n * 3 * d];
        let mut att = vec![0.0; n * d];
        let mut o = vec![0.0; n * d];
        let mut u = vec![0.0; n * 4 * d];
        let mut probs = vec![0.0; cfg.n_heads * (self.len + n)];
        for i in 0..cfg.n_layers {
            let w = |k| p.params[lay.block(i, k)].data();
            for r in 0..n {
                rms_norm_row(&x[r * d..][..d], w(0), &mut h[r * d..][..d]);
            }
            matmul(&h, w(1), n, d, 3 * d, &mut qkv);
            let cache = &mut self.layers[i];
            cache.extend_from_slice(&qkv);
            for r in 0..n {
                let t = self.len + r;
                attention_row(
                    &cache[t * 3 * d..][..d],
                    &cache[d..],
                    &cache[2 * d..],
                    3 * d,
                    t,
                    cfg.n_heads,
                    &mut probs[..cfg.n_heads * (t + 1)],
                    &mut att[r * d..][..d],
                );
            }
            matmul(&att, w(2), n, d, d, &mut o);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            for r in 0..n {
                rms_norm_row(&x[r * d..][..d], w(3), &mut h[r * d..][..d]);
            }
            matmul(&h, w(4), n, d, 4 * d, &mut u);
            let b1 = w(5);
            for row in u.chunks_mut(4 * d) {
                for (a, b) in row.iter_mut().zip(b1) {
                    *a = gelu(*a + b);
                }
            }
            matmul(&u, w(6), n, 4 * d, d, &mut o);
            let b2 = w(7);
            for (r, row) in o.chunks(d).enumerate() {
                for j in 0..d {
                    x[r * d + j] += row[j] + b2[j];
                }
            }
        }
        self.len += n;
        let g = p.params[lay.final_gain()].data();
        for r in 0..n {
            rms_norm_row(&x[r * d..][..d], g, &mut h[r * d..][..d]);
        }
        Ok(h)
    }
}
