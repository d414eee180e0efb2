//! Causal self-attention token policy.
//!
//! Pre-norm decoder blocks (RMS norm, fused-QKV softmax attention, GELU MLP)
//! over learned token and position embeddings. Training builds the forward
//! pass on a [`Graph`]; inference runs the same kernels through a key/value
//! cache and yields bitwise identical log-probabilities.

mod cache;
mod checkpoint;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::KvCache;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};

use crate::error::{contract, Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::rng;

pub const EOS: u32 = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_context: usize,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            vocab_size: 192,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_context: 160,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidInput(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size == 0 || self.max_context == 0 || self.n_layers == 0 {
            return Err(Error::InvalidInput(
                "vocab_size, max_context and n_layers must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Closed-form number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let (v, d, c, l) = (
            self.vocab_size,
            self.d_model,
            self.max_context,
            self.n_layers,
        );
        v * d + c * d + l * (12 * d * d + 7 * d) + d + d * v + v
    }
}

/// Decoding controls for [`Policy::sample_group`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleParams {
    pub temperature: f64,
    /// `0` disables top-k filtering.
    pub top_k: usize,
    pub max_new: usize,
}

impl Default for SampleParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: 0,
            max_new: 96,
        }
    }
}

impl SampleParams {
    pub fn greedy(max_new: usize) -> Self {
        Self {
            temperature: 0.0,
            top_k: 0,
            max_new,
        }
    }
}

/// One generated completion with its log-probability under the sampling policy
/// (untempered distribution).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub tokens: Vec<u32>,
    pub logprob: f64,
    pub truncated: bool,
}

const PER_BLOCK: usize = 8;

/// Index of each named tensor inside [`Policy::params`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    n_layers: usize,
}

impl Layout {
    pub const TOK: usize = 0;
    pub const POS: usize = 1;
    fn block(&self, i: usize, k: usize) -> usize {
        2 + PER_BLOCK * i + k
    }
    fn final_gain(&self) -> usize {
        2 + PER_BLOCK * self.n_layers
    }
    fn head_w(&self) -> usize {
        self.final_gain() + 1
    }
    fn head_b(&self) -> usize {
        self.final_gain() + 2
    }
}

const BLOCK_NAMES: [&str; PER_BLOCK] = [
    "norm1.gain",
    "attn.wqkv",
    "attn.wo",
    "norm2.gain",
    "mlp.w1",
    "mlp.b1",
    "mlp.w2",
    "mlp.b2",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub config: PolicyConfig,
    pub params: Vec<Tensor>,
    pub names: Vec<String>,
}

impl Policy {
    pub fn new(config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        let (v, d, c) = (config.vocab_size, config.d_model, config.max_context);
        let mut r = rng::rng(config.seed, &[0x1417]);
        let mut mk = |shape: Vec<usize>, std: f64| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| std * rng::normal(&mut r)).collect();
            Tensor::new(shape, data).expect("finite init").with_grad()
        };
        let ones = |n: usize| {
            Tensor::new(vec![n], vec![1.0; n])
                .expect("finite")
                .with_grad()
        };
        let zeros = |n: usize| Tensor::zeros(vec![n]).with_grad();

        let mut params = vec![mk(vec![v, d], 0.1), mk(vec![c, d], 0.1)];
        let mut names = vec!["tok_emb".to_string(), "pos_emb".to_string()];
        let w_std = 1.0 / (d as f64).sqrt();
        let out_std = w_std / (2.0 * config.n_layers as f64).sqrt();
        for i in 0..config.n_layers {
            params.push(ones(d));
            params.push(mk(vec![d, 3 * d], w_std));
            params.push(mk(vec![d, d], out_std));
            params.push(ones(d));
            params.push(mk(vec![d, 4 * d], w_std));
            params.push(zeros(4 * d));
            params.push(mk(vec![4 * d, d], out_std / 2.0));
            params.push(zeros(d));
            names.extend(BLOCK_NAMES.iter().map(|n| format!("blocks.{i}.{n}")));
        }
        params.push(ones(d));
        params.push(mk(vec![d, v], 0.02 * w_std));
        params.push(zeros(v));
        names.extend(["final_norm.gain", "head.weight", "head.bias"].map(String::from));
        Ok(Self {
            config,
            params,
            names,
        })
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout {
            n_layers: self.config.n_layers,
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Structural checks shared by every forward entry point.
    pub fn check_seq(&self, seq: &[u32]) -> Result<()> {
        if seq.len() > self.config.max_context {
            return Err(Error::ContextOverflow {
                len: seq.len(),
                max: self.config.max_context,
            });
        }
        if let Some(&id) = seq
            .iter()
            .find(|&&id| id as usize >= self.config.vocab_size)
        {
            return Err(Error::Vocab {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Registers every parameter on `g`; the returned handles are reused for
    /// all sequences of one loss so gradients accumulate.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| g.param(p, i))
            .collect()
    }

    /// Final hidden rows of `seq` on the tape, `[len × d]`.
    fn hidden_graph<'a>(&self, g: &mut Graph<'a>, p: &[Var], seq: &[u32]) -> Var {
        let lay = self.layout();
        let ids: Vec<usize> = seq.iter().map(|&t| t as usize).collect();
        let pos: Vec<usize> = (0..seq.len()).collect();
        let te = g.embed(p[Layout::TOK], &ids);
        let pe = g.embed(p[Layout::POS], &pos);
        let mut x = g.add(te, pe);
        for i in 0..self.config.n_layers {
            let b = |k| p[lay.block(i, k)];
            let h = g.rms_norm(x, b(0));
            let qkv = g.matmul(h, b(1));
            let a = g.causal_attention(qkv, self.config.n_heads);
            let o = g.matmul(a, b(2));
            x = g.add(x, o);
            let h = g.rms_norm(x, b(3));
            let u = g.matmul(h, b(4));
            let u = g.add_bias(u, b(5));
            let u = g.gelu(u);
            let m = g.matmul(u, b(6));
            let m = g.add_bias(m, b(7));
            x = g.add(x, m);
        }
        g.rms_norm(x, p[lay.final_gain()])
    }

    fn head_graph<'a>(&self, g: &mut Graph<'a>, p: &[Var], h: Var) -> Var {
        let lay = self.layout();
        let z = g.matmul(h, p[lay.head_w()]);
        let z = g.add_bias(z, p[lay.head_b()]);
        g.log_softmax(z)
    }

    /// Per-token log-probabilities of `completion` after `prompt`, as a vector
    /// on the tape. Prompt positions are never scored.
    pub fn token_logprobs_graph<'a>(
        &self,
        g: &mut Graph<'a>,
        p: &[Var],
        prompt: &[u32],
        completion: &[u32],
    ) -> Result<Var> {
        if prompt.is_empty() || completion.is_empty() {
            return Err(contract("prompt and completion must be non-empty"));
        }
        let seq: Vec<u32> = prompt.iter().chain(completion).copied().collect();
        self.check_seq(&seq)?;
        let h = self.hidden_graph(g, p, &seq);
        let rows = g.slice_rows(h, prompt.len() - 1, seq.len() - 1);
        let lp = self.head_graph(g, p, rows);
        let idx: Vec<usize> = completion.iter().map(|&t| t as usize).collect();
        Ok(g.gather(lp, &idx))
    }

    /// Full logits `[len × vocab]` (raw, before normalisation).
    pub fn forward_logits(&self, seq: &[u32]) -> Result<Tensor> {
        self.check_seq(seq)?;
        let mut cache = KvCache::new(self);
        let h = cache.extend(self, seq)?;
        let d = self.config.d_model;
        let mut out = Vec::with_capacity(seq.len() * self.config.vocab_size);
        for row in h.chunks(d) {
            out.extend(self.logits_row(row));
        }
        Tensor::new(vec![seq.len(), self.config.vocab_size], out)
    }

    pub(crate) fn logits_row(&self, h: &[f64]) -> Vec<f64> {
        let lay = self.layout();
        let v = self.config.vocab_size;
        let mut z = vec![0.0; v];
        crate::numerics::kernels::matmul(
            h,
            self.params[lay.head_w()].data(),
            1,
            h.len(),
            v,
            &mut z,
        );
        for (a, b) in z.iter_mut().zip(self.params[lay.head_b()].data()) {
            *a += b;
        }
        z
    }

    fn log_probs_row(&self, h: &[f64]) -> Vec<f64> {
        let z = self.logits_row(h);
        let mut out = vec![0.0; z.len()];
        crate::numerics::kernels::log_softmax_row(&z, &mut out);
        out
    }

    /// Σ_t log p(completion_t | prompt ⊕ completion_<t), untaped.
    pub fn completion_logprob(&self, prompt: &[u32], completion: &[u32]) -> Result<f64> {
        Ok(self.token_logprobs(prompt, completion)?.iter().sum())
    }

    pub fn token_logprobs(&self, prompt: &[u32], completion: &[u32]) -> Result<Vec<f64>> {
        if prompt.is_empty() || completion.is_empty() {
            return Err(contract("prompt and completion must be non-empty"));
        }
        let seq: Vec<u32> = prompt.iter().chain(completion).copied().collect();
        self.check_seq(&seq)?;
        let mut cache = KvCache::new(self);
        let h = cache.extend(self, &seq)?;
        let d = self.config.d_model;
        Ok(completion
            .iter()
            .enumerate()
            .map(|(i, &tok)| {
                let row = prompt.len() - 1 + i;
                self.log_probs_row(&h[row * d..(row + 1) * d])[tok as usize]
            })
            .collect())
    }

    /// Per-token log-probabilities of several completions sharing `prompt`;
    /// the prompt is processed once.
    pub fn token_logprobs_many(
        &self,
        prompt: &[u32],
        completions: &[Vec<u32>],
    ) -> Result<Vec<Vec<f64>>> {
        if prompt.is_empty() {
            return Err(contract("prompt must be non-empty"));
        }
        self.check_seq(prompt)?;
        let mut base = KvCache::new(self);
        let h = base.extend(self, prompt)?;
        let d = self.config.d_model;
        let first = self.log_probs_row(&h[h.len() - d..]);
        completions
            .iter()
            .map(|c| {
                if c.is_empty() {
                    return Err(contract("completion must be non-empty"));
                }
                let seq: Vec<u32> = prompt.iter().chain(c).copied().collect();
                self.check_seq(&seq)?;
                let mut out = Vec::with_capacity(c.len());
                out.push(first[c[0] as usize]);
                if c.len() > 1 {
                    let mut cache = base.clone();
                    let h = cache.extend(self, &c[..c.len() - 1])?;
                    for (row, &tok) in h.chunks(d).zip(&c[1..]) {
                        out.push(self.log_probs_row(row)[tok as usize]);
                    }
                }
                Ok(out)
            })
            .collect()
    }

    /// Draws `k` completions; member `i` uses the sub-seed
    /// `derive(seed, [prompt_id, i])`, so output does not depend on
    /// scheduling.
    pub fn sample_group(
        &self,
        prompt: &[u32],
        k: usize,
        params: SampleParams,
        seed: u64,
        prompt_id: u64,
    ) -> Result<Vec<Sample>> {
        if k < 1 {
            return Err(contract("group size must be at least 1"));
        }
        if !(params.temperature >= 0.0) {
            return Err(Error::InvalidInput(
                "temperature must be non-negative".into(),
            ));
        }
        if prompt.is_empty() {
            return Err(contract("prompt must be non-empty"));
        }
        self.check_seq(prompt)?;
        let mut base = KvCache::new(self);
        let h = base.extend(self, prompt)?;
        let d = self.config.d_model;
        let first = self.log_probs_row(&h[h.len() - d..]);
        let budget = params.max_new.min(self.config.max_context - prompt.len());
        (0..k)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::rng(seed, &[prompt_id, i as u64]);
                self.decode(base.clone(), first.clone(), budget, params, &mut r)
            })
            .collect()
    }

    pub fn greedy(&self, prompt: &[u32], max_new: usize) -> Result<Sample> {
        Ok(self
            .sample_group(prompt, 1, SampleParams::greedy(max_new), 0, 0)?
            .remove(0))
    }

    fn decode(
        &self,
        mut cache: KvCache,
        mut lp: Vec<f64>,
        budget: usize,
        params: SampleParams,
        r: &mut rng::Rng,
    ) -> Result<Sample> {
        let mut tokens = Vec::new();
        let mut logprob = 0.0;
        while tokens.len() < budget {
            let tok = pick(&lp, params, r);
            logprob += lp[tok];
            tokens.push(tok as u32);
            if tok as u32 == EOS || tokens.len() == budget {
                break;
            }
            let h = cache.extend(self, &[tok as u32])?;
            lp = self.log_probs_row(&h);
        }
        let truncated = tokens.last() != Some(&EOS);
        Ok(Sample {
            tokens,
            logprob,
            truncated,
        })
    }
}

/// Chooses the next token from normalised log-probabilities.
fn pick(lp: &[f64], params: SampleParams, r: &mut rng::Rng) -> usize {
    let argmax = || {
        let mut best = 0;
        for (i, &v) in lp.iter().enumerate() {
            if v > lp[best] {
                best = i;
            }
        }
        best
    };
    if params.temperature == 0.0 {
        return argmax();
    }
    let mut cand: Vec<usize> = (0..lp.len()).collect();
    if params.top_k > 0 && params.top_k < lp.len() {
        cand.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
        cand.truncate(params.top_k);
        cand.sort_unstable();
    }
    let max = cand
        .iter()
        .map(|&i| lp[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = cand
        .iter()
        .map(|&i| ((lp[i] - max) / params.temperature).exp())
        .collect();
    let total: f64 = w.iter().sum();
    let mut u = r.gen::<f64>() * total;
    for (j, &wj) in w.iter().enumerate() {
        if u < wj {
            return cand[j];
        }
        u -= wj;
    }
    *cand.last().expect("non-empty vocabulary")
}
