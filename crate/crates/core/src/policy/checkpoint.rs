//! Binary checkpoint format.
//!
//! ```text
//! "PPTA" | u32 format_version | config block | u32 n_params
//! per param: u32 name_len | name | u32 rank | u64 dims… | f64 payload (LE)
//! u8 has_optimizer [ u64 t | f64 lr β1 β2 ε | per param: m…, v… ]
//! u32 rng_len | rng bytes
//! ```
//! Loading requires the file to end exactly after the rng block.

use std::fs;
use std::path::Path;

use super::{Policy, PolicyConfig};
use crate::error::{CheckpointError as E, Error, Result};
use crate::numerics::{Adam, AdamState, Tensor};

pub const MAGIC: &[u8; 4] = b"PPTA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub policy: Policy,
    pub optimizer: Option<Adam>,
    pub rng_state: Vec<u8>,
}

impl Checkpoint {
    pub fn new(policy: Policy) -> Self {
        Self {
            policy,
            optimizer: None,
            rng_state: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, FORMAT_VERSION);
        let c = &self.policy.config;
        for v in [
            c.vocab_size,
            c.d_model,
            c.n_layers,
            c.n_heads,
            c.max_context,
        ] {
            put_u32(&mut w, v as u32);
        }
        w.extend_from_slice(&c.seed.to_le_bytes());
        put_u32(&mut w, self.policy.params.len() as u32);
        for (name, t) in self.policy.names.iter().zip(&self.policy.params) {
            put_u32(&mut w, name.len() as u32);
            w.extend_from_slice(name.as_bytes());
            put_u32(&mut w, t.shape().len() as u32);
            for &dim in t.shape() {
                w.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            put_f64s(&mut w, t.data());
        }
        match &self.optimizer {
            None => w.push(0),
            Some(opt) => {
                w.push(1);
                w.extend_from_slice(&opt.t.to_le_bytes());
                put_f64s(&mut w, &[opt.lr, opt.beta1, opt.beta2, opt.eps]);
                for s in &opt.states {
                    put_f64s(&mut w, &s.m);
                    put_f64s(&mut w, &s.v);
                }
            }
        }
        put_u32(&mut w, self.rng_state.len() as u32);
        w.extend_from_slice(&self.rng_state);
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(E::BadMagic(magic).into());
        }
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(E::Version {
                found: version,
                expected: FORMAT_VERSION,
            }
            .into());
        }
        let mut dims = [0usize; 5];
        for d in dims.iter_mut() {
            *d = r.u32("config")? as usize;
        }
        let seed = r.u64("config")?;
        let config = PolicyConfig {
            vocab_size: dims[0],
            d_model: dims[1],
            n_layers: dims[2],
            n_heads: dims[3],
            max_context: dims[4],
            seed,
        };
        config.validate().map_err(|e| E::Corrupt(e.to_string()))?;
        let template = Policy::new(config.clone())?;
        let n = r.u32("parameter count")? as usize;
        if n != template.params.len() {
            return Err(E::Corrupt(format!(
                "expected {} tensors, found {n}",
                template.params.len()
            ))
            .into());
        }
        let mut params = Vec::with_capacity(n);
        for (want_name, want) in template.names.iter().zip(&template.params) {
            let len = r.u32("parameter name")? as usize;
            let name = r.take(len, "parameter name")?;
            if name != want_name.as_bytes() {
                return Err(E::Corrupt(format!(
                    "expected tensor {want_name}, found {}",
                    String::from_utf8_lossy(name)
                ))
                .into());
            }
            let rank = r.u32("parameter rank")? as usize;
            if rank != want.shape().len() {
                return Err(E::Corrupt(format!("rank mismatch for {want_name}")).into());
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64("parameter dims")? as usize);
            }
            if shape != want.shape() {
                return Err(
                    E::Corrupt(format!("shape mismatch for {want_name}: {shape:?}")).into(),
                );
            }
            let data = r.f64s(want.numel(), "parameter payload")?;
            let t = Tensor::new(shape, data).map_err(|e| E::Corrupt(e.to_string()))?;
            params.push(t.with_grad());
        }
        let optimizer = match r.take(1, "optimizer flag")?[0] {
            0 => None,
            1 => {
                let t = r.u64("optimizer state")?;
                let h = r.f64s(4, "optimizer state")?;
                let mut states = Vec::with_capacity(n);
                for p in &params {
                    let m = r.f64s(p.numel(), "optimizer moments")?;
                    let v = r.f64s(p.numel(), "optimizer moments")?;
                    states.push(AdamState { m, v });
                }
                Some(Adam {
                    lr: h[0],
                    beta1: h[1],
                    beta2: h[2],
                    eps: h[3],
                    t,
                    states,
                })
            }
            f => return Err(E::Corrupt(format!("optimizer flag {f}")).into()),
        };
        let len = r.u32("rng state")? as usize;
        let rng_state = r.take(len, "rng state")?.to_vec();
        if r.pos != bytes.len() {
            return Err(E::TrailingBytes(bytes.len() - r.pos).into());
        }
        Ok(Self {
            policy: Policy {
                config,
                params,
                names: template.names,
            },
            optimizer,
            rng_state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_checkpoint(policy: &Policy, optimizer: Option<&Adam>, path: &Path) -> Result<()> {
    Checkpoint {
        policy: policy.clone(),
        optimizer: optimizer.cloned(),
        rng_state: Vec::new(),
    }
    .save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Policy> {
    Ok(Checkpoint::load(path)?.policy)
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(w: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(Error::Checkpoint(E::Truncated(what)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or(Error::Checkpoint(E::Truncated(what)))?,
            what,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
