//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      b"PNCK"
//! version    u8 (= 1)
//! spec       input_size u32, depth u32, base_channels u32,
//!            n_levels u32, n_levels × level u32
//! n_layers   u32
//! layer      id_len u16, id bytes (UTF-8),
//!            weight shape 4 × u32, weights f64…, bias_len u32, bias f64…
//! has_adam   u8 (0 or 1)
//! adam       lr, beta1, beta2, eps f64, t u64,
//!            first moments then second moments, values only, layer order
//! trailer    SHA-256 over every preceding byte
//! ```
//!
//! Layers are written in id order, so equal parameter sets always encode
//! to identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{CheckpointError, Error, Result};
use crate::model::{Layer, NetworkSpec, ParameterSet};
use crate::numerics::Tensor;
use crate::optim::{AdamConfig, AdamState};

const MAGIC: &[u8; 4] = b"PNCK";
pub const FORMAT_VERSION: u8 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterSet,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(params: ParameterSet) -> Self {
        Checkpoint { params, adam: None }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        let spec = self.params.spec();
        for v in [
            spec.input_size,
            spec.depth,
            spec.base_channels,
            spec.inception_levels.len(),
        ] {
            put_u32(&mut out, v);
        }
        for &l in &spec.inception_levels {
            put_u32(&mut out, l);
        }
        put_u32(&mut out, self.params.layers().len());
        for (id, layer) in self.params.iter() {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for d in layer.weights.shape() {
                put_u32(&mut out, d);
            }
            put_f64s(&mut out, layer.weights.data());
            put_u32(&mut out, layer.bias.len());
            put_f64s(&mut out, &layer.bias);
        }
        match &self.adam {
            None => out.push(0),
            Some(state) => {
                out.push(1);
                let c = state.config;
                put_f64s(&mut out, &[c.lr, c.beta1, c.beta2, c.eps]);
                out.extend_from_slice(&state.t.to_le_bytes());
                for moments in [&state.m, &state.v] {
                    for (_, layer) in moments.iter() {
                        put_f64s(&mut out, layer.weights.data());
                        put_f64s(&mut out, &layer.bias);
                    }
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        if bytes.len() < MAGIC.len() + 1 + DIGEST_LEN {
            return Err(CheckpointError::Truncated(bytes.len()).into());
        }
        let version = bytes[MAGIC.len()];
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version).into());
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::ChecksumMismatch.into());
        }

        let mut r = Reader {
            bytes: body,
            pos: MAGIC.len() + 1,
        };
        let input_size = r.u32()?;
        let depth = r.u32()?;
        let base_channels = r.u32()?;
        let n_levels = r.u32()?;
        let inception_levels = (0..n_levels).map(|_| r.u32()).collect::<Result<_, _>>()?;
        let spec = NetworkSpec {
            input_size,
            depth,
            base_channels,
            inception_levels,
        };
        spec.validate()?;

        let n_layers = r.u32()?;
        let mut layers = BTreeMap::new();
        for _ in 0..n_layers {
            let id_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let id = std::str::from_utf8(r.take(id_len)?)
                .map_err(|_| CheckpointError::Corrupt("layer id is not UTF-8".into()))?
                .to_string();
            let shape = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
            let weights = r.f64s(shape.iter().product())?;
            let n_bias = r.u32()?;
            let bias = r.f64s(n_bias)?;
            let weights =
                Tensor::new(shape, weights).map_err(|e| CheckpointError::Corrupt(format!("layer `{id}`: {e}")))?;
            layers.insert(id, Layer { weights, bias });
        }
        let params = ParameterSet::from_layers(spec, layers)?;

        let adam = match r.take(1)?[0] {
            0 => None,
            1 => {
                let c = r.f64s(4)?;
                let config = AdamConfig {
                    lr: c[0],
                    beta1: c[1],
                    beta2: c[2],
                    eps: c[3],
                };
                let t = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
                let mut m = params.zeros_like();
                let mut v = params.zeros_like();
                for moments in [&mut m, &mut v] {
                    for (_, layer) in moments.iter_mut() {
                        let w = r.f64s(layer.weights.len())?;
                        layer.weights.data_mut().copy_from_slice(&w);
                        layer.bias = r.f64s(layer.bias.len())?;
                    }
                }
                Some(AdamState { config, t, m, v })
            }
            flag => return Err(CheckpointError::Corrupt(format!("optimizer flag {flag}")).into()),
        };
        if r.pos != body.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", body.len() - r.pos)).into());
        }
        Ok(Checkpoint { params, adam })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("dimension fits in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let len = n.checked_mul(8).ok_or(CheckpointError::Truncated(self.pos))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
