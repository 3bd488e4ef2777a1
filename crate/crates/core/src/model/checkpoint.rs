//! Binary checkpoints (all integers and floats little-endian):
//!
//! ```text
//! "SRMB" | version u32
//! d_in u32 | d_model u32 | n_state u32 | n_layers u32 | n_phases u32
//! expansion u32 | conv_width u32 | drop_path_rate f64 | bidirectional u8
//! then per parameter, in declaration order:
//!   name_len u32 | name bytes | rank u32 | dims u32 * rank | values f64 * prod(dims)
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numkit::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SRMB";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(load_err(what, "truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn load_err(tensor: &str, msg: impl Into<String>) -> Error {
    Error::Load { tensor: tensor.to_string(), msg: msg.into() }
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [c.d_in, c.d_model, c.n_state, c.n_layers, c.n_phases, c.expansion, c.conv_width] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.drop_path_rate.to_le_bytes());
        out.push(c.bidirectional as u8);
        for (name, t) in self.named() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4, "header")? != CHECKPOINT_MAGIC {
            return Err(load_err("header", "bad magic, not an SRMB checkpoint"));
        }
        let version = r.u32("header")?;
        if version != CHECKPOINT_VERSION {
            return Err(load_err("header", format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 7];
        for d in &mut dims {
            *d = r.u32("config")? as usize;
        }
        let drop_path_rate = r.f64("config")?;
        let bidirectional = match r.take(1, "config")?[0] {
            0 => false,
            1 => true,
            b => return Err(load_err("config", format!("invalid direction flag {b}"))),
        };
        let config = ModelConfig {
            d_in: dims[0],
            d_model: dims[1],
            n_state: dims[2],
            n_layers: dims[3],
            n_phases: dims[4],
            expansion: dims[5],
            conv_width: dims[6],
            drop_path_rate,
            bidirectional,
        };
        config.validate().map_err(|e| load_err("config", e.to_string()))?;

        // skeleton supplies names and shapes; values are overwritten below
        let mut model = Model::init(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let expected: Vec<(String, Vec<usize>)> =
            model.named().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        for ((want_name, want_shape), slot) in expected.iter().zip(model.tensors_mut()) {
            let len = r.u32(want_name)? as usize;
            let name = std::str::from_utf8(r.take(len, want_name)?)
                .map_err(|_| load_err(want_name, "tensor name is not UTF-8"))?;
            if name != want_name {
                return Err(load_err(want_name, format!("found `{name}` in its place")));
            }
            let rank = r.u32(want_name)? as usize;
            let shape = (0..rank).map(|_| r.u32(want_name).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if &shape != want_shape {
                return Err(load_err(want_name, format!("shape {shape:?}, expected {want_shape:?}")));
            }
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64(want_name)).collect::<Result<Vec<_>>>()?;
            *slot = Tensor::new(shape, data).map_err(|e| load_err(want_name, e.to_string()))?;
        }
        if !r.done() {
            return Err(load_err("trailer", "unexpected bytes after the last tensor"));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}
