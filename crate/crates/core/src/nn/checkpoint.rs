//! Binary checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes   "ISGCCKPT"
//! version    u32       1
//! kind       u8        0 = plain network, 1 = diffusion policy, 2 = gaussian actor
//! n_meta     u32       followed by n_meta f64 values
//!                      (diffusion: T, beta_min, beta_max; gaussian actor: log-std per dim)
//! n_widths   u32       followed by n_widths u32 layer widths, input first
//! hidden     u8        activation code (0 identity, 1 tanh, 2 mish)
//! output     u8        activation code
//! weights    f64...    every layer in order, row-major (out, in)
//! biases     f64...    every layer in order
//! sha256     32 bytes  digest of everything above
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use super::mlp::{Activation, Dense, NetParams, NetSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ISGCCKPT";
const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Net,
    Diffusion,
    GaussianActor,
}

impl CheckpointKind {
    fn code(self) -> u8 {
        match self {
            CheckpointKind::Net => 0,
            CheckpointKind::Diffusion => 1,
            CheckpointKind::GaussianActor => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(CheckpointKind::Net),
            1 => Some(CheckpointKind::Diffusion),
            2 => Some(CheckpointKind::GaussianActor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub meta: Vec<f64>,
    pub net: NetParams,
}

impl Checkpoint {
    pub fn net(net: NetParams) -> Self {
        Checkpoint {
            kind: CheckpointKind::Net,
            meta: Vec::new(),
            net,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.net.spec();
        let mut buf = Vec::with_capacity(
            64 + 8 * (self.meta.len() + crate::nn::Parameters::param_count(&self.net)),
        );
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(self.kind.code());
        buf.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for m in &self.meta {
            buf.extend_from_slice(&m.to_le_bytes());
        }
        buf.extend_from_slice(&(spec.widths.len() as u32).to_le_bytes());
        for w in &spec.widths {
            buf.extend_from_slice(&(*w as u32).to_le_bytes());
        }
        buf.push(spec.hidden.code());
        buf.push(spec.output.code());
        for l in self.net.layers() {
            for v in l.weight.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        for l in self.net.layers() {
            for v in l.bias.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + DIGEST_LEN {
            return Err(Error::CorruptCheckpoint("file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CorruptCheckpoint(format!(
                "unsupported version {version}"
            )));
        }
        let kind = CheckpointKind::from_code(r.u8()?)
            .ok_or_else(|| Error::CorruptCheckpoint("unknown checkpoint kind".into()))?;
        let n_meta = r.u32()? as usize;
        let meta = (0..n_meta).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let n_widths = r.u32()? as usize;
        let widths = (0..n_widths)
            .map(|_| r.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let act = |c: u8| {
            Activation::from_code(c)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("bad activation {c}")))
        };
        let hidden = act(r.u8()?)?;
        let output = act(r.u8()?)?;
        let spec = NetSpec::new(widths, hidden, output)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;

        let mut weights = Vec::with_capacity(spec.n_layers());
        for w in spec.widths.windows(2) {
            let vals = (0..w[0] * w[1])
                .map(|_| r.f64())
                .collect::<Result<Vec<_>>>()?;
            weights.push(Array2::from_shape_vec((w[1], w[0]), vals).expect("length checked"));
        }
        let mut layers = Vec::with_capacity(spec.n_layers());
        for (weight, w) in weights.into_iter().zip(spec.widths.windows(2)) {
            let vals = (0..w[1]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            layers.push(Dense {
                weight,
                bias: Array1::from(vals),
            });
        }
        if r.pos != body.len() {
            return Err(Error::CorruptCheckpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            kind,
            meta,
            net: NetParams::from_layers(spec, layers)?,
        })
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptCheckpoint("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
