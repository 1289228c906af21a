//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic      "ITPQ"
//! version    u32
//! seed       u64
//! digest     [u8; 32]       config digest
//! meta       u32 count, then (str key, str value) pairs
//! tensors    u32 count, then (str name, u8 dtype, u32 rank, u64 dims.., payload)
//! optimizer  u8 present; if 1: f64 lr, beta1, beta2, eps; u64 step;
//!            u32 count, then (str name, u8 dtype, u64 len, m payload, v payload)
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8. Dtype codes: 1 = f32,
//! 2 = f64.

use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::nn::{Adam, AdamConfig, AdamMoments};
use crate::scalar::Scalar;
use crate::tensor::{Params, Tensor};

pub const MAGIC: [u8; 4] = *b"ITPQ";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub step: u64,
    /// `(name, m, v)` per trainable parameter.
    pub moments: Vec<(String, Vec<T>, Vec<T>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub seed: u64,
    pub digest: [u8; 32],
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<T>)>,
    pub optimizer: Option<OptimizerState<T>>,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::Checkpoint(CheckpointError::Malformed(msg.into()))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_params(params: &Params<T>, optimizer: Option<&Adam<T>>, seed: u64, digest: [u8; 32], meta: Vec<(String, String)>) -> Self {
        Checkpoint {
            seed,
            digest,
            meta,
            tensors: params.iter().map(|(_, n, t)| (n.to_string(), t.clone().with_grad(false))).collect(),
            optimizer: optimizer.map(|a| OptimizerState {
                config: a.config,
                step: a.step,
                moments: a.moments.iter().map(|m| (m.name.clone(), m.m.clone(), m.v.clone())).collect(),
            }),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Copies every tensor into `params`, which must have exactly the same
    /// names and shapes in the same order.
    pub fn apply_to(&self, params: &mut Params<T>) -> Result<()> {
        let mismatch = |n: &str| Error::Checkpoint(CheckpointError::ArchitectureMismatch(n.to_string()));
        let names: Vec<(String, Vec<usize>)> = params.iter().map(|(_, n, t)| (n.to_string(), t.shape().to_vec())).collect();
        for (i, (name, shape)) in names.iter().enumerate() {
            match self.tensors.get(i) {
                Some((n, t)) if n == name && t.shape() == shape.as_slice() => {}
                Some((n, _)) if n != name => return Err(mismatch(name)),
                _ => return Err(mismatch(name)),
            }
        }
        if let Some((extra, _)) = self.tensors.get(names.len()) {
            return Err(mismatch(extra));
        }
        for (i, (_, t)) in self.tensors.iter().enumerate() {
            let id = crate::tensor::ParamId(i);
            params.get_mut(id).data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    /// Optimizer restored against `params`; moments are matched by name.
    pub fn restore_optimizer(&self, params: &Params<T>) -> Result<Option<Adam<T>>> {
        let Some(state) = &self.optimizer else { return Ok(None) };
        let mut adam = Adam::new(params, state.config);
        adam.step = state.step;
        if adam.moments.len() != state.moments.len() {
            return Err(Error::Checkpoint(CheckpointError::ArchitectureMismatch("optimizer".into())));
        }
        for (mo, (name, m, v)) in adam.moments.iter_mut().zip(&state.moments) {
            if &mo.name != name || mo.m.len() != m.len() {
                return Err(Error::Checkpoint(CheckpointError::ArchitectureMismatch(format!("optimizer.{}", mo.name))));
            }
            *mo = AdamMoments {
                name: name.clone(),
                id: mo.id,
                m: m.clone(),
                v: v.clone(),
            };
        }
        Ok(Some(adam))
    }

    pub fn check_digest(&self, supplied: &[u8; 32]) -> Result<()> {
        if &self.digest != supplied {
            return Err(Error::Checkpoint(CheckpointError::DigestMismatch {
                stored: hex(&self.digest),
                supplied: hex(supplied),
            }));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.push(T::DTYPE);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_values(&mut out, t.data());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                for v in [s.config.lr, s.config.beta1, s.config.beta2, s.config.eps] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&s.step.to_le_bytes());
                out.extend_from_slice(&(s.moments.len() as u32).to_le_bytes());
                for (name, m, v) in &s.moments {
                    put_str(&mut out, name);
                    out.push(T::DTYPE);
                    out.extend_from_slice(&(m.len() as u64).to_le_bytes());
                    put_values(&mut out, m);
                    put_values(&mut out, v);
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "header")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::Checkpoint(CheckpointError::BadMagic(magic)));
        }
        let version = r.u32("header")?;
        if version != VERSION {
            return Err(Error::Checkpoint(CheckpointError::VersionMismatch {
                found: version,
                expected: VERSION,
            }));
        }
        let seed = r.u64("header")?;
        let digest: [u8; 32] = r.take(32, "header")?.try_into().expect("32 bytes");
        let n_meta = r.u32("meta")?;
        let mut meta = Vec::new();
        for _ in 0..n_meta {
            meta.push((r.string("meta")?, r.string("meta")?));
        }
        let n_tensors = r.u32("tensors")?;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let name = r.string("tensor name")?;
            r.dtype::<T>(&name)?;
            let rank = r.u32(&name)? as usize;
            if rank > 8 {
                return Err(malformed(format!("tensor `{name}` has rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u64(&name)? as usize);
            }
            let n: usize = dims.iter().product();
            let data = r.values::<T>(n, &name)?;
            let t = Tensor::new(dims, data).map_err(|e| malformed(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        let optimizer = match r.take(1, "optimizer")?[0] {
            0 => None,
            1 => {
                let mut c = [0.0; 4];
                for v in &mut c {
                    *v = f64::from_le_bytes(r.take(8, "optimizer")?.try_into().expect("8 bytes"));
                }
                let step = r.u64("optimizer")?;
                let count = r.u32("optimizer")?;
                let mut moments = Vec::new();
                for _ in 0..count {
                    let name = r.string("optimizer")?;
                    r.dtype::<T>(&name)?;
                    let len = r.u64(&name)? as usize;
                    let m = r.values::<T>(len, &name)?;
                    let v = r.values::<T>(len, &name)?;
                    moments.push((name, m, v));
                }
                Some(OptimizerState {
                    config: AdamConfig {
                        lr: c[0],
                        beta1: c[1],
                        beta2: c[2],
                        eps: c[3],
                    },
                    step,
                    moments,
                })
            }
            f => return Err(malformed(format!("optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            seed,
            digest,
            meta,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

/// Dtype code of the first tensor block, used to pick the precision before
/// a typed load.
pub fn peek_dtype(bytes: &[u8]) -> Result<u8> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "header")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::Checkpoint(CheckpointError::BadMagic(magic)));
    }
    let version = r.u32("header")?;
    if version != VERSION {
        return Err(Error::Checkpoint(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        }));
    }
    r.take(40, "header")?;
    for _ in 0..r.u32("meta")? {
        r.string("meta")?;
        r.string("meta")?;
    }
    if r.u32("tensors")? == 0 {
        return Err(malformed("no tensors"));
    }
    r.string("tensor name")?;
    let code = r.take(1, "dtype")?[0];
    match code {
        1 | 2 => Ok(code),
        c => Err(Error::Checkpoint(CheckpointError::UnknownDtype(c))),
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_values<T: Scalar>(out: &mut Vec<u8>, v: &[T]) {
    out.reserve(v.len() * T::BYTES);
    for x in v {
        x.write_le(out);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, block: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(CheckpointError::Truncated(block.to_string())))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, block: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, block)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, block: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, block)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, block: &str) -> Result<String> {
        let n = self.u32(block)? as usize;
        let b = self.take(n, block)?;
        String::from_utf8(b.to_vec()).map_err(|_| malformed(format!("non-UTF-8 string in `{block}`")))
    }

    fn dtype<T: Scalar>(&mut self, name: &str) -> Result<()> {
        let code = self.take(1, name)?[0];
        match code {
            1 | 2 if code == T::DTYPE => Ok(()),
            1 | 2 => Err(Error::Checkpoint(CheckpointError::DtypeMismatch {
                name: name.to_string(),
                found: code,
                expected: T::DTYPE,
            })),
            c => Err(Error::Checkpoint(CheckpointError::UnknownDtype(c))),
        }
    }

    fn values<T: Scalar>(&mut self, n: usize, block: &str) -> Result<Vec<T>> {
        let bytes = n
            .checked_mul(T::BYTES)
            .ok_or_else(|| malformed(format!("block `{block}` too large")))?;
        let raw = self.take(bytes, block)?;
        Ok(raw.chunks_exact(T::BYTES).map(T::read_le).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{EncoderVariant, ModelConfig, Networks};

    fn sample() -> (Networks<f32>, Checkpoint<f32>) {
        let nets = Networks::<f32>::new(ModelConfig::default(), 5);
        let adam = Adam::new(&nets.params, AdamConfig::default());
        let ck = Checkpoint::from_params(&nets.params, Some(&adam), 99, [7; 32], vec![("k".into(), "v".into())]);
        (nets, ck)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (nets, ck) = sample();
        let back = Checkpoint::<f32>::decode(&ck.encode()).unwrap();
        assert_eq!(back, ck);
        let mut fresh = Networks::<f32>::new(ModelConfig::default(), 6);
        back.apply_to(&mut fresh.params).unwrap();
        for ((_, _, a), (_, _, b)) in fresh.params.iter().zip(nets.params.iter()) {
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn named_format_errors() {
        let (_, ck) = sample();
        let mut bytes = ck.encode();
        let good = bytes.clone();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            Checkpoint::<f32>::decode(&bytes),
            Err(Error::Checkpoint(CheckpointError::BadMagic(m))) if &m == b"XXXX"
        ));
        let mut v2 = good.clone();
        v2[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = Checkpoint::<f32>::decode(&v2).unwrap_err();
        assert_eq!(err.to_string(), "checkpoint: version mismatch: found 2, expected 1");
        assert!(matches!(
            Checkpoint::<f32>::decode(&good[..good.len() - 3]),
            Err(Error::Checkpoint(CheckpointError::Truncated(_)))
        ));
        assert!(matches!(
            Checkpoint::<f64>::decode(&good),
            Err(Error::Checkpoint(CheckpointError::DtypeMismatch { found: 1, expected: 2, .. }))
        ));
        assert_eq!(peek_dtype(&good).unwrap(), 1);
        // first dtype byte sits after the header, meta and the first name
        let pos = 4 + 4 + 8 + 32 + 4 + (4 + 1) * 2 + 4 + 4 + ck.tensors[0].0.len();
        let mut bad = good.clone();
        bad[pos] = 9;
        assert!(matches!(
            Checkpoint::<f32>::decode(&bad),
            Err(Error::Checkpoint(CheckpointError::UnknownDtype(9)))
        ));
    }

    #[test]
    fn architecture_mismatch_names_first_tensor() {
        let (_, ck) = sample();
        let cfg = ModelConfig {
            channels: [16, 32, 64, 64, 64, 64, 64, 64, 64],
            ..Default::default()
        };
        let mut other = Networks::<f32>::new(cfg, 5);
        let err = ck.apply_to(&mut other.params).unwrap_err();
        assert_eq!(err.to_string(), "checkpoint: architecture mismatch at tensor `g.block1.conv.weight`");
        let mut single = Networks::<f32>::new(ModelConfig { encoder: EncoderVariant::ScnnSingleTap, ..Default::default() }, 5);
        let err = ck.apply_to(&mut single.params).unwrap_err();
        assert!(err.to_string().contains("g.fuse1.weight"));
    }

    #[test]
    fn optimizer_state_restores() {
        let (nets, ck) = sample();
        let adam = ck.restore_optimizer(&nets.params).unwrap().unwrap();
        assert_eq!(adam.step, 0);
        assert_eq!(adam.moments.len(), nets.params.iter().filter(|(_, _, t)| t.requires_grad()).count());
        assert!(ck.check_digest(&[7; 32]).is_ok());
        assert!(matches!(
            ck.check_digest(&[8; 32]),
            Err(Error::Checkpoint(CheckpointError::DigestMismatch { .. }))
        ));
    }
}
