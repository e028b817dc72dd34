//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LAIF"  u16 version
//! u32 len, arch tag (UTF-8)
//! u32 count, then per class name: u32 len, UTF-8 bytes
//! u32 count, then per tensor: u32 len, name, u8 rank, rank x u32 dims,
//!     numel x f32
//! u32 CRC32 of every preceding byte
//! ```
//!
//! Integrity is checked before anything is parsed, so a flipped byte
//! anywhere in the file reports `CrcMismatch`. Only input whose magic is off
//! by more than one byte is rejected outright as `BadMagic`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{Arch, ArchKind, Model};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LAIF";
pub const VERSION: u16 = 1;

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Arch,
    pub class_names: Vec<String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, class_names: &[String]) -> Checkpoint {
        Checkpoint {
            arch: model.arch.clone(),
            class_names: class_names.to_vec(),
            tensors: model.net.state(),
        }
    }

    /// Rebuilds the model and loads every parameter and buffer.
    pub fn into_model(self) -> Result<Model> {
        let mut model = Model::build(&self.arch, 0)?;
        model.net.load_state(&self.tensors)?;
        Ok(model)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.arch.tag());
        put_u32(&mut out, self.class_names.len());
        for name in &self.class_names {
            put_str(&mut out, name);
        }
        put_u32(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.push(t.dims().len() as u8);
            for &d in t.dims() {
                put_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let magic_errors = MAGIC
            .iter()
            .zip(bytes)
            .filter(|(a, b)| a != b)
            .count()
            + MAGIC.len().saturating_sub(bytes.len());
        if magic_errors > 1 || bytes.len() < MAGIC.len() + 2 + 4 {
            return Err(Error::BadMagic);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::CrcMismatch { stored, computed });
        }
        if &body[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
        if version != VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let arch = Arch::parse_tag(&r.string()?)?;
        let class_names = (0..r.u32()?).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.take(1)?[0] as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let numel: usize = dims.iter().product();
            let raw = r.take(numel.checked_mul(4).ok_or(Error::InvalidShape(dims.clone()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, Tensor::new(dims, data)?));
        }
        if r.pos != body.len() {
            return Err(Error::MalformedHeader(format!(
                "{} trailing bytes in checkpoint",
                body.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            arch,
            class_names,
            tensors,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(
            Error::TruncatedData {
                expected: n,
                found: self.buf.len() - self.pos,
            },
        )?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::MalformedHeader("string is not UTF-8".into()))
    }
}

pub fn save_checkpoint(model: &Model, class_names: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = Checkpoint::from_model(model, class_names).encode();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    Checkpoint::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads a model and its class names, requiring the given architecture.
pub fn load_checkpoint(path: impl AsRef<Path>, expect: ArchKind) -> Result<(Model, Vec<String>)> {
    let ckpt = read_checkpoint(path)?;
    if ckpt.arch.kind() != expect {
        return Err(Error::ArchMismatch {
            expected: expect.name(),
            found: ckpt.arch.tag(),
        });
    }
    let names = ckpt.class_names.clone();
    Ok((ckpt.into_model()?, names))
}
