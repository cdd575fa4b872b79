//! Binary weight file.
//!
//! ```text
//! "CREN"                       4 bytes
//! version                      u32 LE (= 1)
//! repeated per tensor:
//!   name length                u32 LE
//!   name                       UTF-8 bytes ("conv0.weight", "conv0.bias", ...)
//!   shape                      4 x u32 LE
//!   payload                    f32 LE, product(shape) values
//! crc32 of all bytes above     u32 LE
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::model::{CreNetWeights, LAYERS};
use super::real::Real;

pub const MAGIC: &[u8; 4] = b"CREN";
pub const VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_tensor<T: Real>(out: &mut Vec<u8>, name: &str, shape: [usize; 4], values: &[T]) {
    push_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    for d in shape {
        push_u32(out, d as u32);
    }
    for v in values {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

pub fn encode_weights<T: Real>(weights: &CreNetWeights<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * weights.parameter_count() + 1024);
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, VERSION);
    for (conv, spec) in weights.layers.iter().zip(&LAYERS) {
        push_tensor(
            &mut out,
            &format!("{}.weight", spec.name),
            [conv.out_channels, conv.in_channels, conv.kernel, conv.kernel],
            &conv.weight,
        );
        push_tensor(
            &mut out,
            &format!("{}.bias", spec.name),
            [conv.out_channels, 1, 1, 1],
            &conv.bias,
        );
    }
    let crc = crc32fast::hash(&out);
    push_u32(&mut out, crc);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_weights<T: Real>(bytes: &[u8]) -> Result<CreNetWeights<T>> {
    if bytes.len() < 12 {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        return Err(Error::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::BadChecksum { stored, computed });
    }

    let mut reader = Reader { bytes: body, pos: 8 };
    let mut weights = CreNetWeights::<T>::zeros();
    for (conv, spec) in weights.layers.iter_mut().zip(&LAYERS) {
        for (suffix, shape, dst) in [
            (
                "weight",
                [spec.out_channels, spec.in_channels, spec.kernel, spec.kernel],
                &mut conv.weight,
            ),
            ("bias", [spec.out_channels, 1, 1, 1], &mut conv.bias),
        ] {
            let expected = format!("{}.{suffix}", spec.name);
            let name_len = reader.u32()? as usize;
            let name = reader.take(name_len)?;
            if name != expected.as_bytes() {
                return Err(Error::Layout(format!(
                    "expected tensor {expected}, found {}",
                    String::from_utf8_lossy(name)
                )));
            }
            let mut file_shape = [0usize; 4];
            for d in &mut file_shape {
                *d = reader.u32()? as usize;
            }
            if file_shape != shape {
                return Err(Error::Layout(format!(
                    "{expected} has shape {file_shape:?}, expected {shape:?}"
                )));
            }
            let payload = reader.take(dst.len() * 4)?;
            for (v, chunk) in dst.iter_mut().zip(payload.chunks_exact(4)) {
                let f = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
                *v = T::lit(f64::from(f));
            }
        }
    }
    if reader.pos != body.len() {
        return Err(Error::Layout(format!(
            "{} trailing bytes after the last tensor",
            body.len() - reader.pos
        )));
    }
    Ok(weights)
}

pub fn save_weights<T: Real>(weights: &CreNetWeights<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(weights)).map_err(|e| Error::io(path, e))
}

pub fn load_weights<T: Real>(path: impl AsRef<Path>) -> Result<CreNetWeights<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}
