//! Binary feature-map files.
//!
//! Layout, all integers and reals little-endian:
//!
//! | field        | size                         |
//! |--------------|------------------------------|
//! | magic `FMAP` | 4 bytes                      |
//! | version      | u16 (currently 1)            |
//! | dtype        | u16 (0 = f32)                |
//! | C, H, W      | 3 x u32                      |
//! | scale factor | f64                          |
//! | layer tag    | u16 byte length + UTF-8      |
//! | payload      | C*H*W x f32, channel-major   |

use std::path::Path;

use crate::error::{Error, Result};
use crate::featmap::FeatureMap;
use crate::io::write_atomic;

pub const MAGIC: &[u8; 4] = b"FMAP";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u16 = 0;

pub fn encode_tensor(fm: &FeatureMap) -> Vec<u8> {
    let tag = fm.layer_tag().as_bytes();
    let mut out = Vec::with_capacity(32 + tag.len() + fm.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for dim in [fm.channels(), fm.height(), fm.width()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&fm.scale_factor().to_le_bytes());
    out.extend_from_slice(&(tag.len() as u16).to_le_bytes());
    out.extend_from_slice(tag);
    for v in fm.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                detail: format!("{what} needs {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a tensor image. `path` is only used in error messages.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<FeatureMap> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let mut cur = Cursor {
        buf: bytes,
        pos: 4,
        path,
    };
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let dtype = cur.u16("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(Error::format(path, format!("unsupported dtype code {dtype}")));
    }
    let c = cur.u32("channels")? as usize;
    let h = cur.u32("height")? as usize;
    let w = cur.u32("width")? as usize;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::format(path, format!("empty tensor {c}x{h}x{w}")));
    }
    let scale = cur.f64("scale factor")?;
    let tag_len = cur.u16("layer tag length")? as usize;
    let tag = std::str::from_utf8(cur.take(tag_len, "layer tag")?)
        .map_err(|_| Error::format(path, "layer tag is not UTF-8"))?
        .to_owned();
    let count = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| Error::format(path, "tensor dimensions overflow"))?;
    let payload = cur.take(count * 4, "payload")?;
    if cur.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after payload", bytes.len() - cur.pos),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("tensor payload"));
    }
    FeatureMap::new(c, h, w, data, scale, tag)
}

pub fn read_tensor(path: &Path) -> Result<FeatureMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

pub fn write_tensor(fm: &FeatureMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_tensor(fm))
}
