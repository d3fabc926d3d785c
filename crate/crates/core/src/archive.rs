//! Binary containers for matrices, enhancement parameters and memory
//! snapshots. All integers and floats are little-endian; floats are stored
//! as raw IEEE-754 bits, so a save/load round trip is bit-exact.
//!
//! Named-matrix archive (`.cmat`):
//!
//! ```text
//! magic  "CLUEMAT1"                      8 bytes
//! count  u32
//! count times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rows u64, cols u64
//!   rows*cols f64, row-major
//! ```
//!
//! Memory snapshot (`.cmem`):
//!
//! ```text
//! magic  "CLUEMEM1"                      8 bytes
//! C u64, D u64, momentum f64, seed u64
//! (C+1)*D f64, row-major, last row = background
//! ```

use std::fs;
use std::path::Path;

use crate::enhance::EnhanceParams;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::memory::CategoryMemory;

const MATRIX_MAGIC: &[u8; 8] = b"CLUEMAT1";
const MEMORY_MAGIC: &[u8; 8] = b"CLUEMEM1";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    context: String,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], context: impl Into<String>) -> Self {
        Self {
            buf,
            pos: 0,
            context: context.into(),
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            context: format!("{} at byte {}", self.context, self.pos),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err("unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn size(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err("size does not fit in memory"))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n.checked_mul(8).ok_or_else(|| self.err("matrix too large"))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn magic(&mut self, want: &[u8; 8]) -> Result<()> {
        if self.take(8)? != want {
            return Err(self.err(format!("bad magic, expected {:?}", String::from_utf8_lossy(want))));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

pub fn encode_matrices<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Matrix)>) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, m) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_matrices(bytes: &[u8], context: &str) -> Result<Vec<(String, Matrix)>> {
    let mut r = Reader::new(bytes, context);
    r.magic(MATRIX_MAGIC)?;
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.err("matrix name is not UTF-8"))?
            .to_string();
        let rows = r.size()?;
        let cols = r.size()?;
        let n = rows.checked_mul(cols).ok_or_else(|| r.err("matrix too large"))?;
        let data = r.floats(n)?;
        out.push((name, Matrix::new(rows, cols, data)?));
    }
    r.finish()?;
    Ok(out)
}

pub fn write_matrices<'a>(path: &Path, entries: impl IntoIterator<Item = (&'a str, &'a Matrix)>) -> Result<()> {
    fs::write(path, encode_matrices(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_matrices(path: &Path) -> Result<Vec<(String, Matrix)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrices(&bytes, &path.display().to_string())
}

/// Looks up a named entry, erroring with the archive name when absent.
pub fn find<'a>(entries: &'a [(String, Matrix)], name: &str, archive: &str) -> Result<&'a Matrix> {
    entries
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, m)| m)
        .ok_or_else(|| Error::Parse {
            context: archive.to_string(),
            message: format!("missing matrix `{name}`"),
        })
}

fn row_vec(v: &[f64]) -> Matrix {
    Matrix::new(1, v.len(), v.to_vec()).expect("row vector")
}

fn as_row(m: &Matrix, name: &str) -> Result<Vec<f64>> {
    if m.rows() != 1 {
        return Err(Error::Shape(format!("{name} must be a single row, got {}x{}", m.rows(), m.cols())));
    }
    Ok(m.data().to_vec())
}

fn as_scalar(m: &Matrix, name: &str) -> Result<f64> {
    if m.shape() != (1, 1) {
        return Err(Error::Shape(format!("{name} must be 1x1, got {}x{}", m.rows(), m.cols())));
    }
    Ok(m.get(0, 0))
}

pub fn encode_params(p: &EnhanceParams) -> Vec<u8> {
    let b_embed = row_vec(&p.b_embed);
    let b_cls = row_vec(&p.b_cls);
    let b_fuse = row_vec(&p.b_fuse);
    let scale = row_vec(&[p.attn_scale]);
    let heads = row_vec(&[p.heads as f64]);
    encode_matrices([
        ("w_embed", &p.w_embed),
        ("b_embed", &b_embed),
        ("w_cls", &p.w_cls),
        ("b_cls", &b_cls),
        ("w_q", &p.w_q),
        ("w_k", &p.w_k),
        ("w_v", &p.w_v),
        ("w_fuse", &p.w_fuse),
        ("b_fuse", &b_fuse),
        ("attn_scale", &scale),
        ("heads", &heads),
    ])
}

pub fn decode_params(bytes: &[u8], context: &str) -> Result<EnhanceParams> {
    let entries = decode_matrices(bytes, context)?;
    let get = |name| find(&entries, name, context);
    let heads = as_scalar(get("heads")?, "heads")?;
    if heads < 1.0 || heads.fract() != 0.0 {
        return Err(Error::Shape(format!("heads must be a positive integer, got {heads}")));
    }
    let p = EnhanceParams {
        w_embed: get("w_embed")?.clone(),
        b_embed: as_row(get("b_embed")?, "b_embed")?,
        w_cls: get("w_cls")?.clone(),
        b_cls: as_row(get("b_cls")?, "b_cls")?,
        w_q: get("w_q")?.clone(),
        w_k: get("w_k")?.clone(),
        w_v: get("w_v")?.clone(),
        w_fuse: get("w_fuse")?.clone(),
        b_fuse: as_row(get("b_fuse")?, "b_fuse")?,
        attn_scale: as_scalar(get("attn_scale")?, "attn_scale")?,
        heads: heads as usize,
    };
    p.validate()?;
    Ok(p)
}

pub fn write_params(path: &Path, p: &EnhanceParams) -> Result<()> {
    fs::write(path, encode_params(p)).map_err(|e| Error::io(path, e))
}

pub fn read_params(path: &Path) -> Result<EnhanceParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes, &path.display().to_string())
}

pub fn encode_memory(mem: &CategoryMemory) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + mem.matrix().data().len() * 8);
    out.extend_from_slice(MEMORY_MAGIC);
    out.extend_from_slice(&(mem.num_classes() as u64).to_le_bytes());
    out.extend_from_slice(&(mem.dim() as u64).to_le_bytes());
    out.extend_from_slice(&mem.momentum().to_le_bytes());
    out.extend_from_slice(&mem.seed().to_le_bytes());
    for v in mem.matrix().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_memory(bytes: &[u8], context: &str) -> Result<CategoryMemory> {
    let mut r = Reader::new(bytes, context);
    r.magic(MEMORY_MAGIC)?;
    let c = r.size()?;
    let d = r.size()?;
    let momentum = r.f64()?;
    let seed = r.u64()?;
    let n = c
        .checked_add(1)
        .and_then(|rows| rows.checked_mul(d))
        .ok_or_else(|| r.err("memory too large"))?;
    let data = r.floats(n)?;
    r.finish()?;
    CategoryMemory::from_parts(c, momentum, seed, Matrix::new(c + 1, d, data)?)
}

pub fn write_memory(path: &Path, mem: &CategoryMemory) -> Result<()> {
    fs::write(path, encode_memory(mem)).map_err(|e| Error::io(path, e))
}

pub fn read_memory(path: &Path) -> Result<CategoryMemory> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_memory(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory;
    use proptest::prelude::*;

    #[test]
    fn params_round_trip() {
        let mut p = EnhanceParams::random(11, 5, 4, 3).unwrap();
        p.heads = 2;
        let back = decode_params(&encode_params(&p), "test").unwrap();
        assert_eq!(back, p);
        assert_eq!(encode_params(&back), encode_params(&p));
    }

    #[test]
    fn memory_round_trip_is_bit_exact() {
        let m = memory::init_memory(4, 32, 99, 0.3).unwrap().with_momentum(0.125).unwrap();
        let bytes = encode_memory(&m);
        let back = decode_memory(&bytes, "test").unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_memory(&back), bytes);
    }

    #[test]
    fn rejects_corrupt_input() {
        let m = Matrix::identity(2);
        let bytes = encode_matrices([("a", &m)]);
        assert!(decode_matrices(&bytes[..bytes.len() - 1], "t").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_matrices(&extra, "t").is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode_matrices(&bad, "t").is_err());
        let err = decode_params(&encode_matrices([("w_embed", &m)]), "p.cmat").unwrap_err();
        assert!(err.to_string().contains("missing matrix"), "{err}");
    }

    proptest! {
        #[test]
        fn matrix_archive_round_trip(
            data in proptest::collection::vec(any::<f64>(), 0..24),
            name in "[a-z_]{1,12}",
        ) {
            let cols = if data.is_empty() { 3 } else { data.len() };
            let rows = if data.is_empty() { 0 } else { 1 };
            let m = Matrix::new(rows, cols, data).unwrap();
            let bytes = encode_matrices([(name.as_str(), &m)]);
            let back = decode_matrices(&bytes, "t").unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0].0, &name);
            prop_assert_eq!(back[0].1.shape(), m.shape());
            let same = back[0].1.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
