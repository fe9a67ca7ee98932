//! The WCAM tensor container.
//!
//! Little-endian throughout. A score stack is stored as:
//!
//! ```text
//! "WCAM"  u8 version = 1  u8 rank = 3
//! u32 classes  u32 height  u32 width
//! u16 name count, then per name: u16 byte length + UTF-8 bytes
//! f32 payload, class-major then row-major
//! ```
//!
//! Other artifacts reuse the magic and version and put an extension code in the
//! rank byte: [`EXT_PAIRS`] for pair sets, [`EXT_SPARSE`] for sparse matrices and
//! [`EXT_PARAMS`] for affinity-head checkpoints. Their layouts are documented with
//! the encoders in `afflabels`, `walk` and `model`.

use std::path::Path;

use crate::raster::ScoreStack;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"WCAM";
pub const VERSION: u8 = 1;
pub const RANK_STACK: u8 = 3;
pub const EXT_PAIRS: u8 = 0xE1;
pub const EXT_SPARSE: u8 = 0xE2;
pub const EXT_PARAMS: u8 = 0xE3;

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn with_header(kind: u8) -> Self {
        let mut w = Writer::default();
        w.buf.extend_from_slice(&MAGIC);
        w.u8(VERSION);
        w.u8(kind);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn dim(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::arg(format!("dimension {v} exceeds u32")))?;
        self.u32(v);
        Ok(())
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        let n = u16::try_from(s.len()).map_err(|_| Error::arg("name longer than 65535 bytes"))?;
        self.u16(n);
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version, then returns the reader and the rank/extension byte.
    pub fn open(buf: &'a [u8]) -> Result<(Self, u8)> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.take(4, "truncated header")?;
        if magic != MAGIC {
            return Err(Error::format(0, "bad magic"));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let kind = r.u8()?;
        Ok((r, kind))
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(self.pos, what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1, "truncated header")?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        let b = self.take(2, "truncated header")?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4, "truncated header")?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let b = self.take(8, "truncated header")?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let b = self.take(8, "truncated header")?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        let start = self.pos;
        let b = self.take(n, "truncated name table")?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::format(start, "name is not UTF-8"))
    }

    /// Product of `dims` times `elem` bytes, rejecting overflow and short buffers.
    pub fn payload_len(&self, dims: &[usize], elem: usize) -> Result<usize> {
        let n = dims
            .iter()
            .try_fold(elem, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(self.pos, "dimension overflow"))?;
        if n > self.remaining() {
            return Err(Error::format(self.pos, "truncated payload"));
        }
        Ok(n)
    }

    pub fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = self.take(count * 4, "truncated payload")?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn u32s(&mut self, count: usize) -> Result<Vec<u32>> {
        let bytes = self.take(count * 4, "truncated payload")?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(self.pos, "trailing bytes after payload"));
        }
        Ok(())
    }
}

pub fn encode_stack(stack: &ScoreStack) -> Result<Vec<u8>> {
    let mut w = Writer::with_header(RANK_STACK);
    w.dim(stack.num_classes())?;
    w.dim(stack.height())?;
    w.dim(stack.width())?;
    w.u16(
        u16::try_from(stack.num_classes()).map_err(|_| Error::arg("too many class names"))?,
    );
    for name in stack.classes() {
        w.str(name)?;
    }
    for &v in stack.data() {
        w.f32(v);
    }
    Ok(w.finish())
}

pub fn decode_stack(bytes: &[u8]) -> Result<ScoreStack> {
    let (mut r, rank) = Reader::open(bytes)?;
    if rank != RANK_STACK {
        return Err(Error::format(5, format!("expected rank 3 score stack, found rank byte {rank:#04x}")));
    }
    let classes = r.u32()? as usize;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let names_at = r.offset();
    let count = r.u16()? as usize;
    if count != classes {
        return Err(Error::format(names_at, format!("{count} class names for {classes} classes")));
    }
    let names = (0..count).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let payload_at = r.offset();
    let n = r.payload_len(&[classes, height, width], 4)?;
    let data = r.f32s(n / 4)?;
    r.finish()?;
    ScoreStack::new(width, height, names, data).map_err(|e| Error::format(payload_at, e.to_string()))
}

pub fn tensor_write(stack: &ScoreStack, path: &Path) -> Result<()> {
    let bytes = encode_stack(stack)?;
    std::fs::write(path, bytes).map_err(|e| Error::path(path, e))
}

pub fn tensor_read(path: &Path) -> Result<ScoreStack> {
    let bytes = std::fs::read(path).map_err(|e| Error::path(path, e))?;
    decode_stack(&bytes)
}
