//! Little-endian binary containers shared by the corpus, trajectory and
//! store artifacts.
//!
//! Every container is `magic[4] | version u16 | body | sha256(magic..body)`.
//! Readers verify the trailing digest before decoding anything, so a
//! truncated or edited file is rejected instead of decoded into garbage.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{LayerSpec, Layout};

pub const DIGEST_LEN: usize = 32;

/// An artifact value together with the config digest that produced it.
#[derive(Debug, Clone)]
pub struct Tagged<T> {
    pub value: T,
    pub config_digest: String,
}

pub fn sha256(bytes: &[u8]) -> [u8; DIGEST_LEN] {
    Sha256::digest(bytes).into()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    sha256(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(magic: &[u8; 4], version: u16) -> Self {
        let mut enc = Self { buf: Vec::new() };
        enc.buf.extend_from_slice(magic);
        enc.u16(version);
        enc
    }

    /// Bare encoder without a container header, for nested blobs.
    pub fn raw() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.write_u16::<LittleEndian>(v).expect("vec write");
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LittleEndian>(v).expect("vec write");
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LittleEndian>(v).expect("vec write");
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LittleEndian>(v).expect("vec write");
    }

    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.usize(v.len());
        self.buf.extend_from_slice(v);
    }

    pub fn bytes_fixed(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn str(&mut self, v: &str) {
        self.bytes(v.as_bytes());
    }

    /// Length-prefixed f64 array.
    pub fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        self.f64s_fixed(v);
    }

    /// f64 array whose length the reader already knows.
    pub fn f64s_fixed(&mut self, v: &[f64]) {
        let start = self.buf.len();
        self.buf.resize(start + v.len() * 8, 0);
        LittleEndian::write_f64_into(v, &mut self.buf[start..]);
    }

    pub fn u32s(&mut self, v: &[u32]) {
        self.usize(v.len());
        for &x in v {
            self.u32(x);
        }
    }

    pub fn usizes(&mut self, v: &[usize]) {
        self.usize(v.len());
        for &x in v {
            self.usize(x);
        }
    }

    pub fn layout(&mut self, layout: &Layout) {
        self.usize(layout.layers().len());
        for layer in layout.layers() {
            self.str(&layer.id);
            self.usizes(&layer.shape);
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }

    /// Append the trailing digest and return the finished container.
    pub fn finish(mut self) -> Vec<u8> {
        let digest = sha256(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }
}

pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    /// Verify magic, version and trailing digest; the decoder then reads the
    /// body only.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4], version: u16) -> Result<Self> {
        if bytes.len() < 6 + DIGEST_LEN {
            return Err(Error::Corrupt("file too short".into()));
        }
        if &bytes[..4] != magic {
            return Err(Error::Corrupt(format!(
                "bad magic: expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let split = bytes.len() - DIGEST_LEN;
        let (content, digest) = bytes.split_at(split);
        if sha256(content) != digest {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        let found = LittleEndian::read_u16(&content[4..6]);
        if found != version {
            return Err(Error::Corrupt(format!(
                "unsupported version {found}, expected {version}"
            )));
        }
        Ok(Self {
            buf: content,
            pos: 6,
        })
    }

    pub fn raw(bytes: &'a [u8]) -> Self {
        Self { buf: bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Corrupt("unexpected end of data".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.take(2)?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8)?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.take(8)?))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Corrupt(format!("length {v} overflows")))
    }

    /// Length prefix that must fit in the remaining bytes at `unit` bytes each.
    fn len_prefix(&mut self, unit: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(unit) > self.remaining() {
            return Err(Error::Corrupt(format!("length {n} exceeds remaining data")));
        }
        Ok(n)
    }

    pub fn bytes_fixed(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len_prefix(1)?;
        self.take(n)
    }

    pub fn str(&mut self) -> Result<String> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Corrupt("invalid utf-8 string".into()))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len_prefix(8)?;
        self.f64s_fixed(n)
    }

    pub fn f64s_fixed(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("overflow".into()))?)?;
        let mut out = vec![0.0; n];
        LittleEndian::read_f64_into(raw, &mut out);
        Ok(out)
    }

    pub fn u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.len_prefix(4)?;
        (0..n).map(|_| self.u32()).collect()
    }

    pub fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len_prefix(8)?;
        (0..n).map(|_| self.usize()).collect()
    }

    pub fn layout(&mut self) -> Result<std::sync::Arc<Layout>> {
        let n = self.len_prefix(1)?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let id = self.str()?;
            let shape = self.usizes()?;
            layers.push(LayerSpec { id, shape });
        }
        Ok(Layout::new(layers))
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after body",
                self.remaining()
            )));
        }
        Ok(())
    }
}

/// Write via a temporary sibling and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
