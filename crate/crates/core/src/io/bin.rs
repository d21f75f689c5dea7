//! Little-endian binary primitives with byte-offset error reporting.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Reader wrapper that tracks the byte offset for parse errors.
pub struct BinReader<R> {
    inner: R,
    pos: usize,
}

impl<R: Read> BinReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn fail(&self, message: impl Into<String>) -> Error {
        Error::Parse { offset: self.pos, message: message.into() }
    }

    pub fn read_bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| Error::Parse {
            offset: self.pos,
            message: format!("truncated payload ({e})"),
        })?;
        self.pos += buf.len();
        Ok(())
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let mut got = [0u8; 4];
        self.read_bytes(&mut got)?;
        if &got != magic {
            return Err(Error::Parse {
                offset: self.pos - 4,
                message: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&got),
                    String::from_utf8_lossy(magic)
                ),
            });
        }
        Ok(())
    }

    pub fn read_u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn read_u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn read_f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.read_bytes(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    pub fn read_f32_vec(&mut self, len: usize) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.read_f32()?);
        }
        Ok(out)
    }

    /// Length-checked usize conversion for dimensions read from files.
    pub fn read_dim(&mut self, what: &str) -> Result<usize> {
        let v = self.read_u64()?;
        usize::try_from(v).map_err(|_| self.fail(format!("{what} {v} does not fit in usize")))
    }

    /// Error if any bytes remain.
    pub fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.fail("trailing data after payload")),
            Err(e) => Err(Error::Io(e)),
        }
    }
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f32_slice<W: Write>(w: &mut W, vs: &[f32]) -> Result<()> {
    for &v in vs {
        write_f32(w, v)?;
    }
    Ok(())
}
