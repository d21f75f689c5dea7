//! Raw tensor blobs: magic "VQFB", rank and dims as u64 LE, f32 LE payload.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::io::bin::{write_f32_slice, write_u64, BinReader};

pub const BLOB_MAGIC: &[u8; 4] = b"VQFB";

pub fn write_blob<W: Write>(w: &mut W, dims: &[u64], data: &[f32]) -> Result<()> {
    let expected: u64 = dims.iter().product();
    if expected != data.len() as u64 {
        return Err(Error::Contract(format!(
            "blob payload length {} does not match dims {:?}",
            data.len(),
            dims
        )));
    }
    w.write_all(BLOB_MAGIC)?;
    write_u64(w, dims.len() as u64)?;
    for &d in dims {
        write_u64(w, d)?;
    }
    write_f32_slice(w, data)
}

pub fn read_blob<R: Read>(r: &mut BinReader<R>) -> Result<(Vec<u64>, Vec<f32>)> {
    r.expect_magic(BLOB_MAGIC)?;
    let rank = r.read_u64()?;
    if rank > 8 {
        return Err(r.fail(format!("blob rank {rank} too large")));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    let mut len: u64 = 1;
    for _ in 0..rank {
        let d = r.read_u64()?;
        len = len
            .checked_mul(d)
            .ok_or_else(|| r.fail("blob dims overflow"))?;
        dims.push(d);
    }
    if len > (1 << 32) {
        return Err(r.fail(format!("blob payload of {len} elements too large")));
    }
    let data = r.read_f32_vec(len as usize)?;
    Ok((dims, data))
}

/// Read a standalone blob file (no trailing bytes allowed).
pub fn read_blob_file(path: &std::path::Path) -> Result<(Vec<u64>, Vec<f32>)> {
    let file = std::fs::File::open(path)?;
    let mut r = BinReader::new(std::io::BufReader::new(file));
    let out = read_blob(&mut r)?;
    r.expect_eof()?;
    Ok(out)
}
