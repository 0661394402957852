//! Binary tensor-block serialization.
//!
//! A block is: name length (u32 LE), UTF-8 name, rank (u32 LE), one u32 LE
//! per dim, then the payload as 32-bit LE floats. Blocks are concatenated
//! until end of stream.

use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error reading tensor block: {0}")]
    Io(#[from] io::Error),
    #[error("truncated tensor block ({0})")]
    Truncated(&'static str),
    #[error("tensor block name is not valid UTF-8")]
    BadName,
    #[error("implausible tensor block field: {0}")]
    Implausible(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

const MAX_NAME_LEN: u32 = 4096;
const MAX_RANK: u32 = 16;
const MAX_NUMEL: u64 = 1 << 32;

pub fn write_block<W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[f32]) -> io::Result<()> {
    assert_eq!(
        shape.iter().product::<usize>(),
        data.len(),
        "tensor block {name}: shape {shape:?} does not match payload length {}",
        data.len()
    );
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<Option<u32>, CheckpointError> {
    let mut buf = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(CheckpointError::Truncated(what));
        }
        filled += n;
    }
    Ok(Some(u32::from_le_bytes(buf)))
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CheckpointError::Truncated(what)
        } else {
            CheckpointError::Io(e)
        }
    })
}

/// Read one block, or `None` at a clean end of stream. A stream that ends
/// mid-block is an error, never a partial result.
pub fn read_block<R: Read>(r: &mut R) -> Result<Option<TensorBlock>, CheckpointError> {
    let Some(name_len) = read_u32(r, "name length")? else {
        return Ok(None);
    };
    if name_len > MAX_NAME_LEN {
        return Err(CheckpointError::Implausible(format!("name length {name_len}")));
    }
    let mut name = vec![0u8; name_len as usize];
    read_exact_or(r, &mut name, "name")?;
    let name = String::from_utf8(name).map_err(|_| CheckpointError::BadName)?;

    let rank = read_u32(r, "rank")?.ok_or(CheckpointError::Truncated("rank"))?;
    if rank > MAX_RANK {
        return Err(CheckpointError::Implausible(format!("rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut numel: u64 = 1;
    for _ in 0..rank {
        let d = read_u32(r, "dim")?.ok_or(CheckpointError::Truncated("dim"))?;
        numel = numel.saturating_mul(d as u64);
        shape.push(d as usize);
    }
    if numel > MAX_NUMEL {
        return Err(CheckpointError::Implausible(format!("{numel} elements")));
    }
    let mut payload = vec![0u8; numel as usize * 4];
    read_exact_or(r, &mut payload, "payload")?;
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Some(TensorBlock { name, shape, data }))
}

pub fn read_all_blocks<R: Read>(r: &mut R) -> Result<Vec<TensorBlock>, CheckpointError> {
    let mut blocks = Vec::new();
    while let Some(block) = read_block(r)? {
        blocks.push(block);
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut buf = Vec::new();
        write_block(&mut buf, "policy/w0", &[2, 3], &[1.5, -2.25, 0.0, 3.5e-8, -1.0, 7.0]).unwrap();
        write_block(&mut buf, "log_beta", &[1], &[-2.302_585]).unwrap();
        let blocks = read_all_blocks(&mut buf.as_slice()).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].name, "policy/w0");
        assert_eq!(blocks[0].shape, vec![2, 3]);
        assert_eq!(blocks[0].data, vec![1.5, -2.25, 0.0, 3.5e-8, -1.0, 7.0]);
        assert_eq!(blocks[1].name, "log_beta");
    }

    #[test]
    fn truncated_stream_is_an_error() {
        let mut buf = Vec::new();
        write_block(&mut buf, "w", &[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        for cut in 1..buf.len() {
            let res = read_all_blocks(&mut buf[..cut].to_vec().as_slice());
            assert!(res.is_err(), "cut at {cut} should fail");
        }
    }

    #[test]
    fn garbage_header_is_rejected() {
        let buf = vec![0xFFu8; 64];
        assert!(read_all_blocks(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn empty_stream_reads_no_blocks() {
        let blocks = read_all_blocks(&mut (&[] as &[u8])).unwrap();
        assert!(blocks.is_empty());
    }
}
