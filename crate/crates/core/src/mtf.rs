//! `MTF1` raw tensor dumps.
//!
//! Layout: the magic bytes `MTF1`, a `u8` rank, `rank` little-endian `u32`
//! extents, then the elements as little-endian `f32`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: &[u8; 4] = b"MTF1";

/// Appends the encoding of `t` to `out`.
pub fn encode_into(t: &Tensor<f32>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + 4 * t.rank() + 4 * t.len());
    encode_into(t, &mut out);
    out
}

/// Encoded size in bytes of a tensor with this shape.
pub fn encoded_len(shape: &[usize]) -> usize {
    5 + 4 * shape.len() + 4 * shape.iter().product::<usize>()
}

/// Decodes one tensor from the front of `bytes`, returning it and the
/// number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> std::result::Result<(Tensor<f32>, usize), String> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| "truncated header".to_string())?;
    if &magic != MAGIC {
        return Err(format!("bad magic {magic:?}"));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank).map_err(|_| "truncated rank".to_string())?;
    let rank = rank[0] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(format!("unsupported rank {rank}"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| "truncated extents".to_string())?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let body = 5 + 4 * rank;
    let end = body + 4 * n;
    if bytes.len() < end {
        return Err(format!("expected {} data bytes, found {}", 4 * n, bytes.len() - body));
    }
    let data = bytes[body..end].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let t = Tensor::new(&shape, data).map_err(|e| e.to_string())?;
    Ok((t, end))
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    let (t, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - used));
    }
    Ok(t)
}

pub fn write(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::Format { path: path.to_path_buf(), reason })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2, 1], vec![1.0f32, -2.5]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"MTF1");
        assert_eq!(b[4], 2);
        assert_eq!(&b[5..9], &2u32.to_le_bytes());
        assert_eq!(&b[9..13], &1u32.to_le_bytes());
        assert_eq!(&b[13..17], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), encoded_len(&[2, 1]));
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"MTF2\x01\x01\x00\x00\x00").is_err());
        assert!(decode(b"MTF1\x01\x02\x00\x00\x00\x00\x00\x80\x3f").is_err());
        let t = Tensor::new(&[1], vec![1.0f32]).unwrap();
        let mut b = encode(&t);
        b.push(0);
        assert!(decode(&b).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(
            shape in prop::collection::vec(1usize..5, 1..=4),
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            let mut x = seed;
            let data: Vec<f32> = (0..n).map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((x >> 40) as f32 / (1u64 << 24) as f32) * 200.0 - 100.0
            }).collect();
            let t = Tensor::new(&shape, data).unwrap();
            let back = decode(&encode(&t)).unwrap();
            prop_assert!(back.bits_eq(&t));
        }
    }
}
