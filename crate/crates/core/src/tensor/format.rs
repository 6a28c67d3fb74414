//! Single-tensor binary file format.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "FMLT"
//! 4       4           u32 version = 1
//! 8       1           u8 dtype code (1 float32, 2 float64, 3 int32, 4 uint8)
//! 9       1           u8 rank
//! 10      8 * rank    u64 extents
//! ...     ...         row-major elements
//! ```
//!
//! All integers and elements are little-endian.

use alloc::format;
use alloc::vec::Vec;

use super::{shape, DType, Storage, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMLT";
pub const VERSION: u32 = 1;

fn dtype_code(dtype: DType) -> u8 {
    match dtype {
        DType::F32 => 1,
        DType::F64 => 2,
        DType::I32 => 3,
        DType::U8 => 4,
    }
}

fn dtype_from_code(code: u8) -> Result<DType> {
    Ok(match code {
        1 => DType::F32,
        2 => DType::F64,
        3 => DType::I32,
        4 => DType::U8,
        other => return Err(Error::Format(format!("unknown dtype code {other}"))),
    })
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let rank = t.rank();
    assert!(rank <= u8::MAX as usize, "rank {rank} does not fit the header");
    let mut out = Vec::with_capacity(10 + 8 * rank + t.numel() * t.dtype().size_in_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype_code(t.dtype()));
    out.push(rank as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t.storage() {
        Storage::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Storage::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Storage::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Storage::U8(v) => out.extend_from_slice(v),
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!("truncated: needed {n} more bytes, have {}", bytes.len())));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn decode_tensor(mut bytes: &[u8]) -> Result<Tensor> {
    let buf = &mut bytes;
    if take(buf, 4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(buf, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dtype = dtype_from_code(take(buf, 1)?[0])?;
    let rank = take(buf, 1)?[0] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(take(buf, 8)?.try_into().unwrap());
        dims.push(usize::try_from(d).map_err(|_| Error::Format(format!("extent {d} too large")))?);
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("element count overflows".into()))?;
    let width = dtype.size_in_bytes();
    let payload = take(buf, n.checked_mul(width).ok_or_else(|| Error::Format("payload overflows".into()))?)?;
    if !buf.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len())));
    }
    let storage = match dtype {
        DType::F32 => Storage::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        DType::F64 => Storage::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
        DType::I32 => Storage::I32(payload.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()),
        DType::U8 => Storage::U8(payload.into()),
    };
    debug_assert_eq!(shape::numel(&dims), storage.len());
    Ok(Tensor::from_storage(dims, storage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn header_layout() {
        let t = Tensor::from_vec(&[2], vec![1.0f32, -2.0]).unwrap();
        let bytes = encode_tensor(&t);
        assert_eq!(&bytes[..4], b"FMLT");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(bytes[8], 1);
        assert_eq!(bytes[9], 1);
        assert_eq!(&bytes[10..18], &2u64.to_le_bytes());
        assert_eq!(&bytes[18..22], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 26);
    }

    #[test]
    fn rejects_truncation_and_garbage() {
        let t = Tensor::from_vec(&[3], vec![1i32, 2, 3]).unwrap();
        let bytes = encode_tensor(&t);
        assert!(decode_tensor(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_tensor(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode_tensor(&bad).is_err());
    }

    #[test]
    fn scalar_and_empty_roundtrip() {
        for t in [Tensor::scalar(7u8), Tensor::zeros(&[0, 3], DType::F64)] {
            let back = decode_tensor(&encode_tensor(&t)).unwrap();
            assert!(back.bitwise_eq(&t));
        }
    }
}
