//! Tensor files and binary PPM images.

use std::fs;
use std::path::Path;

use strata_core::tensor::{decode_tensor, encode_tensor};
use strata_core::{DType, Error as CoreError, Tensor};

use crate::error::{Error, Result};

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(Error::io(path))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(decode_tensor(&bytes)?)
}

/// Encodes a `[H, W, 3]` uint8 image as binary PPM (P6, maxval 255).
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    if image.dtype() != DType::U8 || s.len() != 3 || s[2] != 3 {
        return Err(CoreError::Shape(format!("PPM needs a [H, W, 3] uint8 image, got {:?} {}", s, image.dtype())).into());
    }
    let mut out = format!("P6\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend_from_slice(image.data::<u8>()?);
    Ok(out)
}

/// Decodes binary PPM into a `[H, W, 3]` uint8 tensor. Only maxval 255 is
/// accepted.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let bad = |msg: &str| Error::from(CoreError::Format(format!("PPM: {msg}")));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // Whitespace and comments between header fields.
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("not a binary (P6) file"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    // Exactly one whitespace byte separates the header from the pixels.
    let body = bytes.get(pos + 1..).ok_or_else(|| bad("missing pixel data"))?;
    let n = w * h * 3;
    if body.len() != n {
        return Err(bad(&format!("expected {n} pixel bytes, found {}", body.len())));
    }
    Ok(Tensor::from_vec(&[h, w, 3], body.to_vec())?)
}

pub fn write_ppm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)?).map_err(Error::io(path))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode_ppm(&fs::read(path).map_err(Error::io(path))?)
}
