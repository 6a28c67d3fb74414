//! Shape arithmetic shared by the kernels and the graph shape inference.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::{Error, Result};

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

pub fn check_axis(axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(Error::Axis { axis, rank });
    }
    Ok(())
}

/// Trailing-dimension broadcasting: dimensions are aligned from the right and
/// each pair must be equal or contain a 1.
pub fn broadcast(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(shape_err!("shapes {:?} and {:?} do not broadcast", a, b)),
        };
    }
    Ok(out)
}

/// Strides for reading an input of shape `input` as if it had shape `out`
/// (zero stride on broadcast dimensions).
pub fn broadcast_strides(input: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(input);
    let offset = out.len() - input.len();
    (0..out.len())
        .map(|i| {
            if i < offset || input[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Maps every linear index of `out` to the linear index of `input` under
/// broadcasting.
pub fn broadcast_index_map(input: &[usize], out: &[usize]) -> Vec<usize> {
    let bstrides = broadcast_strides(input, out);
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    if n == 0 {
        return map;
    }
    let mut idx = vec![0usize; out.len()];
    let mut offset = 0usize;
    for _ in 0..n {
        map.push(offset);
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            offset += bstrides[d];
            if idx[d] < out[d] {
                break;
            }
            offset -= bstrides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

pub fn matmul(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() < 2 || b.len() < 2 {
        return Err(shape_err!("matmul needs rank >= 2, got {:?} and {:?}", a, b));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(shape_err!("matmul contraction mismatch: {:?} x {:?}", a, b));
    }
    let mut out = broadcast(&a[..a.len() - 2], &b[..b.len() - 2])?;
    out.push(m);
    out.push(n);
    Ok(out)
}

pub fn reduce(x: &[usize], axis: usize, keep_dim: bool) -> Result<Vec<usize>> {
    check_axis(axis, x.len())?;
    let mut out = x.to_vec();
    if keep_dim {
        out[axis] = 1;
    } else {
        out.remove(axis);
    }
    Ok(out)
}

pub fn transpose(x: &[usize], perm: &[usize]) -> Result<Vec<usize>> {
    if perm.len() != x.len() {
        return Err(shape_err!("permutation {:?} does not match rank of {:?}", perm, x));
    }
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return Err(shape_err!("{:?} is not a permutation", perm));
        }
        seen[p] = true;
    }
    Ok(perm.iter().map(|&p| x[p]).collect())
}

pub fn reshape(x: &[usize], to: &[usize]) -> Result<Vec<usize>> {
    if numel(x) != numel(to) {
        return Err(shape_err!("cannot reshape {:?} to {:?}", x, to));
    }
    Ok(to.to_vec())
}

pub fn slice(x: &[usize], axis: usize, start: usize, end: usize) -> Result<Vec<usize>> {
    check_axis(axis, x.len())?;
    if start > end || end > x[axis] {
        return Err(shape_err!("slice {}..{} out of range for axis {} of {:?}", start, end, axis, x));
    }
    let mut out = x.to_vec();
    out[axis] = end - start;
    Ok(out)
}

pub fn concat(xs: &[&[usize]], axis: usize) -> Result<Vec<usize>> {
    let first = xs.first().ok_or_else(|| shape_err!("concat of zero tensors"))?;
    check_axis(axis, first.len())?;
    let mut out = first.to_vec();
    for x in &xs[1..] {
        if x.len() != first.len()
            || x.iter().zip(first.iter()).enumerate().any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(shape_err!("concat shapes {:?} and {:?} differ off axis {}", first, x, axis));
        }
        out[axis] += x[axis];
    }
    Ok(out)
}

pub fn gather(table: &[usize], ids: &[usize]) -> Result<Vec<usize>> {
    if table.is_empty() {
        return Err(shape_err!("gather table must have rank >= 1"));
    }
    let mut out = ids.to_vec();
    out.extend_from_slice(&table[1..]);
    Ok(out)
}

/// NHWC input, `[kh, kw, cin, cout]` kernel.
pub fn conv2d(x: &[usize], w: &[usize], stride: usize, padding: usize) -> Result<Vec<usize>> {
    if x.len() != 4 || w.len() != 4 {
        return Err(shape_err!("conv2d expects NHWC input and HWIO kernel, got {:?} and {:?}", x, w));
    }
    if stride == 0 {
        return Err(shape_err!("conv2d stride must be >= 1"));
    }
    if x[3] != w[2] {
        return Err(shape_err!("conv2d channel mismatch: input {:?}, kernel {:?}", x, w));
    }
    let (h, wd) = (x[1] + 2 * padding, x[2] + 2 * padding);
    if h < w[0] || wd < w[1] {
        return Err(shape_err!("conv2d kernel {:?} larger than padded input {:?}", w, x));
    }
    Ok(vec![x[0], (h - w[0]) / stride + 1, (wd - w[1]) / stride + 1, w[3]])
}

pub fn layernorm(x: &[usize], gamma: &[usize], beta: &[usize]) -> Result<Vec<usize>> {
    let last = *x.last().ok_or_else(|| shape_err!("layernorm needs rank >= 1"))?;
    if gamma != [last] || beta != [last] {
        return Err(shape_err!(
            "layernorm gamma {:?}/beta {:?} must match last axis of {:?}",
            gamma,
            beta,
            x
        ));
    }
    Ok(x.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_trailing_alignment() {
        assert_eq!(broadcast(&[4, 8], &[8]).unwrap(), vec![4, 8]);
        assert_eq!(broadcast(&[2, 1, 3], &[4, 1]).unwrap(), vec![2, 4, 3]);
        assert_eq!(broadcast(&[], &[3]).unwrap(), vec![3]);
        assert!(broadcast(&[4, 8], &[5]).is_err());
    }

    #[test]
    fn index_map_repeats_broadcast_rows() {
        assert_eq!(broadcast_index_map(&[3], &[2, 3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_index_map(&[2, 1], &[2, 3]), vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(broadcast_index_map(&[], &[2]), vec![0, 0]);
    }

    #[test]
    fn matmul_rule() {
        assert_eq!(matmul(&[4, 8], &[8, 3]).unwrap(), vec![4, 3]);
        assert_eq!(matmul(&[2, 5, 4, 8], &[8, 3]).unwrap(), vec![2, 5, 4, 3]);
        assert!(matmul(&[4, 8], &[7, 3]).is_err());
    }

    #[test]
    fn conv_same_padding() {
        assert_eq!(conv2d(&[1, 8, 8, 3], &[3, 3, 3, 4], 1, 1).unwrap(), vec![1, 8, 8, 4]);
        assert_eq!(conv2d(&[1, 8, 8, 3], &[3, 3, 3, 4], 2, 1).unwrap(), vec![1, 4, 4, 4]);
    }
}
