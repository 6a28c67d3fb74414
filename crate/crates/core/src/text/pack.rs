use alloc::format;
use alloc::vec::Vec;

use super::vocab::{BOS, EOS, PAD};
use crate::{Error, Result, Tensor};

/// Packs one sequence to exactly `max_len` ids plus its 0/1 mask.
/// Overlong input is truncated from the right; BOS and EOS are kept.
pub fn pack(ids: &[u32], max_len: usize, add_bos: bool, add_eos: bool) -> Result<(Vec<i32>, Vec<i32>)> {
    let specials = add_bos as usize + add_eos as usize;
    if max_len == 0 || max_len < specials {
        return Err(Error::Config(format!("length {} leaves no room for {} special tokens", max_len, specials)));
    }
    let keep = ids.len().min(max_len - specials);
    let mut row = Vec::with_capacity(max_len);
    if add_bos {
        row.push(BOS as i32);
    }
    row.extend(ids[..keep].iter().map(|&i| i as i32));
    if add_eos {
        row.push(EOS as i32);
    }
    let real = row.len();
    row.resize(max_len, PAD as i32);
    let mut mask = alloc::vec![0i32; max_len];
    mask[..real].iter_mut().for_each(|m| *m = 1);
    Ok((row, mask))
}

/// A statically shaped batch of packed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedBatch {
    /// `[B, L]` int32.
    pub token_ids: Tensor,
    /// `[B, L]` int32, 1 on real tokens.
    pub padding_mask: Tensor,
}

impl PackedBatch {
    pub fn new(seqs: &[Vec<u32>], max_len: usize, add_bos: bool, add_eos: bool) -> Result<Self> {
        let mut ids = Vec::with_capacity(seqs.len() * max_len);
        let mut mask = Vec::with_capacity(seqs.len() * max_len);
        for s in seqs {
            let (r, m) = pack(s, max_len, add_bos, add_eos)?;
            ids.extend(r);
            mask.extend(m);
        }
        Ok(PackedBatch {
            token_ids: Tensor::from_vec(&[seqs.len(), max_len], ids)?,
            padding_mask: Tensor::from_vec(&[seqs.len(), max_len], mask)?,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.token_ids.shape()[0]
    }

    pub fn max_len(&self) -> usize {
        self.token_ids.shape()[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const B: i32 = BOS as i32;
    const E: i32 = EOS as i32;

    #[test]
    fn examples() {
        assert_eq!(pack(&[5, 6], 4, true, true).unwrap(), (vec![B, 5, 6, E], vec![1, 1, 1, 1]));
        assert_eq!(pack(&[5, 6, 7, 8], 4, true, true).unwrap().0, vec![B, 5, 6, E]);
        assert_eq!(pack(&[], 3, true, true).unwrap(), (vec![B, E, 0], vec![1, 1, 0]));
        assert_eq!(pack(&[9], 3, false, false).unwrap(), (vec![9, 0, 0], vec![1, 0, 0]));
    }

    #[test]
    fn too_short() {
        assert!(matches!(pack(&[1], 1, true, true), Err(Error::Config(_))));
        assert!(matches!(pack(&[1], 0, false, false), Err(Error::Config(_))));
        assert!(pack(&[1], 2, true, true).is_ok());
    }

    #[test]
    fn batch() {
        let b = PackedBatch::new(&[vec![4, 5], vec![6]], 5, true, false).unwrap();
        assert_eq!(b.token_ids.shape(), &[2, 5]);
        assert_eq!(b.padding_mask.data::<i32>().unwrap(), &[1, 1, 1, 0, 0, 1, 1, 0, 0, 0]);
    }
}
