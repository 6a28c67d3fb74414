//! Byte-level BPE. Ids 0..4 are the specials, 4..260 the 256 bytes, and
//! merged tokens follow in the order they were learned.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::vocab::Vocabulary;
use crate::{Error, Result};

const SPECIALS: [&str; 4] = ["⟨pad⟩", "⟨unk⟩", "⟨bos⟩", "⟨eos⟩"];
const BYTE_BASE: u32 = 4;

/// GPT-2 style printable mapping, so every byte string has a whitespace-free
/// text form for the vocab and merges files.
pub fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let printable = |b: u32| (0x21..=0x7e).contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b);
    let mut extra = 0;
    for b in 0..256u32 {
        let c = if printable(b) {
            b
        } else {
            extra += 1;
            255 + extra
        };
        table[b as usize] = char::from_u32(c).unwrap();
    }
    table
}

pub fn unicode_to_bytes(s: &str) -> Option<Vec<u8>> {
    let table = bytes_to_unicode();
    s.chars().map(|c| table.iter().position(|&t| t == c).map(|b| b as u8)).collect()
}

fn encode_unicode(bytes: &[u8], table: &[char; 256]) -> String {
    bytes.iter().map(|&b| table[b as usize]).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    vocab: Vocabulary,
    /// Byte content of each id; empty for the specials.
    pieces: Vec<Vec<u8>>,
    merges: Vec<(u32, u32)>,
    /// Pair -> (rank, merged id).
    ranks: BTreeMap<(u32, u32), (usize, u32)>,
}

impl BpeModel {
    fn base() -> (Vec<Vec<u8>>, BTreeMap<Vec<u8>, u32>) {
        let mut pieces: Vec<Vec<u8>> = (0..4).map(|_| Vec::new()).collect();
        let mut index = BTreeMap::new();
        for b in 0..=255u8 {
            index.insert(alloc::vec![b], pieces.len() as u32);
            pieces.push(alloc::vec![b]);
        }
        (pieces, index)
    }

    /// Builds a model from an ordered merge list of byte strings.
    pub fn from_merges(merges: &[(Vec<u8>, Vec<u8>)]) -> Result<Self> {
        let (mut pieces, mut index) = Self::base();
        let mut pairs = Vec::with_capacity(merges.len());
        let mut ranks = BTreeMap::new();
        for (rank, (l, r)) in merges.iter().enumerate() {
            let lookup = |p: &Vec<u8>| {
                index.get(p).copied().ok_or_else(|| Error::Data(format!("merge {} uses unknown token {:?}", rank, p)))
            };
            let pair = (lookup(l)?, lookup(r)?);
            let mut joined = l.clone();
            joined.extend_from_slice(r);
            let id = *index.entry(joined.clone()).or_insert_with(|| {
                pieces.push(joined);
                pieces.len() as u32 - 1
            });
            if ranks.insert(pair, (rank, id)).is_some() {
                return Err(Error::Data(format!("duplicate merge at rank {}", rank)));
            }
            pairs.push(pair);
        }
        let table = bytes_to_unicode();
        let tokens = SPECIALS
            .iter()
            .map(|s| String::from(*s))
            .chain(pieces[4..].iter().map(|p| encode_unicode(p, &table)))
            .collect();
        Ok(BpeModel { vocab: Vocabulary::new(tokens)?, pieces, merges: pairs, ranks })
    }

    /// Parses a merges file: one `left right` pair per line, in rank order.
    pub fn from_merges_text(text: &str) -> Result<Self> {
        let mut merges = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let (Some(l), Some(r), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Data(format!("merges line {} is not a `left right` pair", n + 1)));
            };
            let decode = |s: &str| unicode_to_bytes(s).ok_or_else(|| Error::Data(format!("merges line {} has an unmapped character", n + 1)));
            merges.push((decode(l)?, decode(r)?));
        }
        Self::from_merges(&merges)
    }

    /// Rebuilds from the two asset files and checks the vocabulary agrees.
    pub fn from_files(vocab_text: &str, merges_text: &str) -> Result<Self> {
        let model = Self::from_merges_text(merges_text)?;
        let vocab = Vocabulary::from_text(vocab_text)?;
        if vocab != model.vocab {
            return Err(Error::Data("vocabulary does not match the merge list".into()));
        }
        Ok(model)
    }

    pub fn merges_text(&self) -> String {
        let table = bytes_to_unicode();
        let mut out = String::new();
        for &(l, r) in &self.merges {
            out.push_str(&encode_unicode(&self.pieces[l as usize], &table));
            out.push(' ');
            out.push_str(&encode_unicode(&self.pieces[r as usize], &table));
            out.push('\n');
        }
        out
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Ordered merges as byte strings.
    pub fn merges(&self) -> Vec<(Vec<u8>, Vec<u8>)> {
        self.merges.iter().map(|&(l, r)| (self.pieces[l as usize].clone(), self.pieces[r as usize].clone())).collect()
    }

    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_bytes(text.as_bytes())
    }

    /// Applies the lowest-ranked applicable merge, everywhere it occurs,
    /// until none applies.
    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        let mut ids: Vec<u32> = bytes.iter().map(|&b| BYTE_BASE + b as u32).collect();
        loop {
            let best = ids.windows(2).filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(rank, id)| (rank, (w[0], w[1]), id))).min();
            let Some((_, pair, id)) = best else { break };
            ids = apply_merge(&ids, pair, id);
        }
        ids
    }

    /// Concatenated bytes of non-special ids.
    pub fn decode_bytes(&self, ids: &[u32]) -> Vec<u8> {
        ids.iter().filter_map(|&i| self.pieces.get(i as usize)).flatten().copied().collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(ids)).into_owned()
    }
}

fn apply_merge(ids: &[u32], pair: (u32, u32), id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
            out.push(id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

/// Trains with the default minimum pair frequency of 2, so training stops
/// once no adjacent pair repeats.
pub fn train_bpe(corpus: &[&str], vocab_size: usize) -> Result<BpeModel> {
    train_bpe_with(corpus, vocab_size, 2)
}

/// Repeatedly merges the most frequent adjacent pair, ties going to the
/// lexicographically smallest `(left, right)` byte strings, until the
/// vocabulary has `vocab_size` entries or the best pair occurs fewer than
/// `min_frequency` times.
pub fn train_bpe_with(corpus: &[&str], vocab_size: usize, min_frequency: usize) -> Result<BpeModel> {
    if corpus.is_empty() {
        return Err(Error::Data("cannot train BPE on an empty corpus".into()));
    }
    let base = 4 + 256;
    if vocab_size < base {
        return Err(Error::Config(format!("vocab_size {} is below the {} base symbols", vocab_size, base)));
    }
    let mut words: BTreeMap<&[u8], usize> = BTreeMap::new();
    for s in corpus {
        *words.entry(s.as_bytes()).or_default() += 1;
    }
    let (mut pieces, mut index) = BpeModel::base();
    let mut seqs: Vec<(Vec<u32>, usize)> =
        words.into_iter().map(|(w, c)| (w.iter().map(|&b| BYTE_BASE + b as u32).collect(), c)).collect();
    let mut merges: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    let mut seen = BTreeMap::new();
    let min_frequency = min_frequency.max(1);

    while pieces.len() < vocab_size {
        let mut counts: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for (ids, c) in &seqs {
            for w in ids.windows(2) {
                if !seen.contains_key(&(w[0], w[1])) {
                    *counts.entry((w[0], w[1])).or_default() += c;
                }
            }
        }
        let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            let key = |p: &(u32, u32)| (&pieces[p.0 as usize], &pieces[p.1 as usize]);
            ca.cmp(cb).then_with(|| key(pb).cmp(&key(pa)))
        });
        let Some((pair, count)) = best else { break };
        if count < min_frequency {
            break;
        }
        let mut joined = pieces[pair.0 as usize].clone();
        joined.extend_from_slice(&pieces[pair.1 as usize]);
        let id = *index.entry(joined.clone()).or_insert_with(|| {
            pieces.push(joined);
            pieces.len() as u32 - 1
        });
        seen.insert(pair, id);
        merges.push((pieces[pair.0 as usize].clone(), pieces[pair.1 as usize].clone()));
        for (ids, _) in &mut seqs {
            *ids = apply_merge(ids, pair, id);
        }
    }
    BpeModel::from_merges(&merges)
}
