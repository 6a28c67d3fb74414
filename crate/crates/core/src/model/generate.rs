use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::backbone::{attend, bind, block_finish, block_qkv, final_norm, Bound};
use super::config::{BackboneConfig, TransformerConfig};
use super::task::{EncodedBatch, TaskKind, TaskModel};
use super::{Mode, MASK_BIAS};
use crate::ops::{Eager, Ops};
use crate::text::{pack, BOS, EOS, PAD, UNK};
use crate::{Backend, DType, Error, Result, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Highest logit, lowest id on ties.
    Greedy,
    /// Samples among the `k` highest logits.
    TopK { k: usize, seed: u64 },
}

/// Statically shaped per-layer keys and values, `[B, H, L, D/H]` each, with
/// a fill cursor per sequence.
#[derive(Debug, Clone)]
pub struct KvCache {
    batch: usize,
    heads: usize,
    max_len: usize,
    head_dim: usize,
    dtype: DType,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    cursor: Vec<usize>,
}

impl KvCache {
    pub fn new(config: &TransformerConfig, batch: usize, dtype: DType) -> Self {
        let size = batch * config.heads * config.max_len * config.head_dim();
        KvCache {
            batch,
            heads: config.heads,
            max_len: config.max_len,
            head_dim: config.head_dim(),
            dtype,
            keys: vec![vec![0.0; size]; config.layers],
            values: vec![vec![0.0; size]; config.layers],
            cursor: vec![0; batch],
        }
    }

    pub fn cursor(&self, row: usize) -> usize {
        self.cursor[row]
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.heads, self.max_len, self.head_dim]
    }

    /// Stores `[B, H, 1, dh]` at each row's cursor.
    fn write(&mut self, layer: usize, k: &Tensor, v: &Tensor) {
        let (h, l, dh) = (self.heads, self.max_len, self.head_dim);
        for (src, dst) in [(k, &mut self.keys[layer]), (v, &mut self.values[layer])] {
            let data = src.to_f64_vec();
            for b in 0..self.batch {
                for head in 0..h {
                    let from = (b * h + head) * dh;
                    let to = ((b * h + head) * l + self.cursor[b]) * dh;
                    dst[to..to + dh].copy_from_slice(&data[from..from + dh]);
                }
            }
        }
    }

    fn tensors(&self, layer: usize) -> Result<(Tensor, Tensor)> {
        let shape = self.shape();
        Ok((Tensor::create(&shape, self.dtype, &self.keys[layer])?, Tensor::create(&shape, self.dtype, &self.values[layer])?))
    }

    /// `[B, 1, 1, L]`: keys up to and including each cursor are visible.
    fn bias(&self) -> Result<Tensor> {
        let mut out = vec![MASK_BIAS; self.batch * self.max_len];
        for b in 0..self.batch {
            out[b * self.max_len..b * self.max_len + self.cursor[b] + 1].iter_mut().for_each(|x| *x = 0.0);
        }
        Tensor::create(&[self.batch, 1, 1, self.max_len], self.dtype, &out)
    }
}

impl TaskModel {
    fn lm_config(&self) -> Result<&TransformerConfig> {
        match (self.kind(), self.backbone().config()) {
            (TaskKind::TextGeneration, BackboneConfig::TransformerLm(c)) => Ok(c),
            _ => Err(Error::Config(format!("generation needs a text_generation model, this is {}", self.kind()))),
        }
    }

    /// Feeds one token per row at the rows' cursors; returns `[B, V]` logits.
    pub fn decode_step(&self, cache: &mut KvCache, tokens: &[u32], backend: &dyn Backend) -> Result<Tensor> {
        let c = self.lm_config()?;
        let b = tokens.len();
        if b != cache.batch || (0..b).any(|r| cache.cursor[r] >= c.max_len) {
            return Err(Error::Config("cache is full or sized for another batch".into()));
        }
        let mut ops = Eager::new(backend);
        let p: Bound<Tensor> = bind(&mut ops, self.params())?;
        let ids = Tensor::from_vec(&[b, 1], tokens.iter().map(|&t| t as i32).collect())?;
        let pos = Tensor::from_vec(&[b, 1], cache.cursor.iter().map(|&t| t as i32).collect())?;
        let tok = ops.gather(p.get("embed/token")?, &ids)?;
        let pe = ops.gather(p.get("embed/position")?, &pos)?;
        let mut x = ops.add(&tok, &pe)?;
        let bias = cache.bias()?;
        for i in 0..c.layers {
            let qkv = block_qkv(&mut ops, c, &p, i, &x)?;
            cache.write(i, &qkv.k, &qkv.v);
            let (keys, values) = cache.tensors(i)?;
            let attn = attend(&mut ops, &qkv.q, &keys, &values, &bias, c.head_dim())?;
            x = block_finish(&mut ops, c, &p, i, &x, &attn)?;
        }
        cache.cursor.iter_mut().for_each(|t| *t += 1);
        let x = final_norm(&mut ops, &p, &x)?;
        let tied = ops.transpose(p.get("embed/token")?, &[1, 0])?;
        let logits = ops.matmul(&x, &tied)?;
        ops.reshape(&logits, &[b, c.vocab])
    }

    /// Continues `prompt` by up to `max_new` tokens, stopping at EOS, using
    /// the KV cache.
    pub fn generate(&self, prompt: &str, max_new: usize, strategy: Strategy, backend: &dyn Backend) -> Result<String> {
        let tok = self.tokenizer().ok_or_else(|| Error::Config("model has no tokenizer".into()))?;
        let ids = self.generate_ids(&tok.encode(prompt), max_new, strategy, backend, true, Mode::Eager)?;
        Ok(tok.decode(&ids))
    }

    /// Token-level generation. Without the cache every step re-runs the full
    /// padded sequence, eagerly or through a compiled graph.
    pub fn generate_ids(
        &self,
        prompt: &[u32],
        max_new: usize,
        strategy: Strategy,
        backend: &dyn Backend,
        use_cache: bool,
        mode: Mode,
    ) -> Result<Vec<u32>> {
        let c = self.lm_config()?;
        if 1 + prompt.len() + max_new > c.max_len {
            return Err(Error::Config(format!(
                "prompt of {} tokens plus {} new tokens does not fit max_len {}",
                prompt.len(),
                max_new,
                c.max_len
            )));
        }
        if let Strategy::TopK { k: 0, .. } = strategy {
            return Err(Error::Config("top-k sampling needs k >= 1".into()));
        }
        let limit = self.tokenizer().map_or(c.vocab, |t| t.vocab_size()).min(c.vocab);
        let mut rng = match strategy {
            Strategy::TopK { seed, .. } => Rng::new(seed),
            Strategy::Greedy => Rng::new(0),
        };
        let mut seq: Vec<u32> = core::iter::once(BOS).chain(prompt.iter().copied()).collect();
        let mut out = Vec::new();
        if max_new == 0 {
            return Ok(out);
        }
        let mut cache = KvCache::new(c, 1, self.dtype());
        let compiled = if !use_cache && mode == Mode::Graph { Some(self.compile(&self.pack_row(&seq)?)?) } else { None };
        let mut fed = 0;
        for _ in 0..max_new {
            let logits: Vec<f64> = if use_cache {
                let mut last = None;
                while fed < seq.len() {
                    last = Some(self.decode_step(&mut cache, &seq[fed..fed + 1], backend)?);
                    fed += 1;
                }
                last.expect("at least one token fed").to_f64_vec()
            } else {
                let batch = self.pack_row(&seq)?;
                let all = match &compiled {
                    Some(g) => g.logits(&batch, backend)?,
                    None => self.logits(&batch, backend, Mode::Eager)?,
                };
                let row = seq.len() - 1;
                all.to_f64_vec()[row * c.vocab..(row + 1) * c.vocab].to_vec()
            };
            let next = pick(&logits, limit, strategy, &mut rng);
            if next == EOS {
                break;
            }
            out.push(next);
            seq.push(next);
        }
        Ok(out)
    }

    fn pack_row(&self, seq: &[u32]) -> Result<EncodedBatch> {
        let c = self.lm_config()?;
        let (ids, mask) = pack(seq, c.max_len, false, false)?;
        Ok(EncodedBatch::Text { rows: 1, len: c.max_len, ids, mask })
    }

    /// Greedy continuation filling the remaining context.
    pub(crate) fn complete(&self, prompt: &str, backend: &dyn Backend, mode: Mode) -> Result<String> {
        let c = self.lm_config()?;
        let tok = self.tokenizer().ok_or_else(|| Error::Config("model has no tokenizer".into()))?;
        let ids = tok.encode(prompt);
        let room = c.max_len.saturating_sub(1 + ids.len());
        if room == 0 {
            return Err(Error::Config(format!("prompt of {} tokens leaves no room in max_len {}", ids.len(), c.max_len)));
        }
        let out = self.generate_ids(&ids, room, Strategy::Greedy, backend, mode == Mode::Eager, mode)?;
        Ok(tok.decode(&out))
    }
}

/// Chooses the next token among EOS and the non-special ids below `limit`.
fn pick(logits: &[f64], limit: usize, strategy: Strategy, rng: &mut Rng) -> u32 {
    let allowed = |i: usize| i < limit && i as u32 != PAD && i as u32 != UNK && i as u32 != BOS;
    let mut ranked: Vec<usize> = (0..logits.len()).filter(|&i| allowed(i)).collect();
    ranked.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    match strategy {
        Strategy::Greedy => ranked[0] as u32,
        Strategy::TopK { k, .. } => {
            let top = &ranked[..k.min(ranked.len())];
            let max = logits[top[0]];
            let weights: Vec<f64> = top.iter().map(|&i| libm::exp(logits[i] - max)).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.next_f64() * total;
            for (&i, &w) in top.iter().zip(&weights) {
                if u < w {
                    return i as u32;
                }
                u -= w;
            }
            *top.last().expect("non-empty") as u32
        }
    }
}
