use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::config::{BackboneConfig, ConvnetConfig, TransformerConfig};
use super::Mode;
use crate::graph::{self, TensorSpec};
use crate::ops::{Ops, Program};
use crate::text::PAD;
use crate::{Backend, DType, Error, Result, Rng, Tensor};

pub const LAYERNORM_EPS: f64 = 1e-5;
/// Added to attention scores of disallowed keys.
pub const MASK_BIAS: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamInit {
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: ParamInit,
}

fn spec(name: String, shape: &[usize], init: ParamInit) -> ParamSpec {
    ParamSpec { name, shape: shape.to_vec(), init }
}

fn matrix(name: String, rows: usize, cols: usize) -> ParamSpec {
    spec(name, &[rows, cols], ParamInit::Xavier { fan_in: rows, fan_out: cols })
}

/// Every parameter of a backbone in definition (and initialisation) order.
pub fn param_specs(config: &BackboneConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    match config {
        BackboneConfig::TransformerLm(c) => {
            let (d, f) = (c.dim, c.ff_dim);
            out.push(matrix("embed/token".into(), c.vocab, d));
            out.push(matrix("embed/position".into(), c.max_len, d));
            for i in 0..c.layers {
                let p = |s: &str| format!("block{}/{}", i, s);
                out.push(spec(p("ln1/gamma"), &[d], ParamInit::Ones));
                out.push(spec(p("ln1/beta"), &[d], ParamInit::Zeros));
                out.push(matrix(p("attn/wq"), d, d));
                out.push(spec(p("attn/bq"), &[d], ParamInit::Zeros));
                out.push(matrix(p("attn/wk"), d, d));
                out.push(matrix(p("attn/wv"), d, d));
                out.push(spec(p("attn/bv"), &[d], ParamInit::Zeros));
                out.push(matrix(p("attn/wo"), d, d));
                out.push(spec(p("attn/bo"), &[d], ParamInit::Zeros));
                out.push(spec(p("ln2/gamma"), &[d], ParamInit::Ones));
                out.push(spec(p("ln2/beta"), &[d], ParamInit::Zeros));
                out.push(matrix(p("ffn/w1"), d, f));
                out.push(spec(p("ffn/b1"), &[f], ParamInit::Zeros));
                out.push(matrix(p("ffn/w2"), f, d));
                out.push(spec(p("ffn/b2"), &[d], ParamInit::Zeros));
            }
            out.push(spec("final_ln/gamma".into(), &[d], ParamInit::Ones));
            out.push(spec("final_ln/beta".into(), &[d], ParamInit::Zeros));
        }
        BackboneConfig::Convnet(c) => {
            let mut cin = c.in_channels;
            for (i, &cout) in c.channels.iter().enumerate() {
                let init = ParamInit::Xavier { fan_in: 9 * cin, fan_out: 9 * cout };
                out.push(spec(format!("stage{}/conv/kernel", i), &[3, 3, cin, cout], init));
                out.push(spec(format!("stage{}/conv/bias", i), &[cout], ParamInit::Zeros));
                cin = cout;
            }
        }
    }
    out
}

/// Draws one tensor per spec from a single sequential generator.
pub(crate) fn init_params(specs: &[ParamSpec], rng: &mut Rng) -> Result<BTreeMap<String, Tensor>> {
    let mut out = BTreeMap::new();
    for s in specs {
        let n: usize = s.shape.iter().product();
        let data: Vec<f32> = match s.init {
            ParamInit::Zeros => vec![0.0; n],
            ParamInit::Ones => vec![1.0; n],
            ParamInit::Xavier { fan_in, fan_out } => {
                let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                (0..n).map(|_| rng.uniform(-limit, limit) as f32).collect()
            }
        };
        out.insert(s.name.clone(), Tensor::from_vec(&s.shape, data)?);
    }
    Ok(out)
}

/// Checks that `params` holds exactly the named shapes in `specs`.
pub(crate) fn check_params(specs: &[ParamSpec], params: &BTreeMap<String, Tensor>) -> Result<()> {
    for s in specs {
        match params.get(&s.name) {
            None => return Err(Error::Config(format!("missing parameter {}", s.name))),
            Some(t) if t.shape() != s.shape.as_slice() => {
                return Err(Error::Config(format!("parameter {} has shape {:?}, expected {:?}", s.name, t.shape(), s.shape)))
            }
            Some(t) if !t.dtype().is_float() => {
                return Err(Error::Config(format!("parameter {} has non-float dtype {}", s.name, t.dtype())))
            }
            _ => {}
        }
    }
    if params.len() != specs.len() {
        let extra = params.keys().find(|k| !specs.iter().any(|s| &s.name == *k)).cloned().unwrap_or_default();
        return Err(Error::Config(format!("unexpected parameter {}", extra)));
    }
    Ok(())
}

/// Parameters bound into some execution context.
pub struct Bound<V> {
    values: BTreeMap<String, V>,
}

impl<V> Bound<V> {
    pub fn new(values: BTreeMap<String, V>) -> Self {
        Bound { values }
    }

    pub fn get(&self, name: &str) -> Result<&V> {
        self.values.get(name).ok_or_else(|| Error::Config(format!("no parameter named {}", name)))
    }
}

pub fn bind<'a, O: Ops>(ops: &mut O, params: impl IntoIterator<Item = (&'a String, &'a Tensor)>) -> Result<Bound<O::Value>> {
    let mut values = BTreeMap::new();
    for (name, t) in params {
        values.insert(name.clone(), ops.parameter(name, t)?);
    }
    Ok(Bound { values })
}

/// The feature extractor: no task head.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    config: BackboneConfig,
    params: BTreeMap<String, Tensor>,
}

impl Backbone {
    /// Xavier-uniform matrices, zero biases, unit layernorm gains.
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&param_specs(&config), &mut Rng::new(seed))?;
        Ok(Backbone { config, params })
    }

    pub fn from_params(config: BackboneConfig, params: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        check_params(&param_specs(&config), &params)?;
        Ok(Backbone { config, params })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Total number of scalar weights.
    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn dtype(&self) -> DType {
        self.params.values().next().map_or(DType::F32, Tensor::dtype)
    }

    /// Same weights in another float dtype.
    pub fn to_dtype(&self, dtype: DType) -> Backbone {
        let params = self.params.iter().map(|(k, v)| (k.clone(), v.cast(dtype))).collect();
        Backbone { config: self.config.clone(), params }
    }

    /// Transformer: `[B, L]` int32 ids (with an optional `[B, L]` 0/1 mask,
    /// derived from PAD ids when absent) to `[B, L, D]`. Convnet: `[B, H, W, C]`
    /// float images to `[B, D']` pooled features.
    pub fn forward(&self, inputs: &Tensor, mask: Option<&Tensor>, backend: &dyn Backend, mode: Mode) -> Result<Tensor> {
        let args = match &self.config {
            BackboneConfig::TransformerLm(c) => {
                let shape = inputs.shape();
                if shape.len() != 2 || shape[1] == 0 || shape[1] > c.max_len || inputs.dtype() != DType::I32 {
                    return Err(Error::Shape(format!(
                        "transformer input must be [B, L<={}] int32, got {}{:?}",
                        c.max_len,
                        inputs.dtype(),
                        shape
                    )));
                }
                let m = match mask {
                    Some(m) if m.shape() != shape => {
                        return Err(Error::Shape(format!("mask {:?} does not match ids {:?}", m.shape(), shape)))
                    }
                    Some(m) => m.to_f64_vec().iter().map(|&v| (v != 0.0) as i32).collect(),
                    None => padding_mask(inputs)?,
                };
                vec![inputs.clone(), attention_bias(&m, shape[0], shape[1], self.dtype())?]
            }
            BackboneConfig::Convnet(c) => {
                let expect = [c.height, c.width, c.in_channels];
                if inputs.rank() != 4 || inputs.shape()[1..] != expect || !inputs.dtype().is_float() {
                    return Err(Error::Shape(format!("convnet input must be [B, {:?}] float, got {:?}", expect, inputs.shape())));
                }
                vec![inputs.cast(self.dtype())]
            }
        };
        let program = BackboneProgram { backbone: self };
        let out = match mode {
            Mode::Eager => crate::ops::run_eager(&program, &args, backend)?,
            Mode::Graph => {
                let specs: Vec<TensorSpec> = args.iter().map(TensorSpec::of).collect();
                let g = graph::optimize(graph::capture(&program, &specs)?)?;
                graph::execute(&g, &args, backend)?
            }
        };
        Ok(out.into_iter().next().expect("one output"))
    }
}

struct BackboneProgram<'a> {
    backbone: &'a Backbone,
}

impl Program for BackboneProgram<'_> {
    fn run<O: Ops>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<Vec<O::Value>> {
        let p = bind(ops, self.backbone.params())?;
        let out = match self.backbone.config() {
            BackboneConfig::TransformerLm(c) => transformer_forward(ops, c, &p, &inputs[0], &inputs[1])?,
            BackboneConfig::Convnet(c) => convnet_forward(ops, c, &p, &inputs[0])?,
        };
        Ok(vec![out])
    }
}

/// 1 on non-PAD ids.
pub fn padding_mask(ids: &Tensor) -> Result<Vec<i32>> {
    Ok(ids.data::<i32>()?.iter().map(|&i| (i != PAD as i32) as i32).collect())
}

/// `[B, 1, L, L]` additive attention bias. Query `q` may attend key `k` iff
/// `k <= q` and `k` is a real token; position 0 is always visible so rows of
/// pure padding stay well defined.
pub fn attention_bias(mask: &[i32], batch: usize, len: usize, dtype: DType) -> Result<Tensor> {
    let mut out = vec![0.0f64; batch * len * len];
    for b in 0..batch {
        for q in 0..len {
            for k in 0..len {
                let allowed = k <= q && (k == 0 || mask[b * len + k] != 0);
                if !allowed {
                    out[(b * len + q) * len + k] = MASK_BIAS;
                }
            }
        }
    }
    Tensor::create(&[batch, 1, len, len], dtype, &out)
}

pub(crate) fn linear<O: Ops>(ops: &mut O, x: &O::Value, w: &O::Value, b: Option<&O::Value>) -> Result<O::Value> {
    let y = ops.matmul(x, w)?;
    match b {
        Some(b) => ops.add(&y, b),
        None => Ok(y),
    }
}

fn layernorm<O: Ops>(ops: &mut O, p: &Bound<O::Value>, prefix: &str, x: &O::Value) -> Result<O::Value> {
    let gamma = p.get(&format!("{}/gamma", prefix))?.clone();
    let beta = p.get(&format!("{}/beta", prefix))?.clone();
    ops.layernorm(x, &gamma, &beta, LAYERNORM_EPS)
}

/// Splits `[B, L, D]` into heads: `[B, H, L, dh]`.
fn heads<O: Ops>(ops: &mut O, x: &O::Value, b: usize, l: usize, h: usize, dh: usize) -> Result<O::Value> {
    let r = ops.reshape(x, &[b, l, h, dh])?;
    ops.transpose(&r, &[0, 2, 1, 3])
}

fn merge_heads<O: Ops>(ops: &mut O, x: &O::Value, b: usize, l: usize, d: usize) -> Result<O::Value> {
    let t = ops.transpose(x, &[0, 2, 1, 3])?;
    ops.reshape(&t, &[b, l, d])
}

/// Attention of `q` (`[B, H, Lq, dh]`) over keys/values `[B, H, Lk, dh]`.
pub(crate) fn attend<O: Ops>(ops: &mut O, q: &O::Value, k: &O::Value, v: &O::Value, bias: &O::Value, dh: usize) -> Result<O::Value> {
    let kt = ops.transpose(k, &[0, 1, 3, 2])?;
    let scores = ops.matmul(q, &kt)?;
    let scale = ops.scalar_like(1.0 / libm::sqrt(dh as f64), &scores)?;
    let scores = ops.mul(&scores, &scale)?;
    let scores = ops.add(&scores, bias)?;
    let weights = ops.softmax(&scores, 3)?;
    ops.matmul(&weights, v)
}

/// Per-block projections, shared by the full forward and cached decoding.
pub(crate) struct BlockOut<V> {
    pub q: V,
    pub k: V,
    pub v: V,
}

pub(crate) fn block_qkv<O: Ops>(ops: &mut O, c: &TransformerConfig, p: &Bound<O::Value>, i: usize, x: &O::Value) -> Result<BlockOut<O::Value>> {
    let s = ops.shape(x);
    let (b, l) = (s[0], s[1]);
    let name = |n: &str| format!("block{}/{}", i, n);
    let h = layernorm(ops, p, &name("ln1"), x)?;
    let q = linear(ops, &h, &p.get(&name("attn/wq"))?.clone(), Some(&p.get(&name("attn/bq"))?.clone()))?;
    let k = linear(ops, &h, &p.get(&name("attn/wk"))?.clone(), None)?;
    let v = linear(ops, &h, &p.get(&name("attn/wv"))?.clone(), Some(&p.get(&name("attn/bv"))?.clone()))?;
    Ok(BlockOut {
        q: heads(ops, &q, b, l, c.heads, c.head_dim())?,
        k: heads(ops, &k, b, l, c.heads, c.head_dim())?,
        v: heads(ops, &v, b, l, c.heads, c.head_dim())?,
    })
}

/// Residual attention output plus the feed-forward half of block `i`.
pub(crate) fn block_finish<O: Ops>(ops: &mut O, c: &TransformerConfig, p: &Bound<O::Value>, i: usize, x: &O::Value, attn: &O::Value) -> Result<O::Value> {
    let s = ops.shape(x);
    let name = |n: &str| format!("block{}/{}", i, n);
    let merged = merge_heads(ops, attn, s[0], s[1], c.dim)?;
    let proj = linear(ops, &merged, &p.get(&name("attn/wo"))?.clone(), Some(&p.get(&name("attn/bo"))?.clone()))?;
    let x = ops.add(x, &proj)?;
    let h = layernorm(ops, p, &name("ln2"), &x)?;
    let f = linear(ops, &h, &p.get(&name("ffn/w1"))?.clone(), Some(&p.get(&name("ffn/b1"))?.clone()))?;
    let f = ops.gelu(&f)?;
    let f = linear(ops, &f, &p.get(&name("ffn/w2"))?.clone(), Some(&p.get(&name("ffn/b2"))?.clone()))?;
    ops.add(&x, &f)
}

pub(crate) fn final_norm<O: Ops>(ops: &mut O, p: &Bound<O::Value>, x: &O::Value) -> Result<O::Value> {
    layernorm(ops, p, "final_ln", x)
}

/// Pre-LN causal transformer: `[B, L]` ids and `[B, 1, L, L]` bias to `[B, L, D]`.
pub fn transformer_forward<O: Ops>(
    ops: &mut O,
    c: &TransformerConfig,
    p: &Bound<O::Value>,
    ids: &O::Value,
    bias: &O::Value,
) -> Result<O::Value> {
    let l = ops.shape(ids)[1];
    let tok = p.get("embed/token")?.clone();
    let x = ops.gather(&tok, ids)?;
    let pos = p.get("embed/position")?.clone();
    let pos = if l == c.max_len { pos } else { ops.slice(&pos, 0, 0, l)? };
    let mut x = ops.add(&x, &pos)?;
    for i in 0..c.layers {
        let qkv = block_qkv(ops, c, p, i, &x)?;
        let attn = attend(ops, &qkv.q, &qkv.k, &qkv.v, bias, c.head_dim())?;
        x = block_finish(ops, c, p, i, &x, &attn)?;
    }
    final_norm(ops, p, &x)
}

/// 3x3 conv + bias + relu per stage (stride 1, then 2), then global mean pool.
pub fn convnet_forward<O: Ops>(ops: &mut O, c: &ConvnetConfig, p: &Bound<O::Value>, images: &O::Value) -> Result<O::Value> {
    let mut x = images.clone();
    for i in 0..c.channels.len() {
        let w = p.get(&format!("stage{}/conv/kernel", i))?.clone();
        let b = p.get(&format!("stage{}/conv/bias", i))?.clone();
        let stride = if i == 0 { 1 } else { 2 };
        let y = ops.conv2d(&x, &w, stride, 1)?;
        let y = ops.add(&y, &b)?;
        x = ops.relu(&y)?;
    }
    let x = ops.mean(&x, 1, false)?;
    ops.mean(&x, 1, false)
}

