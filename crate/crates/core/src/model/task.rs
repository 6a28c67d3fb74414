use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::backbone::{attention_bias, bind, convnet_forward, linear, transformer_forward, Backbone, Bound};
use super::config::BackboneConfig;
use super::Mode;
use crate::graph::{self, GraphIr, TensorSpec};
use crate::ops::{Eager, Ops, Program};
use crate::text::{pack, BpeModel, Tokenizer, PAD};
use crate::vision::{normalize, resize_bilinear, ImageSample};
use crate::{Backend, DType, Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TextGeneration,
    TextClassification,
    ImageClassification,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::TextGeneration => "text_generation",
            TaskKind::TextClassification => "text_classification",
            TaskKind::ImageClassification => "image_classification",
        }
    }

    pub fn is_text(self) -> bool {
        !matches!(self, TaskKind::ImageClassification)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a task model accepts at its public boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum RawInput {
    Text(String),
    Image(ImageSample),
}

impl From<&str> for RawInput {
    fn from(s: &str) -> Self {
        RawInput::Text(s.into())
    }
}

impl From<ImageSample> for RawInput {
    fn from(s: ImageSample) -> Self {
        RawInput::Image(s)
    }
}

/// A raw training pair. Language modelling ignores the label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: RawInput,
    pub label: Option<usize>,
}

impl Example {
    pub fn text(text: &str, label: usize) -> Self {
        Example { input: RawInput::Text(text.into()), label: Some(label) }
    }

    pub fn image(sample: ImageSample, label: usize) -> Self {
        Example { input: RawInput::Image(sample), label: Some(label) }
    }

    pub fn unlabeled(text: &str) -> Self {
        Example { input: RawInput::Text(text.into()), label: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class { class_id: usize, probabilities: Vec<f64> },
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextPreprocessor {
    pub tokenizer: Tokenizer,
    pub max_len: usize,
    pub add_bos: bool,
    pub add_eos: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePreprocessor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Preprocessor {
    Text(TextPreprocessor),
    Image(ImagePreprocessor),
}

/// The serialisable part of a preprocessor; tokenizers travel as files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PreprocessorConfig {
    Text { tokenizer: String, max_len: usize, add_bos: bool, add_eos: bool },
    Image { height: usize, width: usize, channels: usize, mean: Vec<f32>, std: Vec<f32> },
}

impl Preprocessor {
    pub fn config(&self) -> PreprocessorConfig {
        match self {
            Preprocessor::Text(t) => PreprocessorConfig::Text {
                tokenizer: t.tokenizer.kind().into(),
                max_len: t.max_len,
                add_bos: t.add_bos,
                add_eos: t.add_eos,
            },
            Preprocessor::Image(i) => PreprocessorConfig::Image {
                height: i.height,
                width: i.width,
                channels: i.channels,
                mean: i.mean.clone(),
                std: i.std.clone(),
            },
        }
    }

    pub fn from_config(config: &PreprocessorConfig, tokenizer: Option<Tokenizer>) -> Result<Self> {
        match config {
            PreprocessorConfig::Text { tokenizer: kind, max_len, add_bos, add_eos } => {
                let tokenizer = tokenizer.ok_or_else(|| Error::Config("text preprocessor needs a tokenizer".into()))?;
                if tokenizer.kind() != kind {
                    return Err(Error::Config(format!("expected a {} tokenizer, got {}", kind, tokenizer.kind())));
                }
                Ok(Preprocessor::Text(TextPreprocessor { tokenizer, max_len: *max_len, add_bos: *add_bos, add_eos: *add_eos }))
            }
            PreprocessorConfig::Image { height, width, channels, mean, std } => Ok(Preprocessor::Image(ImagePreprocessor {
                height: *height,
                width: *width,
                channels: *channels,
                mean: mean.clone(),
                std: std.clone(),
            })),
        }
    }

    pub fn tokenizer(&self) -> Option<&Tokenizer> {
        match self {
            Preprocessor::Text(t) => Some(&t.tokenizer),
            Preprocessor::Image(_) => None,
        }
    }

    fn image(&self, sample: &ImageSample) -> Result<Vec<f32>> {
        let Preprocessor::Image(p) = self else { return Err(Error::Config("expected text input".into())) };
        if sample.channels() != p.channels {
            return Err(Error::Config(format!("model takes {}-channel images, got {}", p.channels, sample.channels())));
        }
        let mut s = sample.clone();
        if s.image.dtype() == DType::U8 {
            let v: Vec<f32> = s.image.data::<u8>()?.iter().map(|&b| b as f32 / 255.0).collect();
            s = ImageSample::from_parts(Tensor::from_vec(s.image.shape(), v)?, s.labels);
        }
        if s.height() != p.height || s.width() != p.width {
            s = resize_bilinear(&s, p.height, p.width)?;
        }
        let s = normalize(&s, &p.mean, &p.std)?;
        Ok(s.image.data::<f32>()?.to_vec())
    }
}

/// Preprocessed model input, still on the host.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodedBatch {
    Text { rows: usize, len: usize, ids: Vec<i32>, mask: Vec<i32> },
    Image { images: Tensor },
}

impl EncodedBatch {
    pub fn rows(&self) -> usize {
        match self {
            EncodedBatch::Text { rows, .. } => *rows,
            EncodedBatch::Image { images } => images.shape()[0],
        }
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<EncodedBatch> {
        Ok(match self {
            EncodedBatch::Text { len, ids, mask, .. } => EncodedBatch::Text {
                rows: end - start,
                len: *len,
                ids: ids[start * len..end * len].to_vec(),
                mask: mask[start * len..end * len].to_vec(),
            },
            EncodedBatch::Image { images } => EncodedBatch::Image { images: crate::Reference.slice(images, 0, start, end)? },
        })
    }

    /// Index of the last real token of each row (0 for an all-PAD row).
    pub fn last_positions(&self) -> Vec<usize> {
        match self {
            EncodedBatch::Text { rows, len, mask, .. } => {
                (0..*rows).map(|r| (0..*len).rev().find(|&t| mask[r * len + t] != 0).unwrap_or(0)).collect()
            }
            EncodedBatch::Image { .. } => Vec::new(),
        }
    }

    /// Graph inputs for `kind`: ids and attention bias (plus pooling
    /// indices for classification), or images.
    pub fn tensors(&self, kind: TaskKind, dtype: DType) -> Result<Vec<Tensor>> {
        match self {
            EncodedBatch::Text { rows, len, ids, mask } => {
                let mut out = vec![Tensor::from_vec(&[*rows, *len], ids.clone())?, attention_bias(mask, *rows, *len, dtype)?];
                if kind == TaskKind::TextClassification {
                    let pool: Vec<i32> = self.last_positions().iter().enumerate().map(|(r, &t)| (r * len + t) as i32).collect();
                    out.push(Tensor::from_vec(&[*rows], pool)?);
                }
                Ok(out)
            }
            EncodedBatch::Image { images } => Ok(vec![images.cast(dtype)]),
        }
    }
}

/// A preprocessed training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub batch: EncodedBatch,
    /// Class per row; empty for language modelling.
    pub labels: Vec<usize>,
}

impl TrainBatch {
    pub fn rows(&self) -> usize {
        self.batch.rows()
    }

    /// Number of loss terms: rows, or predicted non-PAD tokens.
    pub fn loss_terms(&self) -> usize {
        match &self.batch {
            EncodedBatch::Text { rows, len, ids, .. } if self.labels.is_empty() => {
                (0..*rows).map(|r| (1..*len).filter(|&t| ids[r * len + t] != PAD as i32).count()).sum()
            }
            _ => self.rows(),
        }
    }

    /// `k` contiguous shards whose sizes differ by at most one, larger first.
    pub fn split(&self, k: usize) -> Result<Vec<TrainBatch>> {
        let n = self.rows();
        let mut out = Vec::with_capacity(k);
        let mut start = 0;
        for i in 0..k {
            let size = n / k + (i < n % k) as usize;
            let labels = if self.labels.is_empty() { Vec::new() } else { self.labels[start..start + size].to_vec() };
            out.push(TrainBatch { batch: self.batch.slice(start, start + size)?, labels });
            start += size;
        }
        Ok(out)
    }
}

/// Backbone + head + preprocessing, operating on raw inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    kind: TaskKind,
    backbone: Backbone,
    head: BTreeMap<String, Tensor>,
    preprocessor: Preprocessor,
    num_classes: usize,
}

/// Pairs a backbone with a zero-initialised head and the default
/// preprocessor for the task. Text tasks start with a byte-level tokenizer
/// (which needs a vocabulary of at least 260); swap it with
/// [`TaskModel::with_tokenizer`].
pub fn attach_head(backbone: Backbone, kind: TaskKind, num_classes: usize) -> Result<TaskModel> {
    let preprocessor = match (backbone.config(), kind) {
        (BackboneConfig::TransformerLm(c), k) if k.is_text() => Preprocessor::Text(TextPreprocessor {
            tokenizer: Tokenizer::Bpe(BpeModel::from_merges(&[])?),
            max_len: c.max_len,
            add_bos: true,
            add_eos: k == TaskKind::TextClassification,
        }),
        (BackboneConfig::Convnet(c), TaskKind::ImageClassification) => Preprocessor::Image(ImagePreprocessor {
            height: c.height,
            width: c.width,
            channels: c.in_channels,
            mean: vec![0.5; c.in_channels],
            std: vec![0.5; c.in_channels],
        }),
        (config, kind) => {
            return Err(Error::Config(format!("a {} backbone cannot serve the {} task", config.kind(), kind)));
        }
    };
    let head = head_params(&backbone, kind, num_classes)?;
    let num_classes = if kind == TaskKind::TextGeneration { 0 } else { num_classes };
    Ok(TaskModel { kind, backbone, head, preprocessor, num_classes })
}

fn head_dims(backbone: &Backbone, kind: TaskKind, num_classes: usize) -> Result<Option<(usize, usize)>> {
    if kind == TaskKind::TextGeneration {
        return Ok(None);
    }
    if num_classes == 0 {
        return Err(Error::Config("a classifier needs at least one class".into()));
    }
    let features = match backbone.config() {
        BackboneConfig::TransformerLm(c) => c.dim,
        BackboneConfig::Convnet(c) => c.feature_dim(),
    };
    Ok(Some((features, num_classes)))
}

fn head_params(backbone: &Backbone, kind: TaskKind, num_classes: usize) -> Result<BTreeMap<String, Tensor>> {
    let mut head = BTreeMap::new();
    if let Some((d, c)) = head_dims(backbone, kind, num_classes)? {
        head.insert("head/kernel".into(), Tensor::zeros(&[d, c], backbone.dtype()));
        head.insert("head/bias".into(), Tensor::zeros(&[c], backbone.dtype()));
    }
    Ok(head)
}

impl TaskModel {
    /// Reassembles a model from stored parts, checking every shape.
    pub fn from_parts(
        kind: TaskKind,
        backbone: Backbone,
        head: BTreeMap<String, Tensor>,
        preprocessor: Preprocessor,
        num_classes: usize,
    ) -> Result<Self> {
        let mut model = attach_head(backbone, kind, num_classes.max(1))?;
        let expected = head_params(&model.backbone, kind, num_classes.max(1))?;
        if expected.len() != head.len() || expected.iter().any(|(k, v)| head.get(k).map(|h| h.shape()) != Some(v.shape())) {
            return Err(Error::Config(format!("head parameters do not match a {}-class {} head", num_classes, kind)));
        }
        model.head = head;
        model.preprocessor = preprocessor;
        model.check_preprocessor()?;
        Ok(model)
    }

    fn check_preprocessor(&self) -> Result<()> {
        match (&self.preprocessor, self.backbone.config()) {
            (Preprocessor::Text(t), BackboneConfig::TransformerLm(c)) => {
                if t.tokenizer.vocab_size() > c.vocab {
                    return Err(Error::Config(format!(
                        "tokenizer has {} tokens but the backbone embeds only {}",
                        t.tokenizer.vocab_size(),
                        c.vocab
                    )));
                }
                if t.max_len != c.max_len {
                    return Err(Error::Config(format!("pack length {} differs from max_len {}", t.max_len, c.max_len)));
                }
                Ok(())
            }
            (Preprocessor::Image(p), BackboneConfig::Convnet(c)) => {
                if (p.height, p.width, p.channels) != (c.height, c.width, c.in_channels) {
                    return Err(Error::Config("image preprocessor does not produce the backbone input shape".into()));
                }
                if p.mean.len() != p.channels || p.std.len() != p.channels || p.std.iter().any(|&s| !(s > 0.0)) {
                    return Err(Error::Config("normalisation needs one mean and one positive std per channel".into()));
                }
                Ok(())
            }
            _ => Err(Error::Config("preprocessor does not match the backbone modality".into())),
        }
    }

    pub fn with_tokenizer(mut self, tokenizer: Tokenizer) -> Result<Self> {
        match &mut self.preprocessor {
            Preprocessor::Text(t) => t.tokenizer = tokenizer,
            Preprocessor::Image(_) => return Err(Error::Config("image models have no tokenizer".into())),
        }
        self.check_preprocessor()?;
        Ok(self)
    }

    pub fn with_preprocessor(mut self, preprocessor: Preprocessor) -> Result<Self> {
        self.preprocessor = preprocessor;
        self.check_preprocessor()?;
        Ok(self)
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn head(&self) -> &BTreeMap<String, Tensor> {
        &self.head
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        &self.preprocessor
    }

    pub fn tokenizer(&self) -> Option<&Tokenizer> {
        self.preprocessor.tokenizer()
    }

    /// Zero for text generation.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dtype(&self) -> DType {
        self.backbone.dtype()
    }

    /// The output projection of a language model: the token embedding itself.
    pub fn lm_head(&self) -> Option<&Tensor> {
        match self.kind {
            TaskKind::TextGeneration => self.backbone.param("embed/token"),
            _ => None,
        }
    }

    /// Every trainable tensor, backbone first then head, each in name order.
    pub fn params(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.backbone.params().iter().chain(self.head.iter())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.backbone.param(name).or_else(|| self.head.get(name))
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces a parameter with a tensor of the same shape and dtype.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = match self.backbone.params_mut().get_mut(name) {
            Some(s) => s,
            None => self.head.get_mut(name).ok_or_else(|| Error::Config(format!("no parameter named {}", name)))?,
        };
        if slot.shape() != value.shape() || slot.dtype() != value.dtype() {
            return Err(Error::Shape(format!(
                "parameter {} is {}{:?}, got {}{:?}",
                name,
                slot.dtype(),
                slot.shape(),
                value.dtype(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn to_dtype(&self, dtype: DType) -> TaskModel {
        TaskModel {
            backbone: self.backbone.to_dtype(dtype),
            head: self.head.iter().map(|(k, v)| (k.clone(), v.cast(dtype))).collect(),
            ..self.clone()
        }
    }

    /// Runs the preprocessor over a batch of raw inputs.
    pub fn encode(&self, inputs: &[RawInput]) -> Result<EncodedBatch> {
        match &self.preprocessor {
            Preprocessor::Text(p) => {
                let mut ids = Vec::with_capacity(inputs.len() * p.max_len);
                let mut mask = Vec::with_capacity(inputs.len() * p.max_len);
                for input in inputs {
                    let RawInput::Text(text) = input else {
                        return Err(Error::Config(format!("the {} task takes text, got an image", self.kind)));
                    };
                    let (r, m) = pack(&p.tokenizer.encode(text), p.max_len, p.add_bos, p.add_eos)?;
                    ids.extend(r);
                    mask.extend(m);
                }
                Ok(EncodedBatch::Text { rows: inputs.len(), len: p.max_len, ids, mask })
            }
            Preprocessor::Image(p) => {
                let mut data = Vec::with_capacity(inputs.len() * p.height * p.width * p.channels);
                for input in inputs {
                    let RawInput::Image(img) = input else {
                        return Err(Error::Config(format!("the {} task takes images, got text", self.kind)));
                    };
                    data.extend(self.preprocessor.image(img)?);
                }
                Ok(EncodedBatch::Image { images: Tensor::from_vec(&[inputs.len(), p.height, p.width, p.channels], data)? })
            }
        }
    }

    /// Preprocesses labelled examples for training.
    pub fn prepare(&self, examples: &[Example]) -> Result<TrainBatch> {
        let inputs: Vec<RawInput> = examples.iter().map(|e| e.input.clone()).collect();
        let batch = self.encode(&inputs)?;
        let labels = if self.kind == TaskKind::TextGeneration {
            Vec::new()
        } else {
            examples
                .iter()
                .map(|e| match e.label {
                    Some(l) if l < self.num_classes => Ok(l),
                    Some(l) => Err(Error::Data(format!("label {} is out of range for {} classes", l, self.num_classes))),
                    None => Err(Error::Data("classification examples need a label".into())),
                })
                .collect::<Result<_>>()?
        };
        Ok(TrainBatch { batch, labels })
    }

    fn logits_with<O: Ops>(&self, ops: &mut O, p: &Bound<O::Value>, inputs: &[O::Value]) -> Result<O::Value> {
        match (self.backbone.config(), self.kind) {
            (BackboneConfig::TransformerLm(c), kind) => {
                let features = transformer_forward(ops, c, p, &inputs[0], &inputs[1])?;
                if kind == TaskKind::TextGeneration {
                    let table = p.get("embed/token")?.clone();
                    let tied = ops.transpose(&table, &[1, 0])?;
                    ops.matmul(&features, &tied)
                } else {
                    let s = ops.shape(&features);
                    let flat = ops.reshape(&features, &[s[0] * s[1], s[2]])?;
                    let pooled = ops.gather(&flat, &inputs[2])?;
                    self.head_with(ops, p, &pooled)
                }
            }
            (BackboneConfig::Convnet(c), _) => {
                let features = convnet_forward(ops, c, p, &inputs[0])?;
                self.head_with(ops, p, &features)
            }
        }
    }

    fn head_with<O: Ops>(&self, ops: &mut O, p: &Bound<O::Value>, x: &O::Value) -> Result<O::Value> {
        let w = p.get("head/kernel")?.clone();
        let b = p.get("head/bias")?.clone();
        linear(ops, x, &w, Some(&b))
    }

    /// Logits for an encoded batch: `[B, C]` for classifiers, `[B, L, V]`
    /// for language models.
    pub fn logits(&self, batch: &EncodedBatch, backend: &dyn Backend, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Eager => {
                let inputs = batch.tensors(self.kind, self.dtype())?;
                let out = crate::ops::run_eager(&LogitsProgram { model: self }, &inputs, backend)?;
                Ok(out.into_iter().next().expect("one output"))
            }
            Mode::Graph => self.compile(batch)?.logits(batch, backend),
        }
    }

    /// Captures and optimises the logits computation for this batch shape.
    pub fn compile(&self, batch: &EncodedBatch) -> Result<CompiledModel> {
        let inputs = batch.tensors(self.kind, self.dtype())?;
        let specs: Vec<TensorSpec> = inputs.iter().map(TensorSpec::of).collect();
        let graph = graph::optimize(graph::capture(&LogitsProgram { model: self }, &specs)?)?;
        Ok(CompiledModel { kind: self.kind, dtype: self.dtype(), graph })
    }

    /// Class ids with probabilities, or greedy continuations for language
    /// models, in input order.
    pub fn predict(&self, inputs: &[RawInput], backend: &dyn Backend, mode: Mode) -> Result<Vec<Prediction>> {
        if self.kind == TaskKind::TextGeneration {
            return inputs
                .iter()
                .map(|input| {
                    let RawInput::Text(prompt) = input else {
                        return Err(Error::Config("text generation takes text, got an image".into()));
                    };
                    self.complete(prompt, backend, mode).map(Prediction::Text)
                })
                .collect();
        }
        let batch = self.encode(inputs)?;
        let logits = self.logits(&batch, backend, mode)?;
        Ok(classify(&logits))
    }

    /// Cross-entropy of one shard, scaled by `scale`, and its gradients.
    /// Classifier terms are averaged over rows and language-model terms over
    /// non-PAD targets; callers pass `scale = shards / total_terms` so shard
    /// losses average to the global-batch loss.
    pub fn gradients(&self, shard: &TrainBatch, scale: f64, backend: &dyn Backend) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let mut tape = crate::autodiff::GradTape::new(backend);
        let p = bind(&mut tape, self.params())?;
        let inputs: Vec<_> = shard.batch.tensors(self.kind, self.dtype())?.into_iter().map(|t| tape.constant(t)).collect::<Result<_>>()?;
        let logits = self.logits_with(&mut tape, &p, &inputs)?;
        let weights = tape.constant(self.target_weights(shard, scale)?)?;
        let axis = tape.shape(&logits).len() - 1;
        let logp = tape.log_softmax(&logits, axis)?;
        let picked = tape.mul(&logp, &weights)?;
        let total = tape.sum_all(&picked)?;
        let loss = tape.neg(&total)?;
        let value = tape.value(loss).item()?;
        let grads = tape.backward(loss)?;
        let named = tape.parameters().iter().map(|(name, id)| (name.clone(), grads[id].clone())).collect();
        Ok((value, named))
    }

    /// `scale` at each target class, zero elsewhere and on PAD targets.
    fn target_weights(&self, shard: &TrainBatch, scale: f64) -> Result<Tensor> {
        match (&shard.batch, self.kind) {
            (EncodedBatch::Text { rows, len, ids, .. }, TaskKind::TextGeneration) => {
                let v = match self.backbone.config() {
                    BackboneConfig::TransformerLm(c) => c.vocab,
                    _ => unreachable!("language models are transformers"),
                };
                let mut w = vec![0.0; rows * len * v];
                for r in 0..*rows {
                    for t in 0..len - 1 {
                        let target = ids[r * len + t + 1];
                        if target != PAD as i32 {
                            w[(r * len + t) * v + target as usize] = scale;
                        }
                    }
                }
                Tensor::create(&[*rows, *len, v], self.dtype(), &w)
            }
            _ => {
                let c = self.num_classes;
                let mut w = vec![0.0; shard.rows() * c];
                for (r, &label) in shard.labels.iter().enumerate() {
                    w[r * c + label] = scale;
                }
                Tensor::create(&[shard.rows(), c], self.dtype(), &w)
            }
        }
    }

    /// Mean cross-entropy over a batch, without gradients.
    pub fn loss(&self, batch: &TrainBatch, backend: &dyn Backend) -> Result<f64> {
        let terms = batch.loss_terms();
        if terms == 0 {
            return Err(Error::Data("batch has no loss terms".into()));
        }
        let logits = self.logits(&batch.batch, backend, Mode::Eager)?;
        let weights = self.target_weights(batch, 1.0 / terms as f64)?;
        let mut ops = Eager::new(backend);
        let axis = logits.rank() - 1;
        let logp = ops.log_softmax(&logits, axis)?;
        let picked = ops.mul(&logp, &weights)?;
        Ok(-ops.sum_all(&picked)?.item()?)
    }
}

/// Row-wise argmax (lowest index on ties) and softmax probabilities.
fn classify(logits: &Tensor) -> Vec<Prediction> {
    let c = logits.shape()[1];
    logits
        .to_f64_vec()
        .chunks(c.max(1))
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| libm::exp(x - max)).collect();
            let sum: f64 = exps.iter().sum();
            let class_id = row.iter().enumerate().fold(0, |best, (i, &x)| if x > row[best] { i } else { best });
            Prediction::Class { class_id, probabilities: exps.iter().map(|e| e / sum).collect() }
        })
        .collect()
}

struct LogitsProgram<'a> {
    model: &'a TaskModel,
}

impl Program for LogitsProgram<'_> {
    fn run<O: Ops>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<Vec<O::Value>> {
        let p = bind(ops, self.model.params())?;
        Ok(vec![self.model.logits_with(ops, &p, inputs)?])
    }
}

/// An optimised logits graph for one batch shape.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    kind: TaskKind,
    dtype: DType,
    graph: GraphIr,
}

impl CompiledModel {
    pub fn graph(&self) -> &GraphIr {
        &self.graph
    }

    pub fn logits(&self, batch: &EncodedBatch, backend: &dyn Backend) -> Result<Tensor> {
        let inputs = batch.tensors(self.kind, self.dtype)?;
        Ok(graph::execute(&self.graph, &inputs, backend)?.into_iter().next().expect("one output"))
    }

    pub fn predict(&self, batch: &EncodedBatch, backend: &dyn Backend) -> Result<Vec<Prediction>> {
        Ok(classify(&self.logits(batch, backend)?))
    }
}
