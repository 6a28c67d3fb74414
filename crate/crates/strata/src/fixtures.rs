//! Golden files regenerated from a seed and committed, so behavioural drift
//! shows up as a diff.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use strata_core::graph::{capture, optimize, TensorSpec};
use strata_core::model::{attach_head, Backbone, BackboneConfig, Mode, TaskKind, TransformerConfig};
use strata_core::ops::{Ops, Program};
use strata_core::text::{train_bpe, Tokenizer, WordPiece};
use strata_core::{DType, Rng};

use crate::bench::{emit_table, BenchRow, BenchSpec, Phase, TableFormat};
use crate::error::{Error, Result};
use crate::pipeline;
use crate::preset::render_task;

pub const DEFAULT_SEED: u64 = 20240501;

/// Relative path to file contents.
pub type Tree = BTreeMap<String, Vec<u8>>;

pub const WORDPIECE_PIECES: [&str; 12] =
    ["un", "##aff", "##able", "aff", "able", "the", "##s", "run", "##ning", "play", "##ed", "##ing"];

pub const WORDPIECE_CASES: [&str; 6] = ["unaffable", "", "xyzzy", "the runs played", "running unaffable", "UNAFFABLE"];

pub const BPE_CORPUS: [&str; 6] = [
    "the quick brown fox jumps over the lazy dog",
    "the lazy dog sleeps in the sun",
    "a quick brown dog runs over the hill",
    "foxes and dogs are the best of friends",
    "aaaa abab abab",
    "unaffable strata tensors",
];

pub const TINY_PRESET: (&str, &str) = ("tiny_text_classifier", "0.1.0");

fn json_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json serialises");
    s.push('\n');
    s.into_bytes()
}

fn random_ascii(rng: &mut Rng, max_len: u64) -> String {
    let len = rng.below(max_len + 1);
    (0..len).map(|_| (b' ' + rng.below(95) as u8) as char).collect()
}

/// add -> mul -> relu -> exp over three vectors.
pub struct Chain;

impl Program for Chain {
    fn run<O: Ops>(&self, ops: &mut O, inputs: &[O::Value]) -> strata_core::Result<Vec<O::Value>> {
        let s = ops.add(&inputs[0], &inputs[1])?;
        let p = ops.mul(&s, &inputs[2])?;
        let r = ops.relu(&p)?;
        Ok(vec![ops.exp(&r)?])
    }
}

fn wordpiece(tree: &mut Tree) -> Result<()> {
    let wp = WordPiece::from_pieces(WORDPIECE_PIECES)?;
    let mut cases: Vec<&str> = WORDPIECE_CASES.to_vec();
    let long = "a".repeat(101);
    cases.push(&long);
    let vectors: Vec<Value> = cases
        .iter()
        .map(|text| {
            let ids = wp.encode(text);
            let tokens: Vec<&str> = ids.iter().map(|&i| wp.vocab().token(i).unwrap_or("?")).collect();
            json!({ "text": text, "ids": ids, "tokens": tokens })
        })
        .collect();
    tree.insert("text/wordpiece_vocab.txt".into(), wp.vocab().to_text().into_bytes());
    tree.insert("text/wordpiece_vectors.json".into(), json_bytes(&json!({ "cases": vectors })));
    Ok(())
}

fn bpe(tree: &mut Tree, rng: &mut Rng) -> Result<Tokenizer> {
    let model = train_bpe(&BPE_CORPUS, 300)?;
    let mut texts: Vec<String> = BPE_CORPUS.iter().map(|s| s.to_string()).collect();
    texts.extend(["".to_string(), "héllo wörld".to_string(), "\u{1F600} emoji".to_string()]);
    texts.extend((0..8).map(|_| random_ascii(rng, 24)));
    let vectors: Vec<Value> = texts.iter().map(|t| json!({ "text": t, "ids": model.encode(t) })).collect();
    tree.insert("text/bpe_corpus.txt".into(), (BPE_CORPUS.join("\n") + "\n").into_bytes());
    tree.insert("text/bpe_vocab.txt".into(), model.vocab().to_text().into_bytes());
    tree.insert("text/bpe_merges.txt".into(), model.merges_text().into_bytes());
    tree.insert("text/bpe_vectors.json".into(), json_bytes(&json!({ "vocab_size": 300, "cases": vectors })));
    Ok(Tokenizer::Bpe(model))
}

fn rng_vectors(tree: &mut Tree, seed: u64) {
    let cases: Vec<Value> = [0, 1, seed]
        .iter()
        .map(|&s| {
            let mut r = Rng::new(s);
            let u64s: Vec<u64> = (0..8).map(|_| r.next_u64()).collect();
            let mut r = Rng::new(s);
            let below: Vec<u64> = (0..8).map(|_| r.below(10)).collect();
            json!({ "seed": s, "next_u64": u64s, "below_10": below })
        })
        .collect();
    tree.insert("rng/splitmix64.json".into(), json_bytes(&json!({ "cases": cases })));
}

fn shuffle_vectors(tree: &mut Tree, seed: u64) -> Result<()> {
    let mut cases = Vec::new();
    for buffer in [1, 4, 20] {
        let order = pipeline::range(20).shuffle(buffer, seed)?.collect()?;
        cases.push(json!({ "length": 20, "buffer": buffer, "seed": seed, "order": order }));
    }
    tree.insert("pipeline/shuffle.json".into(), json_bytes(&json!({ "cases": cases })));
    Ok(())
}

fn fusion_dump(tree: &mut Tree) -> Result<()> {
    let specs = vec![TensorSpec::new(&[8], DType::F32); 3];
    let g = capture(&Chain, &specs)?;
    let before = g.dump();
    let after = optimize(g)?.dump();
    tree.insert("graph/fusion.txt".into(), format!("# captured\n{before}# optimized\n{after}").into_bytes());
    Ok(())
}

fn tiny_preset(tree: &mut Tree, tokenizer: Tokenizer, seed: u64) -> Result<()> {
    let config = BackboneConfig::TransformerLm(TransformerConfig::tiny(tokenizer.vocab_size()));
    let model = attach_head(Backbone::new(config, seed)?, TaskKind::TextClassification, 2)?.with_tokenizer(tokenizer)?;
    let (name, version) = TINY_PRESET;
    for (path, bytes) in render_task(&model, name, version)?.files {
        tree.insert(format!("presets/{name}/{version}/{path}"), bytes);
    }
    Ok(())
}

fn bench_tables(tree: &mut Tree, rng: &mut Rng) -> Result<()> {
    let mut rows = Vec::new();
    for (model, batches) in [("textcls", [8, 32]), ("convnet", [4, 16])] {
        for backend in ["reference", "optimized"] {
            for (phase, batch) in [Phase::Train, Phase::Predict].into_iter().zip(batches) {
                let mut spec = BenchSpec::new(model, phase, batch, backend);
                spec.mode = Mode::Eager;
                let samples: Vec<f64> = (0..spec.steps).map(|_| (rng.uniform(1.0, 2000.0) * 100.0).round() / 100.0).collect();
                rows.push(BenchRow::from_samples(spec, &samples));
            }
        }
    }
    tree.insert("bench/table.md".into(), emit_table(&rows, TableFormat::Markdown)?.into_bytes());
    tree.insert("bench/table.csv".into(), emit_table(&rows, TableFormat::Csv)?.into_bytes());
    Ok(())
}

fn build(seed: u64) -> Result<Tree> {
    let mut tree = Tree::new();
    let mut rng = Rng::new(seed);
    tree.insert("SEED".into(), format!("{seed}\n").into_bytes());
    wordpiece(&mut tree)?;
    let tokenizer = bpe(&mut tree, &mut rng)?;
    rng_vectors(&mut tree, seed);
    shuffle_vectors(&mut tree, seed)?;
    fusion_dump(&mut tree)?;
    tiny_preset(&mut tree, tokenizer, seed)?;
    bench_tables(&mut tree, &mut rng)?;
    Ok(tree)
}

/// Builds the fixture tree twice and fails if the two runs differ.
pub fn regenerate(seed: u64) -> Result<Tree> {
    let first = build(seed)?;
    let second = build(seed)?;
    if let Some(path) = first.keys().chain(second.keys()).find(|k| first.get(*k) != second.get(*k)) {
        return Err(Error::Fixture(format!("{path} differs between two runs with seed {seed}")));
    }
    Ok(first)
}

/// Replaces `dir` with the tree.
pub fn write_tree(tree: &Tree, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(Error::io(dir))?;
    }
    for (path, bytes) in tree {
        let full = dir.join(path);
        let parent = full.parent().expect("fixture path has a parent");
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
        fs::write(&full, bytes).map_err(Error::io(&full))?;
    }
    Ok(())
}

/// Reads every file under `dir` into a tree.
pub fn read_tree(dir: impl AsRef<Path>) -> Result<Tree> {
    fn walk(root: &Path, dir: &Path, out: &mut Tree) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(Error::io(dir))? {
            let path = entry.map_err(Error::io(dir))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
                out.insert(rel, fs::read(&path).map_err(Error::io(&path))?);
            }
        }
        Ok(())
    }
    let mut out = Tree::new();
    walk(dir.as_ref(), dir.as_ref(), &mut out)?;
    Ok(out)
}

/// Paths whose contents differ between two trees, including files present
/// on one side only.
pub fn diff(a: &Tree, b: &Tree) -> Vec<String> {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
}
