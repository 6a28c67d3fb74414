//! Local preset store: named, versioned bundles of architecture config,
//! weights and tokenizer files.
//!
//! ```text
//! <root>/<name>/<version>/manifest.json
//! <root>/<name>/<version>/assets/weights/<parameter>.fmlt
//! <root>/<name>/<version>/assets/vocab.txt
//! <root>/<name>/<version>/assets/merges.txt
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use semver::Version;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use strata_core::model::{attach_head, Backbone, BackboneConfig, Preprocessor, PreprocessorConfig, TaskKind, TaskModel};
use strata_core::tensor::{decode_tensor, encode_tensor};
use strata_core::text::{BpeModel, Tokenizer, Vocabulary, WordPiece};
use strata_core::{DType, Error as CoreError, Tensor};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
const WEIGHTS_DIR: &str = "assets/weights/";
const VOCAB: &str = "assets/vocab.txt";
const MERGES: &str = "assets/merges.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetRole {
    Weights,
    Vocab,
    Merges,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Asset {
    /// Relative to the preset directory, `/`-separated.
    pub path: String,
    pub role: AssetRole,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetManifest {
    pub name: String,
    pub version: String,
    /// `None` for a bare backbone.
    pub task: Option<TaskKind>,
    pub backbone: BackboneConfig,
    pub dtype: DType,
    pub head: Option<HeadConfig>,
    pub preprocessor: Option<PreprocessorConfig>,
    pub assets: Vec<Asset>,
}

impl PresetManifest {
    /// Pretty JSON with keys in sorted order and a trailing newline.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("manifest serialises");
        let mut text = serde_json::to_string_pretty(&value).expect("manifest serialises");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::CorruptPreset(format!("manifest: {e}")))
    }

    pub fn weight_assets(&self) -> impl Iterator<Item = &Asset> {
        self.assets.iter().filter(|a| a.role == AssetRole::Weights)
    }
}

/// What `from_preset` should do with the stored weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// `false` builds the architecture with fresh seeded initialisation.
    pub load_weights: bool,
    pub seed: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { load_weights: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PresetEntry {
    pub name: String,
    pub version: String,
    pub task: Option<TaskKind>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Listing {
    pub presets: Vec<PresetEntry>,
    /// One line per directory that could not be read as a preset.
    pub warnings: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() || !name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') {
        return Err(CoreError::Config(format!("preset name {name:?} must match [a-z0-9_]+")).into());
    }
    Ok(())
}

pub fn validate_version(version: &str) -> Result<Version> {
    Version::parse(version).map_err(|e| CoreError::Config(format!("version {version:?} is not semver: {e}")).into())
}

fn param_file(param: &str) -> String {
    format!("{WEIGHTS_DIR}{param}.fmlt")
}

fn param_name(path: &str) -> Option<&str> {
    path.strip_prefix(WEIGHTS_DIR)?.strip_suffix(".fmlt")
}

/// Asset paths must stay inside the preset directory.
fn safe_relative(path: &str) -> Result<PathBuf> {
    let p = Path::new(path);
    if path.is_empty() || !p.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(Error::CorruptPreset(format!("asset path {path:?} leaves the preset directory")));
    }
    Ok(p.to_path_buf())
}

fn tokenizer_files(tokenizer: &Tokenizer) -> Vec<(&'static str, AssetRole, Vec<u8>)> {
    let mut files = vec![(VOCAB, AssetRole::Vocab, tokenizer.vocab().to_text().into_bytes())];
    if let Tokenizer::Bpe(bpe) = tokenizer {
        files.push((MERGES, AssetRole::Merges, bpe.merges_text().into_bytes()));
    }
    files
}

fn text_asset(files: &BTreeMap<String, Vec<u8>>, path: &str) -> Result<String> {
    let bytes = files.get(path).ok_or_else(|| Error::CorruptPreset(format!("missing asset {path}")))?;
    String::from_utf8(bytes.clone()).map_err(|_| Error::CorruptPreset(format!("{path} is not UTF-8")))
}

fn corrupt(e: CoreError) -> Error {
    Error::CorruptPreset(e.to_string())
}

/// A preset as the bytes of each file, manifest included.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPreset {
    pub manifest: PresetManifest,
    /// Relative path and contents, assets first and `manifest.json` last.
    pub files: Vec<(String, Vec<u8>)>,
}

pub fn render_task(model: &TaskModel, name: &str, version: &str) -> Result<RenderedPreset> {
    let params = model.params().map(|(k, v)| (k.clone(), v.clone())).collect();
    let tokenizer = model.tokenizer().map(tokenizer_files).unwrap_or_default();
    let manifest = PresetManifest {
        name: name.into(),
        version: version.into(),
        task: Some(model.kind()),
        backbone: model.backbone().config().clone(),
        dtype: model.dtype(),
        head: Some(HeadConfig { num_classes: model.num_classes() }),
        preprocessor: Some(model.preprocessor().config()),
        assets: Vec::new(),
    };
    render(manifest, &params, tokenizer)
}

pub fn render_backbone(backbone: &Backbone, name: &str, version: &str) -> Result<RenderedPreset> {
    let manifest = PresetManifest {
        name: name.into(),
        version: version.into(),
        task: None,
        backbone: backbone.config().clone(),
        dtype: backbone.dtype(),
        head: None,
        preprocessor: None,
        assets: Vec::new(),
    };
    render(manifest, backbone.params(), Vec::new())
}

/// One weight file per parameter plus the tokenizer files, with digests
/// computed over exactly the bytes that will be written.
fn render(
    mut manifest: PresetManifest,
    params: &BTreeMap<String, Tensor>,
    extra: Vec<(&'static str, AssetRole, Vec<u8>)>,
) -> Result<RenderedPreset> {
    validate_name(&manifest.name)?;
    validate_version(&manifest.version)?;
    let mut files = Vec::new();
    let weights = params.iter().map(|(k, t)| (param_file(k), AssetRole::Weights, encode_tensor(t)));
    for (path, role, bytes) in weights.chain(extra.into_iter().map(|(p, r, b)| (p.to_owned(), r, b))) {
        safe_relative(&path)?;
        manifest.assets.push(Asset { path: path.clone(), role, sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        files.push((path, bytes));
    }
    files.push((MANIFEST.to_owned(), manifest.to_json().into_bytes()));
    Ok(RenderedPreset { manifest, files })
}

/// A directory of presets.
#[derive(Debug, Clone)]
pub struct PresetStore {
    root: PathBuf,
}

impl PresetStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        PresetStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, name: &str, version: &str) -> PathBuf {
        self.root.join(name).join(version)
    }

    pub fn save_task(&self, model: &TaskModel, name: &str, version: &str) -> Result<PresetManifest> {
        self.write(render_task(model, name, version)?)
    }

    pub fn save_backbone(&self, backbone: &Backbone, name: &str, version: &str) -> Result<PresetManifest> {
        self.write(render_backbone(backbone, name, version)?)
    }

    /// Writes into a scratch directory, then renames it into place so
    /// readers never see a partial preset.
    pub fn write(&self, preset: RenderedPreset) -> Result<PresetManifest> {
        let RenderedPreset { manifest, files } = preset;
        let target = self.dir(&manifest.name, &manifest.version);
        let exists = || Error::AlreadyExists { name: manifest.name.clone(), version: manifest.version.clone() };
        if target.exists() {
            return Err(exists());
        }
        let parent = self.root.join(&manifest.name);
        fs::create_dir_all(&parent).map_err(Error::io(&parent))?;
        let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
        let scratch = parent.join(format!(".tmp-{}-{}-{nanos}", manifest.version, std::process::id()));

        let result = (|| {
            for (path, bytes) in &files {
                let full = scratch.join(safe_relative(path)?);
                let dir = full.parent().expect("file has a parent");
                fs::create_dir_all(dir).map_err(Error::io(dir))?;
                fs::write(&full, bytes).map_err(Error::io(&full))?;
            }
            if target.exists() {
                return Err(exists());
            }
            fs::rename(&scratch, &target).map_err(|e| if target.exists() { exists() } else { Error::io(&target)(e) })
        })();
        if result.is_err() {
            let _ = fs::remove_dir_all(&scratch);
        }
        result.map(|_| manifest)
    }

    /// Resolves `"latest"` to the highest stored semver.
    pub fn resolve(&self, name: &str, version: &str) -> Result<String> {
        if version != "latest" {
            return Ok(version.into());
        }
        let listing = self.list()?;
        listing
            .presets
            .into_iter()
            .filter(|p| p.name == name)
            .filter_map(|p| Version::parse(&p.version).ok().map(|v| (v, p.version)))
            .max()
            .map(|(_, v)| v)
            .ok_or_else(|| Error::NotFound { name: name.into(), version: version.into() })
    }

    pub fn manifest(&self, name: &str, version: &str) -> Result<PresetManifest> {
        let version = self.resolve(name, version)?;
        let path = self.dir(name, &version).join(MANIFEST);
        if !path.is_file() {
            return Err(Error::NotFound { name: name.into(), version });
        }
        let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
        let manifest = PresetManifest::from_json(&text)?;
        if manifest.name != name || manifest.version != version {
            return Err(Error::CorruptPreset(format!(
                "{} claims to be {} {}",
                path.display(),
                manifest.name,
                manifest.version
            )));
        }
        Ok(manifest)
    }

    /// Reads every asset and checks its size and digest.
    pub fn verify(&self, name: &str, version: &str) -> Result<(PresetManifest, BTreeMap<String, Vec<u8>>)> {
        let manifest = self.manifest(name, version)?;
        let dir = self.dir(name, &manifest.version);
        let mut files = BTreeMap::new();
        for asset in &manifest.assets {
            let path = dir.join(safe_relative(&asset.path)?);
            let bytes = fs::read(&path).map_err(Error::io(&path))?;
            if bytes.len() as u64 != asset.bytes || sha256_hex(&bytes) != asset.sha256 {
                return Err(Error::Integrity { asset: asset.path.clone() });
            }
            files.insert(asset.path.clone(), bytes);
        }
        Ok((manifest, files))
    }

    fn load(&self, name: &str, version: &str, options: LoadOptions) -> Result<Loaded> {
        let (manifest, files) = self.verify(name, version)?;
        let mut params = BTreeMap::new();
        for asset in manifest.weight_assets() {
            let param = param_name(&asset.path).ok_or_else(|| Error::CorruptPreset(format!("weight file {} is misnamed", asset.path)))?;
            let t = decode_tensor(&files[&asset.path]).map_err(corrupt)?;
            if t.dtype() != manifest.dtype {
                return Err(Error::CorruptPreset(format!("{} is {}, manifest says {}", asset.path, t.dtype(), manifest.dtype)));
            }
            params.insert(param.to_owned(), t);
        }
        let head: BTreeMap<String, Tensor> = params.iter().filter(|(k, _)| k.starts_with("head/")).map(|(k, v)| (k.clone(), v.clone())).collect();
        params.retain(|k, _| !k.starts_with("head/"));
        let backbone = if options.load_weights {
            Backbone::from_params(manifest.backbone.clone(), params).map_err(corrupt)?
        } else {
            Backbone::new(manifest.backbone.clone(), options.seed).map_err(corrupt)?.to_dtype(manifest.dtype)
        };
        let tokenizer = match &manifest.preprocessor {
            Some(PreprocessorConfig::Text { tokenizer, .. }) => {
                let vocab = text_asset(&files, VOCAB)?;
                Some(match tokenizer.as_str() {
                    "bpe" => Tokenizer::Bpe(BpeModel::from_files(&vocab, &text_asset(&files, MERGES)?).map_err(corrupt)?),
                    "wordpiece" => Tokenizer::WordPiece(WordPiece::new(Vocabulary::from_text(&vocab).map_err(corrupt)?)),
                    other => return Err(Error::CorruptPreset(format!("unknown tokenizer kind {other:?}"))),
                })
            }
            _ => None,
        };
        Ok(Loaded { manifest, backbone, head, tokenizer })
    }

    pub fn load_task(&self, name: &str, version: &str, options: LoadOptions) -> Result<TaskModel> {
        let Loaded { manifest, backbone, head, tokenizer } = self.load(name, version, options)?;
        let (Some(kind), Some(head_config), Some(pre)) = (manifest.task, manifest.head, &manifest.preprocessor) else {
            return Err(Error::CorruptPreset(format!("{name} {} holds a backbone, not a task model", manifest.version)));
        };
        let preprocessor = Preprocessor::from_config(pre, tokenizer).map_err(corrupt)?;
        if options.load_weights {
            TaskModel::from_parts(kind, backbone, head, preprocessor, head_config.num_classes).map_err(corrupt)
        } else {
            attach_head(backbone, kind, head_config.num_classes)
                .and_then(|m| m.with_preprocessor(preprocessor))
                .map_err(corrupt)
        }
    }

    pub fn load_backbone(&self, name: &str, version: &str, options: LoadOptions) -> Result<Backbone> {
        Ok(self.load(name, version, options)?.backbone)
    }

    /// Every readable preset, sorted by name then semver. Directories that
    /// are not presets are reported as warnings.
    pub fn list(&self) -> Result<Listing> {
        let mut listing = Listing { presets: Vec::new(), warnings: Vec::new() };
        if !self.root.exists() {
            return Ok(listing);
        }
        for name_dir in sorted_dirs(&self.root)? {
            let name = file_name(&name_dir);
            if name.starts_with('.') {
                continue;
            }
            for version_dir in sorted_dirs(&name_dir)? {
                let version = file_name(&version_dir);
                if version.starts_with(".tmp-") {
                    continue;
                }
                match self.manifest(&name, &version) {
                    Ok(m) => listing.presets.push(PresetEntry { name: m.name, version: m.version, task: m.task }),
                    Err(e) => listing.warnings.push(format!("skipping {}: {e}", version_dir.display())),
                }
            }
        }
        listing.presets.sort_by(|a, b| {
            a.name.cmp(&b.name).then_with(|| match (Version::parse(&a.version), Version::parse(&b.version)) {
                (Ok(x), Ok(y)) => x.cmp(&y),
                _ => a.version.cmp(&b.version),
            })
        });
        Ok(listing)
    }
}

struct Loaded {
    manifest: PresetManifest,
    backbone: Backbone,
    head: BTreeMap<String, Tensor>,
    tokenizer: Option<Tokenizer>,
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(Error::io(dir))? {
        let path = entry.map_err(Error::io(dir))?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// `from_preset` on the model types.
pub trait FromPreset: Sized {
    fn from_preset(store: &PresetStore, name: &str, version: &str, options: LoadOptions) -> Result<Self>;
}

impl FromPreset for TaskModel {
    fn from_preset(store: &PresetStore, name: &str, version: &str, options: LoadOptions) -> Result<Self> {
        store.load_task(name, version, options)
    }
}

impl FromPreset for Backbone {
    fn from_preset(store: &PresetStore, name: &str, version: &str, options: LoadOptions) -> Result<Self> {
        store.load_backbone(name, version, options)
    }
}
