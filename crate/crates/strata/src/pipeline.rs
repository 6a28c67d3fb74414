//! Pull-based input pipelines.
//!
//! A [`Dataset`] is a recipe: every call to [`Dataset::iter`] rebuilds the
//! stage chain from its source, so a pipeline with fixed seeds replays the
//! same sequence each time. Elements travel as `Result`s and an error stays at
//! the position where it was produced.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use strata_core::model::Example;
use strata_core::vision::ImageSample;
use strata_core::{Backend, Error as CoreError, Reference, Rng, Tensor};

use crate::error::{Error, Result};

pub type Elements<T> = Box<dyn Iterator<Item = Result<T>> + Send>;
/// Named per-element tensors, as produced by [`from_slices`].
pub type Features = BTreeMap<String, Tensor>;

type Source<T> = dyn Fn() -> Elements<T> + Send + Sync;

pub struct Dataset<T> {
    source: Arc<Source<T>>,
}

impl<T> Clone for Dataset<T> {
    fn clone(&self) -> Self {
        Dataset { source: Arc::clone(&self.source) }
    }
}

impl<T: Send + 'static> Dataset<T> {
    /// A dataset from a factory that restarts iteration from the beginning.
    pub fn from_fn(f: impl Fn() -> Elements<T> + Send + Sync + 'static) -> Self {
        Dataset { source: Arc::new(f) }
    }

    pub fn iter(&self) -> Elements<T> {
        (self.source)()
    }

    /// Runs the pipeline to the end, stopping at the first error.
    pub fn collect(&self) -> Result<Vec<T>> {
        self.iter().collect()
    }

    pub fn map<U: Send + 'static>(&self, f: impl Fn(T) -> U + Send + Sync + 'static) -> Dataset<U> {
        self.try_map(move |x| Ok(f(x)))
    }

    pub fn try_map<U: Send + 'static>(&self, f: impl Fn(T) -> Result<U> + Send + Sync + 'static) -> Dataset<U> {
        let up = self.clone();
        let f = Arc::new(f);
        Dataset::from_fn(move || {
            let f = Arc::clone(&f);
            Box::new(up.iter().map(move |r| r.and_then(|x| f(x))))
        })
    }

    /// Windowed reservoir shuffle. With `buffer` at least the stream length
    /// this is a Fisher-Yates shuffle driven by `Rng::new(seed)`.
    pub fn shuffle(&self, buffer: usize, seed: u64) -> Result<Dataset<T>> {
        if buffer == 0 {
            return Err(config("shuffle buffer must be at least 1"));
        }
        let up = self.clone();
        Ok(Dataset::from_fn(move || {
            Box::new(Shuffle { upstream: up.iter(), buffer: VecDeque::with_capacity(buffer), capacity: buffer, rng: Rng::new(seed), filled: false })
        }))
    }

    /// Groups consecutive elements. The final short batch is kept unless
    /// `drop_remainder` is set.
    pub fn batch(&self, n: usize, drop_remainder: bool) -> Result<Dataset<T::Output>>
    where
        T: Batch,
    {
        if n == 0 {
            return Err(config("batch size must be at least 1"));
        }
        let up = self.clone();
        Ok(Dataset::from_fn(move || {
            let mut it = up.iter();
            let mut done = false;
            Box::new(std::iter::from_fn(move || {
                if done {
                    return None;
                }
                let mut items = Vec::with_capacity(n);
                while items.len() < n {
                    match it.next() {
                        Some(Ok(x)) => items.push(x),
                        Some(Err(e)) => return Some(Err(e)),
                        None => {
                            done = true;
                            break;
                        }
                    }
                }
                if items.is_empty() || (drop_remainder && items.len() < n) {
                    return None;
                }
                Some(T::batch(items))
            }))
        }))
    }

    /// Memoises the first complete pass; later passes replay it without
    /// touching upstream.
    pub fn cache(&self) -> Dataset<T>
    where
        T: Clone + Sync,
    {
        let up = self.clone();
        let store: Arc<Mutex<Option<Arc<Vec<Result<T>>>>>> = Arc::new(Mutex::new(None));
        Dataset::from_fn(move || {
            if let Some(done) = store.lock().expect("cache lock").clone() {
                return Box::new((0..done.len()).map(move |i| done[i].clone()));
            }
            Box::new(Recording { upstream: up.iter(), seen: Vec::new(), store: Arc::clone(&store) })
        })
    }

    /// Produces elements on a background thread, at most `depth` ahead of the
    /// consumer.
    pub fn prefetch(&self, depth: usize) -> Result<Dataset<T>> {
        if depth == 0 {
            return Err(config("prefetch depth must be at least 1"));
        }
        let up = self.clone();
        Ok(Dataset::from_fn(move || {
            // One element waits in the producer's hand, the rest in the channel.
            let (tx, rx) = sync_channel(depth - 1);
            let mut upstream = up.iter();
            let handle = thread::spawn(move || {
                for item in upstream.by_ref() {
                    if tx.send(item).is_err() {
                        break;
                    }
                }
            });
            Box::new(Prefetch { rx: Some(rx), handle: Some(handle) })
        }))
    }
}

fn config(msg: &str) -> Error {
    CoreError::Config(msg.into()).into()
}

struct Shuffle<T> {
    upstream: Elements<T>,
    buffer: VecDeque<Result<T>>,
    capacity: usize,
    rng: Rng,
    filled: bool,
}

impl<T> Iterator for Shuffle<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Result<T>> {
        if !self.filled {
            self.buffer.extend(self.upstream.by_ref().take(self.capacity));
            self.filled = true;
        }
        let len = self.buffer.len();
        if len > 1 {
            let j = self.rng.below(len as u64) as usize;
            self.buffer.swap(0, j);
        }
        let out = self.buffer.pop_front()?;
        if let Some(next) = self.upstream.next() {
            self.buffer.push_back(next);
        }
        Some(out)
    }
}

struct Recording<T> {
    upstream: Elements<T>,
    seen: Vec<Result<T>>,
    store: Arc<Mutex<Option<Arc<Vec<Result<T>>>>>>,
}

impl<T: Clone> Iterator for Recording<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Result<T>> {
        match self.upstream.next() {
            Some(item) => {
                self.seen.push(item.clone());
                Some(item)
            }
            None => {
                let mut slot = self.store.lock().expect("cache lock");
                if slot.is_none() {
                    *slot = Some(Arc::new(std::mem::take(&mut self.seen)));
                }
                None
            }
        }
    }
}

struct Prefetch<T> {
    rx: Option<Receiver<Result<T>>>,
    handle: Option<JoinHandle<()>>,
}

impl<T> Iterator for Prefetch<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Result<T>> {
        let item = self.rx.as_ref()?.recv().ok();
        if item.is_none() {
            self.rx = None;
            if let Some(h) = self.handle.take() {
                let _ = h.join();
            }
        }
        item
    }
}

impl<T> Drop for Prefetch<T> {
    fn drop(&mut self) {
        // Closing the channel makes the producer's next send fail.
        self.rx = None;
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Element types that can be grouped by [`Dataset::batch`].
pub trait Batch: Sized + Send + 'static {
    type Output: Send + 'static;
    fn batch(items: Vec<Self>) -> Result<Self::Output>;
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack(items: &[Tensor]) -> Result<Tensor> {
    let first = items.first().ok_or_else(|| CoreError::Shape("cannot stack zero tensors".into()))?;
    let mut unit = vec![1];
    unit.extend_from_slice(first.shape());
    let mut rows = Vec::with_capacity(items.len());
    for t in items {
        if t.shape() != first.shape() || t.dtype() != first.dtype() {
            return Err(CoreError::Shape(format!(
                "ragged batch: {:?} {} next to {:?} {}",
                t.shape(),
                t.dtype(),
                first.shape(),
                first.dtype()
            ))
            .into());
        }
        rows.push(t.reshaped(&unit)?);
    }
    let refs: Vec<&Tensor> = rows.iter().collect();
    Ok(Reference.concat(&refs, 0)?)
}

impl Batch for Tensor {
    type Output = Tensor;
    fn batch(items: Vec<Self>) -> Result<Tensor> {
        stack(&items)
    }
}

impl Batch for Features {
    type Output = Features;
    fn batch(items: Vec<Self>) -> Result<Features> {
        let keys: Vec<String> = items[0].keys().cloned().collect();
        let mut out = Features::new();
        for key in keys {
            let column: Vec<Tensor> = items
                .iter()
                .map(|m| m.get(&key).cloned().ok_or_else(|| CoreError::Shape(format!("element is missing field {key:?}"))))
                .collect::<std::result::Result<_, _>>()?;
            out.insert(key, stack(&column)?);
        }
        if items.iter().any(|m| m.len() != out.len()) {
            return Err(CoreError::Shape("elements have different fields".into()).into());
        }
        Ok(out)
    }
}

macro_rules! batch_as_vec {
    ($($t:ty),*) => {$(
        impl Batch for $t {
            type Output = Vec<$t>;
            fn batch(items: Vec<Self>) -> Result<Vec<$t>> {
                Ok(items)
            }
        }
    )*};
}

batch_as_vec!(i64, String, Example, ImageSample);

/// Slices every named tensor along axis 0.
pub fn from_slices(fields: Vec<(String, Tensor)>) -> Result<Dataset<Features>> {
    let n = match fields.first() {
        Some((_, t)) => *t.shape().first().ok_or_else(|| CoreError::Shape("cannot slice a scalar".into()))?,
        None => 0,
    };
    for (name, t) in &fields {
        if t.shape().first() != Some(&n) {
            return Err(CoreError::Shape(format!("field {name:?} has shape {:?}, expected leading extent {n}", t.shape())).into());
        }
    }
    let fields = Arc::new(fields);
    Ok(Dataset::from_fn(move || {
        let fields = Arc::clone(&fields);
        Box::new((0..n).map(move |i| {
            let mut out = Features::new();
            for (name, t) in fields.iter() {
                let row = Reference.slice(t, 0, i, i + 1)?;
                out.insert(name.clone(), row.reshaped(&t.shape()[1..])?);
            }
            Ok(out)
        }))
    }))
}

pub fn from_vec<T: Clone + Send + Sync + 'static>(items: Vec<T>) -> Dataset<T> {
    let items = Arc::new(items);
    Dataset::from_fn(move || {
        let items = Arc::clone(&items);
        Box::new((0..items.len()).map(move |i| Ok(items[i].clone())))
    })
}

pub fn range(n: i64) -> Dataset<i64> {
    Dataset::from_fn(move || Box::new((0..n).map(Ok)))
}

/// Every `.ppm` file in `dir`, in file-name order, as an unlabeled sample.
pub fn ppm_dir(dir: impl AsRef<Path>) -> Result<Dataset<ImageSample>> {
    let dir = dir.as_ref().to_path_buf();
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(Error::io(&dir))?
        .map(|e| e.map(|e| e.path()).map_err(Error::io(&dir)))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")));
    paths.sort();
    let paths = Arc::new(paths);
    Ok(Dataset::from_fn(move || {
        let paths = Arc::clone(&paths);
        Box::new((0..paths.len()).map(move |i| crate::io::read_ppm(&paths[i]).and_then(|t| Ok(ImageSample::unlabeled(t)?))))
    }))
}

/// One element per line of a UTF-8 file, without the line terminator.
pub fn text_lines(path: impl AsRef<Path>) -> Result<Dataset<String>> {
    let path = path.as_ref().to_path_buf();
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let lines: Vec<String> = text.lines().map(str::to_owned).collect();
    Ok(from_vec(lines))
}
