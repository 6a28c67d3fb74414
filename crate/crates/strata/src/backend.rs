//! The optimised backend: cache-blocked, multi-threaded matmul and an
//! im2col convolution. Every other kernel is shared with the reference
//! backend.

use std::thread;

use strata_core::backend::kernels::MatmulPlan;
use strata_core::{Backend, DType, Element, Reference, Result, Tensor};

/// Rows per register tile.
const MR: usize = 4;
/// Columns per accumulator block.
const NB: usize = 128;
/// Below this many multiply-adds a matmul stays on the calling thread.
const PARALLEL_WORK: usize = 1 << 18;

/// Blocked kernels, threaded over row panels. Each output element is summed
/// over `k` in ascending order at float64, so results do not depend on the
/// thread count.
#[derive(Debug, Clone, Copy)]
pub struct Optimized {
    threads: usize,
}

impl Optimized {
    pub fn new() -> Self {
        Self::with_threads(thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn with_threads(threads: usize) -> Self {
        Optimized { threads: threads.max(1) }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }
}

impl Default for Optimized {
    fn default() -> Self {
        Self::new()
    }
}

/// `out[rows, n] = a[rows, k] * b[k, n]` for one row panel.
fn panel<T: Element>(a: &[T], b: &[T], out: &mut [T], k: usize, n: usize) {
    let rows = out.len() / n.max(1);
    let mut acc = [[0.0f64; NB]; MR];
    for i0 in (0..rows).step_by(MR) {
        let mr = MR.min(rows - i0);
        for j0 in (0..n).step_by(NB) {
            let nb = NB.min(n - j0);
            for row in acc.iter_mut().take(mr) {
                row[..nb].iter_mut().for_each(|x| *x = 0.0);
            }
            for p in 0..k {
                let brow = &b[p * n + j0..p * n + j0 + nb];
                for (r, row) in acc.iter_mut().enumerate().take(mr) {
                    let av = a[(i0 + r) * k + p].to_f64();
                    for (x, bv) in row[..nb].iter_mut().zip(brow) {
                        *x += av * bv.to_f64();
                    }
                }
            }
            for (r, row) in acc.iter().enumerate().take(mr) {
                let o = &mut out[(i0 + r) * n + j0..(i0 + r) * n + j0 + nb];
                o.iter_mut().zip(&row[..nb]).for_each(|(o, &x)| *o = T::from_f64(x));
            }
        }
    }
}

fn matmul_typed<T: Element>(a: &[T], b: &[T], plan: &MatmulPlan, threads: usize) -> Vec<T> {
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let mut out = vec![T::from_f64(0.0); plan.offsets.len() * m * n];
    if m * n == 0 {
        return out;
    }
    let work = plan.offsets.len() * m * n * k;
    let threads = if work < PARALLEL_WORK { 1 } else { threads };
    let rows_per = m.div_ceil(threads).next_multiple_of(MR);
    // Row panels of every batch matrix, handed to threads round-robin.
    let mut buckets: Vec<Vec<(usize, usize, &mut [T])>> = (0..threads).map(|_| Vec::new()).collect();
    let mut next = 0;
    for (batch, chunk) in out.chunks_mut(m * n).enumerate() {
        for (i, o) in chunk.chunks_mut(rows_per * n).enumerate() {
            buckets[next % threads].push((batch, i * rows_per, o));
            next += 1;
        }
    }
    let run = |bucket: Vec<(usize, usize, &mut [T])>| {
        for (batch, row, o) in bucket {
            let (ao, bo) = plan.offsets[batch];
            let rows = o.len() / n;
            panel(&a[ao + row * k..ao + (row + rows) * k], &b[bo..bo + k * n], o, k, n);
        }
    };
    if threads == 1 {
        buckets.into_iter().for_each(run);
    } else {
        thread::scope(|s| {
            for bucket in buckets {
                s.spawn(|| run(bucket));
            }
        });
    }
    out
}

/// Unfolds NHWC input into `[B*Ho*Wo, kh*kw*cin]` patches, zero padded.
fn im2col(x: &Tensor, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<(Tensor, usize, usize)> {
    let s = x.shape();
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    let ho = (h + 2 * pad).saturating_sub(kh) / stride + 1;
    let wo = (w + 2 * pad).saturating_sub(kw) / stride + 1;
    let xv = x.to_f64_vec();
    let cols = kh * kw * c;
    let mut out = vec![0.0f64; b * ho * wo * cols];
    for bi in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((bi * ho + oy) * wo + ox) * cols;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = ((bi * h + iy as usize) * w + ix as usize) * c;
                        let dst = row + (ky * kw + kx) * c;
                        out[dst..dst + c].copy_from_slice(&xv[src..src + c]);
                    }
                }
            }
        }
    }
    Ok((Tensor::create(&[b * ho * wo, cols], x.dtype(), &out)?, ho, wo))
}

impl Backend for Optimized {
    fn name(&self) -> &'static str {
        "optimized"
    }

    fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let plan = MatmulPlan::new(a.shape(), b.shape())?;
        if a.dtype() != b.dtype() || !a.dtype().is_float() {
            return Reference.matmul(a, b).map(|t| t.with_backend(self.name()));
        }
        let out = match a.dtype() {
            DType::F32 => Tensor::from_vec(&plan.out_shape, matmul_typed(a.data::<f32>()?, b.data::<f32>()?, &plan, self.threads))?,
            _ => Tensor::from_vec(&plan.out_shape, matmul_typed(a.data::<f64>()?, b.data::<f64>()?, &plan, self.threads))?,
        };
        Ok(out.with_backend(self.name()))
    }

    fn conv2d(&self, x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        // Validate through the reference shape rules before unfolding.
        let out_shape = strata_core::tensor::shape::conv2d(x.shape(), w.shape(), stride, padding)?;
        if x.dtype() != w.dtype() || !x.dtype().is_float() || x.numel() == 0 || w.numel() == 0 {
            return Reference.conv2d(x, w, stride, padding).map(|t| t.with_backend(self.name()));
        }
        let ws = w.shape();
        let (cols, _, _) = im2col(x, ws[0], ws[1], stride, padding)?;
        let flat = w.reshaped(&[ws[0] * ws[1] * ws[2], ws[3]])?;
        let y = self.matmul(&cols, &flat)?;
        Ok(y.reshaped(&out_shape)?.with_backend(self.name()))
    }
}

/// Looks a backend up by its CLI name.
pub fn by_name(name: &str) -> Option<Box<dyn Backend>> {
    match name {
        "reference" => Some(Box::new(Reference)),
        "optimized" => Some(Box::new(Optimized::new())),
        _ => None,
    }
}

pub const BACKENDS: [&str; 2] = ["reference", "optimized"];
