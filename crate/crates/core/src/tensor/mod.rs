//! Dense, immutable, row-major tensors.

mod format;
pub mod shape;

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::shape_err;
use crate::{Element, Error, Result};

pub use format::{decode_tensor, encode_tensor, MAGIC, VERSION};

/// Identifier used for tensors that were not produced by a backend kernel.
pub const HOST: &str = "host";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    I32,
    U8,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "float32",
            DType::F64 => "float64",
            DType::I32 => "int32",
            DType::U8 => "uint8",
        }
    }

    pub fn size_in_bytes(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, DType::F32 | DType::F64)
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Shared element buffer. Cloning a tensor never copies its data.
#[derive(Clone)]
pub enum Storage {
    F32(Arc<[f32]>),
    F64(Arc<[f64]>),
    I32(Arc<[i32]>),
    U8(Arc<[u8]>),
}

impl Storage {
    pub fn dtype(&self) -> DType {
        match self {
            Storage::F32(_) => DType::F32,
            Storage::F64(_) => DType::F64,
            Storage::I32(_) => DType::I32,
            Storage::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Storage::F32(v) => v.len(),
            Storage::F64(v) => v.len(),
            Storage::I32(v) => v.len(),
            Storage::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn ptr(&self) -> *const u8 {
        match self {
            Storage::F32(v) => v.as_ptr().cast(),
            Storage::F64(v) => v.as_ptr().cast(),
            Storage::I32(v) => v.as_ptr().cast(),
            Storage::U8(v) => v.as_ptr(),
        }
    }
}

/// Runs `$body` with `$slice` bound to the typed element slice of `$t`.
#[macro_export]
#[doc(hidden)]
macro_rules! dispatch {
    ($t:expr, |$slice:ident| $body:expr) => {
        match $t.storage() {
            $crate::tensor::Storage::F32($slice) => $body,
            $crate::tensor::Storage::F64($slice) => $body,
            $crate::tensor::Storage::I32($slice) => $body,
            $crate::tensor::Storage::U8($slice) => $body,
        }
    };
}

#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    storage: Storage,
    backend: &'static str,
}

impl Tensor {
    pub fn from_vec<T: Element>(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected = shape::numel(shape);
        if data.len() != expected {
            return Err(shape_err!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), storage: T::store(data), backend: HOST })
    }

    /// Builds a tensor of any dtype from a flat list of values.
    pub fn create(shape: &[usize], dtype: DType, values: &[f64]) -> Result<Self> {
        match dtype {
            DType::F32 => Self::from_vec(shape, values.iter().map(|&v| v as f32).collect()),
            DType::F64 => Self::from_vec(shape, values.to_vec()),
            DType::I32 => Self::from_vec(shape, values.iter().map(|&v| v as i32).collect()),
            DType::U8 => Self::from_vec(shape, values.iter().map(|&v| v as u8).collect()),
        }
    }

    pub fn scalar<T: Element>(value: T) -> Self {
        Tensor { shape: Vec::new(), storage: T::store(alloc::vec![value]), backend: HOST }
    }

    pub fn full(shape: &[usize], dtype: DType, value: f64) -> Self {
        let n = shape::numel(shape);
        let storage = match dtype {
            DType::F32 => Storage::F32(alloc::vec![value as f32; n].into()),
            DType::F64 => Storage::F64(alloc::vec![value; n].into()),
            DType::I32 => Storage::I32(alloc::vec![value as i32; n].into()),
            DType::U8 => Storage::U8(alloc::vec![value as u8; n].into()),
        };
        Tensor { shape: shape.to_vec(), storage, backend: HOST }
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Self {
        Self::full(shape, dtype, 0.0)
    }

    pub(crate) fn from_storage(shape: Vec<usize>, storage: Storage) -> Self {
        debug_assert_eq!(shape::numel(&shape), storage.len());
        Tensor { shape, storage, backend: HOST }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.storage.len()
    }

    pub fn dtype(&self) -> DType {
        self.storage.dtype()
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn backend(&self) -> &'static str {
        self.backend
    }

    pub fn with_backend(mut self, backend: &'static str) -> Self {
        self.backend = backend;
        self
    }

    /// Typed view of the elements; fails if `T` is not the tensor's dtype.
    pub fn data<T: Element>(&self) -> Result<&[T]> {
        T::view(&self.storage).ok_or_else(|| {
            Error::Dtype(format!("expected {}, tensor holds {}", T::DTYPE, self.dtype()))
        })
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        dispatch!(self, |v| v.iter().map(|x| x.to_f64()).collect())
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        dispatch!(self, |v| v.iter().map(|x| x.to_f64() as f32).collect())
    }

    /// Element at a multi-index, read in row-major order.
    pub fn get(&self, index: &[usize]) -> Result<f64> {
        if index.len() != self.rank() {
            return Err(shape_err!("index {:?} has wrong rank for shape {:?}", index, self.shape));
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return Err(shape_err!("index {:?} out of bounds for shape {:?}", index, self.shape));
            }
            flat = flat * d + i;
        }
        Ok(dispatch!(self, |v| v[flat].to_f64()))
    }

    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(shape_err!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(dispatch!(self, |v| v[0].to_f64()))
    }

    pub fn cast(&self, dtype: DType) -> Tensor {
        if dtype == self.dtype() {
            return self.clone();
        }
        let values = self.to_f64_vec();
        let mut t = Tensor::create(&self.shape, dtype, &values).expect("same element count");
        t.backend = self.backend;
        t
    }

    /// Same storage viewed under a different shape.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        if shape::numel(shape) != self.numel() {
            return Err(shape_err!("cannot reshape {:?} to {:?}", self.shape, shape));
        }
        Ok(Tensor { shape: shape.to_vec(), storage: self.storage.clone(), backend: self.backend })
    }

    /// True when both tensors share the same buffer.
    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        self.storage.len() == other.storage.len() && self.storage.ptr() == other.storage.ptr()
    }

    /// Shape, dtype and every element bit pattern equal.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape || self.dtype() != other.dtype() {
            return false;
        }
        match (&self.storage, &other.storage) {
            (Storage::F32(a), Storage::F32(b)) => a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()),
            (Storage::F64(a), Storage::F64(b)) => a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()),
            (Storage::I32(a), Storage::I32(b)) => a == b,
            (Storage::U8(a), Storage::U8(b)) => a == b,
            _ => false,
        }
    }

    /// Largest absolute elementwise difference, or `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f64> {
        if self.shape != other.shape {
            return None;
        }
        let a = self.to_f64_vec();
        let b = other.to_f64_vec();
        Some(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        if self.shape != other.shape || self.dtype() != other.dtype() {
            return false;
        }
        match (&self.storage, &other.storage) {
            (Storage::F32(a), Storage::F32(b)) => a == b,
            (Storage::F64(a), Storage::F64(b)) => a == b,
            (Storage::I32(a), Storage::I32(b)) => a == b,
            (Storage::U8(a), Storage::U8(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}>{:?}", self.dtype(), self.shape)?;
        if self.numel() <= 16 {
            write!(f, " {:?}", self.to_f64_vec())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn row_major_indexing() {
        let t = Tensor::create(&[2, 2], DType::F32, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.get(&[1, 0]).unwrap(), 3.0);
        assert_eq!(t.get(&[0, 1]).unwrap(), 2.0);
    }

    #[test]
    fn empty_tensor_is_valid() {
        let t = Tensor::create(&[0], DType::F32, &[]).unwrap();
        assert_eq!(t.numel(), 0);
        assert_eq!(t.shape(), &[0]);
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let err = Tensor::create(&[2], DType::F32, &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn scalar_has_one_element() {
        let t = Tensor::scalar(2.5f64);
        assert_eq!(t.rank(), 0);
        assert_eq!(t.numel(), 1);
        assert_eq!(t.item().unwrap(), 2.5);
    }

    #[test]
    fn typed_view_checks_dtype() {
        let t = Tensor::from_vec(&[3], vec![1i32, 2, 3]).unwrap();
        assert_eq!(t.data::<i32>().unwrap(), &[1, 2, 3]);
        assert!(matches!(t.data::<f32>(), Err(Error::Dtype(_))));
    }

    #[test]
    fn clone_shares_buffer() {
        let t = Tensor::full(&[4], DType::F32, 1.0);
        let u = t.clone();
        assert!(t.ptr_eq(&u));
        assert!(!t.ptr_eq(&Tensor::full(&[4], DType::F32, 1.0)));
    }
}
