//! Dense real arrays, a reverse-mode gradient tape and the Adam optimizer.
//!
//! Everything is generic over [`Scalar`] so the same model code runs in
//! 32-bit for training and in 64-bit for finite-difference checks.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;

use std::collections::HashMap;
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;
use rand::Rng;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{AutodiffError, Graph, Var};

/// Floating point element type of tensors.
pub trait Scalar: Float + Default + Debug + Send + Sync + Sum + AddAssign + 'static {
    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c[m,n] (+)= op(a)[m,k] * op(b)[k,n]`; see [`gemm`].
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(m: usize, k: usize, n: usize, a: &[Self], ta: bool, b: &[Self], tb: bool, c: &mut [Self], beta: Self);
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn of_f64(x: f64) -> Self {
                x as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm_raw(m: usize, k: usize, n: usize, a: &[Self], ta: bool, b: &[Self], tb: bool, c: &mut [Self], beta: Self) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm buffer too small");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: bounds checked above; strides describe row-major
                // buffers of exactly those sizes.
                unsafe {
                    $gemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Matrix product on row-major buffers. `a` is `[m,k]` (or `[k,m]` when
/// `ta`), `b` is `[k,n]` (or `[n,k]` when `tb`). With `accumulate` the result
/// is added to `c`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], ta: bool, b: &[T], tb: bool, c: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(m, k, n, a, ta, b, tb, c, beta);
}

/// Row-major n-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "data length does not match shape {shape:?}");
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension in {shape:?}");
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![T::zero(); n])
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(shape: Vec<usize>, bound: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of_f64(rng.random_range(-bound..=bound))).collect();
        Tensor::new(shape, data)
    }

    /// Glorot/Xavier uniform initialization.
    pub fn glorot(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self::uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Shape as (rows, cols); rank-1 tensors are a single row.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => panic!("tensor of rank {} used as a matrix", other.len()),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|x| U::of_f64(x.as_f64())).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, ParamId>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// Per-parameter gradient buffers; a parameter without a buffer has zero
/// gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    buffers: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new(num_params: usize) -> Self {
        Gradients { buffers: vec![None; num_params] }
    }

    pub fn for_store(store: &ParamStore<T>) -> Self {
        Self::new(store.len())
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.buffers[id.0].as_deref()
    }

    pub fn buffer_mut(&mut self, id: ParamId, len: usize) -> &mut Vec<T> {
        self.buffers[id.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    /// Dense copy of one gradient, zeros when untouched.
    pub fn dense(&self, id: ParamId, len: usize) -> Vec<T> {
        self.get(id).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); len])
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        assert_eq!(self.buffers.len(), other.buffers.len(), "gradient sets of different stores");
        for (mine, theirs) in self.buffers.iter_mut().zip(&other.buffers) {
            if let Some(theirs) = theirs {
                match mine {
                    Some(m) => m.iter_mut().zip(theirs).for_each(|(a, &b)| *a += b),
                    None => *mine = Some(theirs.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for b in self.buffers.iter_mut().flatten() {
            b.iter_mut().for_each(|x| *x = *x * factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.buffers.iter().flatten().flatten().fold(0.0, |m, x| m.max(x.as_f64().abs()))
    }

    pub fn clear(&mut self) {
        self.buffers.iter_mut().for_each(|b| *b = None);
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }
}

/// Sums per-example gradients in index order.
pub fn sum_gradients<T: Scalar>(num_params: usize, parts: &[Gradients<T>]) -> Gradients<T> {
    let mut out = Gradients::new(num_params);
    for p in parts {
        out.accumulate(p);
    }
    out
}
