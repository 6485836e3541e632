//! Dense row-major tensors over `f32` or `f64`.
//!
//! Values live behind an `Arc` so that a computation graph can hold a
//! parameter without copying it; mutation goes through [`Tensor::values_mut`],
//! which only copies when the buffer is still shared.

use std::fmt::{self, Debug, Display, LowerExp, Write as _};
use std::iter::Sum;
use std::sync::Arc;

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Element type tag, also used as the on-disk dtype code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

impl Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Floating-point element of a tensor.
pub trait Element: Float + FromPrimitive + Default + Debug + Display + LowerExp + Sum + Send + Sync + 'static {
    const DTYPE: DType;

    /// Relative-error tolerance appropriate for gradient checks in this precision.
    const GRAD_TOL: f64;

    /// `C = alpha * A * B + beta * C` with arbitrary row/column strides.
    ///
    /// `A` is `m x k`, `B` is `k x n`, `C` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: (&mut [Self], isize, isize),
    );

    fn write_le(values: &[Self], out: &mut Vec<u8>);

    /// Decodes little-endian bytes; `bytes.len()` must be a multiple of the element size.
    fn read_le(bytes: &[u8]) -> Vec<Self>;

    fn from_float(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float to f64")
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    let last = (rows - 1) * rs as usize + (cols - 1) * cs as usize;
    assert!(last < len, "gemm operand out of bounds: {last} >= {len}");
}

macro_rules! impl_element {
    ($t:ty, $dtype:expr, $tol:expr, $gemm:path) => {
        impl Element for $t {
            const DTYPE: DType = $dtype;
            const GRAD_TOL: f64 = $tol;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: (&[Self], isize, isize),
                b: (&[Self], isize, isize),
                beta: Self,
                c: (&mut [Self], isize, isize),
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_extent(a.0.len(), m, k, a.1, a.2);
                check_extent(b.0.len(), k, n, b.1, b.2);
                check_extent(c.0.len(), m, n, c.1, c.2);
                // SAFETY: every index touched is bounded by the extent checks above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.0.as_ptr(),
                        a.1,
                        a.2,
                        b.0.as_ptr(),
                        b.1,
                        b.2,
                        beta,
                        c.0.as_mut_ptr(),
                        c.1,
                        c.2,
                    );
                }
            }

            fn write_le(values: &[Self], out: &mut Vec<u8>) {
                out.reserve(values.len() * std::mem::size_of::<Self>());
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }

            fn read_le(bytes: &[u8]) -> Vec<Self> {
                const N: usize = std::mem::size_of::<$t>();
                bytes
                    .chunks_exact(N)
                    .map(|c| <$t>::from_le_bytes(c.try_into().expect("chunk size")))
                    .collect()
            }
        }
    };
}

impl_element!(f32, DType::F32, 1e-2, matrixmultiply::sgemm);
impl_element!(f64, DType::F64, 1e-4, matrixmultiply::dgemm);

/// Tensor extents. Every extent is at least one; the empty shape is a scalar.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidTensor(format!(
                "extent of axis {axis} is zero in {dims:?}"
            )));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join("x"))
    }
}

#[derive(Clone)]
pub struct Tensor<T: Element = f64> {
    shape: Shape,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(dims: impl Into<Vec<usize>>, values: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != values.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape} holds {} values, buffer has {}",
                shape.numel(),
                values.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(values),
            requires_grad: false,
            grad: None,
        })
    }

    pub(crate) fn from_shared(shape: Shape, data: Arc<Vec<T>>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        Ok(Tensor::from_shared(shape, Arc::new(vec![value; n])))
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor::from_shared(Shape::default(), Arc::new(vec![value]))
    }

    /// Normal samples with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(dims: impl Into<Vec<usize>>, std: f64, rng: &mut R) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let values = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_float(z * std)
            })
            .collect();
        Ok(Tensor::from_shared(shape, Arc::new(values)))
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    /// Mutable access; copies the buffer first if a graph still shares it.
    pub fn values_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub(crate) fn shared(&self) -> &Arc<Vec<T>> {
        &self.data
    }

    pub fn into_values(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|arc| (*arc).clone())
    }

    pub fn reshape(&self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.numel() {
            return Err(Error::InvalidTensor(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        Ok(Tensor::from_shared(shape, Arc::clone(&self.data)))
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    /// Adds `grad` into the stored gradient, creating it if absent.
    pub fn accumulate_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.numel() {
            return Err(Error::InvalidTensor(format!(
                "gradient of length {} for tensor of shape {}",
                grad.len(),
                self.shape
            )));
        }
        match &mut self.grad {
            Some(existing) => existing.iter_mut().zip(grad).for_each(|(e, g)| *e = *e + g),
            None => self.grad = Some(grad),
        }
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor::from_shared(self.shape.clone(), Arc::new(self.data.iter().map(|&v| f(v)).collect()))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Converts to another element type.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::from_shared(
            self.shape.clone(),
            Arc::new(self.data.iter().map(|v| U::from_float(v.as_f64())).collect()),
        )
    }

    /// Debug dump: a `shape:` line followed by one value per line, 9 significant digits.
    pub fn dump(&self) -> String {
        let mut out = String::from("shape:");
        for d in self.dims() {
            write!(out, " {d}").unwrap();
        }
        out.push('\n');
        for v in self.values() {
            writeln!(out, "{:.8e}", v.as_f64()).unwrap();
        }
        out
    }
}

impl<T: Element> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.requires_grad)
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

impl<T: Element> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}
