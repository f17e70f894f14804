//! Dense row-major tensors and the golden tensor dump format.
//!
//! A [`Tensor`] is a shape plus a flat buffer. It is generic over the
//! [`Scalar`] precision so the same kernels serve 32-bit inference and
//! 64-bit gradient checks.
//!
//! Golden dump layout (all little-endian):
//!
//! ```text
//! b"DFT2" | rank: u8 | dims: rank × u32 | data: product(dims) × f32
//! ```

use std::fmt::{Debug, Display};
use std::io::{Read, Write};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{shape_err, Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"DFT2";

/// Floating-point element type accepted by every kernel.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Clone, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Debug> Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let head: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("head", &head)
            .finish()
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        if shape.contains(&0) {
            return shape_err("tensor", format!("zero-sized dimension in {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(
                "tensor",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            );
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Internal constructor for kernels that already guarantee the invariant.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        Self::from_parts(shape.to_vec(), vec![v; shape.iter().product()])
    }

    pub fn scalar(v: S) -> Self {
        Self::from_parts(vec![1], vec![v])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), (0..n).map(&mut f).collect())
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| S::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    /// First element; convenient for scalar losses.
    pub fn item(&self) -> S {
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return shape_err(
                "reshape",
                format!("{:?} -> {shape:?} changes element count", self.shape),
            );
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| T::of(v.f64())).collect(),
        )
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(
                "zip",
                format!("{:?} vs {:?}", self.shape, other.shape),
            );
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return shape_err("add", format!("{:?} vs {:?}", self.shape, other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v.f64() * v.f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Splits `shape` at `axis` into (outer, axis length, inner) for strided loops.
    pub(crate) fn split_at_axis(&self, axis: usize) -> (usize, usize, usize) {
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        (outer, self.shape[axis], inner)
    }

    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        if self.rank() > u8::MAX as usize {
            return Err(Error::InvalidArgument("rank exceeds 255".into()));
        }
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&[self.rank() as u8])?;
        for &d in &self.shape {
            let d = u32::try_from(d)
                .map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "tensor magic")?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::Format(format!("bad tensor magic {magic:?}")));
        }
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank, "tensor rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let mut d = [0u8; 4];
            read_exact(&mut r, &mut d, "tensor dims")?;
            shape.push(u32::from_le_bytes(d) as usize);
        }
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Format(format!("degenerate tensor shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        read_exact(&mut r, &mut bytes, "tensor data")?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| S::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        Ok(Self::from_parts(shape, data))
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated file while reading {what}")),
        _ => Error::Io(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_invariant_enforced() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(&[2, 0], vec![]).is_err());
        let t = Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.len(), 6);
    }

    #[test]
    fn dump_layout_is_exact() {
        let t = Tensor::<f32>::new(&[2, 1], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        t.write_dump(&mut buf).unwrap();
        let mut expect = b"DFT2".to_vec();
        expect.push(2);
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(buf, expect);
        let back = Tensor::<f32>::read_dump(&buf[..]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn truncated_dump_is_format_error() {
        let t = Tensor::<f32>::zeros(&[4]);
        let mut buf = Vec::new();
        t.write_dump(&mut buf).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(Tensor::<f32>::read_dump(&buf[..]), Err(Error::Format(_))));
        buf[0] = b'X';
        assert!(matches!(Tensor::<f32>::read_dump(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_detected() {
        let t = Tensor::<f64>::new(&[2], vec![1.0, f64::NAN]).unwrap();
        assert!(t.check_finite("x").is_err());
    }
}
