use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the autodiff engine and the model are generic over.
///
/// Training runs in `f32`; gradient checks and the bit-exact reproducibility
/// tests run in `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Name recorded in checkpoint manifests.
    const DTYPE: &'static str;
    /// Width in bytes of one serialized value.
    const BYTES: usize;

    fn erf(self) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn erf(self) -> Self {
        libm::erff(self)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn erf(self) -> Self {
        libm::erf(self)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Serializes a slice of reals as little-endian bytes.
pub fn to_le_bytes<T: Real>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * T::BYTES);
    for &v in values {
        v.write_le(&mut out);
    }
    out
}

/// Inverse of [`to_le_bytes`]. Trailing partial values are ignored.
pub fn from_le_bytes<T: Real>(bytes: &[u8]) -> Vec<T> {
    bytes.chunks_exact(T::BYTES).map(T::read_le).collect()
}
