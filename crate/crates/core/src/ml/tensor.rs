//! Q15.16 fixed-point tensors and their byte serialization.

use crate::fpvm::isa::FRAC_BITS;
use crate::hash::{hash_parts, Digest};

pub const FRAC: u32 = FRAC_BITS;
pub const MAX_RANK: usize = 4;

const SCALE: f64 = (1u64 << FRAC) as f64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("value {0} is outside the representable fixed-point range")]
    QuantizeRange(f64),
    #[error("shape {shape:?} needs {expected} elements, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("invalid shape {0:?}")]
    BadShape(Vec<usize>),
    #[error("tensor encoding: {0}")]
    Format(&'static str),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<i32>,
}

pub fn check_shape(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() || shape.len() > MAX_RANK || shape.iter().any(|&d| d == 0 || d > u32::MAX as usize) {
        return Err(TensorError::BadShape(shape.to_vec()));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= u32::MAX as usize)
        .ok_or_else(|| TensorError::BadShape(shape.to_vec()))
}

/// Serialized size of a tensor of this shape.
pub fn serialized_len(shape: &[usize]) -> usize {
    4 + 4 * shape.len() + 4 * shape.iter().product::<usize>()
}

pub fn quantize_value(v: f64) -> Result<i32, TensorError> {
    let limit = (1u64 << (31 - FRAC)) as f64;
    if !v.is_finite() || v.abs() >= limit {
        return Err(TensorError::QuantizeRange(v));
    }
    // f64::round is half-away-from-zero.
    let raw = (v * SCALE).round();
    if raw < i32::MIN as f64 || raw > i32::MAX as f64 {
        return Err(TensorError::QuantizeRange(v));
    }
    Ok(raw as i32)
}

pub fn dequantize_value(raw: i32) -> f64 {
    raw as f64 / SCALE
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<i32>) -> Result<Self, TensorError> {
        let expected = check_shape(&shape)?;
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        let n = check_shape(&shape)?;
        Ok(Tensor {
            shape,
            data: vec![0; n],
        })
    }

    pub fn quantize(shape: Vec<usize>, values: &[f64]) -> Result<Self, TensorError> {
        let data = values.iter().map(|&v| quantize_value(v)).collect::<Result<_, _>>()?;
        Tensor::new(shape, data)
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.data.iter().map(|&r| dequantize_value(r)).collect()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [i32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Little-endian `u32 rank`, `u32` dims, then `i32` data.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(serialized_len(&self.shape));
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Domain-separated digest of the serialization.
    pub fn digest(&self) -> Digest {
        hash_parts(&[b"opml/tensor/v1", &self.to_bytes()])
    }

    /// Decodes one tensor from the front of `bytes`; returns it and the
    /// number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize), TensorError> {
        let word = |i: usize| -> Result<u32, TensorError> {
            bytes
                .get(4 * i..4 * i + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or(TensorError::Format("truncated tensor"))
        };
        let rank = word(0)? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(TensorError::Format("bad rank"));
        }
        let shape = (0..rank)
            .map(|i| word(1 + i).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = check_shape(&shape)?;
        let start = 4 * (1 + rank);
        let end = n
            .checked_mul(4)
            .and_then(|b| b.checked_add(start))
            .ok_or(TensorError::Format("tensor too large"))?;
        let body = bytes.get(start..end).ok_or(TensorError::Format("truncated tensor"))?;
        let data = body
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Tensor { shape, data }, end))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let (t, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(TensorError::Format("trailing bytes after tensor"));
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_value(1.0).unwrap(), 65536);
        assert_eq!(quantize_value(-0.5).unwrap(), -32768);
        // 0.3 * 65536 = 19660.8
        assert_eq!(quantize_value(0.3).unwrap(), 19661);
        assert!((dequantize_value(19661) - 0.3).abs() <= 1.0 / 131072.0);
        // exact halves round away from zero
        assert_eq!(quantize_value(1.5 / 65536.0).unwrap(), 2);
        assert_eq!(quantize_value(-1.5 / 65536.0).unwrap(), -2);
    }

    #[test]
    fn quantize_range_is_checked() {
        assert!(quantize_value(32768.0).is_err());
        assert!(quantize_value(-32768.0).is_err());
        assert!(quantize_value(f64::NAN).is_err());
        assert!(quantize_value(32767.99).is_ok());
    }

    #[test]
    fn serialization_layout() {
        let t = Tensor::new(vec![1, 2], vec![-1, 7]).unwrap();
        let b = t.to_bytes();
        assert_eq!(b.len(), serialized_len(&[1, 2]));
        assert_eq!(&b[..12], &[2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0][..]);
        assert_eq!(&b[12..], &[0xff, 0xff, 0xff, 0xff, 7, 0, 0, 0][..]);
        assert_eq!(Tensor::from_bytes(&b).unwrap(), t);
        assert!(Tensor::from_bytes(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn bad_shapes() {
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1, 2, 3]).is_err());
    }

    proptest! {
        #[test]
        fn quantize_round_trip_error_bound(v in -32000.0f64..32000.0) {
            let r = quantize_value(v).unwrap();
            prop_assert!((dequantize_value(r) - v).abs() <= 1.0 / 131072.0 + 1e-12);
        }

        #[test]
        fn bytes_round_trip(rows in 1usize..5, cols in 1usize..5, seed in any::<i32>()) {
            let data = (0..rows * cols).map(|i| seed.wrapping_mul(i as i32 + 1)).collect();
            let t = Tensor::new(vec![rows, cols], data).unwrap();
            prop_assert_eq!(Tensor::from_bytes(&t.to_bytes()).unwrap(), t);
        }
    }
}
