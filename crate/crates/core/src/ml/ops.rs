//! Native fixed-point operators. These define the integer semantics the VM
//! lowering must reproduce bit for bit.

use super::tensor::{Tensor, FRAC};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Incompatible {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
}

/// Work (M·K·N) above which `matmul` splits rows across threads.
const PARALLEL_WORK: usize = 1 << 18;

pub fn matmul_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, ShapeError> {
    if a.len() != 2 {
        return Err(ShapeError::Rank {
            op: "matmul",
            expected: 2,
            shape: a.to_vec(),
        });
    }
    if b.len() != 2 {
        return Err(ShapeError::Rank {
            op: "matmul",
            expected: 2,
            shape: b.to_vec(),
        });
    }
    if a[1] != b[0] {
        return Err(ShapeError::Incompatible {
            op: "matmul",
            left: a.to_vec(),
            right: b.to_vec(),
        });
    }
    Ok(vec![a[0], b[1]])
}

pub fn bias_add_shape(x: &[usize], b: &[usize]) -> Result<Vec<usize>, ShapeError> {
    if b.len() != 1 || x.last() != b.first() {
        return Err(ShapeError::Incompatible {
            op: "bias_add",
            left: x.to_vec(),
            right: b.to_vec(),
        });
    }
    Ok(x.to_vec())
}

#[inline]
fn finish(acc: i64) -> i32 {
    (acc >> FRAC) as i32
}

fn matmul_rows(a: &[i32], b: &[i32], k: usize, n: usize, rows: std::ops::Range<usize>, out: &mut [i32]) {
    for (r, i) in rows.enumerate() {
        for j in 0..n {
            let mut acc = 0i64;
            for h in 0..k {
                acc = acc.wrapping_add(a[i * k + h] as i64 * b[h * n + j] as i64);
            }
            out[r * n + j] = finish(acc);
        }
    }
}

/// `C[i,j] = wrap32((Σ_h A[i,h]·B[h,j]) asr 16)` with wrapping 64-bit
/// accumulation.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, ShapeError> {
    let shape = matmul_shape(a.shape(), b.shape())?;
    let (m, k, n) = (shape[0], a.shape()[1], shape[1]);
    let mut out = vec![0i32; m * n];
    let threads = std::thread::available_parallelism().map_or(1, |t| t.get()).min(m);
    if m * k * n < PARALLEL_WORK || threads < 2 {
        matmul_rows(a.data(), b.data(), k, n, 0..m, &mut out);
    } else {
        let per = m.div_ceil(threads);
        std::thread::scope(|s| {
            for (c, chunk) in out.chunks_mut(per * n).enumerate() {
                let start = c * per;
                let rows = start..start + chunk.len() / n;
                let (ad, bd) = (a.data(), b.data());
                s.spawn(move || matmul_rows(ad, bd, k, n, rows, chunk));
            }
        });
    }
    Ok(Tensor::new(shape, out).expect("shape computed above"))
}

/// Same result as [`matmul`], reducing the inner dimension in `chunk`-sized
/// partial sums combined in reverse order.
pub fn matmul_chunked(a: &Tensor, b: &Tensor, chunk: usize) -> Result<Tensor, ShapeError> {
    let shape = matmul_shape(a.shape(), b.shape())?;
    let (m, k, n) = (shape[0], a.shape()[1], shape[1]);
    let chunk = chunk.max(1);
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            let partials: Vec<i64> = (0..k)
                .step_by(chunk)
                .map(|h0| {
                    (h0..(h0 + chunk).min(k)).fold(0i64, |acc, h| {
                        acc.wrapping_add(ad[i * k + h] as i64 * bd[h * n + j] as i64)
                    })
                })
                .collect();
            let acc = partials.iter().rev().fold(0i64, |s, &p| s.wrapping_add(p));
            out.push(finish(acc));
        }
    }
    Ok(Tensor::new(shape, out).expect("shape computed above"))
}

/// Adds `b` to every row of `x` along the last dimension, wrapping.
pub fn bias_add(x: &Tensor, b: &Tensor) -> Result<Tensor, ShapeError> {
    let shape = bias_add_shape(x.shape(), b.shape())?;
    let n = b.len();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v.wrapping_add(b.data()[i % n]))
        .collect();
    Ok(Tensor::new(shape, data).expect("shape unchanged"))
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape unchanged")
}

/// Flat index of the maximum; the lowest index wins ties.
pub fn argmax(x: &Tensor) -> usize {
    let mut best = 0;
    for (i, &v) in x.data().iter().enumerate().skip(1) {
        if x.data()[best] < v {
            best = i;
        }
    }
    best
}

/// `argmax` as a graph value: shape `[1]` holding the raw index.
pub fn argmax_tensor(x: &Tensor) -> Tensor {
    Tensor::new(vec![1], vec![argmax(x) as i32]).expect("valid shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Arbitrary-precision evaluation of the matmul definition.
    fn oracle_matmul(a: &Tensor, b: &Tensor) -> Vec<i32> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Vec::new();
        for i in 0..m {
            for j in 0..n {
                let mut s = BigInt::from(0);
                for h in 0..k {
                    s += BigInt::from(a.data()[i * k + h]) * BigInt::from(b.data()[h * n + j]);
                }
                // BigInt >> rounds toward negative infinity; then wrap to 32 bits
                let q = s >> 16;
                let m32 = BigInt::from(1u64 << 32);
                let mut w = ((q % &m32) + &m32) % &m32;
                if w >= BigInt::from(1u64 << 31) {
                    w -= &m32;
                }
                out.push(i32::try_from(w).unwrap());
            }
        }
        out
    }

    fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>, full_range: bool) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                if full_range {
                    rng.gen()
                } else {
                    rng.gen_range(-200_000..200_000)
                }
            })
            .collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn identity_is_exact() {
        let id = Tensor::new(vec![2, 2], vec![65536, 0, 0, 65536]).unwrap();
        let x = Tensor::new(vec![2, 2], vec![5, -7, 123456, -99]).unwrap();
        assert_eq!(matmul(&id, &x).unwrap(), x);
    }

    #[test]
    fn single_element_closed_form() {
        let a = Tensor::new(vec![1, 1], vec![98304]).unwrap();
        let b = Tensor::new(vec![1, 1], vec![131072]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[196608]);
    }

    #[test]
    fn matches_bigint_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for round in 0..200 {
            let (m, k, n) = if round == 0 {
                (3, 4, 2)
            } else {
                (rng.gen_range(1..6), rng.gen_range(1..9), rng.gen_range(1..6))
            };
            let full = round % 2 == 1;
            let a = random(&mut rng, vec![m, k], full);
            let b = random(&mut rng, vec![k, n], full);
            assert_eq!(matmul(&a, &b).unwrap().data(), oracle_matmul(&a, &b).as_slice());
        }
    }

    #[test]
    fn parallel_path_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, vec![96, 64], true);
        let b = random(&mut rng, vec![64, 48], true);
        let seq = matmul_chunked(&a, &b, 64).unwrap();
        assert_eq!(matmul(&a, &b).unwrap(), seq);
        for chunk in [1, 3, 7, 17] {
            assert_eq!(matmul_chunked(&a, &b, chunk).unwrap(), seq);
        }
    }

    #[test]
    fn shape_errors() {
        let a = Tensor::zeros(vec![2, 3]).unwrap();
        assert!(matmul(&a, &a).is_err());
        let b = Tensor::zeros(vec![2]).unwrap();
        assert!(bias_add(&a, &b).is_err());
        assert!(matmul(&b, &a).is_err());
    }

    #[test]
    fn relu_bias_argmax() {
        let x = Tensor::new(vec![2, 2], vec![-3, 4, 0, -1]).unwrap();
        assert_eq!(relu(&x).data(), &[0, 4, 0, 0]);
        let b = Tensor::new(vec![2], vec![10, i32::MAX]).unwrap();
        assert_eq!(bias_add(&x, &b).unwrap().data(), &[7, i32::MIN + 3, 10, i32::MAX - 1]);
        let t = Tensor::new(vec![5], vec![1, 9, 3, 9, -2]).unwrap();
        assert_eq!(argmax(&t), 1);
        assert_eq!(argmax_tensor(&t).data(), &[1]);
    }

    proptest! {
        #[test]
        fn chunked_reduction_order_is_irrelevant(seed in any::<u64>(), chunk in 1usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&mut rng, vec![3, 9], true);
            let b = random(&mut rng, vec![9, 4], true);
            prop_assert_eq!(matmul_chunked(&a, &b, chunk).unwrap(), matmul(&a, &b).unwrap());
        }
    }
}
