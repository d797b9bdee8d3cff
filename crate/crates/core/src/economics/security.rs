//! Probability that a claim ends up correct under AnyTrust versus a
//! majority-trust system, with `m` validators each malicious with
//! probability `p`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

/// Largest `m` evaluated with exact rationals; beyond it floats are used.
pub const EXACT_MAX_M: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum SecurityError {
    #[error("p must be in [0, 1], got {0}")]
    P(f64),
    #[error("m must be at least 1")]
    M,
    #[error("f must be in (0, 1), got {0}")]
    F(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SecurityParams {
    pub p: f64,
    pub m: u32,
    pub f: f64,
}

impl SecurityParams {
    pub fn new(p: f64, m: u32, f: f64) -> Result<Self, SecurityError> {
        check_p(p)?;
        if m == 0 {
            return Err(SecurityError::M);
        }
        if !(f > 0.0 && f < 1.0) {
            return Err(SecurityError::F(f));
        }
        Ok(SecurityParams { p, m, f })
    }
}

fn check_p(p: f64) -> Result<(), SecurityError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SecurityError::P(p))
    }
}

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("probability fits f64")
}

/// `1 - p^m`.
pub fn any_trust_prob(p: f64, m: u32) -> Result<f64, SecurityError> {
    check_p(p)?;
    if m == 0 {
        return Err(SecurityError::M);
    }
    if m <= EXACT_MAX_M {
        Ok(to_f64(&any_trust_exact(&exact(p), m)))
    } else {
        Ok(1.0 - p.powi(m as i32))
    }
}

pub fn any_trust_exact(p: &BigRational, m: u32) -> BigRational {
    BigRational::one() - num_traits::pow(p.clone(), m as usize)
}

/// `ceil(f·m)`, taken on the exact value of the float `f`.
pub fn majority_bound(f: f64, m: u32) -> u32 {
    let v = exact(f) * BigRational::from_integer(BigInt::from(m));
    v.ceil().to_integer().to_u32().expect("f < 1")
}

/// `sum_{i=0}^{ceil(f·m)} C(m,i) p^i (1-p)^(m-i)`, capped at `i = m`.
pub fn majority_trust_prob(params: &SecurityParams) -> f64 {
    let SecurityParams { p, m, f } = *params;
    let upper = majority_bound(f, m).min(m);
    if m <= EXACT_MAX_M {
        return to_f64(&majority_trust_exact(&exact(p), m, upper));
    }
    majority_trust_float(p, m, upper)
}

/// Same sum with log-space binomial terms.
pub fn majority_trust_float(p: f64, m: u32, upper: u32) -> f64 {
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_c = 0.0f64;
    let mut sum = 0.0;
    for i in 0..=upper.min(m) {
        if i > 0 {
            log_c += ((m - i + 1) as f64).ln() - (i as f64).ln();
        }
        sum += match (p == 0.0, p == 1.0) {
            (true, _) => (i == 0) as u8 as f64,
            (_, true) => (i == m) as u8 as f64,
            _ => (log_c + i as f64 * lp + (m - i) as f64 * lq).exp(),
        };
    }
    sum.min(1.0)
}

pub fn majority_trust_exact(p: &BigRational, m: u32, upper: u32) -> BigRational {
    let q = BigRational::one() - p;
    let mut sum = BigRational::zero();
    let mut binom = BigInt::one();
    for i in 0..=upper.min(m) {
        if i > 0 {
            binom = binom * BigInt::from(m - i + 1) / BigInt::from(i);
        }
        sum += BigRational::from_integer(binom.clone())
            * num_traits::pow(p.clone(), i as usize)
            * num_traits::pow(q.clone(), (m - i) as usize);
    }
    sum
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SecurityRow {
    pub p: f64,
    pub m: u32,
    pub f: f64,
    pub p_any: f64,
    pub p_majority: f64,
}

pub fn security_row(params: &SecurityParams) -> SecurityRow {
    SecurityRow {
        p: params.p,
        m: params.m,
        f: params.f,
        p_any: any_trust_prob(params.p, params.m).expect("validated params"),
        p_majority: majority_trust_prob(params),
    }
}
