//! The verification game between a submitter and a validator, and the
//! attention challenge that makes checking dominant.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum IncentiveError {
    #[error("payoffs must be non-negative and finite with C > 0")]
    Payoffs,
    #[error("R + L must be positive")]
    ZeroRewardPlusLoss,
    #[error("B + S must be positive")]
    ZeroBenefitPlusStake,
    #[error("r, t and C must be positive and finite")]
    AttentionParams,
}

/// Validation cost `c`, challenge reward `r`, victim loss `l`, cheating
/// benefit `b`, stake `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GamePayoffs {
    pub c: f64,
    pub r: f64,
    pub l: f64,
    pub b: f64,
    pub s: f64,
}

impl GamePayoffs {
    pub fn new(c: f64, r: f64, l: f64, b: f64, s: f64) -> Result<Self, IncentiveError> {
        let all = [c, r, l, b, s];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) || c <= 0.0 {
            return Err(IncentiveError::Payoffs);
        }
        Ok(GamePayoffs { c, r, l, b, s })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidatorAction {
    Validate,
    Skip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitterAction {
    Cheat,
    Honest,
}

/// `(validator, submitter)` payoffs.
pub fn payoff(g: &GamePayoffs, v: ValidatorAction, s: SubmitterAction) -> (f64, f64) {
    use SubmitterAction::*;
    use ValidatorAction::*;
    match (v, s) {
        (Validate, Cheat) => (g.r - g.c, -g.s),
        (Validate, Honest) => (-g.c, -g.c),
        (Skip, Cheat) => (-g.l, g.b),
        (Skip, Honest) => (0.0, -g.c),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Equilibrium {
    /// Submitter's cheating probability.
    pub p_c: f64,
    /// Validator's checking probability.
    pub p_v: f64,
    /// False when `p_c > 1`: no interior equilibrium exists.
    pub p_c_valid: bool,
    pub p_v_valid: bool,
}

/// Mixed equilibrium `p_c = C/(R+L)`, `p_v = (B+C)/(B+S)`. Values above one
/// are reported as-is with the matching validity flag cleared.
pub fn verifier_equilibrium(g: &GamePayoffs) -> Result<Equilibrium, IncentiveError> {
    if g.r + g.l <= 0.0 {
        return Err(IncentiveError::ZeroRewardPlusLoss);
    }
    if g.b + g.s <= 0.0 {
        return Err(IncentiveError::ZeroBenefitPlusStake);
    }
    let p_c = g.c / (g.r + g.l);
    let p_v = (g.b + g.c) / (g.b + g.s);
    Ok(Equilibrium {
        p_c,
        p_v,
        p_c_valid: p_c <= 1.0,
        p_v_valid: p_v <= 1.0,
    })
}

/// Residuals of the two indifference conditions at `(p_c, p_v)`.
pub fn indifference_residuals(g: &GamePayoffs, e: &Equilibrium) -> (f64, f64) {
    let v = e.p_c * (g.r - g.c) + (1.0 - e.p_c) * (-g.c) - (-e.p_c * g.l);
    let s = e.p_v * (-g.s) + (1.0 - e.p_v) * g.b - (-g.c);
    (v, s)
}

/// Lock-up interest `r`, response gas fee `t`, computation cost `c`, penalty
/// `g` and response probability `p_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AttentionParams {
    pub r: f64,
    pub t: f64,
    pub c: f64,
    pub g: f64,
    pub p_t: f64,
}

/// `(U_check, U_lazy) = (p_c·R − C, −p_c·L − p_t·G)`.
pub fn attention_utilities(g: &GamePayoffs, att: &AttentionParams, p_c: f64) -> (f64, f64) {
    (p_c * g.r - g.c, -p_c * g.l - att.p_t * att.g)
}

/// Extra cost per request, `r·G + t·p_t`.
pub fn attention_cost(r: f64, t: f64, g: f64, p_t: f64) -> f64 {
    r * g + t * p_t
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OptimalAttention {
    pub g: f64,
    pub p_t: f64,
    pub cost: f64,
}

/// Minimises `r·G + t·p_t` subject to `p_t·G >= C`:
/// `G = sqrt(tC/r)`, `p_t = sqrt(rC/t)`, cost `2·sqrt(rtC)`.
pub fn optimal_attention(r: f64, t: f64, c: f64) -> Result<OptimalAttention, IncentiveError> {
    if [r, t, c].iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(IncentiveError::AttentionParams);
    }
    Ok(OptimalAttention {
        g: (t * c / r).sqrt(),
        p_t: (r * c / t).sqrt(),
        cost: 2.0 * (r * t * c).sqrt(),
    })
}
