//! Simulated attention-challenge rounds on the chain model.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use serde::Serialize;

use crate::dispute::{Amount, ChainError, ChainSim, ClaimId, PartyId, Settlement};
use crate::hash::{hash_parts, Digest};

pub type Address = [u8; 20];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttentionError {
    #[error("p_t must be in (0, 1], got {0}")]
    Probability(f64),
    #[error("accusation before the claim was accepted")]
    Premature,
    #[error("validator {0} was already accused")]
    AlreadyAccused(PartyId),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// `T = floor(p_t · 2^256)`; a hash read big-endian is selected iff below it.
pub fn threshold(p_t: f64) -> Result<BigUint, AttentionError> {
    if !(p_t > 0.0 && p_t <= 1.0) {
        return Err(AttentionError::Probability(p_t));
    }
    let scaled = BigRational::from_float(p_t).expect("finite") * BigRational::from_integer(BigInt::one() << 256);
    Ok(scaled.floor().to_integer().to_biguint().expect("non-negative"))
}

/// `H(address || result)`.
pub fn selection_hash(addr: &Address, result: &Digest) -> Digest {
    hash_parts(&[addr, result.as_bytes()])
}

pub fn must_respond(addr: &Address, result: &Digest, threshold: &BigUint) -> bool {
    BigUint::from_bytes_be(selection_hash(addr, result).as_bytes()) < *threshold
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Validator {
    pub party: PartyId,
    pub address: Address,
    /// Whether this validator actually computed the result.
    pub diligent: bool,
}

/// One claim under the attention challenge. The submitter first commits to
/// `H(A_s || f(x))`, selected validators respond, then `f(x)` is revealed and
/// after acceptance non-responders can be accused.
pub struct AttentionRound {
    submitter: PartyId,
    result: Digest,
    commitment: Digest,
    threshold: BigUint,
    penalty: Amount,
    claim: ClaimId,
    revealed: bool,
    responses: BTreeMap<PartyId, Digest>,
    accused: BTreeSet<PartyId>,
}

impl AttentionRound {
    pub fn commit(
        chain: &mut ChainSim,
        submitter: PartyId,
        submitter_addr: &Address,
        result: Digest,
        p_t: f64,
        penalty: Amount,
        stake: Amount,
    ) -> Result<Self, AttentionError> {
        let commitment = selection_hash(submitter_addr, &result);
        let claim = chain.post_claim(submitter, stake, commitment)?;
        Ok(AttentionRound {
            submitter,
            result,
            commitment,
            threshold: threshold(p_t)?,
            penalty,
            claim,
            revealed: false,
            responses: BTreeMap::new(),
            accused: BTreeSet::new(),
        })
    }

    pub fn commitment(&self) -> Digest {
        self.commitment
    }

    pub fn claim(&self) -> ClaimId {
        self.claim
    }

    pub fn respond(&mut self, v: &Validator, response: Digest) {
        self.responses.insert(v.party, response);
    }

    pub fn reveal(&mut self) -> Digest {
        self.revealed = true;
        self.result
    }

    pub fn selected(&self, v: &Validator) -> bool {
        must_respond(&v.address, &self.result, &self.threshold)
    }

    /// Returns whether the accusation was upheld. Upheld accusations slash
    /// the validator's penalty deposit: half to the submitter, half burned.
    pub fn accuse(&mut self, chain: &mut ChainSim, v: &Validator) -> Result<bool, AttentionError> {
        let elapsed = chain.elapsed(self.claim)?;
        if !self.revealed || chain.settle_challenge_period(self.claim, elapsed)? != Settlement::Confirmed {
            return Err(AttentionError::Premature);
        }
        if !self.accused.insert(v.party) {
            return Err(AttentionError::AlreadyAccused(v.party));
        }
        if !self.selected(v) || self.responses.get(&v.party) == Some(&selection_hash(&v.address, &self.result)) {
            return Ok(false);
        }
        chain.slash(v.party, self.submitter, self.penalty)?;
        Ok(true)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoundReport {
    pub commitment: Digest,
    pub selected: Vec<bool>,
    pub responded: Vec<bool>,
    pub penalized: Vec<PartyId>,
    pub submitter_reward: Amount,
    pub burned: Amount,
}

/// Full round: validators lock `penalty`, diligent ones respond when
/// selected, the challenge period passes, the submitter accuses every
/// selected validator and the surviving deposits are returned.
#[allow(clippy::too_many_arguments)]
pub fn attention_round(
    chain: &mut ChainSim,
    submitter: PartyId,
    submitter_addr: &Address,
    validators: &[Validator],
    result: Digest,
    p_t: f64,
    penalty: Amount,
    stake: Amount,
) -> Result<RoundReport, AttentionError> {
    for v in validators {
        chain.stake(v.party, penalty)?;
    }
    let before = (chain.balance(submitter), chain.burned());
    let mut round = AttentionRound::commit(chain, submitter, submitter_addr, result, p_t, penalty, stake)?;
    let mut selected = Vec::with_capacity(validators.len());
    let mut responded = Vec::with_capacity(validators.len());
    for v in validators {
        // Only a validator that computed f(x) can tell whether it was picked.
        let sel = round.selected(v);
        let answers = v.diligent && sel;
        if answers {
            round.respond(v, selection_hash(&v.address, &result));
        }
        selected.push(sel);
        responded.push(answers);
    }
    chain.advance(chain.challenge_period);
    round.reveal();
    let mut penalized = Vec::new();
    for (v, &sel) in validators.iter().zip(&selected) {
        if sel && round.accuse(chain, v)? {
            penalized.push(v.party);
        } else {
            chain.unstake(v.party, penalty)?;
        }
    }
    chain.release_claim(round.claim())?;
    let submitter_reward = chain.balance(submitter) - before.0;
    Ok(RoundReport {
        commitment: round.commitment(),
        selected,
        responded,
        penalized,
        submitter_reward,
        burned: chain.burned() - before.1,
    })
}

/// Fraction of `rounds` random (address, result) pairs that get selected.
pub fn selection_frequency(rng: &mut impl rand::Rng, p_t: f64, rounds: u32) -> Result<f64, AttentionError> {
    let t = threshold(p_t)?;
    let mut hits = 0u32;
    for _ in 0..rounds {
        let addr: Address = rng.gen();
        let result = Digest(rng.gen());
        hits += must_respond(&addr, &result, &t) as u32;
    }
    Ok(hits as f64 / rounds as f64)
}

/// `T / 2^256` as a float, for reporting.
pub fn threshold_fraction(t: &BigUint) -> f64 {
    let r = BigRational::new(BigInt::from(t.clone()), BigInt::one() << 256);
    r.to_f64().unwrap_or(f64::NAN)
}
