//! Simulated settlement layer: balances, locked stakes, burns, a tick clock
//! and the claim / challenge-period lifecycle.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::hash::Digest;

pub type PartyId = u32;
pub type Amount = u128;
pub type ClaimId = usize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("party {party} has {available}, needs {needed}")]
    InsufficientFunds {
        party: PartyId,
        available: Amount,
        needed: Amount,
    },
    #[error("party {party} has only {locked} locked, needs {needed}")]
    InsufficientStake {
        party: PartyId,
        locked: Amount,
        needed: Amount,
    },
    #[error("unknown claim {0}")]
    UnknownClaim(ClaimId),
    #[error("claim {0} already has an open dispute")]
    AlreadyDisputed(ClaimId),
    #[error("claim {0} has no open dispute")]
    NoDispute(ClaimId),
    #[error("claim {0} is closed")]
    Closed(ClaimId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Funded {
        party: PartyId,
        amount: Amount,
    },
    Staked {
        party: PartyId,
        amount: Amount,
    },
    Unstaked {
        party: PartyId,
        amount: Amount,
    },
    Slashed {
        party: PartyId,
        amount: Amount,
        to: PartyId,
        reward: Amount,
        burned: Amount,
    },
    Transfer {
        from: PartyId,
        to: PartyId,
        amount: Amount,
    },
    Burned {
        party: PartyId,
        amount: Amount,
    },
    ClaimPosted {
        claim: ClaimId,
        submitter: PartyId,
        at: u64,
    },
    DisputeOpened {
        claim: ClaimId,
        challenger: PartyId,
        at: u64,
    },
    DisputeResolved {
        claim: ClaimId,
        submitter_won: bool,
        at: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Settlement {
    Confirmed,
    Pending,
    /// The claim lost a dispute and can never be confirmed.
    Rejected,
}

#[derive(Clone, Debug)]
struct ClaimRecord {
    submitter: PartyId,
    stake: Amount,
    posted_at: u64,
    open_dispute: Option<(PartyId, Amount)>,
    rejected: bool,
}

#[derive(Clone, Debug)]
pub struct ChainSim {
    clock: u64,
    balances: BTreeMap<PartyId, Amount>,
    stakes: BTreeMap<PartyId, Amount>,
    burned: Amount,
    minted: Amount,
    events: Vec<Event>,
    claims: Vec<ClaimRecord>,
    /// Share of a slashed stake paid to the winner, in basis points; the
    /// rest is burned.
    pub reward_bps: u32,
    pub challenge_period: u64,
}

impl Default for ChainSim {
    fn default() -> Self {
        ChainSim {
            clock: 0,
            balances: BTreeMap::new(),
            stakes: BTreeMap::new(),
            burned: 0,
            minted: 0,
            events: Vec::new(),
            claims: Vec::new(),
            reward_bps: 5000,
            challenge_period: 100,
        }
    }
}

impl ChainSim {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn advance(&mut self, ticks: u64) {
        self.clock += ticks;
    }

    pub fn fund(&mut self, party: PartyId, amount: Amount) {
        *self.balances.entry(party).or_default() += amount;
        self.minted += amount;
        self.events.push(Event::Funded { party, amount });
    }

    pub fn balance(&self, party: PartyId) -> Amount {
        self.balances.get(&party).copied().unwrap_or(0)
    }

    pub fn staked(&self, party: PartyId) -> Amount {
        self.stakes.get(&party).copied().unwrap_or(0)
    }

    pub fn burned(&self) -> Amount {
        self.burned
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Balances + locked stakes + burned. Constant unless funds are minted.
    pub fn total(&self) -> Amount {
        self.balances.values().sum::<Amount>() + self.stakes.values().sum::<Amount>() + self.burned
    }

    /// Balances plus locked stakes; drops by every burned amount.
    pub fn circulating(&self) -> Amount {
        self.total() - self.burned
    }

    pub fn minted(&self) -> Amount {
        self.minted
    }

    fn debit(&mut self, party: PartyId, amount: Amount) -> Result<(), ChainError> {
        let available = self.balance(party);
        if available < amount {
            return Err(ChainError::InsufficientFunds {
                party,
                available,
                needed: amount,
            });
        }
        self.balances.insert(party, available - amount);
        Ok(())
    }

    fn unlock(&mut self, party: PartyId, amount: Amount) -> Result<(), ChainError> {
        let locked = self.staked(party);
        if locked < amount {
            return Err(ChainError::InsufficientStake {
                party,
                locked,
                needed: amount,
            });
        }
        self.stakes.insert(party, locked - amount);
        Ok(())
    }

    pub fn stake(&mut self, party: PartyId, amount: Amount) -> Result<(), ChainError> {
        self.debit(party, amount)?;
        *self.stakes.entry(party).or_default() += amount;
        self.events.push(Event::Staked { party, amount });
        Ok(())
    }

    pub fn unstake(&mut self, party: PartyId, amount: Amount) -> Result<(), ChainError> {
        self.unlock(party, amount)?;
        *self.balances.entry(party).or_default() += amount;
        self.events.push(Event::Unstaked { party, amount });
        Ok(())
    }

    /// Takes `amount` of `loser`'s stake: the reward share goes to `winner`,
    /// the remainder is burned.
    pub fn slash(&mut self, loser: PartyId, winner: PartyId, amount: Amount) -> Result<(), ChainError> {
        self.unlock(loser, amount)?;
        let reward = amount * self.reward_bps as Amount / 10_000;
        let burned = amount - reward;
        *self.balances.entry(winner).or_default() += reward;
        self.burned += burned;
        self.events.push(Event::Slashed {
            party: loser,
            amount,
            to: winner,
            reward,
            burned,
        });
        Ok(())
    }

    pub fn transfer(&mut self, from: PartyId, to: PartyId, amount: Amount) -> Result<(), ChainError> {
        self.debit(from, amount)?;
        *self.balances.entry(to).or_default() += amount;
        self.events.push(Event::Transfer { from, to, amount });
        Ok(())
    }

    pub fn burn(&mut self, party: PartyId, amount: Amount) -> Result<(), ChainError> {
        self.debit(party, amount)?;
        self.burned += amount;
        self.events.push(Event::Burned { party, amount });
        Ok(())
    }

    /// Records a result claim and locks the submitter's stake.
    pub fn post_claim(&mut self, submitter: PartyId, stake: Amount, _result: Digest) -> Result<ClaimId, ChainError> {
        self.stake(submitter, stake)?;
        let id = self.claims.len();
        self.claims.push(ClaimRecord {
            submitter,
            stake,
            posted_at: self.clock,
            open_dispute: None,
            rejected: false,
        });
        self.events.push(Event::ClaimPosted {
            claim: id,
            submitter,
            at: self.clock,
        });
        Ok(id)
    }

    fn claim_mut(&mut self, id: ClaimId) -> Result<&mut ClaimRecord, ChainError> {
        self.claims.get_mut(id).ok_or(ChainError::UnknownClaim(id))
    }

    /// Locks the challenger's matching stake and opens a dispute.
    pub fn open_dispute(&mut self, id: ClaimId, challenger: PartyId) -> Result<(), ChainError> {
        let c = self.claim_mut(id)?;
        if c.rejected {
            return Err(ChainError::Closed(id));
        }
        if c.open_dispute.is_some() {
            return Err(ChainError::AlreadyDisputed(id));
        }
        let stake = c.stake;
        self.stake(challenger, stake)?;
        self.claims[id].open_dispute = Some((challenger, stake));
        self.events.push(Event::DisputeOpened {
            claim: id,
            challenger,
            at: self.clock,
        });
        Ok(())
    }

    /// Closes the open dispute: the loser is slashed, the winner unlocked.
    pub fn resolve_dispute(&mut self, id: ClaimId, submitter_won: bool) -> Result<(), ChainError> {
        let c = self.claims.get(id).ok_or(ChainError::UnknownClaim(id))?;
        let (challenger, stake) = c.open_dispute.ok_or(ChainError::NoDispute(id))?;
        let submitter = c.submitter;
        let (winner, loser) = if submitter_won {
            (submitter, challenger)
        } else {
            (challenger, submitter)
        };
        self.slash(loser, winner, stake)?;
        // A submitter that won keeps its stake locked behind the claim.
        if !submitter_won {
            self.unstake(challenger, stake)?;
        }
        let c = &mut self.claims[id];
        c.open_dispute = None;
        c.rejected = !submitter_won;
        self.events.push(Event::DisputeResolved {
            claim: id,
            submitter_won,
            at: self.clock,
        });
        Ok(())
    }

    pub fn elapsed(&self, id: ClaimId) -> Result<u64, ChainError> {
        let c = self.claims.get(id).ok_or(ChainError::UnknownClaim(id))?;
        Ok(self.clock - c.posted_at)
    }

    /// Confirmed iff no dispute is open and `elapsed` reaches the period.
    pub fn settle_challenge_period(&self, id: ClaimId, elapsed: u64) -> Result<Settlement, ChainError> {
        let c = self.claims.get(id).ok_or(ChainError::UnknownClaim(id))?;
        Ok(if c.rejected {
            Settlement::Rejected
        } else if c.open_dispute.is_some() || elapsed < self.challenge_period {
            Settlement::Pending
        } else {
            Settlement::Confirmed
        })
    }

    /// Returns the submitter's stake once the claim is confirmed.
    pub fn release_claim(&mut self, id: ClaimId) -> Result<(), ChainError> {
        let elapsed = self.elapsed(id)?;
        if self.settle_challenge_period(id, elapsed)? != Settlement::Confirmed {
            return Err(ChainError::Closed(id));
        }
        let (submitter, stake) = (self.claims[id].submitter, self.claims[id].stake);
        self.claims[id].stake = 0;
        self.unstake(submitter, stake)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SUB: PartyId = 1;
    const CHAL: PartyId = 2;

    fn setup() -> (ChainSim, ClaimId) {
        let mut c = ChainSim::new();
        c.fund(SUB, 1000);
        c.fund(CHAL, 1000);
        let id = c.post_claim(SUB, 100, Digest::ZERO).unwrap();
        (c, id)
    }

    #[test]
    fn unchallenged_claim_confirms() {
        let (mut c, id) = setup();
        assert_eq!(c.settle_challenge_period(id, 99).unwrap(), Settlement::Pending);
        assert_eq!(c.settle_challenge_period(id, 100).unwrap(), Settlement::Confirmed);
        c.advance(100);
        c.release_claim(id).unwrap();
        assert_eq!(c.balance(SUB), 1000);
        assert_eq!(c.total(), 2000);
    }

    #[test]
    fn open_dispute_stays_pending() {
        let (mut c, id) = setup();
        c.open_dispute(id, CHAL).unwrap();
        assert_eq!(c.settle_challenge_period(id, 10_000).unwrap(), Settlement::Pending);
        c.resolve_dispute(id, true).unwrap();
        assert_eq!(c.settle_challenge_period(id, 100).unwrap(), Settlement::Confirmed);
        // challenger lost 100: 50 to the submitter, 50 burned
        assert_eq!(c.balance(CHAL), 900);
        assert_eq!(c.balance(SUB), 950);
        assert_eq!(c.burned(), 50);
        assert_eq!(c.total(), 2000);
    }

    #[test]
    fn losing_submitter_is_rejected() {
        let (mut c, id) = setup();
        c.open_dispute(id, CHAL).unwrap();
        c.resolve_dispute(id, false).unwrap();
        assert_eq!(c.settle_challenge_period(id, 1000).unwrap(), Settlement::Rejected);
        assert_eq!(c.balance(CHAL), 1050);
        assert_eq!(c.staked(SUB), 0);
        assert_eq!(c.total(), 2000);
    }

    #[test]
    fn overdraw_fails() {
        let (mut c, _) = setup();
        assert!(c.stake(SUB, 10_000).is_err());
        assert!(c.unstake(CHAL, 1).is_err());
    }
}
