//! Dispute participants: a view of some execution trace plus a strategy that
//! decides how faithfully the participant reports it.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::PartyId;
use super::session::Response;
use crate::fpvm::StepWitness;
use crate::hash::Digest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Submitter,
    Challenger,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::Submitter => Role::Challenger,
            Role::Challenger => Role::Submitter,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Submitter => "submitter",
            Role::Challenger => "challenger",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A sequence of state roots `S_0 ..= S_len`, extended by repeating the last.
pub trait Trace {
    /// Steps until the trace halts.
    fn len(&self) -> u64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn root_at(&self, i: u64) -> Digest;

    /// Witnesses for the `count` steps starting at state `i`, generated from
    /// this trace's own states. Traces without a VM behind them have none.
    fn witnesses(&self, _i: u64, _count: u64) -> Option<Vec<StepWitness>> {
        None
    }
}

/// Trace given directly by its roots.
#[derive(Clone, Debug)]
pub struct RootTrace(pub Vec<Digest>);

impl Trace for RootTrace {
    fn len(&self) -> u64 {
        self.0.len() as u64 - 1
    }

    fn root_at(&self, i: u64) -> Digest {
        self.0[(i as usize).min(self.0.len() - 1)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Honest,
    /// Reports faithfully from a trace corrupted from step `s` on. The
    /// corruption itself lives in the trace the actor is built with.
    FaultAtStep(u64),
    /// Reports bit-flipped roots in the given round.
    WrongMidpointAt(u32),
    /// Stops moving from the given round on (arbitration counts as the round
    /// after the last bisection round).
    Silent {
        after_round: u32,
    },
    /// Random roots and random segment choices.
    Random(u64),
}

impl Strategy {
    pub fn is_honest(self) -> bool {
        matches!(self, Strategy::Honest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown strategy '{0}' (expected honest, fault:S, wrong-midpoint:R, silent:R or random:SEED)")]
pub struct StrategyParseError(pub String);

impl FromStr for Strategy {
    type Err = StrategyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || StrategyParseError(s.to_string());
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| a.and_then(|v| v.parse::<u64>().ok()).ok_or_else(err);
        Ok(match kind {
            "honest" if arg.is_none() => Strategy::Honest,
            "fault" => Strategy::FaultAtStep(num(arg)?),
            "wrong-midpoint" => Strategy::WrongMidpointAt(u32::try_from(num(arg)?).map_err(|_| err())?),
            "silent" => Strategy::Silent {
                after_round: u32::try_from(num(arg)?).map_err(|_| err())?,
            },
            "random" => Strategy::Random(num(arg)?),
            _ => return Err(err()),
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Honest => write!(f, "honest"),
            Strategy::FaultAtStep(s) => write!(f, "fault:{s}"),
            Strategy::WrongMidpointAt(r) => write!(f, "wrong-midpoint:{r}"),
            Strategy::Silent { after_round } => write!(f, "silent:{after_round}"),
            Strategy::Random(seed) => write!(f, "random:{seed}"),
        }
    }
}

pub struct Actor<'a> {
    pub party: PartyId,
    pub strategy: Strategy,
    trace: &'a dyn Trace,
    rng: ChaCha8Rng,
}

fn random_digest(rng: &mut ChaCha8Rng) -> Digest {
    Digest(rng.gen())
}

impl<'a> Actor<'a> {
    pub fn new(party: PartyId, strategy: Strategy, trace: &'a dyn Trace, rng: ChaCha8Rng) -> Self {
        Actor {
            party,
            strategy,
            trace,
            rng,
        }
    }

    pub fn trace(&self) -> &'a dyn Trace {
        self.trace
    }

    pub fn silent_in(&self, round: u32) -> bool {
        matches!(self.strategy, Strategy::Silent { after_round } if round >= after_round)
    }

    fn truthful(&self) -> bool {
        matches!(self.strategy, Strategy::Honest | Strategy::FaultAtStep(_))
    }

    /// Root the challenger asserts at the end of the span, or `None` if it
    /// accepts `claimed`. Misbehaving challengers dispute regardless.
    pub fn challenge_root(&mut self, claimed: &Digest, span: u64) -> Option<Digest> {
        let own = self.trace.root_at(span);
        if own != *claimed {
            Some(own)
        } else if self.truthful() {
            None
        } else {
            Some(claimed.flip_bit(0))
        }
    }

    /// Challenger move: roots at the checkpoints.
    pub fn post(&mut self, round: u32, checkpoints: &[u64]) -> Option<Vec<Digest>> {
        if self.silent_in(round) {
            return None;
        }
        let mut roots: Vec<Digest> = checkpoints.iter().map(|&c| self.trace.root_at(c)).collect();
        match self.strategy {
            Strategy::WrongMidpointAt(r) if r == round => {
                roots.iter_mut().for_each(|d| *d = d.flip_bit(0));
            }
            Strategy::Random(_) => {
                for d in roots.iter_mut() {
                    if self.rng.gen_bool(0.5) {
                        *d = random_digest(&mut self.rng);
                    }
                }
            }
            _ => {}
        }
        Some(roots)
    }

    /// Submitter move: pick the first segment whose end disagrees.
    pub fn respond(&mut self, round: u32, checkpoints: &[u64], posted: &[Digest]) -> Option<Response> {
        if self.silent_in(round) {
            return None;
        }
        match self.strategy {
            Strategy::WrongMidpointAt(r) if r == round && !posted.is_empty() => {
                return Some(Response {
                    segment: 0,
                    root: Some(posted[0].flip_bit(0)),
                })
            }
            Strategy::Random(_) => {
                let segment = self.rng.gen_range(0..=checkpoints.len());
                let root = (segment < checkpoints.len()).then(|| random_digest(&mut self.rng));
                return Some(Response { segment, root });
            }
            _ => {}
        }
        for (s, (&c, p)) in checkpoints.iter().zip(posted).enumerate() {
            let own = self.trace.root_at(c);
            if own != *p {
                return Some(Response {
                    segment: s,
                    root: Some(own),
                });
            }
        }
        Some(Response {
            segment: checkpoints.len(),
            root: None,
        })
    }
}
