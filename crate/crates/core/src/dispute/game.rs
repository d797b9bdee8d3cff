//! The bisection game, arbitration of the pinned segment, and a full
//! single-phase dispute over a VM trace.

use std::fmt;

use super::actor::{Actor, Role};
use super::chain::{Amount, ChainError, ChainSim, ClaimId};
use super::session::{bisection_round, padded_span, DisputeSession, Violation};
use super::transcript::{Record, Transcript};
use crate::fpvm::{RejectReason, StepWitness};
use crate::hash::{self, Digest};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GameParams {
    /// Checkpoints per round.
    pub k: u64,
    /// Segment length at which bisection stops.
    pub m: u64,
    /// Ticks a silent mover is given before forfeiting.
    pub deadline: u64,
    /// Whether arbitration checks preimage chunks against their keys.
    pub check_preimage: bool,
}

impl Default for GameParams {
    fn default() -> Self {
        GameParams {
            k: 1,
            m: 1,
            deadline: 10,
            check_preimage: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Malformed {
    Count { expected: u64, got: usize },
    Witness { index: u64, reason: RejectReason },
}

impl fmt::Display for Malformed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Malformed::Count { expected, got } => write!(f, "expected {expected} witnesses, got {got}"),
            Malformed::Witness { index, reason } => write!(f, "witness {index}: {reason:?}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EndReason {
    /// Nobody disputed the claim.
    NoChallenge,
    Timeout(Role),
    Violation(Role, Violation),
    /// Replay of the pinned segment decided it.
    Arbitration,
    MalformedWitness(Role, Malformed),
    /// The challenger had no witnesses to offer for the pinned segment.
    NoWitness,
    /// A check outside the VM (entrance, exit, transition, data node) failed
    /// for the named party.
    CheckFailed(Role, String),
    /// A data-node transition was decided by recomputing its commitment.
    DirectCheck,
    /// Both VM executions agreed; the submitter's exit opening decided.
    ExitCheck,
}

impl EndReason {
    /// Space-free form for one-line summaries; details stay in the transcript.
    pub fn code(&self) -> String {
        match self {
            EndReason::Violation(r, _) => format!("violation:{r}"),
            EndReason::MalformedWitness(r, _) => format!("malformed_witness:{r}"),
            EndReason::CheckFailed(r, what) => {
                let kind = what.split(':').next().unwrap_or("").trim();
                format!("check_failed:{r}:{}", kind.replace(' ', "_"))
            }
            other => other.to_string(),
        }
    }
}

impl fmt::Display for EndReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EndReason::NoChallenge => write!(f, "no_challenge"),
            EndReason::Timeout(r) => write!(f, "timeout:{r}"),
            EndReason::Violation(r, v) => write!(f, "violation:{r}:{v:?}"),
            EndReason::Arbitration => write!(f, "arbitration"),
            EndReason::MalformedWitness(r, m) => write!(f, "malformed_witness:{r}:{m}"),
            EndReason::NoWitness => write!(f, "no_witness"),
            EndReason::CheckFailed(r, what) => write!(f, "check_failed:{r}:{what}"),
            EndReason::DirectCheck => write!(f, "direct_check"),
            EndReason::ExitCheck => write!(f, "exit_check"),
        }
    }
}

/// Segment both parties were narrowed down to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pinned {
    pub i: u64,
    pub j: u64,
    pub pre_root: Digest,
    pub submitter_post: Digest,
    pub challenger_post: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Bisection {
    Pinned(Pinned),
    Forfeit { loser: Role, reason: EndReason },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BisectResult {
    pub outcome: Bisection,
    pub rounds: u32,
}

fn hexes(ds: &[Digest]) -> Vec<String> {
    ds.iter().map(Digest::to_hex).collect()
}

/// Disputed span over one trace pair.
#[derive(Clone, Copy, Debug)]
pub struct Span {
    pub phase: u8,
    pub n: u64,
    pub span: u64,
    pub initial: Digest,
    pub submitter_final: Digest,
    pub challenger_final: Digest,
}

/// Narrows `span` to a segment of at most `m` steps. Round numbers seen by
/// the actors start at `round_offset + 1`.
#[allow(clippy::too_many_arguments)]
pub fn bisect(
    sp: &Span,
    params: &GameParams,
    sub: &mut Actor<'_>,
    chal: &mut Actor<'_>,
    round_offset: u32,
    chain: &mut ChainSim,
    log: &mut Transcript,
) -> BisectResult {
    log.push(Record::Phase {
        phase: sp.phase,
        n: sp.n,
        span: sp.span,
        initial_root: sp.initial.to_hex(),
        submitter_final: sp.submitter_final.to_hex(),
        challenger_final: sp.challenger_final.to_hex(),
    });
    let mut s = DisputeSession::new(sp.span, params.k, sp.initial, sp.submitter_final, sp.challenger_final);
    let forfeit = |s: &DisputeSession, loser: Role, reason: EndReason| BisectResult {
        outcome: Bisection::Forfeit { loser, reason },
        rounds: s.round,
    };
    while s.j > params.m {
        let round = round_offset + s.round + 1;
        let cps = s.checkpoints();
        let mv = |mover: Role, posted: &[Digest], decision: String| Record::Move {
            phase: sp.phase,
            round,
            mover,
            i: s.i,
            j: s.j,
            posted_roots: hexes(posted),
            decision,
        };

        let Some(posted) = chal.post(round, &cps) else {
            chain.advance(params.deadline);
            log.push(mv(Role::Challenger, &[], "timeout".into()));
            return forfeit(&s, Role::Challenger, EndReason::Timeout(Role::Challenger));
        };
        chain.advance(1);
        log.push(mv(Role::Challenger, &posted, "post".into()));

        let Some(resp) = sub.respond(round, &cps, &posted) else {
            chain.advance(params.deadline);
            log.push(mv(Role::Submitter, &[], "timeout".into()));
            return forfeit(&s, Role::Submitter, EndReason::Timeout(Role::Submitter));
        };
        chain.advance(1);
        let own: Vec<Digest> = resp.root.into_iter().collect();
        log.push(mv(Role::Submitter, &own, format!("segment:{}", resp.segment)));

        match bisection_round(&s, &posted, &resp) {
            Ok(next) => s = next,
            Err(v) => {
                let who = if v.by_submitter() {
                    Role::Submitter
                } else {
                    Role::Challenger
                };
                return forfeit(&s, who, EndReason::Violation(who, v));
            }
        }
    }
    BisectResult {
        outcome: Bisection::Pinned(Pinned {
            i: s.i,
            j: s.j,
            pre_root: s.agreed_root,
            submitter_post: s.submitter_end,
            challenger_post: s.challenger_end,
        }),
        rounds: s.round,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arbitration {
    pub winner: Role,
    pub computed: Option<Digest>,
    pub malformed: Option<Malformed>,
}

/// Replays `witnesses` from `pre_root` over the pinned segment. A malformed
/// chain loses for its author; otherwise the submitter wins iff the replay
/// ends at its claimed root.
pub fn arbitrate(pinned: &Pinned, witnesses: &[StepWitness], author: Role, check_preimage: bool) -> Arbitration {
    let bad = |m: Malformed| Arbitration {
        winner: author.other(),
        computed: None,
        malformed: Some(m),
    };
    if witnesses.len() as u64 != pinned.j {
        return bad(Malformed::Count {
            expected: pinned.j,
            got: witnesses.len(),
        });
    }
    let mut root = pinned.pre_root;
    for (idx, w) in witnesses.iter().enumerate() {
        match w.replay(&root, check_preimage) {
            Ok(r) => root = r,
            Err(reason) => {
                return bad(Malformed::Witness {
                    index: idx as u64,
                    reason,
                })
            }
        }
    }
    Arbitration {
        winner: if root == pinned.submitter_post {
            Role::Submitter
        } else {
            Role::Challenger
        },
        computed: Some(root),
        malformed: None,
    }
}

/// Single-step form: the submitter wins iff the witness replays from `pre` to
/// `submitter_post`; a malformed witness loses for the challenger, who
/// supplied it.
pub fn arbitrate_step(pre: &Digest, submitter_post: &Digest, w: &StepWitness, check_preimage: bool) -> Role {
    let pinned = Pinned {
        i: 0,
        j: 1,
        pre_root: *pre,
        submitter_post: *submitter_post,
        challenger_post: Digest::ZERO,
    };
    arbitrate(&pinned, std::slice::from_ref(w), Role::Challenger, check_preimage).winner
}

/// Asks the challenger for witnesses over `pinned` and arbitrates.
pub fn settle_pinned(
    phase: u8,
    pinned: &Pinned,
    arbitration_round: u32,
    params: &GameParams,
    chal: &mut Actor<'_>,
    chain: &mut ChainSim,
    log: &mut Transcript,
) -> (Role, EndReason) {
    let witnesses = if chal.silent_in(arbitration_round) {
        chain.advance(params.deadline);
        None
    } else {
        chain.advance(1);
        chal.trace().witnesses(pinned.i, pinned.j)
    };
    let record = |computed: Option<Digest>, witnesses: &[StepWitness], result: String| Record::Arbitration {
        phase,
        pre_index: pinned.i,
        steps: pinned.j,
        pre_root: pinned.pre_root.to_hex(),
        submitter_post: pinned.submitter_post.to_hex(),
        challenger_post: pinned.challenger_post.to_hex(),
        author: Role::Challenger,
        witnesses: witnesses.iter().map(|w| hex::encode(w.to_bytes())).collect(),
        computed: computed.map(|d| d.to_hex()),
        result,
    };
    let Some(ws) = witnesses else {
        let reason = if chal.silent_in(arbitration_round) {
            EndReason::Timeout(Role::Challenger)
        } else {
            EndReason::NoWitness
        };
        log.push(record(None, &[], reason.to_string()));
        return (Role::Submitter, reason);
    };
    let a = arbitrate(pinned, &ws, Role::Challenger, params.check_preimage);
    let reason = match &a.malformed {
        Some(m) => EndReason::MalformedWitness(Role::Challenger, m.clone()),
        None => EndReason::Arbitration,
    };
    log.push(record(a.computed, &ws, format!("{}:{}", a.winner, reason)));
    (a.winner, reason)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisputeOutcome {
    pub claim: ClaimId,
    pub winner: Role,
    pub reason: EndReason,
    pub rounds: u32,
    /// First step of the pinned segment (1-based: step `t` moves `S_{t-1}`
    /// to `S_t`).
    pub pinned_step: Option<u64>,
    pub span: u64,
}

/// Full dispute over a VM trace: the submitter posts the claim, the
/// challenger decides whether to dispute, bisection runs, the pinned segment
/// is arbitrated and stakes are settled on `chain`.
pub fn run_dispute(
    sub: &mut Actor<'_>,
    chal: &mut Actor<'_>,
    params: &GameParams,
    stake: Amount,
    chain: &mut ChainSim,
    log: &mut Transcript,
) -> Result<DisputeOutcome, ChainError> {
    let n = sub.trace().len().max(chal.trace().len());
    let span = padded_span(n, params.k, params.m);
    let claimed = sub.trace().root_at(span);
    log.push(Record::Header {
        protocol: "single-phase".into(),
        hash: hash::active().name().into(),
        k: params.k,
        m: params.m,
        submitter: sub.strategy.to_string(),
        challenger: chal.strategy.to_string(),
    });
    let claim = chain.post_claim(sub.party, stake, claimed)?;
    let finish = |log: &mut Transcript, winner: Role, reason: &EndReason, rounds: u32, pinned_step: Option<u64>| {
        log.push(Record::Final {
            winner,
            reason: reason.to_string(),
            rounds,
            pinned_node: None,
            pinned_step,
            phase1_rounds: None,
            phase2_rounds: None,
        });
    };

    let Some(chal_final) = chal.challenge_root(&claimed, span) else {
        let reason = EndReason::NoChallenge;
        finish(log, Role::Submitter, &reason, 0, None);
        return Ok(DisputeOutcome {
            claim,
            winner: Role::Submitter,
            reason,
            rounds: 0,
            pinned_step: None,
            span,
        });
    };
    chain.open_dispute(claim, chal.party)?;

    let sp = Span {
        phase: 1,
        n,
        span,
        initial: sub.trace().root_at(0),
        submitter_final: claimed,
        challenger_final: chal_final,
    };
    let b = bisect(&sp, params, sub, chal, 0, chain, log);
    let (winner, reason, pinned_step) = match b.outcome {
        Bisection::Forfeit { loser, reason } => (loser.other(), reason, None),
        Bisection::Pinned(p) => {
            let (w, r) = settle_pinned(1, &p, b.rounds + 1, params, chal, chain, log);
            (w, r, Some(p.i + 1))
        }
    };
    chain.resolve_dispute(claim, winner == Role::Submitter)?;
    finish(log, winner, &reason, b.rounds, pinned_step);
    Ok(DisputeOutcome {
        claim,
        winner,
        reason,
        rounds: b.rounds,
        pinned_step,
        span,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispute::actor::{RootTrace, Strategy, Trace};
    use crate::dispute::vm_trace::VmTrace;
    use crate::fpvm::asm::Assembler;
    use crate::fpvm::{PreimageOracle, VmState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn program(n: usize) -> VmState {
        let mut a = Assembler::new();
        a.li(1, 3);
        for i in 0..n - 2 {
            a.add(2 + (i % 4) as u8, 1, 2);
        }
        a.halt(0);
        VmState::load_program(&a.finish().unwrap(), &[], &[]).unwrap()
    }

    fn trace(n: usize, fault: Option<u64>) -> VmTrace {
        VmTrace::new(program(n), PreimageOracle::new(), fault, 1 << 20).unwrap()
    }

    fn play(
        sub_t: &VmTrace,
        sub_s: Strategy,
        chal_t: &VmTrace,
        chal_s: Strategy,
        params: GameParams,
    ) -> (DisputeOutcome, ChainSim, Transcript) {
        let mut chain = ChainSim::new();
        chain.fund(1, 1000);
        chain.fund(2, 1000);
        let mut sub = Actor::new(1, sub_s, sub_t, ChaCha8Rng::seed_from_u64(1));
        let mut chal = Actor::new(2, chal_s, chal_t, ChaCha8Rng::seed_from_u64(2));
        let mut log = Transcript::new();
        let out = run_dispute(&mut sub, &mut chal, &params, 100, &mut chain, &mut log).unwrap();
        (out, chain, log)
    }

    #[test]
    fn honest_submitter_is_not_challenged() {
        let t = trace(37, None);
        let (out, chain, _) = play(&t, Strategy::Honest, &t, Strategy::Honest, GameParams::default());
        assert_eq!(out.winner, Role::Submitter);
        assert_eq!(out.reason, EndReason::NoChallenge);
        assert_eq!(chain.staked(1), 100);
    }

    #[test]
    fn faulty_submitter_is_pinned_at_fault() {
        let honest = trace(37, None);
        for fault in [1, 2, 17, 36, 37] {
            let bad = trace(37, Some(fault));
            for k in [1, 2, 3] {
                let params = GameParams {
                    k,
                    ..GameParams::default()
                };
                let (out, chain, log) = play(&bad, Strategy::FaultAtStep(fault), &honest, Strategy::Honest, params);
                assert_eq!(out.winner, Role::Challenger, "fault {fault} k {k}");
                assert_eq!(out.pinned_step, Some(fault));
                assert_eq!(out.rounds, crate::dispute::session::ceil_log(37, k + 1));
                assert_eq!(chain.balance(2), 1000 + 50);
                assert_eq!(log.moves() as u32, 2 * out.rounds);
            }
        }
    }

    #[test]
    fn faulty_challenger_loses() {
        let honest = trace(20, None);
        let bad = trace(20, Some(9));
        let (out, _, _) = play(
            &honest,
            Strategy::Honest,
            &bad,
            Strategy::FaultAtStep(9),
            GameParams::default(),
        );
        assert_eq!(out.winner, Role::Submitter);
        assert_eq!(out.pinned_step, Some(9));
    }

    #[test]
    fn lying_or_silent_parties_lose() {
        let honest = trace(40, None);
        let bad = trace(40, Some(13));
        for r in 1..=7 {
            let (o, _, _) = play(
                &honest,
                Strategy::Honest,
                &honest,
                Strategy::WrongMidpointAt(r),
                GameParams::default(),
            );
            assert_eq!(o.winner, Role::Submitter, "wrong midpoint round {r}");
            let (o, _, _) = play(
                &bad,
                Strategy::FaultAtStep(13),
                &honest,
                Strategy::Silent { after_round: r },
                GameParams::default(),
            );
            assert_eq!(o.winner, Role::Submitter, "silent challenger round {r}");
            let (o, _, _) = play(
                &bad,
                Strategy::Silent { after_round: r },
                &honest,
                Strategy::Honest,
                GameParams::default(),
            );
            assert_eq!(o.winner, Role::Challenger, "silent submitter round {r}");
        }
        for seed in 0..20 {
            let (o, _, _) = play(
                &honest,
                Strategy::Honest,
                &honest,
                Strategy::Random(seed),
                GameParams {
                    k: 2,
                    ..GameParams::default()
                },
            );
            assert_eq!(o.winner, Role::Submitter);
            let (o, _, _) = play(
                &honest,
                Strategy::Random(seed),
                &honest,
                Strategy::Honest,
                GameParams {
                    k: 2,
                    ..GameParams::default()
                },
            );
            // a random submitter with a correct final root is never challenged
            assert_eq!(o.winner, Role::Submitter);
            let (o, _, _) = play(
                &bad,
                Strategy::Random(seed),
                &honest,
                Strategy::Honest,
                GameParams {
                    k: 2,
                    ..GameParams::default()
                },
            );
            assert_eq!(o.winner, Role::Challenger);
        }
    }

    #[test]
    fn multi_step_leaves() {
        let honest = trace(50, None);
        let bad = trace(50, Some(23));
        for (k, m) in [(1, 4), (3, 2), (2, 5)] {
            let params = GameParams {
                k,
                m,
                ..GameParams::default()
            };
            let (o, _, _) = play(&bad, Strategy::FaultAtStep(23), &honest, Strategy::Honest, params);
            assert_eq!(o.winner, Role::Challenger);
            let first = o.pinned_step.unwrap();
            assert!(first <= 23 && 23 < first + m, "k {k} m {m} pinned {first}");
        }
    }

    #[test]
    fn root_traces_have_no_witnesses() {
        let a = RootTrace(vec![Digest([0; 32]), Digest([1; 32])]);
        let b = RootTrace(vec![Digest([0; 32]), Digest([2; 32])]);
        let mut chain = ChainSim::new();
        chain.fund(1, 10);
        chain.fund(2, 10);
        let mut sub = Actor::new(1, Strategy::Honest, &a, ChaCha8Rng::seed_from_u64(0));
        let mut chal = Actor::new(2, Strategy::Honest, &b, ChaCha8Rng::seed_from_u64(0));
        let mut log = Transcript::new();
        let o = run_dispute(&mut sub, &mut chal, &GameParams::default(), 5, &mut chain, &mut log).unwrap();
        assert_eq!(o.reason, EndReason::NoWitness);
        assert_eq!(o.winner, Role::Submitter);
    }

    #[test]
    fn arbitrate_rejects_wrong_count() {
        let t = trace(5, None);
        let p = Pinned {
            i: 0,
            j: 2,
            pre_root: t.root_at(0),
            submitter_post: t.root_at(2),
            challenger_post: Digest::ZERO,
        };
        let ws = t.witnesses(0, 1).unwrap();
        let a = arbitrate(&p, &ws, Role::Challenger, true);
        assert_eq!(a.winner, Role::Submitter);
        assert!(matches!(a.malformed, Some(Malformed::Count { .. })));
        let ws = t.witnesses(0, 2).unwrap();
        assert_eq!(arbitrate(&p, &ws, Role::Challenger, true).winner, Role::Submitter);
        assert_eq!(
            arbitrate_step(&t.root_at(1), &t.root_at(2), &ws[1], true),
            Role::Submitter
        );
        assert_eq!(
            arbitrate_step(&t.root_at(1), &t.root_at(3), &ws[1], true),
            Role::Challenger
        );
    }
}
