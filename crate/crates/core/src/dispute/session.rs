//! Checkpoint placement and the per-round narrowing rule.

use serde::Serialize;

use crate::hash::Digest;

/// Interior indices `i + floor(j·t/(k+1))`, `t = 1..=k`, deduplicated and
/// strictly inside `(i, i+j)`.
pub fn checkpoints(i: u64, j: u64, k: u64) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::with_capacity(k as usize);
    if j < 2 || k == 0 {
        return out;
    }
    for t in 1..=k {
        let c = i + ((j as u128 * t as u128) / (k as u128 + 1)) as u64;
        if c > i && c < i + j && out.last() != Some(&c) {
            out.push(c);
        }
    }
    out
}

/// `ceil(log_base(x))` for `x >= 1`, computed in integers.
pub fn ceil_log(x: u64, base: u64) -> u32 {
    assert!(base >= 2);
    let mut r = 0;
    let mut p: u128 = 1;
    while p < x as u128 {
        p *= base as u128;
        r += 1;
    }
    r
}

/// Dispute span for a trace of `n` steps: `m·(k+1)^r` with
/// `r = ceil(log_{k+1}(ceil(n/m)))`. Indices past `n` repeat the final state,
/// so every segment has equal length and responsive games take exactly `r`
/// rounds.
pub fn padded_span(n: u64, k: u64, m: u64) -> u64 {
    let r = ceil_log(n.div_ceil(m).max(1), k + 1);
    m * (k + 1).pow(r)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundRecord {
    pub round: u32,
    pub checkpoints: Vec<u64>,
    pub posted: Vec<Digest>,
    pub segment: usize,
}

/// Responder's move: the first segment whose end it disagrees with, and its
/// own root at that end (omitted for the last segment, whose end is already
/// on record).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub segment: usize,
    pub root: Option<Digest>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    /// Challenger posted the wrong number of roots.
    BadCheckpointCount,
    /// Segment index outside `0..=k`.
    SegmentOutOfRange,
    /// Claimed disagreement but supplied no root, or the same root.
    NoDisagreement,
}

impl Violation {
    /// True if the submitter (the responder) committed it.
    pub fn by_submitter(self) -> bool {
        !matches!(self, Violation::BadCheckpointCount)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisputeSession {
    /// Both parties agree on the state at `i`.
    pub i: u64,
    /// ... and disagree on the state at `i + j`.
    pub j: u64,
    pub k: u64,
    pub round: u32,
    pub agreed_root: Digest,
    pub submitter_end: Digest,
    pub challenger_end: Digest,
    pub history: Vec<RoundRecord>,
}

impl DisputeSession {
    pub fn new(span: u64, k: u64, initial: Digest, submitter_end: Digest, challenger_end: Digest) -> Self {
        assert!(span >= 1 && k >= 1);
        DisputeSession {
            i: 0,
            j: span,
            k,
            round: 0,
            agreed_root: initial,
            submitter_end,
            challenger_end,
            history: Vec::new(),
        }
    }

    pub fn checkpoints(&self) -> Vec<u64> {
        checkpoints(self.i, self.j, self.k)
    }
}

/// Applies one round: the challenger's roots at the session checkpoints and
/// the submitter's response.
pub fn bisection_round(
    s: &DisputeSession,
    posted: &[Digest],
    response: &Response,
) -> Result<DisputeSession, Violation> {
    let cps = s.checkpoints();
    if posted.len() != cps.len() {
        return Err(Violation::BadCheckpointCount);
    }
    if response.segment > cps.len() {
        return Err(Violation::SegmentOutOfRange);
    }
    let seg = response.segment;
    let start = if seg == 0 { s.i } else { cps[seg - 1] };
    let agreed = if seg == 0 { s.agreed_root } else { posted[seg - 1] };
    let (end, sub_end, chal_end) = if seg == cps.len() {
        (s.i + s.j, s.submitter_end, s.challenger_end)
    } else {
        match response.root {
            Some(r) if r != posted[seg] => (cps[seg], r, posted[seg]),
            _ => return Err(Violation::NoDisagreement),
        }
    };
    let mut next = s.clone();
    next.round += 1;
    next.i = start;
    next.j = end - start;
    next.agreed_root = agreed;
    next.submitter_end = sub_end;
    next.challenger_end = chal_end;
    next.history.push(RoundRecord {
        round: next.round,
        checkpoints: cps,
        posted: posted.to_vec(),
        segment: seg,
    });
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(b: u8) -> Digest {
        Digest([b; 32])
    }

    #[test]
    fn checkpoint_examples() {
        assert_eq!(checkpoints(0, 8, 1), vec![4]);
        assert_eq!(checkpoints(0, 9, 2), vec![3, 6]);
        assert_eq!(checkpoints(0, 2, 1), vec![1]);
        assert_eq!(checkpoints(10, 9, 1), vec![14]);
        // more checkpoints than interior points collapse
        assert_eq!(checkpoints(0, 3, 5), vec![1, 2]);
        assert!(checkpoints(0, 1, 3).is_empty());
    }

    #[test]
    fn k1_is_floor_midpoint() {
        for i in 0..5 {
            for j in 2..40 {
                assert_eq!(checkpoints(i, j, 1), vec![i + j / 2]);
            }
        }
    }

    #[test]
    fn span_padding() {
        assert_eq!(padded_span(8, 1, 1), 8);
        assert_eq!(padded_span(9, 1, 1), 16);
        assert_eq!(padded_span(16, 3, 1), 16);
        assert_eq!(padded_span(1, 1, 1), 1);
        assert_eq!(padded_span(1024, 3, 4), 1024);
        assert_eq!(padded_span(10, 2, 3), 27);
        assert_eq!(padded_span(9, 2, 3), 9);
        assert_eq!(ceil_log(1024, 2), 10);
        assert_eq!(ceil_log(256, 4), 4);
        assert_eq!(ceil_log(1, 2), 0);
    }

    #[test]
    fn round_examples() {
        let s = DisputeSession::new(8, 1, d(0), d(1), d(2));
        // submitter agrees with the midpoint
        let n = bisection_round(&s, &[d(5)], &Response { segment: 1, root: None }).unwrap();
        assert_eq!((n.i, n.j), (4, 4));
        assert_eq!(n.agreed_root, d(5));
        // submitter disagrees
        let n = bisection_round(
            &s,
            &[d(5)],
            &Response {
                segment: 0,
                root: Some(d(6)),
            },
        )
        .unwrap();
        assert_eq!((n.i, n.j), (0, 4));
        assert_eq!((n.submitter_end, n.challenger_end), (d(6), d(5)));

        let s = DisputeSession::new(9, 2, d(0), d(1), d(2));
        let n = bisection_round(&s, &[d(3), d(4)], &Response { segment: 2, root: None }).unwrap();
        assert_eq!((n.i, n.j), (6, 3));
    }

    #[test]
    fn violations() {
        let s = DisputeSession::new(8, 1, d(0), d(1), d(2));
        assert_eq!(
            bisection_round(&s, &[d(5)], &Response { segment: 2, root: None }),
            Err(Violation::SegmentOutOfRange)
        );
        assert_eq!(
            bisection_round(
                &s,
                &[d(5)],
                &Response {
                    segment: 0,
                    root: Some(d(5))
                }
            ),
            Err(Violation::NoDisagreement)
        );
        assert_eq!(
            bisection_round(&s, &[], &Response { segment: 0, root: None }),
            Err(Violation::BadCheckpointCount)
        );
    }
}
