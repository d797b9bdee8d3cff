//! Two-phase dispute: bisection over graph nodes, then bisection over the VM
//! execution of the pinned node, tied together by the entrance, exit and
//! transition checks.

use super::checks::{build_entrance, build_exit, entrance_check, transition_check, CheckError};
use crate::dispute::{
    bisect, padded_span, settle_pinned, Actor, Amount, Bisection, ChainError, ChainSim, ClaimId, EndReason, GameParams,
    PartyId, Record, Role, RootTrace, Span, Strategy, Trace, Transcript, VmTrace,
};
use crate::fpvm::oracle::preimage_key;
use crate::fpvm::{PreimageOracle, VmError};
use crate::hash::{self, Digest};
use crate::ml::exec::{execute_native_with_fault, graph_vm, node_vm, ExecError, NativeRun, VM_STEP_BUDGET};
use crate::ml::graph::{Graph, Op};
use crate::ml::lower::GraphProgram;
use crate::ml::tensor::Tensor;
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum MultiphaseError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error("fault node {node} is out of range for a graph of {len} nodes")]
    FaultNode { node: usize, len: usize },
}

/// Corrupts the output of `node`. If `vm_step` is set, the node's VM
/// execution also diverges from that (1-based) step on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeFault {
    pub node: usize,
    pub vm_step: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartyConfig {
    pub party: PartyId,
    pub strategy: Strategy,
    pub fault: Option<NodeFault>,
    pub seed: u64,
}

impl PartyConfig {
    pub fn honest(party: PartyId) -> Self {
        PartyConfig {
            party,
            strategy: Strategy::Honest,
            fault: None,
            seed: party as u64,
        }
    }
}

/// One party's local view of the inference.
pub struct PartyView {
    pub run: NativeRun,
    pub trace: RootTrace,
    fault: Option<NodeFault>,
}

impl PartyView {
    pub fn new(graph: &Graph, input: &Tensor, fault: Option<NodeFault>) -> Result<Self, MultiphaseError> {
        if let Some(f) = fault {
            if f.node >= graph.len() {
                return Err(MultiphaseError::FaultNode {
                    node: f.node,
                    len: graph.len(),
                });
            }
        }
        let run = execute_native_with_fault(graph, input, fault.map(|f| f.node))?;
        let trace = RootTrace(run.commitments.clone());
        Ok(PartyView { run, trace, fault })
    }

    /// This party's VM execution of compute node `t` on its own operands.
    pub fn vm_trace(&self, graph: &Graph, t: usize) -> Result<VmTrace, MultiphaseError> {
        let operands: Vec<&Tensor> = graph.node(t).inputs.iter().map(|&i| &self.run.outputs[i]).collect();
        let (vm, oracle) = node_vm(graph, t, &operands)?;
        let step = self.fault.filter(|f| f.node == t).and_then(|f| f.vm_step);
        Ok(VmTrace::new(vm, oracle, step, VM_STEP_BUDGET)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TwoPhaseOutcome {
    pub claim: ClaimId,
    pub winner: Role,
    pub reason: EndReason,
    pub phase1_rounds: u32,
    pub phase2_rounds: Option<u32>,
    pub pinned_node: Option<usize>,
    /// First step of the pinned VM segment within the pinned node.
    pub pinned_step: Option<u64>,
    pub phase1_span: u64,
    pub phase2_span: Option<u64>,
}

impl TwoPhaseOutcome {
    pub fn rounds(&self) -> u32 {
        self.phase1_rounds + self.phase2_rounds.unwrap_or(0)
    }
}

/// Serialized value a data node must commit to.
fn data_value(graph: &Graph, t: usize, input: &Tensor) -> Vec<u8> {
    match graph.node(t).op {
        Op::Input => input.to_bytes(),
        _ => graph.node(t).value.as_ref().expect("const node has a value").to_bytes(),
    }
}

struct Phase2 {
    winner: Role,
    reason: EndReason,
    rounds: Option<u32>,
    pinned_step: Option<u64>,
    span: u64,
}

#[allow(clippy::too_many_arguments)]
fn phase2(
    graph: &Graph,
    t: usize,
    p1_pre: &Digest,
    p1_posts: (Digest, Digest),
    views: (&PartyView, &PartyView),
    cfgs: (&PartyConfig, &PartyConfig),
    params: &GameParams,
    p1_rounds: u32,
    chain: &mut ChainSim,
    log: &mut Transcript,
) -> Result<Phase2, MultiphaseError> {
    let (sub_view, chal_view) = views;
    let (sub_cfg, chal_cfg) = cfgs;
    let check = |log: &mut Transcript, kind: &str, party: Role, res: &Result<(), CheckError>| {
        log.push(Record::Check {
            phase: 2,
            kind: kind.into(),
            party,
            accepted: res.is_ok(),
            detail: res.as_ref().err().map(|e| e.to_string()).unwrap_or_default(),
        });
    };
    let early = |winner: Role, reason: EndReason| Phase2 {
        winner,
        reason,
        rounds: None,
        pinned_step: None,
        span: 0,
    };

    // Entrance: the submitter opens the operands against the agreed state.
    let entrance_round = p1_rounds + 1;
    let sub_vm = sub_view.vm_trace(graph, t)?;
    let chal_vm = chal_view.vm_trace(graph, t)?;
    let sub_trace: &dyn Trace = &sub_vm;
    let chal_trace: &dyn Trace = &chal_vm;
    let mut sub = Actor::new(
        sub_cfg.party,
        sub_cfg.strategy,
        sub_trace,
        rng::stream(sub_cfg.seed, "phase2"),
    );
    let mut chal = Actor::new(
        chal_cfg.party,
        chal_cfg.strategy,
        chal_trace,
        rng::stream(chal_cfg.seed, "phase2"),
    );
    if sub.silent_in(entrance_round) {
        chain.advance(params.deadline);
        return Ok(early(Role::Challenger, EndReason::Timeout(Role::Submitter)));
    }
    chain.advance(1);
    let bundle = build_entrance(graph, t, &sub_view.run.state_at(t))?;
    let res = entrance_check(graph, t, p1_pre, &bundle);
    check(log, "entrance", Role::Submitter, &res);
    if let Err(e) = res {
        return Ok(early(
            Role::Challenger,
            EndReason::CheckFailed(Role::Submitter, format!("entrance: {e}")),
        ));
    }

    let n = sub_vm.len().max(chal_vm.len());
    let span = padded_span(n, params.k, params.m);
    let sub_final = sub.trace().root_at(span);
    let chal_final = chal.challenge_root(&sub_final, span);

    let (decider, decider_final, reason, rounds, pinned_step) = match chal_final {
        None => (Role::Submitter, sub_final, EndReason::ExitCheck, None, None),
        Some(chal_final) => {
            let sp = Span {
                phase: 2,
                n,
                span,
                initial: bundle.m0_root,
                submitter_final: sub_final,
                challenger_final: chal_final,
            };
            let b = bisect(&sp, params, &mut sub, &mut chal, entrance_round, chain, log);
            match b.outcome {
                Bisection::Forfeit { loser, reason } => {
                    return Ok(Phase2 {
                        winner: loser.other(),
                        reason,
                        rounds: Some(b.rounds),
                        pinned_step: None,
                        span,
                    })
                }
                Bisection::Pinned(p) => {
                    let arb_round = entrance_round + b.rounds + 1;
                    let (w, r) = settle_pinned(2, &p, arb_round, params, &mut chal, chain, log);
                    if r != EndReason::Arbitration {
                        return Ok(Phase2 {
                            winner: w,
                            reason: r,
                            rounds: Some(b.rounds),
                            pinned_step: Some(p.i + 1),
                            span,
                        });
                    }
                    let fin = if w == Role::Submitter { sub_final } else { chal_final };
                    (w, fin, r, Some(b.rounds), Some(p.i + 1))
                }
            }
        }
    };

    // Exit: the party the VM game favoured opens its final state and shows
    // its phase-1 post state records exactly that output.
    let exit_round = entrance_round + rounds.unwrap_or(0) + 2;
    let actor = if decider == Role::Submitter { &sub } else { &chal };
    if actor.silent_in(exit_round) {
        chain.advance(params.deadline);
        return Ok(Phase2 {
            winner: decider.other(),
            reason: EndReason::Timeout(decider),
            rounds,
            pinned_step,
            span,
        });
    }
    chain.advance(1);
    let (view, vm, post) = match decider {
        Role::Submitter => (sub_view, &sub_vm, p1_posts.0),
        Role::Challenger => (chal_view, &chal_vm, p1_posts.1),
    };
    let exit = build_exit(vm.final_state());
    let proof = view.run.state_at(t + 1).prove_field(t).expect("aligned node field");
    let res = super::checks::exit_check(&decider_final, &exit)
        .and_then(|r_o| transition_check(t, p1_pre, &post, &r_o, &proof));
    check(log, "exit", decider, &res);
    Ok(match res {
        Ok(()) => Phase2 {
            winner: decider,
            reason,
            rounds,
            pinned_step,
            span,
        },
        Err(e) => Phase2 {
            winner: decider.other(),
            reason: EndReason::CheckFailed(decider, format!("exit: {e}")),
            rounds,
            pinned_step,
            span,
        },
    })
}

/// Runs the two-phase dispute over `graph` on `input`, staking `stake` on
/// `chain` and logging every move to `log`.
#[allow(clippy::too_many_arguments)]
pub fn run_two_phase_dispute(
    graph: &Graph,
    input: &Tensor,
    sub_cfg: &PartyConfig,
    chal_cfg: &PartyConfig,
    params: &GameParams,
    stake: Amount,
    chain: &mut ChainSim,
    log: &mut Transcript,
) -> Result<TwoPhaseOutcome, MultiphaseError> {
    let sub_view = PartyView::new(graph, input, sub_cfg.fault)?;
    let chal_view = PartyView::new(graph, input, chal_cfg.fault)?;
    let p1_params = GameParams { m: 1, ..*params };
    let n = graph.len() as u64;
    let span = padded_span(n, params.k, 1);

    log.push(Record::Header {
        protocol: "two-phase".into(),
        hash: hash::active().name().into(),
        k: params.k,
        m: params.m,
        submitter: sub_cfg.strategy.to_string(),
        challenger: chal_cfg.strategy.to_string(),
    });
    let mut sub = Actor::new(
        sub_cfg.party,
        sub_cfg.strategy,
        &sub_view.trace,
        rng::stream(sub_cfg.seed, "phase1"),
    );
    let mut chal = Actor::new(
        chal_cfg.party,
        chal_cfg.strategy,
        &chal_view.trace,
        rng::stream(chal_cfg.seed, "phase1"),
    );
    let claimed = sub.trace().root_at(span);
    let claim = chain.post_claim(sub_cfg.party, stake, claimed)?;

    let mut out = TwoPhaseOutcome {
        claim,
        winner: Role::Submitter,
        reason: EndReason::NoChallenge,
        phase1_rounds: 0,
        phase2_rounds: None,
        pinned_node: None,
        pinned_step: None,
        phase1_span: span,
        phase2_span: None,
    };
    let Some(chal_final) = chal.challenge_root(&claimed, span) else {
        finish(log, &out);
        return Ok(out);
    };
    chain.open_dispute(claim, chal_cfg.party)?;

    let sp = Span {
        phase: 1,
        n,
        span,
        initial: sub.trace().root_at(0),
        submitter_final: claimed,
        challenger_final: chal_final,
    };
    let b = bisect(&sp, &p1_params, &mut sub, &mut chal, 0, chain, log);
    out.phase1_rounds = b.rounds;
    match b.outcome {
        Bisection::Forfeit { loser, reason } => {
            out.winner = loser.other();
            out.reason = reason;
        }
        Bisection::Pinned(p) => {
            let t = p.i as usize;
            out.pinned_node = Some(t);
            if p.i >= n {
                // Padding past the last node: the state must not change.
                out.winner = if p.submitter_post == p.pre_root {
                    Role::Submitter
                } else {
                    Role::Challenger
                };
                out.reason = EndReason::DirectCheck;
                log.push(Record::Check {
                    phase: 1,
                    kind: "identity".into(),
                    party: Role::Submitter,
                    accepted: out.winner == Role::Submitter,
                    detail: String::new(),
                });
            } else if graph.node(t).op.is_data() {
                chain.advance(1);
                let value_root =
                    preimage_key(&data_value(graph, t, input)).expect("graph validation bounds tensor size");
                let proof = sub_view.run.state_at(t + 1).prove_field(t).expect("aligned node field");
                let res = transition_check(t, &p.pre_root, &p.submitter_post, &value_root, &proof);
                log.push(Record::Check {
                    phase: 1,
                    kind: "data".into(),
                    party: Role::Submitter,
                    accepted: res.is_ok(),
                    detail: res.as_ref().err().map(|e| e.to_string()).unwrap_or_default(),
                });
                out.winner = if res.is_ok() { Role::Submitter } else { Role::Challenger };
                out.reason = EndReason::DirectCheck;
            } else {
                let r = phase2(
                    graph,
                    t,
                    &p.pre_root,
                    (p.submitter_post, p.challenger_post),
                    (&sub_view, &chal_view),
                    (sub_cfg, chal_cfg),
                    params,
                    b.rounds,
                    chain,
                    log,
                )?;
                out.winner = r.winner;
                out.reason = r.reason;
                out.phase2_rounds = r.rounds;
                out.pinned_step = r.pinned_step;
                out.phase2_span = (r.span > 0).then_some(r.span);
            }
        }
    }
    chain.resolve_dispute(claim, out.winner == Role::Submitter)?;
    finish(log, &out);
    Ok(out)
}

fn finish(log: &mut Transcript, out: &TwoPhaseOutcome) {
    log.push(Record::Final {
        winner: out.winner,
        reason: out.reason.to_string(),
        rounds: out.rounds(),
        pinned_node: out.pinned_node.map(|t| t as u64),
        pinned_step: out.pinned_step,
        phase1_rounds: Some(out.phase1_rounds),
        phase2_rounds: out.phase2_rounds,
    });
}

/// Whole-graph VM trace carrying the same fault as a two-phase [`NodeFault`]:
/// the marker flips at the node's first step plus `vm_step` (default 1).
pub fn single_phase_trace(
    graph: &Graph,
    input: &Tensor,
    fault: Option<NodeFault>,
) -> Result<(VmTrace, GraphProgram), MultiphaseError> {
    let (vm, gp) = graph_vm(graph, input)?;
    let oracle = PreimageOracle::new();
    let step = match fault {
        None => None,
        Some(f) => {
            let starts = node_start_steps(&vm, &gp, &oracle)?;
            let start = starts.get(f.node).copied().flatten().unwrap_or(0);
            Some(start + f.vm_step.unwrap_or(1))
        }
    };
    Ok((VmTrace::new(vm, oracle, step, VM_STEP_BUDGET)?, gp))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SinglePhaseOutcome {
    pub dispute: crate::dispute::DisputeOutcome,
    /// Node whose code contains the pinned step.
    pub pinned_node: Option<usize>,
    pub trace_len: u64,
}

/// The single-phase game over the whole lowered graph, with each party's
/// [`NodeFault`] carried into its trace by [`single_phase_trace`].
#[allow(clippy::too_many_arguments)]
pub fn run_single_phase_dispute(
    graph: &Graph,
    input: &Tensor,
    sub_cfg: &PartyConfig,
    chal_cfg: &PartyConfig,
    params: &GameParams,
    stake: Amount,
    chain: &mut ChainSim,
    log: &mut Transcript,
) -> Result<SinglePhaseOutcome, MultiphaseError> {
    for f in [sub_cfg.fault, chal_cfg.fault].into_iter().flatten() {
        if f.node >= graph.len() {
            return Err(MultiphaseError::FaultNode {
                node: f.node,
                len: graph.len(),
            });
        }
    }
    let (sub_trace, gp) = single_phase_trace(graph, input, sub_cfg.fault)?;
    let (chal_trace, _) = single_phase_trace(graph, input, chal_cfg.fault)?;
    let starts = node_start_steps(sub_trace.initial(), &gp, sub_trace.oracle())?;
    let mut sub = Actor::new(
        sub_cfg.party,
        sub_cfg.strategy,
        &sub_trace,
        rng::stream(sub_cfg.seed, "single"),
    );
    let mut chal = Actor::new(
        chal_cfg.party,
        chal_cfg.strategy,
        &chal_trace,
        rng::stream(chal_cfg.seed, "single"),
    );
    let dispute = crate::dispute::run_dispute(&mut sub, &mut chal, params, stake, chain, log)?;
    let pinned_node = dispute.pinned_step.and_then(|s| node_at_step(&starts, s));
    Ok(SinglePhaseOutcome {
        dispute,
        pinned_node,
        trace_len: sub_trace.len(),
    })
}

/// Compute node whose code runs step `step` (1-based), given node start steps.
pub fn node_at_step(starts: &[Option<u64>], step: u64) -> Option<usize> {
    starts
        .iter()
        .enumerate()
        .filter_map(|(t, s)| s.filter(|&s| s < step).map(|s| (s, t)))
        .max()
        .map(|(_, t)| t)
}

/// Number of steps executed before each compute node's code is first reached.
pub fn node_start_steps(
    vm: &crate::fpvm::VmState,
    gp: &GraphProgram,
    oracle: &PreimageOracle,
) -> Result<Vec<Option<u64>>, MultiphaseError> {
    let mut starts: Vec<Option<u64>> = vec![None; gp.node_code.len()];
    let by_pc: std::collections::HashMap<u32, usize> = gp
        .node_code
        .iter()
        .enumerate()
        .filter_map(|(t, c)| c.map(|w| ((w * 4) as u32, t)))
        .collect();
    let mut s = vm.clone();
    while !s.exited() {
        if let Some(&t) = by_pc.get(&s.pc()) {
            starts[t].get_or_insert(s.step_count);
        }
        s.step(oracle)?;
    }
    Ok(starts)
}
