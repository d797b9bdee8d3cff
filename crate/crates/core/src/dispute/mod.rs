//! Interactive bisection disputes between a result submitter and a
//! challenger, settled against a simulated chain.

pub mod actor;
pub mod chain;
pub mod game;
pub mod session;
pub mod transcript;
pub mod vm_trace;

pub use actor::{Actor, Role, RootTrace, Strategy, StrategyParseError, Trace};
pub use chain::{Amount, ChainError, ChainSim, ClaimId, Event, PartyId, Settlement};
pub use game::{
    arbitrate, arbitrate_step, bisect, run_dispute, settle_pinned, Arbitration, BisectResult, Bisection,
    DisputeOutcome, EndReason, GameParams, Malformed, Pinned, Span,
};
pub use session::{bisection_round, checkpoints, padded_span, DisputeSession, Response, Violation};
pub use transcript::{Record, Transcript};
pub use vm_trace::{flip_fault_marker, synthetic_vm, VmTrace, FAULT_MARKER_ADDR};
