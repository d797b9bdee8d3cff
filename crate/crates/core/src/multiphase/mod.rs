//! Two-phase fraud proofs for model inference: a dispute over the graph
//! narrows to one node, then a dispute over that node's VM execution.

pub mod checks;
pub mod complexity;
pub mod protocol;

pub use checks::{
    build_entrance, build_exit, entrance_check, entrance_root, exit_check, transition_check, CheckError,
    EntranceBundle, ExitBundle, FieldOpening,
};
pub use complexity::{complexity_report, interaction_count_bound, ComplexityReport};
pub use protocol::{
    node_at_step, node_start_steps, run_single_phase_dispute, run_two_phase_dispute, single_phase_trace,
    MultiphaseError, NodeFault, PartyConfig, PartyView, SinglePhaseOutcome, TwoPhaseOutcome,
};
