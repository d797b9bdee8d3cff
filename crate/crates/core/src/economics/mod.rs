//! Security probabilities and incentive analysis.

pub mod attention;
pub mod incentives;
pub mod security;

pub use attention::{attention_round, must_respond, threshold, AttentionError, AttentionRound, RoundReport, Validator};
pub use incentives::{
    attention_cost, attention_utilities, indifference_residuals, optimal_attention, payoff, verifier_equilibrium,
    AttentionParams, Equilibrium, GamePayoffs, IncentiveError, OptimalAttention, SubmitterAction, ValidatorAction,
};
pub use security::{
    any_trust_exact, any_trust_prob, majority_bound, majority_trust_exact, majority_trust_prob, security_row,
    SecurityError, SecurityParams, SecurityRow,
};
