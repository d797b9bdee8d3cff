//! Optimistic machine learning: fraud-provable inference over a Merkle
//! committed virtual machine, with bisection dispute games and the economic
//! models around them.

pub mod cli;
pub mod dispute;
pub mod economics;
pub mod fpvm;
pub mod hash;
pub mod merkle;
pub mod ml;
pub mod multiphase;
pub mod rng;
