//! Interaction and computation counts for the single- and two-phase games.

use serde::Serialize;

use crate::dispute::session::ceil_log;
use crate::ml::exec::{execute_graph_vm, execute_via_vm, ExecError};
use crate::ml::graph::Graph;
use crate::ml::tensor::Tensor;

/// Bisection rounds needed to narrow `n` steps to segments of `m` with `k`
/// checkpoints per round.
pub fn interaction_count_bound(n: u64, k: u64, m: u64) -> u32 {
    ceil_log(n.div_ceil(m).max(1), k + 1)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ComplexityReport {
    pub k: u64,
    pub m: u64,
    pub nodes: u64,
    pub compute_nodes: u64,
    /// VM steps per node, zero for data nodes.
    pub node_steps: Vec<u64>,
    pub total_node_steps: u64,
    pub max_node_steps: u64,
    /// Steps of the whole graph lowered into one VM program.
    pub graph_steps: u64,
    pub phase1_rounds: u32,
    /// Worst case over compute nodes.
    pub phase2_rounds: u32,
    pub single_phase_rounds: u32,
}

impl ComplexityReport {
    pub fn two_phase_rounds(&self) -> u32 {
        self.phase1_rounds + self.phase2_rounds
    }
}

pub fn complexity_report(graph: &Graph, input: &Tensor, k: u64, m: u64) -> Result<ComplexityReport, ExecError> {
    let per_node = execute_via_vm(graph, input)?;
    let (_, graph_steps) = execute_graph_vm(graph, input)?;
    let max_node_steps = per_node.node_steps.iter().copied().max().unwrap_or(0);
    Ok(ComplexityReport {
        k,
        m,
        nodes: graph.len() as u64,
        compute_nodes: graph.compute_nodes().count() as u64,
        total_node_steps: per_node.node_steps.iter().sum(),
        max_node_steps,
        graph_steps,
        phase1_rounds: interaction_count_bound(graph.len() as u64, k, 1),
        phase2_rounds: interaction_count_bound(max_node_steps, k, m),
        single_phase_rounds: interaction_count_bound(graph_steps, k, m),
        node_steps: per_node.node_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::graph::{random_input, random_mlp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bounds() {
        assert_eq!(interaction_count_bound(1, 1, 1), 0);
        assert_eq!(interaction_count_bound(8, 1, 1), 3);
        assert_eq!(interaction_count_bound(9, 1, 1), 4);
        assert_eq!(interaction_count_bound(100, 3, 4), 3);
    }

    #[test]
    fn report_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_mlp(&mut rng, &[6, 8, 3], true).unwrap();
        let x = random_input(&mut rng, g.input_shape().to_vec());
        let r = complexity_report(&g, &x, 1, 1).unwrap();
        assert_eq!(r.node_steps.len(), g.len());
        assert!(r.max_node_steps <= r.total_node_steps);
        assert!(r.total_node_steps > 0 && r.graph_steps > 0);
        assert!(r.phase2_rounds <= r.single_phase_rounds);
    }
}
