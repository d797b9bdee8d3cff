//! Deterministic fixed-point inference: native operators, computation
//! graphs, the model file format and lowering to MiniVM programs.

pub mod exec;
pub mod graph;
pub mod lower;
pub mod model_file;
pub mod ops;
pub mod state;
pub mod tensor;

pub use exec::{execute_native, execute_via_vm, ExecError, NativeRun};
pub use graph::{Graph, GraphBuilder, GraphError, Op};
pub use state::GraphState;
pub use tensor::{Tensor, TensorError, FRAC};
