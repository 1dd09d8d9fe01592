//! GEMM kernels: a reference oracle plus two parametric cache-blocked
//! families.
//!
//! The Direct family works on the caller's operands as they are, handling
//! transposes through strides and ragged edges in-kernel. The Indirect
//! family first runs O(n^2) helper passes that pad (and transpose) the
//! operands to tile multiples, then runs an edge-free blocked kernel. The
//! helpers make Indirect lose on small problems and the cheaper inner loop
//! lets it win on large ones.

mod config;
mod execute;
mod matrix;
mod micro;
mod reference;
mod shape;

pub use config::{
    enumerate_search_space, full_search_space, is_legal, DeviceCaps, KernelConfig, KernelFamily,
};
pub use execute::{gemm_execute, gemm_execute_into, GemmWorkspace};
pub use matrix::{Element, Matrix};
pub use reference::gemm_reference;
pub use shape::ProblemShape;

pub(crate) use config::check_legal;
