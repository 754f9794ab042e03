//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Forward code is written against [`Graph`]; running it on a [`Tape`]
//! records the computation for [`Tape::backward`], running it on [`Eval`]
//! only computes values. Both share the same primitive kernels, so their
//! forward values are bit-identical.

mod gradcheck;
mod graph;
mod ops;
mod tape;

pub use gradcheck::{finite_difference_check, Coord, GradCheck};
pub use graph::{Eval, EvalVar, Graph};
pub use ops::Op;
pub use tape::{Gradients, Tape, Var};
