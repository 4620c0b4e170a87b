//! Simulation of cell invasion into extracellular matrix (ECM).
//!
//! The model couples a degenerate cross-diffusion equation for the cell
//! density `u` to a pointwise degradation ODE for the matrix density `m`:
//!
//! ```text
//! u_t = div[(1 - u - m) grad u + u grad(u + m)] + u (1 - u - m)
//! m_t = -lambda m u
//! ```
//!
//! with zero-flux boundaries. Two time discretisations are provided:
//!
//! * [`explicit`]: method of lines with an adaptive Dormand–Prince 5(4)
//!   integrator (or fixed-step RK4),
//! * [`entropy_scheme`]: an implicit Euler scheme posed in the entropy
//!   variable `w = log u - log(1 - u - m)`, which keeps `0 < u`, `0 < m`,
//!   `u + m < 1` strictly by construction.
//!
//! [`waves`] tracks the invasion front and fits its speed, [`diagnostics`]
//! evaluates the entropy functional and gradient norms, [`ic`] builds the
//! initial data used in the experiments, and [`io`]/[`cli`] handle
//! configuration files and outputs.

pub mod cli;
pub mod diagnostics;
pub mod entropy_scheme;
pub mod error;
pub mod explicit;
pub mod grid;
pub mod ic;
pub mod io;
pub mod linalg;
pub mod model;
pub mod waves;

pub use error::{Error, Result};
pub use grid::Grid;
pub use model::{FieldPair, ModelParams};
