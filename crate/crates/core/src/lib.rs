//! Certificates and numerical diagnostics for unbounded solutions of weakly
//! coupled second-order systems at resonance,
//!
//! ```text
//! x_j'' + n_j² x_j + h_j(x) = p_j(t),   j = 1..d,
//! ```
//!
//! with bounded couplings `h_j` and 2π-periodic forcings `p_j`.

pub mod certify;
pub mod commands;
pub mod diagnose;
pub mod expr;
pub mod forcing;
pub mod integrate;
pub mod report;
pub mod scenario;
pub mod system;

pub use expr::{BoundedExpr, Domain, Interval};
pub use forcing::TrigPoly;
pub use integrate::{State, Tolerances};
pub use system::{Coupling, MatrixSpec, SystemSpec};
