//! Switching stabilization of switched nonlinear systems from piecewise smooth
//! control-Lyapunov functions.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`]: small dense eigenvalue and Lyapunov solvers.
//! * [`model`]: switched systems with linear or polynomial subsystems.
//! * [`clf`]: piecewise smooth control-Lyapunov function families.
//! * [`switchlaw`]: the min-derivative switching law and its boundary queries.
//! * [`fsim`]: relay and event-driven Filippov simulation of the closed loop.
//! * [`certify`]: sampling and eigenvalue checks of the stability conditions.

pub mod certify;
pub mod clf;
pub mod fixtures;
pub mod fsim;
pub mod linalg;
pub mod model;
pub mod sampling;
pub mod switchlaw;
