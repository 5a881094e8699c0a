//! Numerical suite for zero-sum controller-and-stopper games.
//!
//! A controller steers a diffusion to maximize a discounted cost; a
//! stopper chooses when to halt it and pay the terminal cost. This
//! crate computes the game value three independent ways and checks the
//! results against each other:
//!
//! * [`hjb`]: explicit monotone finite-difference solve of the obstacle
//!   equation the value function satisfies;
//! * [`lattice`]: backward induction on a trinomial chain whose
//!   discrete game value is computed exactly, in both orders of play;
//! * [`sde`]: Monte Carlo simulation of the controlled dynamics, used
//!   to hold extracted strategies to their promised value.
//!
//! [`exhaustive`] certifies the backward induction on tiny instances by
//! brute-force enumeration of strategy classes, [`strategy`] extracts
//! near-optimal control/stopping pairs from a solved grid, and
//! [`pipeline`] wires everything behind a JSON run configuration.

// Validation guards are written `!(x > y)` so NaN fails them; mesh
// kernels index several coordinate arrays at once, where a bare index
// reads better than nested zips.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod artifact;
pub mod exhaustive;
pub mod expr;
pub mod hamiltonian;
pub mod hjb;
pub mod lattice;
pub mod model;
pub mod numfmt;
pub mod pipeline;
pub mod sde;
pub mod strategy;

pub use expr::Expr;
pub use model::{benchmark, builtin_benchmarks, BenchmarkCase, ProblemSpec};
