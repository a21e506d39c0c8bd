//! Constructive-interference (CI) symbol-level precoding for the multiuser
//! MISO downlink.
//!
//! The crate provides
//!
//! * closed-form optimal CI beamformers for strict and non-strict phase
//!   rotation, parameterised by a point on the probability simplex
//!   ([`geometry`]),
//! * reference solvers for the equivalent QP over the simplex ([`qp`]),
//! * the iterative closed-form active-set scheme with retraction
//!   ([`iterative`]),
//! * ZF / RZF baselines with symbol-level normalisation ([`zf`]),
//! * a seeded Monte Carlo harness and CLI reproducing BER, iteration-count
//!   and runtime comparisons ([`harness`], [`cli`]).

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod iterative;
pub mod linalg;
pub mod qp;
pub mod rng;
pub mod signal;
pub mod zf;

pub use error::{Error, Result};
pub use geometry::{CiKernel, DualSolution, Rotation};
pub use iterative::{IterativeResult, IterativeSolver};
pub use rng::SimRng;
pub use signal::{ChannelMatrix, Constellation, SymbolVector};
pub use zf::BeamformingMatrix;
