//! Optimal control of reversible diffusions by duality with path sampling.
//!
//! The library solves stochastic optimal control problems of the form
//!
//! ```text
//! minimize  E[ ∫₀^τ  f(X_t) + |u_t|²/4  dt ]
//! subject to  dX_t = (u_t − ∇V(X_t)) dt + √(2ε) dB_t,   reflected on 𝒮,
//! ```
//!
//! where τ is the first hitting time of a target set A. The value function
//! `W` satisfies a Hamilton-Jacobi-Bellman equation that the logarithmic
//! transformation `φ = exp(−W/ε)` turns into the linear boundary value
//! problem `(L − f/ε)φ = 0` with `φ = 1` on A and reflecting (Neumann)
//! boundary conditions. The crate provides
//!
//! - [`model`]: potentials, domains, target sets, running costs, and the
//!   Boltzmann-weighted quadrature grid;
//! - [`reference`]: a fine-grid finite-difference solver for the linear
//!   problem, committor functions and mean hitting times — the ground
//!   truth all discretizations are compared against;
//! - [`galerkin`]: projection of the linear problem onto a partition-of-
//!   unity basis (box indicators or committors), producing the rate and
//!   cost matrices of a Markov jump process;
//! - [`mdp`]: the dual Markov decision problem on that jump process —
//!   value vector, optimal strategy, controlled generator, entropic
//!   running costs, tilted stationary law, Bellman verification, MFPTs;
//! - [`mca`]: the classical Markov chain approximation on a 1-D lattice
//!   and its second-order equivalence with the box-basis dual problem;
//! - [`sampler`]: reflected SDE paths, Gillespie jump paths, Feynman-Kac
//!   estimators, core-MSM/milestoning estimation and lag-time
//!   extrapolation;
//! - [`bounds`]: computable a-priori error bounds for the Galerkin scheme.

pub mod bounds;
mod error;
pub mod galerkin;
pub mod linalg;
pub mod mca;
pub mod mdp;
pub mod model;
pub mod reference;
pub mod sampler;

pub use error::{Error, Result};
