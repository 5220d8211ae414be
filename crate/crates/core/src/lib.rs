//! Dynamical multi-marginal optimal transport on the discrete torus.
//!
//! The library solves
//!
//! ```text
//! min B(U^c)  subject to  U^c = I(U^s),  U^s in CE^s(mu_1, ..., mu_k),
//! ```
//!
//! where `B` is a jointly convex kinetic objective evaluated on centered
//! mass/momentum variables, `I` interpolates from staggered to centered
//! grids, and `CE^s` is the affine set of staggered fields satisfying a
//! discrete continuity equation with prescribed terminal marginals and an
//! initial source. The solver is a primal-dual proximal splitting
//! iteration whose two building blocks are the closed-form proximal
//! operator of the perspective function `|m|^2 / pi` and the orthogonal
//! projection onto the constraint set (a matrix-free CG solve).
//!
//! Supporting modules provide analytic one-dimensional ground truth
//! (quantile couplings, monotone transport maps), feasible-flow
//! constructors, kernel smoothing, dual-side feasibility certificates,
//! and extraction of transport maps from terminal couplings via circular
//! means.
//!
//! All heavy per-cell loops go through [`par`], which uses rayon when the
//! `parallel` feature (default) is enabled and plain sequential loops
//! otherwise. Reductions are performed in a fixed deterministic order in
//! both modes, so results are bit-identical across thread counts.

// pub mod analysis;
pub mod constraints;
pub mod cost;
// pub mod csvio;
// pub mod duality;
pub mod error;
// pub mod flows;
pub mod grid;
pub mod measure;
pub mod opnorm;
// pub mod oracle;
pub mod par;
pub mod solver;

pub use error::{Error, Result};
