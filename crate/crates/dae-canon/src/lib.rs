//! Canonical forms and decoupling for regular linear time-varying
//! differential-algebraic equations.
//!
//! A pair `{E, F}` of sufficiently smooth matrix functions on an open
//! interval describes the DAE
//!
//! ```text
//! E(t) x'(t) + F(t) x(t) = q(t).
//! ```
//!
//! For a regular pair there is an equivalence transformation `(L, K)` —
//! pointwise nonsingular matrix functions acting as
//! `{E, F} ↦ {L E K, L F K + L E K'}` — that brings the pair into *standard
//! canonical form* (SCF)
//!
//! ```text
//! E = diag(I_d, N),   F = diag(Ω, I_a),
//! ```
//!
//! with `N` pointwise nilpotent and strictly block upper triangular. When `N`
//! can be made a *constant* elementary nilpotent matrix the pair is in
//! *strong* standard canonical form (SSCF). In SCF the DAE decouples into a
//! pure ODE `u' + Ω u = q̄₁` and a pure DAE `N v' + v = q̄₂` whose solution is
//! a finite sum of derivatives of `q̄₂`; no integration is needed for the
//! algebraic part.
//!
//! The crate implements the full chain for several structured input classes:
//!
//! * pre-SCF pairs (`E = diag(I_d, N^(E))` with block upper triangular
//!   `F₂₂` and `F₂₁F₁₂`) — entry point of the four-step procedure,
//! * T-canonical and S-canonical pairs,
//! * Hessenberg systems of index 2 and 3,
//! * constrained mechanical (multibody) systems,
//! * pairs with a user-supplied initial transformation.
//!
//! The main entry point is [`pipeline::run_pipeline`], which produces every
//! intermediate stage together with the transformation pair for each step,
//! the canonical characteristics, the canonical projector, the pure ODE, and
//! the data needed by the decoupled initial-value solver in [`solver`].
//!
//! All symbolic computation is done on expression trees ([`expr`]); checks
//! that cannot be decided structurally (pointwise rank, nonsingularity,
//! identical vanishing) are decided numerically on deterministic sample grids
//! — see [`config::Tolerances`] for the knobs and the documented caveats.

pub mod blockstruct;
// TEMP pub mod canonical;
pub mod config;
pub mod equivalence;
pub mod expr;
// TEMP pub mod fixtures;
// TEMP pub mod frontends;
pub mod matfn;
// TEMP pub mod pipeline;
// TEMP pub mod problem;
// TEMP pub mod solver;

pub use blockstruct::{BlockOrdering, BlockSpec, Characteristics};
pub use config::{Interval, Tolerances};
pub use equivalence::{DaePair, Transform};
pub use expr::ScalarFn;
pub use matfn::MatrixFn;
// TEMP pub use pipeline::{run_pipeline, PipelineOptions, PipelineResult};
