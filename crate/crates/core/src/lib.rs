//! Vertiport take-off scheduling and evolutionary optimization toolkit.
//!
//! The crate covers four connected subsystems:
//!
//! * deterministic vertiport scenarios with a Round-Robin baseline and a
//!   permutation GA over multi-objective schedule costs ([`scenario`],
//!   [`rr`], [`ga`], [`metrics`]);
//! * a strongly convex relaxed scheduling objective with LSE-coupled cost
//!   atoms and a damped-Newton barrier solver ([`convex`]);
//! * an outer GA over 15-dimensional cost-weight genomes with
//!   Dirichlet–Multinomial sampling and stratified evaluation ([`bilevel`]);
//! * prompt evolution under KU/KI keyword constraints plus a file-backed
//!   registry with reliability-weighted swarm aggregation ([`prompt`],
//!   [`registry`]).
//!
//! Continuous kernels are generic over [`real::Real`]; the pipeline uses the
//! `f64` aliases below.

pub mod bilevel;
pub mod convex;
pub mod cvar;
pub mod error;
pub mod ga;
pub mod linalg;
pub mod metrics;
pub mod prompt;
pub mod real;
pub mod registry;
pub mod rr;
pub mod scenario;
pub mod schedule;

pub use error::{Error, Result};
pub use real::Real;

/// Scalar used by the shipped pipeline.
pub type Scalar = f64;

pub type RelaxedInstance = convex::RelaxedInstance<Scalar>;
pub type WeightVector = convex::WeightVector<Scalar>;
pub type InnerSolution = convex::InnerSolution<Scalar>;
pub type SolverOptions = convex::SolverOptions<Scalar>;

