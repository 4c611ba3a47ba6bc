//! Low-density hard-sphere gas laboratory.
//!
//! Equilibrium sampling of the grand-canonical hard-sphere measure, exact
//! event-driven dynamics on the unit torus, fluctuation fields and their
//! time covariances, and two independent linearized Boltzmann solvers: a
//! deterministic discrete-velocity solver and a collision-tree Monte Carlo.
//! The geometric and combinatorial machinery behind the low-density limit
//! (pseudo-trajectories, recollisions, clusters, cumulants, tree counts) is
//! exposed for verification.
//!
//! Replica loops run on rayon when the `parallel` feature is enabled (the
//! default) and sequentially otherwise.

pub mod cells;
pub mod combinatorics;
pub mod dsu;
pub mod dynamics;
pub mod fewbody;
pub mod fields;
pub mod kinetic;
pub mod par;
pub mod pseudo;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod torus;
pub mod trees;

pub use dynamics::{evolve, reverse_check, snapshot_at, CollisionRecord, TrajectoryLog};
pub use fields::{CovarianceEstimate, TestFunction};
pub use sampler::{sample_equilibrium, Configuration, GrandCanonicalParams};
pub use torus::{ParticleState, VecD};
