//! Configuration, replica orchestration, persistence and the `bglab` CLI.
//!
//! Replica `r` of sub-experiment `k` draws from stream `r` of the ChaCha
//! generator keyed by `child_seed(master_seed, k)`, so outputs depend only on
//! the config and the master seed.

pub mod config;
pub mod experiments;
pub mod snapshot;
pub mod table;
pub mod verify;

use bglab_core::combinatorics::CombinatoricsError;
use bglab_core::dynamics::DynamicsError;
use bglab_core::fields::FieldError;
use bglab_core::kinetic::KineticError;
use bglab_core::sampler::SamplerError;
use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind};
pub use table::ResultTable;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("sampler: {0}")]
    Sampler(#[from] SamplerError),
    #[error("dynamics: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("fields: {0}")]
    Field(#[from] FieldError),
    #[error("kinetic solver: {0}")]
    Kinetic(#[from] KineticError),
    #[error("combinatorics: {0}")]
    Combinatorics(#[from] CombinatoricsError),
    #[error("snapshot: {0}")]
    Snapshot(#[from] snapshot::SnapshotError),
    #[error("{faults} of {replicas} replicas faulted")]
    TooManyFaults { faults: usize, replicas: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Run `$body` with `D` bound to the configured dimension.
#[macro_export]
macro_rules! with_dimension {
    ($d:expr, $D:ident => $body:expr) => {
        match $d {
            2 => {
                const $D: usize = 2;
                $body
            }
            3 => {
                const $D: usize = 3;
                $body
            }
            other => Err($crate::ConfigError::Invalid(format!("dimension {other}")).into()),
        }
    };
}
