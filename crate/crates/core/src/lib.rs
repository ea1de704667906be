//! Caution-aware transfer of risk-neutral policies on finite MDPs.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`] holds the tabular model and its exact solvers.
//! * [`occupancy`] computes discounted state-action occupancy measures and the
//!   LP duality identities that connect them to action values.
//! * [`caution`] evaluates occupancy-based caution functionals, their
//!   gradients and Lipschitz/boundedness constants.
//! * [`successor`] builds successor-feature tables so that a stored policy can
//!   be evaluated on any task with a dot product.
//! * [`transfer`] composes source policies (risk-neutral, caution-aware, and
//!   the primal return-variance baseline).
//! * [`oracle`] provides the ground truth used to check transfer quality:
//!   exhaustive enumeration, Frank-Wolfe over the occupancy polytope and the
//!   suboptimality bound checks.
//! * [`gridworld`] builds the navigation tasks and simulates rollouts.

pub mod caution;
pub mod error;
pub mod generate;
pub mod gridworld;
mod linalg;
pub mod mdp;
pub mod occupancy;
pub mod oracle;
pub mod serde_ext;
pub mod successor;
pub mod transfer;

pub use caution::{CautionBounds, CautionSpec};
pub use error::{CatError, Result};
pub use gridworld::{GridConfig, GridWorld, RolloutStats};
pub use mdp::{QTable, TabularMdp, TabularPolicy};
pub use occupancy::OccupancyMeasure;
pub use oracle::BoundReport;
pub use successor::{FeatureMap, SuccessorFeatureTable};
pub use transfer::{SourceEntry, SourceLibrary, TransferResult};

/// Default convergence tolerance for the iterative solvers.
pub const DEFAULT_TOL: f64 = 1e-9;
