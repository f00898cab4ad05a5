//! Learning dynamics of policy-gradient training on a deterministic
//! contextual bandit.
//!
//! - [`bandit`]: the `(K×n)` bandit, its softmax policy and gradient estimators.
//! - [`dynamics`]: exact flows in performance coordinates and the factored-objective form.
//! - [`analysis`]: plateaus, winner-take-all regions, null clines and basin bounds.
//! - [`trainer`]: seeded stochastic training runs and ensembles.

pub mod analysis;
pub mod bandit;
pub mod dynamics;
pub mod error;
pub mod seed;
pub mod trainer;
pub mod trajectory;

pub use bandit::{BanditSpec, Params, PerfPoint, ReducedParams, Representation, SampleMode};
pub use error::{Error, Result};
pub use trajectory::{Record, Trajectory, TrajectorySource};
