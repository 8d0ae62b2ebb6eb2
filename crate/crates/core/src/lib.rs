//! Simulation and exact verification toolkit for branching random walks and
//! their additive martingales.
//!
//! * [`law`]: offspring laws, tilted functionals, classification of the
//!   martingale limit, size-biased and spine-step laws.
//! * [`tree`]: breadth-first growth of genealogies and `W_n(α)` trajectories.
//! * [`spine`]: size-biased trees with a distinguished ray.
//! * [`oracle`]: exhaustive enumeration and exact identity checks.
//! * [`mc`]: seeded, parallel Monte Carlo estimators.
//! * [`suite`]: reference laws and a seeded random-law generator.

pub mod law;
pub mod mc;
pub mod numerics;
pub mod oracle;
pub mod spine;
pub mod suite;
pub mod tree;

pub use law::{
    validate_law, Atom, Classification, FiniteLaw, LawError, LawSpec, LogDivergentLaw, ModelFile,
    Moment, TiltProfile,
};
pub use tree::{grow_tree, w_trajectory, GrowthCaps, GrowthError, LabelledTree, WTrajectory};
