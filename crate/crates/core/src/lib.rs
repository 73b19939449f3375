//! Deterministic engine for releasing PAC-private classification responses
//! with posterior-aware composition.
//!
//! The crate is organised bottom-up:
//!
//! - [`universe`], [`secret_space`], [`belief`], [`transcript`], [`budget`]:
//!   the shared game state.
//! - [`noise`]: Gaussian noise calibrated to a belief, a mechanism and a
//!   mutual-information budget, plus likelihoods in the calibrated basis.
//! - [`quadrature`]: numerical mutual-information estimates used to audit
//!   calibrations.
//! - [`accounting`]: MI budget to membership-inference bound conversions and
//!   DP-equivalent parameters.
//! - [`curator`]: the serving state machine.
//! - [`learner`]: deterministic trainers and the offline model pool.
//! - [`adversary`]: the informed Bayes-optimal membership adversary and game
//!   harness.
//! - [`filter`] and [`distill`]: confidence filtering of noisy labels and
//!   export of a distillation dataset.

pub mod accounting;
pub mod adversary;
pub mod belief;
pub mod budget;
pub mod curator;
pub mod distill;
pub mod error;
pub mod filter;
pub mod learner;
pub mod noise;
pub mod normal;
pub mod quadrature;
pub mod rng;
pub mod secret_space;
pub mod transcript;
pub mod universe;

pub use belief::BeliefState;
pub use budget::{BudgetAccountant, MiUnit};
pub use curator::{Curator, Release};
pub use error::{Error, Result};
pub use noise::{MechanismMatrix, NoiseSpec};
pub use secret_space::SecretSpace;
pub use transcript::{Transcript, TranscriptEntry};
pub use universe::Universe;
