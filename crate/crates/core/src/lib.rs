//! Corrupt feedback MDPs (CFMDPs) and learners that avoid tampering with
//! their own feedback.
//!
//! The crate covers four layers:
//!
//! * [`mdp`], [`procedural`], [`approver`]: environments, their dynamics
//!   with decoupled queries, and the simulated approver.
//! * [`agents`]: decoupled approval Q-learning and policy gradients next to
//!   coupled and reward-driven baselines.
//! * [`oracle`]: exact expected updates used to check incentive properties
//!   without sampling noise.
//! * [`harness`] and [`verify`]: seeded training runs, experiments, run
//!   records and the verification sweep.

pub mod agents;
pub mod approver;
pub mod doc;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod procedural;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
