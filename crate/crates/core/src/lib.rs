//! Differentiable reachability maps.
//!
//! A reachability map is a scalar field over task space that is non-negative
//! exactly where an end effector can reach. This crate learns such maps from
//! kinematically generated samples (RBF SVMs, one-class SVMs and small MLPs)
//! and uses them as smooth inequality constraints in an SQP planner for robot
//! placement, footstep, contact-sequence and trajectory-parameter problems.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod kinematics;
pub mod models;
pub mod planner;
pub mod qpsolver;
pub mod sampling;

pub use error::{Error, Result};
pub use geometry::{encode, encode_rel, jac_rel, Pose, TaskSpace};
