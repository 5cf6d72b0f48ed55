//! Multi-robot relative localization from Wi-Fi signal strength.
//!
//! The pipeline, per robot:
//!
//! 1. [`mogp`] fits a co-regionalized multi-output Gaussian process to the RSSI
//!    samples of all access points jointly and predicts mean/variance fields.
//! 2. [`aploc`] turns those fields into weighted access-point position
//!    estimates: one coarse-to-fine argmax plus local-maximum candidates.
//! 3. [`rello`] aligns the weighted estimates exchanged between two robots
//!    to recover the rigid transform between their frames.
//!
//! [`rfsim`] synthesizes ground-truth signal fields and [`harness`] runs seeded
//! multi-robot episodes and computes localization metrics.

pub mod aploc;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod mogp;
pub mod oracle;
pub mod rello;
pub mod rfsim;
pub mod rng;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};
pub use geometry::{GridSpec, Point, Pose2D, ScalarField, Transform2D};

/// Access point identifier (a MAC address in deployments).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ApId(pub String);

impl ApId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ApId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ApId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}
