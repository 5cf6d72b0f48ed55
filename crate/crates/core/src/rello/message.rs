//! Inter-robot belief message and its JSON wire format.
//!
//! Field order is fixed by the struct layout and estimates are sorted by AP
//! id (hierarchical first), so serialization is byte-stable for replay.

use serde::{Deserialize, Serialize};

use crate::aploc::{ApEstimate, EstimateKind};
use crate::error::{Error, Result};
use crate::geometry::Pose2D;
use crate::ApId;

pub const MESSAGE_FORMAT: &str = "mgprl-belief";
pub const MESSAGE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotBeliefMsg {
    pub format: String,
    pub version: u32,
    pub robot_id: String,
    /// Cycle index at which the message was produced.
    pub timestamp: u64,
    /// Sender's current pose in its own frame.
    pub pose: Pose2D,
    pub estimates: Vec<ApEstimate>,
}

impl RobotBeliefMsg {
    pub fn new(robot_id: impl Into<String>, timestamp: u64, pose: Pose2D, mut estimates: Vec<ApEstimate>) -> Result<Self> {
        // stable: keeps each AP's candidate order
        estimates.sort_by(|a, b| {
            a.ap_id
                .cmp(&b.ap_id)
                .then((a.kind != EstimateKind::Hierarchical).cmp(&(b.kind != EstimateKind::Hierarchical)))
        });
        let msg = Self {
            format: MESSAGE_FORMAT.into(),
            version: MESSAGE_VERSION,
            robot_id: robot_id.into(),
            timestamp,
            pose,
            estimates,
        };
        msg.validate()?;
        Ok(msg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MESSAGE_FORMAT {
            return Err(Error::Config(format!("format: expected `{MESSAGE_FORMAT}`")));
        }
        if self.version != MESSAGE_VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: MESSAGE_VERSION,
            });
        }
        for group in self.grouped() {
            let hier = group.iter().filter(|e| e.kind == EstimateKind::Hierarchical).count();
            if hier != 1 || group[0].kind != EstimateKind::Hierarchical {
                return Err(Error::Config(format!(
                    "estimates for `{}` need exactly one hierarchical entry, listed first",
                    group[0].ap_id
                )));
            }
            if group
                .iter()
                .any(|e| !(e.x.is_finite() && e.y.is_finite() && e.weight > 0.0 && e.weight <= 1.0))
            {
                return Err(Error::NonFinite("belief estimate"));
            }
        }
        let mut ids: Vec<&ApId> = self.estimates.iter().map(|e| &e.ap_id).collect();
        ids.dedup();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        if ids.len() != n {
            return Err(Error::Config("estimates must be grouped by ap_id".into()));
        }
        Ok(())
    }

    /// Estimates split into contiguous per-AP runs.
    pub fn grouped(&self) -> Vec<&[ApEstimate]> {
        self.estimates.chunk_by(|a, b| a.ap_id == b.ap_id).collect()
    }

    pub fn ap_ids(&self) -> Vec<ApId> {
        self.grouped().iter().map(|g| g[0].ap_id.clone()).collect()
    }

    pub fn estimates_for(&self, ap: &ApId) -> Option<&[ApEstimate]> {
        self.grouped().into_iter().find(|g| &g[0].ap_id == ap)
    }

    /// Drop every AP not in `keep`.
    pub fn restricted_to(&self, keep: &[ApId]) -> Self {
        let mut m = self.clone();
        m.estimates.retain(|e| keep.contains(&e.ap_id));
        m
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let msg: Self = serde_json::from_str(s)?;
        msg.validate()?;
        Ok(msg)
    }
}
