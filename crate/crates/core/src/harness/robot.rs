//! Robot-side state.
//!
//! A [`Robot`] only ever sees its own odometry pose, the RSSI samples it
//! collected (both in its own frame) and the belief messages of its
//! neighbors. It has no handle on the simulated world.

use std::collections::BTreeMap;

use crate::aploc::{self, ApFieldEstimate, CandidateConfig, HierarchyConfig, WeightingConfig};
use crate::error::Result;
use crate::geometry::{Pose2D, Transform2D};
use crate::mogp::{FitOptions, MogpModel};
use crate::rello::{self, AlignmentConfig, HullAlignment, RobotBeliefMsg};
use crate::rfsim::RssiSample;
use crate::ApId;

#[derive(Debug, Clone)]
pub struct Robot {
    pub id: String,
    pose: Pose2D,
    samples: Vec<RssiSample>,
    pending: Vec<RssiSample>,
    waypoints: usize,
    model: Option<MogpModel>,
    search: HierarchyConfig,
    accepted: BTreeMap<String, Transform2D>,
}

/// The robot's view of where a neighbor is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborFix {
    /// Maps the neighbor's frame into this robot's frame.
    pub transform: Transform2D,
    /// Whether this transform passed the acceptance gate (now or earlier).
    pub accepted: bool,
}

impl Robot {
    pub fn new(id: impl Into<String>, search: HierarchyConfig) -> Self {
        Self {
            id: id.into(),
            pose: Pose2D::new(0.0, 0.0, 0.0),
            samples: Vec::new(),
            pending: Vec::new(),
            waypoints: 0,
            model: None,
            search,
            accepted: BTreeMap::new(),
        }
    }

    pub fn pose(&self) -> Pose2D {
        self.pose
    }

    pub fn waypoints(&self) -> usize {
        self.waypoints
    }

    pub fn samples(&self) -> &[RssiSample] {
        &self.samples
    }

    pub fn model(&self) -> Option<&MogpModel> {
        self.model.as_ref()
    }

    pub fn search_config(&self) -> &HierarchyConfig {
        &self.search
    }

    /// Store the readings taken at `pose` (own frame).
    pub fn record(&mut self, pose: Pose2D, readings: Vec<RssiSample>) {
        self.pose = pose;
        self.waypoints += 1;
        self.samples.extend_from_slice(&readings);
        self.pending.extend(readings);
    }

    /// Fit on first call, incremental update afterwards.
    pub fn update_model(&mut self, opts: &FitOptions) -> Result<()> {
        let model = match &self.model {
            None => MogpModel::fit(&self.samples, opts)?,
            Some(m) => {
                // APs first heard after the initial fit need a new output
                let known = m.ap_ids();
                if self.pending.iter().any(|s| !known.contains(&s.ap_id)) {
                    MogpModel::fit(&self.samples, opts)?
                } else {
                    m.update(&self.pending)?
                }
            }
        };
        self.model = Some(model);
        self.pending.clear();
        Ok(())
    }

    /// Estimate every modeled AP and package the belief message.
    pub fn estimate(
        &self,
        timestamp: u64,
        candidates: &CandidateConfig,
        weighting: &WeightingConfig,
    ) -> Result<(RobotBeliefMsg, Vec<(ApId, ApFieldEstimate)>)> {
        let model = self.model.as_ref().ok_or_else(|| crate::Error::Config("model not fitted".into()))?;
        let mut fields = Vec::new();
        let mut all = Vec::new();
        for ap in model.ap_ids() {
            let est = aploc::estimate_ap(model, ap, &self.search, candidates, weighting)?;
            all.extend(est.estimates.iter().cloned());
            fields.push((ap.clone(), est));
        }
        let msg = RobotBeliefMsg::new(self.id.clone(), timestamp, self.pose, all)?;
        Ok((msg, fields))
    }

    /// Align a neighbor's message against our own; accepted transforms are
    /// remembered per neighbor.
    pub fn align_with(
        &mut self,
        own: &RobotBeliefMsg,
        other: &RobotBeliefMsg,
        cfg: &AlignmentConfig,
    ) -> Result<HullAlignment> {
        let al = rello::align_pair(own, other, cfg)?;
        if al.accepted {
            self.accepted.insert(other.robot_id.clone(), al.transform);
        }
        Ok(al)
    }

    /// Current best guess of a neighbor's frame: this cycle's alignment if it
    /// was accepted, else the last accepted one, else this cycle's best fit.
    pub fn neighbor_fix(&self, neighbor: &str, current: Option<&HullAlignment>) -> Option<NeighborFix> {
        if let Some(al) = current.filter(|a| a.accepted) {
            return Some(NeighborFix {
                transform: al.transform,
                accepted: true,
            });
        }
        if let Some(t) = self.accepted.get(neighbor) {
            return Some(NeighborFix {
                transform: *t,
                accepted: true,
            });
        }
        current.map(|al| NeighborFix {
            transform: al.transform,
            accepted: false,
        })
    }
}
