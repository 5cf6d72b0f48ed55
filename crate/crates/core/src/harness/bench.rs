//! Scaling benchmarks: joint vs independent GP fits, and correspondence
//! search cost against the number of APs.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aploc::{ApEstimate, EstimateKind};
use crate::error::Result;
use crate::geometry::{Point, Pose2D, Transform2D};
use crate::mogp::{FitOptions, MogpModel, SolverPreference};
use crate::rello::{align_pair, AlignmentConfig, RobotBeliefMsg};
use crate::rfsim::{self, ApSpec, World, WorldConfig};
use crate::rng::{derive_seed, stream_rng};
use crate::ApId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub gamma: usize,
    pub outputs: usize,
    /// Likelihood-and-gradient evaluations timed per model.
    pub budget: usize,
    /// `budget` evaluations of the joint model.
    pub joint_seconds: f64,
    /// `budget` evaluations of each single-output model, summed.
    pub independent_seconds: f64,
    /// `joint_seconds / independent_seconds`: training cost at an equal
    /// optimizer budget.
    pub ratio: f64,
    /// Full fits run until the optimizer stops on its own.
    pub joint_fit_seconds: f64,
    pub independent_fit_seconds: f64,
    pub fit_ratio: f64,
    pub joint_evaluations: usize,
    pub independent_evaluations: usize,
}

/// A world with `m` APs spread around a square room, with no shadowing so
/// only the GP cost is measured.
fn bench_world(m: usize, side: f64) -> WorldConfig {
    let aps = (0..m)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
            ApSpec {
                id: ApId::new(format!("ap{k:02}")),
                x: side * (0.5 + 0.35 * t.cos()),
                y: side * (0.5 + 0.35 * t.sin()),
            }
        })
        .collect();
    let mut cfg = WorldConfig::house();
    cfg.name = "bench".into();
    cfg.bounds_min = [0.0, 0.0];
    cfg.bounds_max = [side, side];
    cfg.path_loss.shadowing_sigma = 0.0;
    cfg.aps = aps;
    cfg
}

fn best_of<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let v = f()?;
        best = best.min(t.elapsed().as_secs_f64());
        last = Some(v);
    }
    Ok((best, last.expect("at least one repeat")))
}

/// Joint `m`-output model against `m` single-output models on the same
/// complete data, for each γ in `gammas`. Two costs are measured: `budget`
/// likelihood-and-gradient evaluations per model at its fitted
/// hyperparameters (what one optimizer step costs), and complete fits with
/// `opts`. Each timing is the best of `repeats`.
pub fn complexity_benchmark(
    gammas: &[usize],
    m: usize,
    opts: &FitOptions,
    budget: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<ComplexityRow>> {
    let world = World::build(&bench_world(m, 10.0), seed)?;
    let mut rows = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let mut rng = stream_rng(seed, 100, gamma as u64);
        let mut samples = Vec::with_capacity(gamma * m);
        for _ in 0..gamma {
            let p = Point::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
            for ap in &world.aps {
                samples.push(rfsim::sample_measurement(ap, &p, 0.5, &mut rng)?);
            }
        }
        let opts = FitOptions {
            seed: derive_seed(seed, 5, gamma as u64),
            solver: SolverPreference::Auto,
            ..opts.clone()
        };
        let per_ap: Vec<Vec<_>> = world
            .aps
            .iter()
            .map(|ap| samples.iter().filter(|s| s.ap_id == ap.ap_id).cloned().collect())
            .collect();

        let (joint_fit, joint) = best_of(repeats, || MogpModel::fit(&samples, &opts))?;
        let (indep_fit, singles) = best_of(repeats, || {
            per_ap.iter().map(|own| MogpModel::fit(own, &opts)).collect::<Result<Vec<_>>>()
        })?;

        let steps = |model: &MogpModel| -> Result<()> {
            let theta = model.packed_parameters();
            for _ in 0..budget {
                model.lml_with_gradient(&theta)?;
            }
            Ok(())
        };
        let (joint_secs, ()) = best_of(repeats, || steps(&joint))?;
        let (indep_secs, ()) = best_of(repeats, || singles.iter().try_for_each(steps))?;

        rows.push(ComplexityRow {
            gamma,
            outputs: m,
            budget,
            joint_seconds: joint_secs,
            independent_seconds: indep_secs,
            ratio: joint_secs / indep_secs,
            joint_fit_seconds: joint_fit,
            independent_fit_seconds: indep_fit,
            fit_ratio: joint_fit / indep_fit,
            joint_evaluations: joint.report().evaluations,
            independent_evaluations: singles.iter().map(|s| s.report().evaluations).sum(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScalingRow {
    pub aps: usize,
    pub candidates_per_ap: usize,
    pub estimates: usize,
    pub seconds: f64,
    pub combinations: usize,
    pub exhaustive: bool,
}

/// Time `align_pair` on synthetic beliefs with `aps` APs, each carrying
/// `candidates_per_ap` extra local-maximum estimates.
pub fn alignment_benchmark(
    ap_counts: &[usize],
    candidates_per_ap: usize,
    cfg: &AlignmentConfig,
    repeats: usize,
    seed: u64,
) -> Result<Vec<AlignmentScalingRow>> {
    let mut rows = Vec::new();
    for &n in ap_counts {
        let mut rng = stream_rng(seed, 101, n as u64);
        let t_ab = Transform2D::new(rng.random_range(-3.0..3.0), [1.0, -2.0].into());
        let mut ea = Vec::new();
        let mut eb = Vec::new();
        for k in 0..n {
            let id = ApId::new(format!("ap{k:03}"));
            let p = Point::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0));
            let pb = t_ab.inverse().apply(&p);
            for (list, q) in [(&mut ea, p), (&mut eb, pb)] {
                list.push(estimate(&id, EstimateKind::Hierarchical, q, 0.8));
                for _ in 0..candidates_per_ap {
                    let off = Point::new(q.x + rng.random_range(-4.0..4.0), q.y + rng.random_range(-4.0..4.0));
                    list.push(estimate(&id, EstimateKind::LocalMaximum, off, 0.3));
                }
            }
        }
        let a = RobotBeliefMsg::new("a", 0, Pose2D::new(0.0, 0.0, 0.0), ea)?;
        let b = RobotBeliefMsg::new("b", 0, Pose2D::new(0.0, 0.0, 0.0), eb)?;
        let mut best = f64::INFINITY;
        let mut last = None;
        for _ in 0..repeats.max(1) {
            let t = Instant::now();
            let al = align_pair(&a, &b, cfg)?;
            best = best.min(t.elapsed().as_secs_f64());
            last = Some(al);
        }
        let al = last.expect("at least one repeat");
        rows.push(AlignmentScalingRow {
            aps: n,
            candidates_per_ap,
            estimates: a.estimates.len(),
            seconds: best,
            combinations: al.combinations_evaluated,
            exhaustive: al.exhaustive,
        });
    }
    Ok(rows)
}

fn estimate(id: &ApId, kind: EstimateKind, p: Point, weight: f64) -> ApEstimate {
    ApEstimate {
        ap_id: id.clone(),
        kind,
        x: p.x,
        y: p.y,
        weight,
        uncertainty: 1.0 / weight - 1.0,
    }
}
