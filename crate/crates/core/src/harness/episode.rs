//! Seeded multi-robot episodes.
//!
//! Each robot starts at a random pose whose frame it adopts as its own; it
//! never learns that pose. Per cycle every robot walks and samples, updates
//! its GP, publishes a belief message and aligns against every neighbor.
//! Ground truth is used only here, to score the robots.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{EpisodeConfig, MotionConfig};
use super::metrics::{
    compute_ale, compute_field_rmse, mean_of, write_csv, AlignmentRecord, ApMetricsRecord, MetricsRecord,
    TimingRecord,
};
use super::robot::Robot;
use crate::aploc::{ApEstimate, ApFieldEstimate, EstimateKind};
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, GridSpec, Point, Pose2D, ScalarField, Transform2D};
use crate::mogp::FitOptions;
use crate::rello::{symmetric_consistency, HullAlignment, RobotBeliefMsg};
use crate::rfsim::{self, RssiSample, World};
use crate::rng::{derive_seed, stream, stream_rng, SimRng};
use crate::ApId;

/// Harness-side truth for one robot.
#[derive(Debug, Clone)]
struct Body {
    /// Own frame → world.
    frame: Transform2D,
    position: Point,
    heading: f64,
    motion: SimRng,
    sensing: SimRng,
}

impl Body {
    fn own_pose(&self) -> Pose2D {
        let p = self.frame.inverse().apply(&self.position);
        Pose2D::new(p.x, p.y, self.heading - self.frame.rotation)
    }

    /// One random-walk step, reflecting off the world bounds.
    fn step(&mut self, cfg: &MotionConfig, lo: &Point, hi: &Point) {
        let dh = self.motion.random_range(-1.0..=1.0) * cfg.max_heading_change_deg.to_radians();
        let mut h = normalize_angle(self.heading + dh);
        let mut x = self.position.x + cfg.step_length * h.cos();
        let mut y = self.position.y + cfg.step_length * h.sin();
        for _ in 0..4 {
            if x < lo.x || x > hi.x {
                x = if x < lo.x { 2.0 * lo.x - x } else { 2.0 * hi.x - x };
                h = normalize_angle(PI - h);
            }
            if y < lo.y || y > hi.y {
                y = if y < lo.y { 2.0 * lo.y - y } else { 2.0 * hi.y - y };
                h = normalize_angle(-h);
            }
        }
        self.position = Point::new(x.clamp(lo.x, hi.x), y.clamp(lo.y, hi.y));
        self.heading = h;
    }

    /// Read every AP at the current position; locations are reported in the
    /// robot's own frame.
    fn sense(&mut self, world: &World, noise: f64, dropout: f64) -> Result<Vec<RssiSample>> {
        let own = self.frame.inverse().apply(&self.position);
        let mut out = Vec::with_capacity(world.aps.len());
        for ap in &world.aps {
            let lost = self.sensing.random::<f64>() < dropout;
            let mut s = rfsim::sample_measurement(ap, &self.position, noise, &mut self.sensing)?;
            if !lost {
                s.location = [own.x, own.y];
                out.push(s);
            }
        }
        Ok(out)
    }
}

/// Own-frame bounding box of the world rectangle, as a search grid.
fn search_grid(world: &World, frame: &Transform2D, cell: f64) -> Result<GridSpec> {
    let inv = frame.inverse();
    let (lo, hi) = (world.bounds_min, world.bounds_max);
    let corners = [lo, Point::new(hi.x, lo.y), hi, Point::new(lo.x, hi.y)].map(|c| inv.apply(&c));
    let min = [0, 1].map(|k| corners.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min));
    let max = [0, 1].map(|k| corners.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max));
    GridSpec::covering(min, max, cell)
}

fn start_poses(cfg: &EpisodeConfig, world: &World) -> Vec<Pose2D> {
    if !cfg.start_poses.is_empty() {
        return cfg.start_poses.clone();
    }
    let mut rng = stream_rng(cfg.master_seed, stream::START_POSE, 0);
    let margin = 0.5f64
        .min(0.25 * (world.bounds_max.x - world.bounds_min.x))
        .min(0.25 * (world.bounds_max.y - world.bounds_min.y));
    (0..cfg.robots)
        .map(|_| {
            let x = rng.random_range(world.bounds_min.x + margin..=world.bounds_max.x - margin);
            let y = rng.random_range(world.bounds_min.y + margin..=world.bounds_max.y - margin);
            let yaw = rng.random_range(-PI..PI);
            Pose2D::new(x, y, yaw)
        })
        .collect()
}

fn pt(p: &Point) -> [f64; 2] {
    [p.x, p.y]
}

/// Predicted fields of one (robot, AP), resampled on the world evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub cycle: usize,
    pub robot: String,
    pub ap: ApId,
    pub mean: ScalarField,
    pub variance: ScalarField,
    pub truth: [f64; 2],
    /// This robot's estimates for the AP, mapped into the world frame.
    pub estimates: Vec<ApEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullSnapshot {
    pub cycle: usize,
    pub robot: String,
    pub neighbor: String,
    pub accepted: bool,
    pub weighted_error: f64,
    /// Hull of the robot's selected estimates (world frame).
    pub hull: Vec<[f64; 2]>,
    /// Neighbor's hull after alignment (world frame).
    pub neighbor_hull: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub ale_ap: Option<f64>,
    pub ale_ap_hier: Option<f64>,
    pub ale_r: Option<f64>,
    pub field_rmse: Option<f64>,
    pub mean_uncertainty: Option<f64>,
    pub accept_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApTruth {
    pub id: ApId,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub world: String,
    pub master_seed: u64,
    pub robots: usize,
    pub cycles: usize,
    pub samples_per_robot: usize,
    pub noise_level: f64,
    pub bounds_min: [f64; 2],
    pub bounds_max: [f64; 2],
    pub aps: Vec<ApTruth>,
    pub start_poses: Vec<Pose2D>,
    pub error_rows: usize,
    /// Mean over robots at the last cycle.
    pub final_metrics: FinalMetrics,
    /// Median translation loop error over accepted pairs at the last cycle.
    pub consistency: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    /// The configuration with its world inlined.
    pub config: EpisodeConfig,
    pub metrics: Vec<MetricsRecord>,
    pub ap_metrics: Vec<ApMetricsRecord>,
    pub alignments: Vec<AlignmentRecord>,
    pub timings: Vec<TimingRecord>,
    /// Wire-format belief messages, one per line.
    pub messages: Vec<String>,
    pub fields: Vec<FieldSnapshot>,
    pub hulls: Vec<HullSnapshot>,
    pub summary: Summary,
}

impl EpisodeResult {
    /// Per-robot metric rows of the last cycle.
    pub fn final_rows(&self) -> impl Iterator<Item = &MetricsRecord> {
        let last = self.config.cycles;
        self.metrics.iter().filter(move |m| m.cycle == last)
    }
}

struct CycleOutput {
    msg: Option<RobotBeliefMsg>,
    fields: Vec<(ApId, ApFieldEstimate)>,
    error: Option<String>,
    fit_seconds: f64,
    predict_seconds: f64,
}

/// Run a full episode. Configuration problems are returned as errors; any
/// failure inside a cycle is recorded in that cycle's rows instead.
pub fn run_episode(cfg: &EpisodeConfig) -> Result<EpisodeResult> {
    cfg.validate()?;
    let cfg = cfg.resolved()?;
    let world_cfg = cfg.world.clone().expect("resolved");
    let world = World::build(&world_cfg, cfg.master_seed)?;
    let n = cfg.robots;
    let ids: Vec<String> = (1..=n).map(|k| format!("r{k}")).collect();
    let starts = start_poses(&cfg, &world);
    for (k, s) in starts.iter().enumerate() {
        if !world.contains(&s.position()) {
            return Err(Error::Config(format!("start_poses[{k}]: outside the world bounds")));
        }
    }

    let mut bodies: Vec<Body> = starts
        .iter()
        .enumerate()
        .map(|(k, s)| Body {
            frame: s.to_transform(),
            position: s.position(),
            heading: s.yaw,
            motion: stream_rng(cfg.master_seed, stream::MOTION, k as u64),
            sensing: stream_rng(cfg.master_seed, stream::MEASUREMENT, k as u64),
        })
        .collect();
    let mut robots: Vec<Robot> = (0..n)
        .map(|k| -> Result<Robot> {
            let grid = search_grid(&world, &bodies[k].frame, cfg.hierarchy.coarse_cell)?;
            Ok(Robot::new(ids[k].clone(), cfg.hierarchy.with_grid(grid)))
        })
        .collect::<Result<_>>()?;
    let fit_opts: Vec<FitOptions> = (0..n)
        .map(|k| FitOptions {
            seed: derive_seed(cfg.master_seed, stream::OPTIMIZER, k as u64),
            ..cfg.gp.clone()
        })
        .collect();
    let eval_grid = GridSpec::covering(
        pt(&world.bounds_min),
        pt(&world.bounds_max),
        cfg.eval_resolution,
    )?;
    let eval_centers = eval_grid.centers();

    // initial survey, then the first fit
    let mut init_err: Vec<Option<String>> = vec![None; n];
    for k in 0..n {
        for s in 0..cfg.initial_samples {
            if s > 0 {
                bodies[k].step(&cfg.motion, &world.bounds_min, &world.bounds_max);
            }
            let r = bodies[k].sense(&world, cfg.noise_level, cfg.motion.dropout)?;
            robots[k].record(bodies[k].own_pose(), r);
        }
        if let Err(e) = robots[k].update_model(&fit_opts[k]) {
            init_err[k] = Some(e.to_string());
        }
    }

    let mut out = EpisodeResult {
        config: cfg.clone(),
        metrics: Vec::new(),
        ap_metrics: Vec::new(),
        alignments: Vec::new(),
        timings: Vec::new(),
        messages: Vec::new(),
        fields: Vec::new(),
        hulls: Vec::new(),
        summary: Summary {
            name: cfg.name.clone(),
            world: world.name.clone(),
            master_seed: cfg.master_seed,
            robots: n,
            cycles: cfg.cycles,
            samples_per_robot: cfg.initial_samples + cfg.cycles * cfg.samples_per_cycle,
            noise_level: cfg.noise_level,
            bounds_min: pt(&world.bounds_min),
            bounds_max: pt(&world.bounds_max),
            aps: world
                .aps
                .iter()
                .map(|a| ApTruth {
                    id: a.ap_id.clone(),
                    x: a.position.x,
                    y: a.position.y,
                })
                .collect(),
            start_poses: starts.clone(),
            error_rows: 0,
            final_metrics: FinalMetrics {
                ale_ap: None,
                ale_ap_hier: None,
                ale_r: None,
                field_rmse: None,
                mean_uncertainty: None,
                accept_rate: None,
            },
            consistency: None,
        },
    };

    let mut last_alignments: Vec<Vec<(usize, HullAlignment)>> = vec![Vec::new(); n];
    for cycle in 1..=cfg.cycles {
        let snapshot = cycle == cfg.cycles || (cfg.artifacts.field_every > 0 && cycle % cfg.artifacts.field_every == 0);

        // walk, sense, update, estimate
        let mut outputs: Vec<CycleOutput> = Vec::with_capacity(n);
        for k in 0..n {
            let mut error = init_err[k].take();
            for _ in 0..cfg.samples_per_cycle {
                bodies[k].step(&cfg.motion, &world.bounds_min, &world.bounds_max);
                let r = bodies[k].sense(&world, cfg.noise_level, cfg.motion.dropout)?;
                robots[k].record(bodies[k].own_pose(), r);
            }
            let t0 = Instant::now();
            if let Err(e) = robots[k].update_model(&fit_opts[k]) {
                error.get_or_insert(e.to_string());
            }
            let fit_seconds = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let mut msg = None;
            let mut fields = Vec::new();
            if error.is_none() {
                match robots[k]
                    .estimate(cycle as u64, &cfg.candidates, &cfg.weighting)
                    .and_then(|(m, f)| {
                        // everything a neighbor sees goes through the wire format
                        let json = m.to_json()?;
                        Ok((RobotBeliefMsg::from_json(&json)?, json, f))
                    }) {
                    Ok((m, json, f)) => {
                        if cfg.artifacts.messages {
                            out.messages.push(json);
                        }
                        msg = Some(m);
                        fields = f;
                    }
                    Err(e) => error = Some(e.to_string()),
                }
            }
            outputs.push(CycleOutput {
                msg,
                fields,
                error,
                fit_seconds,
                predict_seconds: t1.elapsed().as_secs_f64(),
            });
        }

        // pairwise alignment
        let mut cycle_alignments: Vec<Vec<(usize, Result<HullAlignment>)>> = (0..n).map(|_| Vec::new()).collect();
        for i in 0..n {
            let Some(own) = outputs[i].msg.as_ref() else { continue };
            for j in (0..n).filter(|&j| j != i) {
                let res = match outputs[j].msg.as_ref() {
                    Some(other) => robots[i].align_with(own, other, &cfg.alignment),
                    None => Err(Error::Config(format!("no message from {}", ids[j]))),
                };
                cycle_alignments[i].push((j, res));
            }
        }

        // scoring
        for i in 0..n {
            let truth_frame = bodies[i].frame.inverse();
            let o = &outputs[i];
            let mut row = MetricsRecord {
                cycle,
                robot: ids[i].clone(),
                waypoints: robots[i].waypoints(),
                status: o.error.clone().unwrap_or_else(|| "ok".into()),
                ale_ap: None,
                ale_ap_hier: None,
                ale_r: None,
                field_rmse: None,
                mean_uncertainty: None,
                accept_rate: None,
                candidates: 0,
            };
            out.timings.push(TimingRecord {
                cycle,
                robot: ids[i].clone(),
                fit_seconds: o.fit_seconds,
                predict_seconds: o.predict_seconds,
            });

            for (j, res) in &cycle_alignments[i] {
                let mut rec = AlignmentRecord {
                    cycle,
                    robot: ids[i].clone(),
                    neighbor: ids[*j].clone(),
                    status: "ok".into(),
                    accepted: None,
                    weighted_error: None,
                    rotation: None,
                    tx: None,
                    ty: None,
                    position_error: None,
                    degenerate: None,
                    combinations: None,
                };
                match res {
                    Ok(al) => {
                        let own_j = outputs[*j].msg.as_ref().expect("aligned").pose.position();
                        let truth_j = truth_frame.apply(&bodies[*j].position);
                        rec.accepted = Some(al.accepted);
                        rec.weighted_error = Some(al.weighted_error);
                        rec.rotation = Some(al.transform.rotation);
                        rec.tx = Some(al.transform.translation.x);
                        rec.ty = Some(al.transform.translation.y);
                        rec.position_error = Some((al.transform.apply(&own_j) - truth_j).norm());
                        rec.degenerate = Some(al.degenerate);
                        rec.combinations = Some(al.combinations_evaluated);
                    }
                    Err(e) => rec.status = e.to_string(),
                }
                out.alignments.push(rec);
            }

            let Some(msg) = o.msg.as_ref() else {
                out.metrics.push(row);
                continue;
            };
            let model = robots[i].model().expect("message implies a model");

            // an accepted alignment may swap in a candidate; otherwise the
            // hierarchical estimate stands
            let mut ranked: Vec<&HullAlignment> = cycle_alignments[i]
                .iter()
                .filter_map(|(_, r)| r.as_ref().ok())
                .filter(|a| a.accepted)
                .collect();
            ranked.sort_by(|a, b| a.weighted_error.total_cmp(&b.weighted_error));

            let mut chosen_pts = Vec::new();
            let mut hier_pts = Vec::new();
            let mut truth_pts = Vec::new();
            let mut rmses = Vec::new();
            let mut stds = Vec::new();
            for (ap, fe) in &o.fields {
                let gt = world.ap(ap).expect("robots only hear world APs");
                let truth = truth_frame.apply(&gt.position);
                let hier = &fe.estimates[0];
                let chosen = ranked
                    .iter()
                    .find_map(|al| al.correspondence.iter().find(|c| &c.ap_id == ap))
                    .map(|c| &c.a)
                    .unwrap_or(hier);
                row.candidates += fe.estimates.len() - 1;

                let own_pts: Vec<Point> = eval_centers.iter().map(|c| truth_frame.apply(c)).collect();
                let pred = model.predict(&own_pts, ap)?;
                let mean = ScalarField::new(eval_grid, pred.mean)?;
                let rmse = compute_field_rmse(&mean, |c| gt.mean_rssi(c));
                let std = pred.variance.iter().map(|v| v.sqrt()).sum::<f64>() / pred.variance.len() as f64;
                rmses.push(rmse);
                stds.push(std);

                out.ap_metrics.push(ApMetricsRecord {
                    cycle,
                    robot: ids[i].clone(),
                    ap: ap.to_string(),
                    kind: match chosen.kind {
                        EstimateKind::Hierarchical => "hierarchical".into(),
                        EstimateKind::LocalMaximum => "local_maximum".into(),
                    },
                    x: chosen.x,
                    y: chosen.y,
                    error: (chosen.position() - truth).norm(),
                    hier_error: (hier.position() - truth).norm(),
                    weight: chosen.weight,
                    uncertainty: chosen.uncertainty,
                    field_rmse: rmse,
                    nearest_sample: robots[i]
                        .samples()
                        .iter()
                        .map(|s| (s.point() - truth).norm())
                        .fold(f64::INFINITY, f64::min),
                });
                chosen_pts.push(chosen.position());
                hier_pts.push(hier.position());
                truth_pts.push(truth);

                if snapshot {
                    let frame = bodies[i].frame;
                    out.fields.push(FieldSnapshot {
                        cycle,
                        robot: ids[i].clone(),
                        ap: ap.clone(),
                        mean,
                        variance: ScalarField::new(eval_grid, pred.variance)?,
                        truth: pt(&gt.position),
                        estimates: fe
                            .estimates
                            .iter()
                            .map(|e| {
                                let w = frame.apply(&e.position());
                                ApEstimate { x: w.x, y: w.y, ..e.clone() }
                            })
                            .collect(),
                    });
                }
            }
            if !chosen_pts.is_empty() {
                row.ale_ap = Some(compute_ale(&chosen_pts, &truth_pts)?);
                row.ale_ap_hier = Some(compute_ale(&hier_pts, &truth_pts)?);
            }
            row.field_rmse = mean_of(rmses);
            row.mean_uncertainty = mean_of(stds);

            let mut rel_est = Vec::new();
            let mut rel_truth = Vec::new();
            let mut accepted = 0;
            for (j, res) in &cycle_alignments[i] {
                let current = res.as_ref().ok();
                accepted += usize::from(current.is_some_and(|a| a.accepted));
                let Some(other) = outputs[*j].msg.as_ref() else { continue };
                if let Some(fix) = robots[i].neighbor_fix(&ids[*j], current) {
                    rel_est.push(fix.transform.apply(&other.pose.position()));
                    rel_truth.push(truth_frame.apply(&bodies[*j].position));
                }
            }
            if !rel_est.is_empty() {
                row.ale_r = Some(compute_ale(&rel_est, &rel_truth)?);
            }
            row.accept_rate = Some(accepted as f64 / (n - 1) as f64);
            let _ = msg;
            out.metrics.push(row);

            if snapshot {
                let frame = bodies[i].frame;
                let world_pts = |ps: Vec<Point>| ps.iter().map(|p| pt(&frame.apply(p))).collect();
                for (j, res) in &cycle_alignments[i] {
                    if let Ok(al) = res {
                        out.hulls.push(HullSnapshot {
                            cycle,
                            robot: ids[i].clone(),
                            neighbor: ids[*j].clone(),
                            accepted: al.accepted,
                            weighted_error: al.weighted_error,
                            hull: world_pts(al.hull_a()),
                            neighbor_hull: world_pts(al.hull_b_in_a()),
                        });
                    }
                }
            }
        }

        last_alignments = cycle_alignments
            .into_iter()
            .map(|v| v.into_iter().filter_map(|(j, r)| r.ok().map(|a| (j, a))).collect())
            .collect();
    }

    let finals: Vec<&MetricsRecord> = out.final_rows().collect();
    out.summary.final_metrics = FinalMetrics {
        ale_ap: mean_of(finals.iter().filter_map(|m| m.ale_ap)),
        ale_ap_hier: mean_of(finals.iter().filter_map(|m| m.ale_ap_hier)),
        ale_r: mean_of(finals.iter().filter_map(|m| m.ale_r)),
        field_rmse: mean_of(finals.iter().filter_map(|m| m.field_rmse)),
        mean_uncertainty: mean_of(finals.iter().filter_map(|m| m.mean_uncertainty)),
        accept_rate: mean_of(finals.iter().filter_map(|m| m.accept_rate)),
    };
    out.summary.error_rows = out.metrics.iter().filter(|m| m.status != "ok").count();

    let mut loops = Vec::new();
    for i in 0..n {
        for (j, ab) in &last_alignments[i] {
            if *j > i {
                if let Some((_, ba)) = last_alignments[*j].iter().find(|(k, _)| *k == i) {
                    if let Ok(c) = symmetric_consistency(ab, ba, cfg.consistency_threshold) {
                        loops.push(c.deviation);
                    }
                }
            }
        }
    }
    loops.sort_by(f64::total_cmp);
    out.summary.consistency = loops.get(loops.len() / 2).copied();
    Ok(out)
}

/// Write the artifact bundle into `dir` (created if missing).
pub fn write_bundle(result: &EpisodeResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), result.config.to_toml_string()?)?;
    write_csv(dir.join("metrics.csv"), &result.metrics)?;
    write_csv(dir.join("ap_metrics.csv"), &result.ap_metrics)?;
    write_csv(dir.join("alignments.csv"), &result.alignments)?;
    write_csv(dir.join("timings.csv"), &result.timings)?;
    if !result.messages.is_empty() {
        let mut s = result.messages.join("\n");
        s.push('\n');
        std::fs::write(dir.join("messages.jsonl"), s)?;
    }
    let fields_dir = dir.join("fields");
    for f in &result.fields {
        let d = fields_dir.join(format!("cycle_{:04}", f.cycle));
        std::fs::create_dir_all(&d)?;
        std::fs::write(d.join(format!("{}_{}.json", f.robot, f.ap)), serde_json::to_string(f)?)?;
    }
    let mut cycles: Vec<usize> = result.hulls.iter().map(|h| h.cycle).collect();
    cycles.dedup();
    if !cycles.is_empty() {
        std::fs::create_dir_all(dir.join("hulls"))?;
    }
    for c in cycles {
        let hs: Vec<&HullSnapshot> = result.hulls.iter().filter(|h| h.cycle == c).collect();
        std::fs::write(dir.join("hulls").join(format!("cycle_{c:04}.json")), serde_json::to_string_pretty(&hs)?)?;
    }
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&result.summary)?)?;
    Ok(())
}
