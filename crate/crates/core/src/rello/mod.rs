//! Relative localization by aligning two robots' weighted AP estimates.
//!
//! Estimates are matched by AP identity. For every shared AP each side
//! offers its hierarchical estimate plus its candidates; the search picks one
//! per side per AP so that the best weighted rigid fit has the smallest
//! residual. The fit is weighted Procrustes (Kabsch) with a determinant
//! correction, so only proper rotations come back.

pub mod hull;
pub mod message;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::aploc::ApEstimate;
use crate::error::{Error, Result};
use crate::geometry::{Point, Transform2D};
use crate::ApId;

pub use hull::{convex_hull, is_degenerate, polygon_area};
pub use message::RobotBeliefMsg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    /// Acceptance threshold on the weighted squared error (m²).
    pub lambda: f64,
    pub max_candidate_combinations: usize,
    /// Report when a mirrored fit would beat the proper one. The returned
    /// transform is always proper.
    pub reflection_allowed: bool,
    /// Compare `error / shared APs` against `lambda` instead of the sum.
    pub normalize_by_count: bool,
    /// Restrict every AP to its hierarchical estimate.
    pub use_candidates: bool,
    /// Hull area below this fraction of the squared diameter counts as collinear.
    pub degenerate_area_ratio: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            max_candidate_combinations: 512,
            reflection_allowed: false,
            normalize_by_count: false,
            use_candidates: true,
            degenerate_area_ratio: 1e-3,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: "must be > 0".into(),
            });
        }
        if self.max_candidate_combinations == 0 {
            return Err(Error::InvalidParameter {
                name: "max_candidate_combinations",
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidFit {
    /// Maps `src` points onto `dst`.
    pub transform: Transform2D,
    /// `Σ w ‖dst − T·src‖²`
    pub error: f64,
    /// Rotation unobservable (fewer than two distinct points on a side);
    /// the transform is then a pure translation.
    pub degenerate: bool,
    /// Residual of the best mirrored fit, when rotation is observable.
    pub reflection_error: Option<f64>,
}

fn residual(src: &[Point], dst: &[Point], w: &[f64], r: &Matrix2<f64>, t: &Vector2<f64>) -> f64 {
    src.iter()
        .zip(dst)
        .zip(w)
        .map(|((s, d), wi)| wi * (d.coords - (r * s.coords + t)).norm_squared())
        .sum()
}

fn distinct(points: &[Point], w: &[f64]) -> usize {
    let mut seen: Vec<&Point> = Vec::new();
    for (p, &wi) in points.iter().zip(w) {
        if wi > 0.0 && !seen.contains(&p) {
            seen.push(p);
        }
    }
    seen.len()
}

/// Proper rigid transform minimizing `Σ w ‖dst − T·src‖²`.
pub fn weighted_rigid_align(src: &[Point], dst: &[Point], w: &[f64]) -> Result<RigidFit> {
    if src.len() != dst.len() || src.len() != w.len() {
        return Err(Error::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter {
            name: "weights",
            reason: "must be finite and >= 0".into(),
        });
    }
    if src.iter().chain(dst).any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::NonFinite("alignment point"));
    }
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::ZeroWeight);
    }
    let centroid = |pts: &[Point]| -> Vector2<f64> {
        pts.iter().zip(w).fold(Vector2::zeros(), |acc, (p, &wi)| acc + p.coords * wi) / wsum
    };
    let cs = centroid(src);
    let cd = centroid(dst);

    if distinct(src, w) < 2 || distinct(dst, w) < 2 {
        let r = Matrix2::identity();
        let t = cd - cs;
        return Ok(RigidFit {
            transform: Transform2D::new(0.0, t),
            error: residual(src, dst, w, &r, &t),
            degenerate: true,
            reflection_error: None,
        });
    }

    let mut h = Matrix2::zeros();
    for ((s, d), &wi) in src.iter().zip(dst).zip(w) {
        h += wi * (s.coords - cs) * (d.coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let proper = v * Matrix2::new(1.0, 0.0, 0.0, d) * u.transpose();
    let mirrored = v * Matrix2::new(1.0, 0.0, 0.0, -d) * u.transpose();

    let rotation = proper[(1, 0)].atan2(proper[(0, 0)]);
    let transform = Transform2D::new(rotation, cd - Transform2D::new(rotation, Vector2::zeros()).apply_vector(&cs));
    let r = transform.rotation_matrix();
    let improper = if d > 0.0 { mirrored } else { v * u.transpose() };
    let tm = cd - improper * cs;
    Ok(RigidFit {
        error: residual(src, dst, w, &r, &transform.translation),
        transform,
        degenerate: false,
        reflection_error: Some(residual(src, dst, w, &improper, &tm)),
    })
}

/// One matched AP: the estimate chosen on each side and the combined weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub ap_id: ApId,
    pub a: ApEstimate,
    pub b: ApEstimate,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HullAlignment {
    pub pair: (String, String),
    /// Maps points in `b`'s frame into `a`'s frame.
    pub transform: Transform2D,
    pub weighted_error: f64,
    pub accepted: bool,
    pub correspondence: Vec<Correspondence>,
    /// Selected estimates are (nearly) collinear on at least one side.
    pub degenerate: bool,
    pub reflection_preferred: bool,
    pub combinations_evaluated: usize,
    pub exhaustive: bool,
}

impl HullAlignment {
    pub fn hull_a(&self) -> Vec<Point> {
        convex_hull(&self.correspondence.iter().map(|c| c.a.position()).collect::<Vec<_>>())
    }

    pub fn hull_b(&self) -> Vec<Point> {
        convex_hull(&self.correspondence.iter().map(|c| c.b.position()).collect::<Vec<_>>())
    }

    /// `b`'s hull mapped into `a`'s frame.
    pub fn hull_b_in_a(&self) -> Vec<Point> {
        self.hull_b().iter().map(|p| self.transform.apply(p)).collect()
    }
}

struct Search<'a> {
    aps: Vec<ApId>,
    /// per AP: (a option, b option) pairs, hierarchical × hierarchical first
    options: Vec<Vec<(&'a ApEstimate, &'a ApEstimate)>>,
    cfg: &'a AlignmentConfig,
    evaluated: usize,
}

impl Search<'_> {
    fn score(&mut self, choice: &[usize]) -> Result<(f64, RigidFit)> {
        self.evaluated += 1;
        let mut src = Vec::with_capacity(choice.len());
        let mut dst = Vec::with_capacity(choice.len());
        let mut w = Vec::with_capacity(choice.len());
        for (k, &c) in choice.iter().enumerate() {
            let (ea, eb) = self.options[k][c];
            src.push(eb.position());
            dst.push(ea.position());
            w.push(ea.weight * eb.weight);
        }
        let fit = weighted_rigid_align(&src, &dst, &w)?;
        let cost = if self.cfg.normalize_by_count {
            fit.error / choice.len() as f64
        } else {
            fit.error
        };
        Ok((cost, fit))
    }

    fn exhaustive(&mut self) -> Result<(Vec<usize>, f64, RigidFit)> {
        let n = self.options.len();
        let mut choice = vec![0usize; n];
        let (c0, f0) = self.score(&choice)?;
        let mut best = (choice.clone(), c0, f0);
        loop {
            // odometer, last AP fastest
            let mut k = n;
            loop {
                if k == 0 {
                    return Ok(best);
                }
                k -= 1;
                choice[k] += 1;
                if choice[k] < self.options[k].len() {
                    break;
                }
                choice[k] = 0;
            }
            let (c, f) = self.score(&choice)?;
            if c < best.1 {
                best = (choice.clone(), c, f);
            }
        }
    }

    fn greedy(&mut self) -> Result<(Vec<usize>, f64, RigidFit)> {
        let n = self.options.len();
        let mut choice = vec![0usize; n];
        let (c0, f0) = self.score(&choice)?;
        let mut best = (c0, f0);
        for _ in 0..50 {
            let mut improved = false;
            for k in 0..n {
                let keep = choice[k];
                let mut pick = keep;
                for o in 0..self.options[k].len() {
                    if o == keep {
                        continue;
                    }
                    choice[k] = o;
                    let (c, f) = self.score(&choice)?;
                    if c < best.0 {
                        best = (c, f);
                        pick = o;
                    }
                }
                choice[k] = pick;
                improved |= pick != keep;
            }
            if !improved {
                break;
            }
        }
        Ok((choice, best.0, best.1))
    }
}

/// Recover the transform taking `b`'s frame into `a`'s frame.
pub fn align_pair(a: &RobotBeliefMsg, b: &RobotBeliefMsg, cfg: &AlignmentConfig) -> Result<HullAlignment> {
    cfg.validate()?;
    let b_ids = b.ap_ids();
    let shared: Vec<ApId> = a.ap_ids().into_iter().filter(|id| b_ids.contains(id)).collect();
    if shared.len() < 3 {
        return Err(Error::InsufficientOverlap { shared: shared.len() });
    }
    let options: Vec<Vec<(&ApEstimate, &ApEstimate)>> = shared
        .iter()
        .map(|id| {
            let ea = a.estimates_for(id).expect("shared");
            let eb = b.estimates_for(id).expect("shared");
            let (na, nb) = if cfg.use_candidates { (ea.len(), eb.len()) } else { (1, 1) };
            (0..na)
                .flat_map(|i| (0..nb).map(move |j| (&ea[i], &eb[j])))
                .collect()
        })
        .collect();
    let total = options
        .iter()
        .try_fold(1usize, |acc, o| acc.checked_mul(o.len()));
    let exhaustive = total.is_some_and(|t| t <= cfg.max_candidate_combinations);

    let mut search = Search {
        aps: shared,
        options,
        cfg,
        evaluated: 0,
    };
    let (choice, cost, fit) = if exhaustive {
        search.exhaustive()?
    } else {
        search.greedy()?
    };

    let correspondence: Vec<Correspondence> = choice
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let (ea, eb) = search.options[k][c];
            Correspondence {
                ap_id: search.aps[k].clone(),
                a: ea.clone(),
                b: eb.clone(),
                weight: ea.weight * eb.weight,
            }
        })
        .collect();
    let pa: Vec<Point> = correspondence.iter().map(|c| c.a.position()).collect();
    let pb: Vec<Point> = correspondence.iter().map(|c| c.b.position()).collect();
    let degenerate = fit.degenerate
        || is_degenerate(&pa, cfg.degenerate_area_ratio)
        || is_degenerate(&pb, cfg.degenerate_area_ratio);
    let reflection_preferred =
        cfg.reflection_allowed && fit.reflection_error.is_some_and(|e| e < fit.error - 1e-12);

    Ok(HullAlignment {
        pair: (a.robot_id.clone(), b.robot_id.clone()),
        transform: fit.transform,
        weighted_error: cost,
        accepted: cost < cfg.lambda,
        correspondence,
        degenerate,
        reflection_preferred,
        combinations_evaluated: search.evaluated,
        exhaustive,
    })
}

/// Origin of the neighbor's frame expressed in this robot's frame.
pub fn relative_position(alignment: &HullAlignment) -> Point {
    alignment.transform.apply(&Point::origin())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consistency {
    /// Translation norm of `T_ab ∘ T_ba` (m).
    pub deviation: f64,
    /// |rotation| of `T_ab ∘ T_ba` (rad).
    pub rotation_deviation: f64,
    pub consistent: bool,
}

/// How far `T_ab ∘ T_ba` is from the identity. Both alignments must be accepted.
pub fn symmetric_consistency(ab: &HullAlignment, ba: &HullAlignment, threshold: f64) -> Result<Consistency> {
    for al in [ab, ba] {
        if !al.accepted {
            return Err(Error::NotAccepted(al.pair.0.clone(), al.pair.1.clone()));
        }
    }
    let loop_t = ab.transform.compose(&ba.transform);
    let deviation = loop_t.translation.norm();
    Ok(Consistency {
        deviation,
        rotation_deviation: loop_t.rotation.abs(),
        consistent: deviation <= threshold,
    })
}
