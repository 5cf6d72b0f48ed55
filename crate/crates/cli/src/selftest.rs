//! Oracle suites: production code against the brute-force references in
//! `mgprl::oracle`.
//!
//! Setting `MGPRL_SELFTEST_FAULT` to a suite name (`gp-posterior`,
//! `gp-likelihood`, `alignment`, `maxima`) perturbs that suite's production
//! results before comparison, so the table must report it as failing.

use std::f64::consts::PI;
use std::time::Instant;

use anyhow::{bail, Result};
use mgprl::aploc::find_maxima;
use mgprl::mogp::{Coregionalization, FitOptions, Hyperparameters, MogpModel, SeKernelParams, SolverPreference};
use mgprl::oracle;
use mgprl::rello::weighted_rigid_align;
use mgprl::rfsim::RssiSample;
use mgprl::rng::{stream_rng, SimRng};
use mgprl::{ApId, GridSpec, Point, ScalarField, Transform2D};
use nalgebra::{DMatrix, DVector, Vector2};
use rand::Rng;

pub const FAULT_ENV: &str = "MGPRL_SELFTEST_FAULT";
pub const SUITES: [&str; 4] = ["gp-posterior", "gp-likelihood", "alignment", "maxima"];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// The suite named by `MGPRL_SELFTEST_FAULT`, if set.
pub fn fault_from_env() -> Result<Option<&'static str>> {
    match std::env::var(FAULT_ENV) {
        Ok(v) if v.is_empty() => Ok(None),
        Ok(v) => match SUITES.iter().find(|s| **s == v) {
            Some(s) => Ok(Some(s)),
            None => bail!("{FAULT_ENV}={v}: expected one of {}", SUITES.join(", ")),
        },
        Err(_) => Ok(None),
    }
}

pub fn run_all(seed: u64, fault: Option<&str>) -> Vec<SuiteResult> {
    vec![
        gp_posterior(seed, fault == Some("gp-posterior")),
        gp_likelihood(seed, fault == Some("gp-likelihood")),
        alignment(seed, fault == Some("alignment")),
        maxima(seed, fault == Some("maxima")),
    ]
}

pub fn format_table(results: &[SuiteResult]) -> String {
    let mut s = format!(
        "{:<14} {:>6} {:>8} {:>10} {:>10} {:>8}  {}\n",
        "suite", "cases", "failures", "max error", "tolerance", "seconds", "result"
    );
    for r in results {
        s += &format!(
            "{:<14} {:>6} {:>8} {:>10.2e} {:>10.0e} {:>8.2}  {}\n",
            r.name,
            r.cases,
            r.failures,
            r.max_error,
            r.tolerance,
            r.seconds,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    s
}

struct Tally {
    cases: usize,
    failures: usize,
    max_error: f64,
    tolerance: f64,
    start: Instant,
}

impl Tally {
    fn new(tolerance: f64) -> Self {
        Self {
            cases: 0,
            failures: 0,
            max_error: 0.0,
            tolerance,
            start: Instant::now(),
        }
    }

    /// One case; its error is the worst over the case's comparisons.
    fn case(&mut self, error: f64) {
        self.cases += 1;
        self.max_error = self.max_error.max(error);
        if !(error <= self.tolerance) {
            self.failures += 1;
        }
    }

    fn finish(self, name: &'static str) -> SuiteResult {
        SuiteResult {
            name,
            cases: self.cases,
            failures: self.failures,
            max_error: self.max_error,
            tolerance: self.tolerance,
            seconds: self.start.elapsed().as_secs_f64(),
        }
    }
}

struct GpInstance {
    aps: Vec<ApId>,
    samples: Vec<RssiSample>,
    hyp: Hyperparameters,
}

/// Up to 20 locations and 4 outputs; even instances are complete so both
/// solver routes are exercised.
fn gp_instance(rng: &mut SimRng, k: usize) -> GpInstance {
    let m = rng.random_range(1..=4);
    let gamma = rng.random_range(m.max(2)..=20);
    let aps: Vec<ApId> = (0..m).map(|o| ApId::new(format!("ap{o}"))).collect();
    let mut samples = Vec::new();
    for g in 0..gamma {
        let loc = [rng.random_range(0.0..8.0), rng.random_range(0.0..8.0)];
        for (o, ap) in aps.iter().enumerate() {
            if k % 2 == 0 || g % m == o || rng.random_bool(0.5) {
                samples.push(RssiSample {
                    location: loc,
                    ap_id: ap.clone(),
                    value_dbm: -45.0 - 4.0 * o as f64 + rng.random_range(-6.0..6.0),
                });
            }
        }
    }
    let rank = rng.random_range(1..=m.min(2));
    let hyp = Hyperparameters {
        kernel: SeKernelParams {
            signal_variance: 1.0,
            length_scale: rng.random_range(0.7..3.0),
        },
        coreg: Coregionalization::new(
            DMatrix::from_fn(m, rank, |_, _| rng.random_range(-2.0..2.0)),
            DVector::from_fn(m, |_, _| rng.random_range(0.05..1.0)),
        )
        .expect("valid shapes"),
        noise_variance: rng.random_range(0.01..0.5),
    };
    GpInstance { aps, samples, hyp }
}

fn gp_models(inst: &GpInstance) -> Vec<MogpModel> {
    [SolverPreference::Auto, SolverPreference::Dense]
        .into_iter()
        .filter_map(|solver| {
            let opts = FitOptions {
                solver,
                ..Default::default()
            };
            MogpModel::with_hyperparameters(inst.aps.clone(), &inst.samples, inst.hyp.clone(), &opts).ok()
        })
        .collect()
}

fn with_jitter(hyp: &Hyperparameters, jitter: f64) -> Hyperparameters {
    Hyperparameters {
        noise_variance: hyp.noise_variance + jitter,
        ..hyp.clone()
    }
}

fn gp_posterior(seed: u64, fault: bool) -> SuiteResult {
    let mut rng = stream_rng(seed, 700, 0);
    let mut t = Tally::new(1e-6);
    for k in 0..40 {
        let inst = gp_instance(&mut rng, k);
        let queries: Vec<Point> = (0..10)
            .map(|_| Point::new(rng.random_range(-1.0..9.0), rng.random_range(-1.0..9.0)))
            .collect();
        let models = gp_models(&inst);
        if models.len() != 2 {
            t.case(f64::INFINITY);
            continue;
        }
        let mut err = 0.0f64;
        for model in &models {
            let hyp = with_jitter(&inst.hyp, model.jitter());
            for (j, ap) in inst.aps.iter().enumerate() {
                let Ok(mut got) = model.predict(&queries, ap) else {
                    err = f64::INFINITY;
                    continue;
                };
                if fault {
                    got.mean[0] += 1e-3;
                }
                let (mu, var) = oracle::dense_posterior(&inst.aps, &inst.samples, &hyp, &queries, j);
                for q in 0..queries.len() {
                    err = err.max((got.mean[q] - mu[q]).abs()).max((got.variance[q] - var[q]).abs());
                }
            }
        }
        t.case(err);
    }
    t.finish("gp-posterior")
}

fn gp_likelihood(seed: u64, fault: bool) -> SuiteResult {
    let mut rng = stream_rng(seed, 703, 0);
    let mut t = Tally::new(1e-6);
    for k in 0..40 {
        let inst = gp_instance(&mut rng, k);
        let models = gp_models(&inst);
        let mut err = if models.len() == 2 { 0.0f64 } else { f64::INFINITY };
        for model in models {
            let reference = oracle::dense_log_likelihood(&inst.aps, &inst.samples, &with_jitter(&inst.hyp, model.jitter()));
            let got = model.log_marginal_likelihood() + if fault { 1e-3 } else { 0.0 };
            err = err.max((got - reference).abs());
        }
        t.case(err);
    }
    t.finish("gp-likelihood")
}

/// Exact recovery on noiseless sets, plus agreement with the angle-sweep
/// reference on noisy ones.
fn alignment(seed: u64, fault: bool) -> SuiteResult {
    let mut rng = stream_rng(seed, 701, 0);
    let mut t = Tally::new(1e-6);
    for k in 0..400 {
        let n = rng.random_range(3..=8);
        let truth = Transform2D::new(
            rng.random_range(-PI..PI),
            Vector2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)),
        );
        let src: Vec<Point> = (0..n)
            .map(|_| Point::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)))
            .collect();
        let noise = if k % 2 == 0 { 0.0 } else { 0.3 };
        let dst: Vec<Point> = src
            .iter()
            .map(|p| {
                let q = truth.apply(p);
                Point::new(q.x + rng.random_range(-noise..=noise), q.y + rng.random_range(-noise..=noise))
            })
            .collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let Ok(fit) = weighted_rigid_align(&src, &dst, &w) else {
            t.case(f64::INFINITY);
            continue;
        };
        let mut got = fit.transform;
        if fault {
            got.rotation += 1e-4;
        }
        let reference = if noise == 0.0 { truth } else { oracle::brute_force_rigid(&src, &dst, &w).0 };
        let dr = (got.rotation - reference.rotation + PI).rem_euclid(2.0 * PI) - PI;
        let dt = (got.translation - reference.translation).norm();
        let det = (fit.transform.rotation_matrix().determinant() - 1.0).abs();
        t.case(dr.abs().max(dt).max(det));
    }
    t.finish("alignment")
}

/// Random tie-free fields against the exhaustive window comparison, and
/// sums of separated bumps whose peaks are known.
fn maxima(seed: u64, fault: bool) -> SuiteResult {
    let mut rng = stream_rng(seed, 702, 0);
    let mut t = Tally::new(0.0);
    for k in 0..300 {
        let (w, h) = (rng.random_range(4..16), rng.random_range(4..16));
        let grid = GridSpec::new([0.0, 0.0], 0.5, w, h).expect("valid grid");
        let radius = rng.random_range(1..=2);
        let (field, expected) = if k % 2 == 0 {
            let vals: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-60.0..-30.0)).collect();
            let f = ScalarField::new(grid, vals).expect("sized");
            let e = oracle::brute_force_maxima(&f, radius);
            (f, e)
        } else {
            // bumps at cells at least 2·radius + 1 apart, narrow enough not to merge
            let mut peaks: Vec<(usize, usize)> = Vec::new();
            for _ in 0..20 {
                let c = (rng.random_range(0..w), rng.random_range(0..h));
                if peaks.iter().all(|p| p.0.abs_diff(c.0).max(p.1.abs_diff(c.1)) > 2 * radius + 2) {
                    peaks.push(c);
                }
            }
            let heights: Vec<f64> = peaks.iter().map(|_| rng.random_range(10.0..30.0)).collect();
            let centers = grid.centers();
            // a shallow bowl around the first peak keeps the floor free of ties
            let p0 = grid.cell_center(peaks[0].0, peaks[0].1).expect("on grid");
            let vals = centers
                .iter()
                .map(|p| {
                    let floor = -80.0 - 0.05 * (p - p0).norm_squared();
                    peaks.iter().zip(&heights).fold(floor, |acc, (c, a)| {
                        let q = grid.cell_center(c.0, c.1).expect("on grid");
                        acc + a * (-(p - q).norm_squared() / (2.0 * 0.3f64.powi(2))).exp()
                    })
                })
                .collect();
            let f = ScalarField::new(grid, vals).expect("sized");
            peaks.sort_by_key(|&(i, j)| (j, i));
            (f, peaks)
        };
        let mut got = find_maxima(&field, radius);
        if fault && !got.is_empty() {
            got.remove(0);
        }
        got.sort_by_key(|&(i, j)| (j, i));
        t.case(if got == expected { 0.0 } else { 1.0 });
    }
    t.finish("maxima")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pristine_suites_pass() {
        for r in run_all(0, None) {
            assert!(r.passed(), "{r:?}");
            assert!(r.cases > 0);
        }
    }

    #[test]
    fn each_fault_fails_only_its_suite() {
        for name in SUITES {
            let results = run_all(1, Some(name));
            for r in &results {
                assert_eq!(r.passed(), r.name != name, "fault {name}: {r:?}");
            }
        }
    }
}
