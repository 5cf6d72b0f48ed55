//! Co-regionalized multi-output Gaussian process over RSSI fields.
//!
//! All access points share one squared-exponential spatial kernel `K_s`; the
//! cross-AP covariance is the co-regionalization matrix
//! `B = A·Aᵀ + diag(κ)` (intrinsic coregionalization model), giving the joint
//! covariance `K_s ⊗ B + σ_n² I` over the stacked observations.
//!
//! Observations are centered per output (the constant prior mean is each
//! AP's sample mean). Hyperparameters `{l, σ_n², A, κ}` are fitted by
//! maximizing the log marginal likelihood with analytic gradients; the kernel
//! signal variance is held fixed because it is not identifiable separately
//! from `B`.

mod likelihood;
pub mod optimize;

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Point, ScalarField};
use crate::rfsim::RssiSample;
use crate::rng::{stream, stream_rng};
use crate::ApId;

use likelihood::{Factor, Solved};
pub use likelihood::Route;
use optimize::{minimize, LbfgsSettings};

pub const MODEL_FORMAT: &str = "mgprl-mogp";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeKernelParams {
    pub signal_variance: f64,
    pub length_scale: f64,
}

impl SeKernelParams {
    pub fn eval(&self, x: &Point, y: &Point) -> f64 {
        let d2 = (x - y).norm_squared();
        self.signal_variance * (-d2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

pub fn kernel_eval(params: &SeKernelParams, x: &Point, y: &Point) -> f64 {
    params.eval(x, y)
}

/// `B = A·Aᵀ + diag(κ)`, positive semi-definite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Coregionalization {
    pub factor: DMatrix<f64>,
    pub diag: DVector<f64>,
}

impl Coregionalization {
    pub fn new(factor: DMatrix<f64>, diag: DVector<f64>) -> Result<Self> {
        if factor.nrows() != diag.len() || factor.ncols() == 0 {
            return Err(Error::InvalidParameter {
                name: "coregionalization",
                reason: format!(
                    "factor is {}x{}, diag has {} entries",
                    factor.nrows(),
                    factor.ncols(),
                    diag.len()
                ),
            });
        }
        if diag.iter().any(|&k| !(k >= 0.0)) {
            return Err(Error::InvalidParameter {
                name: "coregionalization.diag",
                reason: "entries must be >= 0".into(),
            });
        }
        Ok(Self { factor, diag })
    }

    pub fn outputs(&self) -> usize {
        self.diag.len()
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose() + DMatrix::from_diagonal(&self.diag)
    }

    /// `b_ij / sqrt(b_ii b_jj)`
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        let b = self.matrix();
        b[(i, j)] / (b[(i, i)] * b[(j, j)]).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub kernel: SeKernelParams,
    pub coreg: Coregionalization,
    pub noise_variance: f64,
}

impl Hyperparameters {
    fn pack(&self) -> Vec<f64> {
        let mut v = vec![self.kernel.length_scale.ln(), self.noise_variance.ln()];
        let a = &self.coreg.factor;
        for p in 0..a.nrows() {
            for q in 0..a.ncols() {
                v.push(a[(p, q)]);
            }
        }
        v.extend(self.coreg.diag.iter().map(|k| k.max(1e-300).ln()));
        v
    }

    fn unpack(theta: &[f64], m: usize, rank: usize, signal_variance: f64) -> Self {
        let factor = DMatrix::from_row_slice(m, rank, &theta[2..2 + m * rank]);
        let diag = DVector::from_iterator(m, theta[2 + m * rank..].iter().map(|v| v.exp()));
        Self {
            kernel: SeKernelParams {
                signal_variance,
                length_scale: theta[0].exp(),
            },
            coreg: Coregionalization { factor, diag },
            noise_variance: theta[1].exp(),
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.kernel.signal_variance) || !ok(self.kernel.length_scale) {
            return Err(Error::InvalidParameter {
                name: "kernel",
                reason: "signal variance and length scale must be positive".into(),
            });
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "noise_variance",
                reason: "must be >= 0".into(),
            });
        }
        if self.coreg.outputs() != m {
            return Err(Error::InvalidParameter {
                name: "coregionalization",
                reason: format!("has {} outputs, data has {m}", self.coreg.outputs()),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverPreference {
    /// Kronecker eigen-route when the data is complete, dense otherwise.
    #[default]
    Auto,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub rank: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Re-optimize hyperparameters every `refit_every` updates; 0 disables.
    pub refit_every: usize,
    pub update_restarts: usize,
    pub signal_variance: f64,
    pub initial_length_scale: Option<f64>,
    pub solver: SolverPreference,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rank: 1,
            restarts: 3,
            max_iters: 100,
            seed: 0,
            refit_every: 5,
            update_restarts: 1,
            signal_variance: 1.0,
            initial_length_scale: None,
            solver: SolverPreference::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitReport {
    pub optimized: bool,
    pub converged: bool,
    pub restarts: usize,
    pub evaluations: usize,
    pub log_likelihood: f64,
}

/// Centered training design shared by both solver routes.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub locations: Vec<Point>,
    pub obs_loc: Vec<usize>,
    pub obs_out: Vec<usize>,
    pub resid: DVector<f64>,
    pub means: Vec<f64>,
    pub n_outputs: usize,
    /// One observation per (location, output), ordered location-major.
    pub complete: bool,
    pub sq_dist: DMatrix<f64>,
}

impl Design {
    fn build(ap_ids: &[ApId], samples: &[RssiSample]) -> Result<Self> {
        let m = ap_ids.len();
        let out_index: HashMap<&ApId, usize> =
            ap_ids.iter().enumerate().map(|(k, id)| (id, k)).collect();
        let mut loc_index: HashMap<(u64, u64), usize> = HashMap::new();
        let mut locations = Vec::new();
        let mut obs = Vec::with_capacity(samples.len());
        for (k, s) in samples.iter().enumerate() {
            let [x, y] = s.location;
            if !(x.is_finite() && y.is_finite() && s.value_dbm.is_finite()) {
                return Err(Error::NonFinite("training sample"));
            }
            let out = *out_index
                .get(&s.ap_id)
                .ok_or_else(|| Error::UnknownAp(s.ap_id.clone()))?;
            // +0.0 and -0.0 are the same location
            let key = ((x + 0.0).to_bits(), (y + 0.0).to_bits());
            let loc = *loc_index.entry(key).or_insert_with(|| {
                locations.push(Point::new(x, y));
                locations.len() - 1
            });
            obs.push((loc, out, k, s.value_dbm));
        }
        obs.sort_by_key(|&(loc, out, k, _)| (loc, out, k));

        let mut sums = vec![0.0; m];
        let mut counts = vec![0usize; m];
        for &(_, out, _, v) in &obs {
            sums[out] += v;
            counts[out] += 1;
        }
        if let Some(o) = counts.iter().position(|&c| c == 0) {
            return Err(Error::MissingSamples(ap_ids[o].clone()));
        }
        let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();

        let gamma = locations.len();
        let complete = obs.len() == gamma * m
            && obs
                .iter()
                .enumerate()
                .all(|(t, &(loc, out, _, _))| loc == t / m && out == t % m);
        let sq_dist =
            DMatrix::from_fn(gamma, gamma, |a, b| (locations[a] - locations[b]).norm_squared());
        Ok(Self {
            obs_loc: obs.iter().map(|o| o.0).collect(),
            obs_out: obs.iter().map(|o| o.1).collect(),
            resid: DVector::from_iterator(obs.len(), obs.iter().map(|o| o.3 - means[o.1])),
            means,
            n_outputs: m,
            complete,
            sq_dist,
            locations,
        })
    }

    fn route(&self, pref: SolverPreference) -> Route {
        match pref {
            SolverPreference::Auto if self.complete && self.n_outputs >= 2 => Route::Kronecker,
            _ => Route::Dense,
        }
    }

    fn residual_variances(&self) -> Vec<f64> {
        let mut ss = vec![0.0; self.n_outputs];
        let mut n = vec![0usize; self.n_outputs];
        for (t, &o) in self.obs_out.iter().enumerate() {
            ss[o] += self.resid[t] * self.resid[t];
            n[o] += 1;
        }
        ss.iter()
            .zip(&n)
            .map(|(s, &c)| (s / c as f64).max(1e-2))
            .collect()
    }

    /// Empirical cross-output covariance of the residuals over co-observed
    /// locations, with the diagonal taken from [`Self::residual_variances`].
    fn residual_covariance(&self) -> DMatrix<f64> {
        let (g, m) = (self.locations.len(), self.n_outputs);
        let mut sum = DMatrix::<f64>::zeros(g, m);
        let mut cnt = DMatrix::<f64>::zeros(g, m);
        for t in 0..self.obs_loc.len() {
            sum[(self.obs_loc[t], self.obs_out[t])] += self.resid[t];
            cnt[(self.obs_loc[t], self.obs_out[t])] += 1.0;
        }
        let vars = self.residual_variances();
        let mut cov = DMatrix::from_diagonal(&DVector::from_vec(vars.clone()));
        for o in 0..m {
            for p in 0..o {
                let (mut acc, mut n) = (0.0f64, 0.0f64);
                for a in 0..g {
                    if cnt[(a, o)] > 0.0 && cnt[(a, p)] > 0.0 {
                        acc += sum[(a, o)] / cnt[(a, o)] * sum[(a, p)] / cnt[(a, p)];
                        n += 1.0;
                    }
                }
                if n > 0.0 {
                    let lim = (vars[o] * vars[p]).sqrt();
                    let c = (acc / n).clamp(-lim, lim);
                    cov[(o, p)] = c;
                    cov[(p, o)] = c;
                }
            }
        }
        cov
    }

    fn diameter(&self) -> f64 {
        self.sq_dist.max().sqrt()
    }
}

/// Posterior mean and latent-function variance at a set of queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MogpModel {
    ap_ids: Vec<ApId>,
    samples: Vec<RssiSample>,
    hyper: Hyperparameters,
    options: FitOptions,
    design: Design,
    solved: Solved,
    route: Route,
    updates_since_refit: usize,
    report: FitReport,
}

impl MogpModel {
    /// Fit to `samples`, modeling the APs that appear in them (sorted by id).
    pub fn fit(samples: &[RssiSample], opts: &FitOptions) -> Result<Self> {
        let mut ids: Vec<ApId> = samples.iter().map(|s| s.ap_id.clone()).collect();
        ids.sort();
        ids.dedup();
        Self::fit_outputs(ids, samples, opts)
    }

    /// Fit with an explicit output list; every listed AP needs a sample.
    pub fn fit_outputs(ap_ids: Vec<ApId>, samples: &[RssiSample], opts: &FitOptions) -> Result<Self> {
        if ap_ids.is_empty() {
            return Err(Error::InvalidParameter {
                name: "samples",
                reason: "no access points to model".into(),
            });
        }
        if opts.rank == 0 {
            return Err(Error::InvalidParameter {
                name: "rank",
                reason: "must be >= 1".into(),
            });
        }
        let design = Design::build(&ap_ids, samples)?;
        if design.locations.len() == 1 && design.obs_loc.len() > design.n_outputs {
            return Err(Error::RankDeficient);
        }
        let init = initial_hyperparameters(&design, opts);
        let route = design.route(opts.solver);
        let (hyper, report) = if design.locations.len() >= 2 {
            optimize_hyperparameters(&design, route, &init, opts, opts.restarts.max(1), opts.seed)
        } else {
            (init, FitReport::default())
        };
        Self::assemble(ap_ids, samples.to_vec(), hyper, opts.clone(), design, route, report)
    }

    /// Condition on `samples` with fixed hyperparameters.
    pub fn with_hyperparameters(
        ap_ids: Vec<ApId>,
        samples: &[RssiSample],
        hyper: Hyperparameters,
        opts: &FitOptions,
    ) -> Result<Self> {
        let design = Design::build(&ap_ids, samples)?;
        hyper.validate(design.n_outputs)?;
        let route = design.route(opts.solver);
        Self::assemble(
            ap_ids,
            samples.to_vec(),
            hyper,
            opts.clone(),
            design,
            route,
            FitReport::default(),
        )
    }

    fn assemble(
        ap_ids: Vec<ApId>,
        samples: Vec<RssiSample>,
        hyper: Hyperparameters,
        options: FitOptions,
        design: Design,
        route: Route,
        mut report: FitReport,
    ) -> Result<Self> {
        let solved = likelihood::solve(&design, &hyper, route)?;
        report.log_likelihood = solved.lml;
        Ok(Self {
            ap_ids,
            samples,
            hyper,
            options,
            design,
            solved,
            route,
            updates_since_refit: 0,
            report,
        })
    }

    pub fn ap_ids(&self) -> &[ApId] {
        &self.ap_ids
    }

    pub fn samples(&self) -> &[RssiSample] {
        &self.samples
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn options(&self) -> &FitOptions {
        &self.options
    }

    pub fn report(&self) -> &FitReport {
        &self.report
    }

    pub fn route(&self) -> Route {
        self.route
    }

    /// Prior mean per output, in `ap_ids` order.
    pub fn prior_means(&self) -> &[f64] {
        &self.design.means
    }

    pub fn n_locations(&self) -> usize {
        self.design.locations.len()
    }

    pub fn jitter(&self) -> f64 {
        self.solved.jitter
    }

    pub fn output_index(&self, ap: &ApId) -> Result<usize> {
        self.ap_ids
            .iter()
            .position(|id| id == ap)
            .ok_or_else(|| Error::UnknownAp(ap.clone()))
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.solved.lml
    }

    /// Log marginal likelihood and gradient at the packed parameter vector
    /// `[ln l, ln σ_n², A (row-major), ln κ]` on this model's data.
    pub fn lml_with_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let m = self.design.n_outputs;
        let rank = self.hyper.coreg.rank();
        if theta.len() != 2 + m * rank + m {
            return Err(Error::InvalidParameter {
                name: "theta",
                reason: format!("expected {} entries", 2 + m * rank + m),
            });
        }
        let h = Hyperparameters::unpack(theta, m, rank, self.hyper.kernel.signal_variance);
        likelihood::lml_and_grad(&self.design, &h, self.route)
    }

    pub fn packed_parameters(&self) -> Vec<f64> {
        self.hyper.pack()
    }

    /// Prior variance of output `j`: `σ_f²·b_jj`.
    pub fn prior_variance(&self, j: usize) -> f64 {
        self.hyper.kernel.signal_variance * self.hyper.coreg.matrix()[(j, j)]
    }

    pub fn predict(&self, queries: &[Point], ap: &ApId) -> Result<Prediction> {
        let j = self.output_index(ap)?;
        if queries.iter().any(|q| !(q.x.is_finite() && q.y.is_finite())) {
            return Err(Error::NonFinite("query"));
        }
        let gamma = self.design.locations.len();
        let nq = queries.len();
        let kern = &self.hyper.kernel;
        let ksq = DMatrix::from_fn(gamma, nq, |a, q| kern.eval(&self.design.locations[a], &queries[q]));
        let b = self.hyper.coreg.matrix();
        let bj = b.column(j).into_owned();
        let w = &self.solved.alpha_grid * &bj;
        let mu = self.design.means[j];
        let mean: Vec<f64> = (0..nq).map(|q| mu + ksq.column(q).dot(&w)).collect();
        let prior = kern.signal_variance * b[(j, j)];

        let reduction: Vec<f64> = match &self.solved.factor {
            Factor::Kron {
                us,
                ls,
                ub,
                lb,
                noise,
            } => {
                let c = ub.transpose() * &bj;
                let h = DVector::from_fn(gamma, |i, _| {
                    (0..c.len()).map(|p| c[p] * c[p] / (ls[i] * lb[p] + noise)).sum::<f64>()
                });
                let s = us.transpose() * &ksq;
                (0..nq)
                    .map(|q| s.column(q).iter().zip(h.iter()).map(|(v, hi)| v * v * hi).sum())
                    .collect()
            }
            Factor::Dense { chol } => {
                let n = self.design.obs_loc.len();
                let kstar = DMatrix::from_fn(n, nq, |t, q| {
                    ksq[(self.design.obs_loc[t], q)] * b[(self.design.obs_out[t], j)]
                });
                let v = chol
                    .l_dirty()
                    .solve_lower_triangular(&kstar)
                    .ok_or(Error::NotPositiveDefinite {
                        jitter: self.solved.jitter,
                    })?;
                (0..nq).map(|q| v.column(q).norm_squared()).collect()
            }
        };
        let variance = reduction.iter().map(|r| (prior - r).max(0.0)).collect();
        Ok(Prediction { mean, variance })
    }

    /// Mean and variance fields over every cell center of `grid`.
    pub fn predict_field(&self, grid: &GridSpec, ap: &ApId) -> Result<(ScalarField, ScalarField)> {
        grid.validate()?;
        let p = self.predict(&grid.centers(), ap)?;
        Ok((ScalarField::new(*grid, p.mean)?, ScalarField::new(*grid, p.variance)?))
    }

    /// Append samples and refresh the factorization; hyperparameters are
    /// re-optimized every `refit_every` non-empty updates.
    pub fn update(&self, new_samples: &[RssiSample]) -> Result<Self> {
        if new_samples.is_empty() {
            return Ok(self.clone());
        }
        let mut samples = self.samples.clone();
        samples.extend_from_slice(new_samples);
        let design = Design::build(&self.ap_ids, &samples)?;
        let route = design.route(self.options.solver);
        let count = self.updates_since_refit + 1;
        let refit = self.options.refit_every > 0 && count >= self.options.refit_every;
        let (hyper, report) = if refit && design.locations.len() >= 2 {
            let seed = self.options.seed ^ (samples.len() as u64).rotate_left(32);
            optimize_hyperparameters(
                &design,
                route,
                &self.hyper,
                &self.options,
                self.options.update_restarts.max(1),
                seed,
            )
        } else {
            (self.hyper.clone(), self.report.clone())
        };
        let mut model = Self::assemble(
            self.ap_ids.clone(),
            samples,
            hyper,
            self.options.clone(),
            design,
            route,
            report,
        )?;
        model.updates_since_refit = if refit { 0 } else { count };
        Ok(model)
    }

    pub fn to_file(&self) -> ModelFile {
        let h = &self.hyper;
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            ap_ids: self.ap_ids.clone(),
            signal_variance: h.kernel.signal_variance,
            length_scale: h.kernel.length_scale,
            noise_variance: h.noise_variance,
            coreg_factor: h
                .coreg
                .factor
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            coreg_diag: h.coreg.diag.iter().copied().collect(),
            options: self.options.clone(),
            samples: self.samples.clone(),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        if file.format != MODEL_FORMAT {
            return Err(Error::Config(format!("format: expected `{MODEL_FORMAT}`")));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Version {
                found: file.version,
                expected: MODEL_VERSION,
            });
        }
        let m = file.ap_ids.len();
        let rank = file.coreg_factor.first().map_or(0, |r| r.len());
        if file.coreg_factor.len() != m || file.coreg_factor.iter().any(|r| r.len() != rank) {
            return Err(Error::Config("coreg_factor must be an m x rank table".into()));
        }
        let flat: Vec<f64> = file.coreg_factor.iter().flatten().copied().collect();
        let coreg = Coregionalization::new(
            DMatrix::from_row_slice(m, rank, &flat),
            DVector::from_vec(file.coreg_diag.clone()),
        )?;
        let hyper = Hyperparameters {
            kernel: SeKernelParams {
                signal_variance: file.signal_variance,
                length_scale: file.length_scale,
            },
            coreg,
            noise_variance: file.noise_variance,
        };
        Self::with_hyperparameters(file.ap_ids.clone(), &file.samples, hyper, &file.options)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file(&file)
    }
}

/// Versioned on-disk model: hyperparameters plus the full training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub ap_ids: Vec<ApId>,
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
    pub coreg_factor: Vec<Vec<f64>>,
    pub coreg_diag: Vec<f64>,
    pub options: FitOptions,
    pub samples: Vec<RssiSample>,
}

fn initial_hyperparameters(design: &Design, opts: &FitOptions) -> Hyperparameters {
    let m = design.n_outputs;
    let rank = opts.rank;
    let vars = design.residual_variances();
    // leading eigenvectors of the empirical cross-covariance carry 80% of
    // each output's variance; the rest starts in κ
    let eig = SymmetricEigen::new(design.residual_covariance());
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut factor = DMatrix::from_fn(m, rank, |o, q| {
        let k = order[q % m];
        let v = eig.eigenvectors[(o, k)] * eig.eigenvalues[k].max(0.0).sqrt();
        if q < m { v } else { 0.1 * v }
    });
    for o in 0..m {
        let norm = factor.row(o).norm();
        let target = (0.8 * vars[o]).sqrt();
        if norm > 1e-9 * target {
            factor.row_mut(o).scale_mut(target / norm);
        } else {
            factor[(o, 0)] = target;
        }
    }
    let diag = DVector::from_iterator(m, vars.iter().map(|v| 0.2 * v));
    let mean_var = vars.iter().sum::<f64>() / m as f64;
    let length_scale = opts
        .initial_length_scale
        .unwrap_or_else(|| (0.3 * design.diameter()).max(0.1));
    Hyperparameters {
        kernel: SeKernelParams {
            signal_variance: opts.signal_variance,
            length_scale,
        },
        coreg: Coregionalization { factor, diag },
        noise_variance: (0.01 * mean_var).max(1e-4),
    }
}

fn parameter_bounds(design: &Design, m: usize, rank: usize) -> Vec<(f64, f64)> {
    let vmax = design.residual_variances().into_iter().fold(1.0f64, f64::max);
    let lmax = (10.0 * design.diameter()).max(50.0);
    let amax = 10.0 * vmax.sqrt() + 10.0;
    let mut b = vec![(0.05f64.ln(), lmax.ln()), (1e-6f64.ln(), (100.0 * vmax + 1.0).ln())];
    b.extend(std::iter::repeat((-amax, amax)).take(m * rank));
    b.extend(std::iter::repeat((1e-8f64.ln(), (10.0 * vmax + 1.0).ln())).take(m));
    b
}

fn optimize_hyperparameters(
    design: &Design,
    route: Route,
    start: &Hyperparameters,
    opts: &FitOptions,
    restarts: usize,
    seed: u64,
) -> (Hyperparameters, FitReport) {
    let m = design.n_outputs;
    let rank = start.coreg.rank();
    let sf = start.kernel.signal_variance;
    let bounds = parameter_bounds(design, m, rank);
    let settings = LbfgsSettings {
        max_iters: opts.max_iters,
        ..Default::default()
    };
    // The optimizer works on θ with the A entries divided by each output's
    // residual standard deviation, so every coordinate is O(1).
    let sd: Vec<f64> = design.residual_variances().iter().map(|v| v.max(1e-12).sqrt()).collect();
    let mut scale = vec![1.0; bounds.len()];
    for o in 0..m {
        for q in 0..rank {
            scale[2 + o * rank + q] = sd[o];
        }
    }
    let to_opt = |th: &[f64]| -> Vec<f64> { th.iter().zip(&scale).map(|(v, s)| v / s).collect() };
    let from_opt = |ph: &[f64]| -> Vec<f64> { ph.iter().zip(&scale).map(|(v, s)| v * s).collect() };
    let scaled_bounds: Vec<(f64, f64)> = bounds.iter().zip(&scale).map(|(&(lo, hi), s)| (lo / s, hi / s)).collect();

    let mut rng = stream_rng(seed, stream::OPTIMIZER, 0);
    let base = start.pack();
    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    let mut evaluations = 0;

    for r in 0..restarts {
        let mut theta = base.clone();
        if r > 0 {
            let mut jitter = |s: f64| -> f64 { s * rng.sample::<f64, _>(StandardNormal) };
            theta[0] += jitter(0.5);
            theta[1] += jitter(1.0);
            for v in &mut theta[2..2 + m * rank] {
                *v *= jitter(0.3).exp();
            }
            for v in &mut theta[2 + m * rank..] {
                *v += jitter(1.0);
            }
        }
        let objective = |ph: &[f64]| {
            let h = Hyperparameters::unpack(&from_opt(ph), m, rank, sf);
            match likelihood::lml_and_grad(design, &h, route) {
                Ok((l, g)) if l.is_finite() => (-l, g.iter().zip(&scale).map(|(v, s)| -v * s).collect()),
                _ => (f64::NAN, vec![0.0; ph.len()]),
            }
        };
        let res = minimize(objective, &to_opt(&theta), &scaled_bounds, &settings);
        evaluations += res.evaluations;
        if res.f.is_finite() && best.as_ref().is_none_or(|b| res.f < b.0) {
            best = Some((res.f, from_opt(&res.x), res.converged));
        }
    }

    match best {
        Some((f, x, converged)) => (
            Hyperparameters::unpack(&x, m, rank, sf),
            FitReport {
                optimized: true,
                converged,
                restarts,
                evaluations,
                log_likelihood: -f,
            },
        ),
        None => (
            start.clone(),
            FitReport {
                optimized: false,
                converged: false,
                restarts,
                evaluations,
                log_likelihood: f64::NAN,
            },
        ),
    }
}
