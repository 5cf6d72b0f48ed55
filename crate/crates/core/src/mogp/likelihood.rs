//! Log marginal likelihood, its gradient and the cached solver state.
//!
//! Two routes evaluate the same Gaussian model `y ~ N(m, K_s ⊗ B + σ_n² I)`:
//!
//! * **Kronecker** (every location observed for every output): eigendecompose
//!   `K_s` (γ×γ) and `B` (m×m) separately; the joint spectrum is
//!   `λ_s[i]·λ_b[p] + σ_n²`. Cost `O(γ³ + m²γ²)` per evaluation.
//! * **Dense**: assemble the covariance restricted to the observed
//!   `(location, output)` pairs and factor it with Cholesky.
//!
//! Gradients are taken with respect to the packed parameter vector
//! `[ln l, ln σ_n², A (row-major), ln κ]`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use super::{Design, Hyperparameters};
use crate::error::{Error, Result};

const JITTERS: [f64; 6] = [0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Kronecker,
    Dense,
}

#[derive(Debug, Clone)]
pub(crate) enum Factor {
    Kron {
        us: DMatrix<f64>,
        ls: DVector<f64>,
        ub: DMatrix<f64>,
        lb: DVector<f64>,
        noise: f64,
    },
    Dense {
        chol: Cholesky<f64, Dyn>,
    },
}

/// Factorization plus `α = C⁻¹(y − m)` and the resulting likelihood.
#[derive(Debug, Clone)]
pub(crate) struct Solved {
    pub factor: Factor,
    /// `α` reshaped per location: `weights[(a, o)]` sums α over observations
    /// of output `o` at location `a`.
    pub alpha_grid: DMatrix<f64>,
    pub lml: f64,
    pub jitter: f64,
}

pub(crate) fn spatial_kernel(design: &Design, hyp: &Hyperparameters) -> DMatrix<f64> {
    let l2 = hyp.kernel.length_scale * hyp.kernel.length_scale;
    let sf = hyp.kernel.signal_variance;
    design.sq_dist.map(|d2| sf * (-d2 / (2.0 * l2)).exp())
}

fn sym_eigen(m: DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let e = SymmetricEigen::new(m);
    (e.eigenvectors, e.eigenvalues.map(|v| v.max(0.0)))
}

struct KronParts {
    ks: DMatrix<f64>,
    us: DMatrix<f64>,
    ls: DVector<f64>,
    ub: DMatrix<f64>,
    lb: DVector<f64>,
    noise: f64,
    jitter: f64,
    /// `Λ[(i, p)] = λ_s[i]·λ_b[p] + noise`
    lam: DMatrix<f64>,
    alpha: DMatrix<f64>,
    lml: f64,
}

fn kron_parts(design: &Design, hyp: &Hyperparameters) -> Result<KronParts> {
    let gamma = design.locations.len();
    let m = design.n_outputs;
    let ks = spatial_kernel(design, hyp);
    let (us, ls) = sym_eigen(ks.clone());
    let (ub, lb) = sym_eigen(hyp.coreg.matrix());
    let base = DMatrix::from_fn(gamma, m, |i, p| ls[i] * lb[p]);
    let scale = base.max().max(1.0);

    let mut chosen = None;
    for &jit in &JITTERS {
        let noise = hyp.noise_variance + jit;
        if noise > 1e-12 * scale {
            chosen = Some((noise, jit));
            break;
        }
    }
    let (noise, jitter) = chosen.ok_or(Error::NotPositiveDefinite {
        jitter: *JITTERS.last().unwrap(),
    })?;
    let lam = base.add_scalar(noise);

    let r = DMatrix::from_row_slice(gamma, m, design.resid.as_slice());
    let rt = us.transpose() * &r * &ub;
    let scaled = rt.component_div(&lam);
    let quad = rt.component_mul(&scaled).sum();
    let logdet: f64 = lam.iter().map(|v| v.ln()).sum();
    let n = (gamma * m) as f64;
    let lml = -0.5 * quad - 0.5 * logdet - 0.5 * n * (2.0 * PI).ln();
    let alpha = &us * scaled * ub.transpose();
    Ok(KronParts {
        ks,
        us,
        ls,
        ub,
        lb,
        noise,
        jitter,
        lam,
        alpha,
        lml,
    })
}

struct DenseParts {
    ks: DMatrix<f64>,
    b: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    lml: f64,
}

fn dense_parts(design: &Design, hyp: &Hyperparameters) -> Result<DenseParts> {
    let n = design.obs_loc.len();
    let ks = spatial_kernel(design, hyp);
    let b = hyp.coreg.matrix();
    let base = DMatrix::from_fn(n, n, |t, u| {
        ks[(design.obs_loc[t], design.obs_loc[u])] * b[(design.obs_out[t], design.obs_out[u])]
    });
    for &jit in &JITTERS {
        let mut c = base.clone();
        for t in 0..n {
            c[(t, t)] += hyp.noise_variance + jit;
        }
        if let Some(chol) = c.cholesky() {
            let alpha = chol.solve(&design.resid);
            let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let lml = -0.5 * design.resid.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * PI).ln();
            if lml.is_finite() {
                return Ok(DenseParts {
                    ks,
                    b,
                    chol,
                    alpha,
                    jitter: jit,
                    lml,
                });
            }
        }
    }
    Err(Error::NotPositiveDefinite {
        jitter: *JITTERS.last().unwrap(),
    })
}

pub(crate) fn solve(design: &Design, hyp: &Hyperparameters, route: Route) -> Result<Solved> {
    match route {
        Route::Kronecker => {
            let p = kron_parts(design, hyp)?;
            Ok(Solved {
                alpha_grid: p.alpha,
                lml: p.lml,
                jitter: p.jitter,
                factor: Factor::Kron {
                    us: p.us,
                    ls: p.ls,
                    ub: p.ub,
                    lb: p.lb,
                    noise: p.noise,
                },
            })
        }
        Route::Dense => {
            let p = dense_parts(design, hyp)?;
            let mut grid = DMatrix::zeros(design.locations.len(), design.n_outputs);
            for (t, &a) in p.alpha.iter().enumerate() {
                grid[(design.obs_loc[t], design.obs_out[t])] += a;
            }
            Ok(Solved {
                alpha_grid: grid,
                lml: p.lml,
                jitter: p.jitter,
                factor: Factor::Dense { chol: p.chol },
            })
        }
    }
}

/// Log marginal likelihood and its gradient with respect to the packed parameters.
pub(crate) fn lml_and_grad(
    design: &Design,
    hyp: &Hyperparameters,
    route: Route,
) -> Result<(f64, Vec<f64>)> {
    let m = design.n_outputs;
    let a = &hyp.coreg.factor;
    let rank = a.ncols();
    let kappa = &hyp.coreg.diag;
    let l2 = hyp.kernel.length_scale * hyp.kernel.length_scale;

    let (lml, s, g_len, g_noise) = match route {
        Route::Kronecker => {
            let p = kron_parts(design, hyp)?;
            let inv_lam = p.lam.map(|v| 1.0 / v);
            // S = αᵀ K_s α − U_b diag(Σ_i λ_s[i]/Λ[i,p]) U_bᵀ
            let ks_alpha = &p.ks * &p.alpha;
            let mut s = p.alpha.transpose() * &ks_alpha;
            let t = inv_lam.transpose() * &p.ls;
            s -= &p.ub * DMatrix::from_diagonal(&t) * p.ub.transpose();

            let dks = p.ks.component_mul(&design.sq_dist) / l2;
            let b = hyp.coreg.matrix();
            let fit_term = (p.alpha.transpose() * &dks * &p.alpha).component_mul(&b).sum();
            let proj = &dks * &p.us;
            let diag = DVector::from_fn(p.us.ncols(), |i, _| p.us.column(i).dot(&proj.column(i)));
            let trace_term = (diag.transpose() * &inv_lam * &p.lb)[(0, 0)];
            let g_len = 0.5 * (fit_term - trace_term);

            let g_noise =
                0.5 * hyp.noise_variance * (p.alpha.norm_squared() - inv_lam.sum());
            (p.lml, s, g_len, g_noise)
        }
        Route::Dense => {
            let p = dense_parts(design, hyp)?;
            let n = design.obs_loc.len();
            let mut w = p.chol.inverse();
            w.neg_mut();
            w.ger(1.0, &p.alpha, &p.alpha, 1.0);
            let mut s = DMatrix::zeros(m, m);
            let mut g_len = 0.0;
            for t in 0..n {
                let (lt, ot) = (design.obs_loc[t], design.obs_out[t]);
                for u in 0..n {
                    let (lu, ou) = (design.obs_loc[u], design.obs_out[u]);
                    let wk = w[(t, u)] * p.ks[(lt, lu)];
                    s[(ot, ou)] += wk;
                    g_len += wk * p.b[(ot, ou)] * design.sq_dist[(lt, lu)];
                }
            }
            let g_len = 0.5 * g_len / l2;
            let g_noise = 0.5 * hyp.noise_variance * w.trace();
            (p.lml, s, g_len, g_noise)
        }
    };

    let mut grad = Vec::with_capacity(2 + m * rank + m);
    grad.push(g_len);
    grad.push(g_noise);
    let ga = &s * a;
    for p in 0..m {
        for q in 0..rank {
            grad.push(ga[(p, q)]);
        }
    }
    for p in 0..m {
        grad.push(0.5 * s[(p, p)] * kappa[p]);
    }
    Ok((lml, grad))
}
