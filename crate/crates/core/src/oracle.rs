//! Brute-force reference computations used by the test suites and the
//! `selftest` command.
//!
//! These deliberately avoid every shortcut taken by the production code: the
//! GP reference materializes the full Kronecker product `K_s ⊗ B`, selects
//! the observed rows/columns and solves with an LU decomposition; the
//! alignment reference minimizes over a dense angle sweep; the maxima
//! reference compares every cell against every other cell in its window.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::geometry::{Point, ScalarField, Transform2D};
use crate::mogp::Hyperparameters;
use crate::rfsim::RssiSample;
use crate::ApId;

struct Stacked {
    /// full Kronecker covariance restricted to observed (loc, out) pairs, plus noise
    cov: DMatrix<f64>,
    resid: DVector<f64>,
    locations: Vec<Point>,
    rows: Vec<usize>,
    means: Vec<f64>,
}

fn stack(ap_ids: &[ApId], samples: &[RssiSample], hyp: &Hyperparameters) -> Stacked {
    let m = ap_ids.len();
    let mut locations: Vec<Point> = Vec::new();
    let mut pairs = Vec::new();
    for s in samples {
        let p = s.point();
        let loc = match locations.iter().position(|q| *q == p) {
            Some(k) => k,
            None => {
                locations.push(p);
                locations.len() - 1
            }
        };
        let out = ap_ids.iter().position(|a| *a == s.ap_id).expect("known ap");
        pairs.push((loc, out, s.value_dbm));
    }
    let mut means = vec![0.0; m];
    for o in 0..m {
        let vals: Vec<f64> = pairs.iter().filter(|p| p.1 == o).map(|p| p.2).collect();
        means[o] = vals.iter().sum::<f64>() / vals.len() as f64;
    }
    let g = locations.len();
    let ks = DMatrix::from_fn(g, g, |a, b| hyp.kernel.eval(&locations[a], &locations[b]));
    let full = ks.kronecker(&hyp.coreg.matrix());
    let rows: Vec<usize> = pairs.iter().map(|&(l, o, _)| l * m + o).collect();
    let n = rows.len();
    let mut cov = DMatrix::from_fn(n, n, |t, u| full[(rows[t], rows[u])]);
    for t in 0..n {
        cov[(t, t)] += hyp.noise_variance;
    }
    let resid = DVector::from_iterator(n, pairs.iter().map(|&(_, o, v)| v - means[o]));
    Stacked {
        cov,
        resid,
        locations,
        rows,
        means,
    }
}

/// Posterior mean and latent variance of output `j` at `queries`.
pub fn dense_posterior(
    ap_ids: &[ApId],
    samples: &[RssiSample],
    hyp: &Hyperparameters,
    queries: &[Point],
    j: usize,
) -> (Vec<f64>, Vec<f64>) {
    let st = stack(ap_ids, samples, hyp);
    let b = hyp.coreg.matrix();
    let lu = st.cov.clone().lu();
    let alpha = lu.solve(&st.resid).expect("nonsingular covariance");
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for q in queries {
        // k* = K_s(q, X) ⊗ B[:, j], restricted to observed rows
        let kq = DVector::from_iterator(
            st.locations.len(),
            st.locations.iter().map(|x| hyp.kernel.eval(q, x)),
        );
        let full = kq.kronecker(&b.column(j).into_owned());
        let kstar = DVector::from_iterator(st.rows.len(), st.rows.iter().map(|&r| full[r]));
        let v = lu.solve(&kstar).expect("nonsingular covariance");
        means.push(st.means[j] + kstar.dot(&alpha));
        vars.push(hyp.kernel.signal_variance * b[(j, j)] - kstar.dot(&v));
    }
    (means, vars)
}

/// Gaussian log density of the stacked, centered observations.
pub fn dense_log_likelihood(ap_ids: &[ApId], samples: &[RssiSample], hyp: &Hyperparameters) -> f64 {
    let st = stack(ap_ids, samples, hyp);
    let n = st.resid.len() as f64;
    let lu = st.cov.clone().lu();
    let logdet: f64 = lu.u().diagonal().iter().map(|d| d.abs().ln()).sum();
    let quad = st.resid.dot(&lu.solve(&st.resid).expect("nonsingular covariance"));
    -0.5 * quad - 0.5 * logdet - 0.5 * n * (2.0 * PI).ln()
}

/// Weighted rigid fit by sweeping the rotation angle and refining with
/// golden-section search; translation follows from the weighted centroids.
pub fn brute_force_rigid(src: &[Point], dst: &[Point], w: &[f64]) -> (Transform2D, f64) {
    let wsum: f64 = w.iter().sum();
    let cs = src.iter().zip(w).fold(nalgebra::Vector2::zeros(), |a, (p, &wi)| a + p.coords * wi) / wsum;
    let cd = dst.iter().zip(w).fold(nalgebra::Vector2::zeros(), |a, (p, &wi)| a + p.coords * wi) / wsum;
    let cost = |theta: f64| {
        let t = Transform2D::new(theta, cd - nalgebra::Rotation2::new(theta) * cs);
        src.iter()
            .zip(dst)
            .zip(w)
            .map(|((s, d), &wi)| wi * (d - t.apply(s)).norm_squared())
            .sum::<f64>()
    };
    let steps = 3600;
    let mut best = (0.0, f64::INFINITY);
    for k in 0..steps {
        let th = -PI + 2.0 * PI * k as f64 / steps as f64;
        let c = cost(th);
        if c < best.1 {
            best = (th, c);
        }
    }
    let (mut lo, mut hi) = (best.0 - 2.0 * PI / steps as f64, best.0 + 2.0 * PI / steps as f64);
    let gr = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - gr * (hi - lo);
        let b = lo + gr * (hi - lo);
        if cost(a) < cost(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let th = 0.5 * (lo + hi);
    (
        Transform2D::new(th, cd - nalgebra::Rotation2::new(th) * cs),
        cost(th),
    )
}

/// Cells strictly greater than every other cell within Chebyshev distance
/// `radius`, in row-major order. Only meaningful for fields without ties.
pub fn brute_force_maxima(field: &ScalarField, radius: usize) -> Vec<(usize, usize)> {
    let g = &field.grid;
    let r = radius as i64;
    let mut out = Vec::new();
    for j in 0..g.height as i64 {
        for i in 0..g.width as i64 {
            let v = field.get(i as usize, j as usize);
            let mut best = true;
            for b in (j - r)..=(j + r) {
                for a in (i - r)..=(i + r) {
                    let inside = a >= 0 && b >= 0 && a < g.width as i64 && b < g.height as i64;
                    if inside && (a, b) != (i, j) && field.get(a as usize, b as usize) >= v {
                        best = false;
                    }
                }
            }
            if best {
                out.push((i as usize, j as usize));
            }
        }
    }
    out
}
