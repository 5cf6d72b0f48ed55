//! Ground-truth RSSI synthesis.
//!
//! Each access point radiates according to a log-distance path-loss law with
//! a frozen, spatially correlated shadowing realization and i.i.d. per-query
//! small-scale fading:
//!
//! ```text
//! RSSI(x) = P0 - 10·ζ·log10(max(d, d_min) / d0) + F_large(x) + F_small
//! ```
//!
//! `d_min` only guards the singularity at the AP itself; set it to `d0` for a
//! field that is flat inside the reference disk.
//!
//! Measurements add zero-mean Gaussian noise of standard deviation Δ on top.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Point, ScalarField};
use crate::rng::{stream, stream_rng, SimRng};
use crate::ApId;

pub const WORLD_FORMAT: &str = "mgprl-world";
pub const WORLD_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossParams {
    pub ref_power_dbm: f64,
    pub ref_distance: f64,
    /// Distances below this are clamped (m).
    pub min_distance: f64,
    pub exponent: f64,
    /// Standard deviation of the shadowing field (dB).
    pub shadowing_sigma: f64,
    pub shadowing_corr_length: f64,
    /// Standard deviation of per-query fading (dB).
    pub fading_sigma: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self {
            ref_power_dbm: -20.0,
            ref_distance: 1.0,
            min_distance: 0.1,
            exponent: 3.0,
            shadowing_sigma: 6.0,
            shadowing_corr_length: 3.0,
            fading_sigma: 1.0,
        }
    }
}

impl PathLossParams {
    /// Deterministic log-distance component only.
    pub fn free_space(ref_power_dbm: f64, ref_distance: f64, exponent: f64) -> Self {
        Self {
            ref_power_dbm,
            ref_distance,
            min_distance: 0.1 * ref_distance,
            exponent,
            shadowing_sigma: 0.0,
            shadowing_corr_length: 3.0,
            fading_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ref_distance > 0.0) {
            return Err(Error::InvalidParameter {
                name: "ref_distance",
                reason: format!("must be > 0, got {}", self.ref_distance),
            });
        }
        if !(self.min_distance > 0.0) {
            return Err(Error::InvalidParameter {
                name: "min_distance",
                reason: format!("must be > 0, got {}", self.min_distance),
            });
        }
        if !(2.0..=4.0).contains(&self.exponent) {
            return Err(Error::InvalidParameter {
                name: "exponent",
                reason: format!("must lie in [2, 4], got {}", self.exponent),
            });
        }
        for (name, v) in [
            ("shadowing_sigma", self.shadowing_sigma),
            ("fading_sigma", self.fading_sigma),
            ("shadowing_corr_length", self.shadowing_corr_length),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be >= 0, got {v}"),
                });
            }
        }
        if !self.ref_power_dbm.is_finite() {
            return Err(Error::NonFinite("ref_power_dbm"));
        }
        Ok(())
    }

    /// Mean path-loss RSSI at distance `d`, clamped below at `min_distance`.
    pub fn rssi_at_distance(&self, d: f64) -> f64 {
        let d = d.max(self.min_distance);
        self.ref_power_dbm - 10.0 * self.exponent * (d / self.ref_distance).log10()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssiSample {
    pub location: [f64; 2],
    pub ap_id: ApId,
    pub value_dbm: f64,
}

impl RssiSample {
    pub fn point(&self) -> Point {
        Point::new(self.location[0], self.location[1])
    }
}

#[derive(Debug, Clone)]
pub struct ApGroundTruth {
    pub ap_id: ApId,
    pub position: Point,
    pub params: PathLossParams,
    pub shadowing: ScalarField,
}

impl ApGroundTruth {
    /// Realize this AP's shadowing once on `grid`.
    pub fn new(
        ap_id: ApId,
        position: Point,
        params: PathLossParams,
        grid: GridSpec,
        rng: &mut SimRng,
    ) -> Result<Self> {
        params.validate()?;
        let shadowing = realize_shadowing(
            &grid,
            params.shadowing_sigma,
            params.shadowing_corr_length,
            rng,
        )?;
        Ok(Self {
            ap_id,
            position,
            params,
            shadowing,
        })
    }

    /// Path loss plus frozen shadowing; the noiseless ground truth.
    pub fn mean_rssi(&self, x: &Point) -> f64 {
        let d = (x - self.position).norm();
        self.params.rssi_at_distance(d) + self.shadowing.sample(x)
    }
}

pub fn mean_rssi(ap: &ApGroundTruth, x: &Point) -> f64 {
    ap.mean_rssi(x)
}

/// One noisy measurement: ground truth + fading + measurement noise.
///
/// Both normal variates are always drawn so that the stream position does
/// not depend on the configured sigmas.
pub fn sample_measurement(
    ap: &ApGroundTruth,
    x: &Point,
    noise_sigma: f64,
    rng: &mut SimRng,
) -> Result<RssiSample> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "noise_sigma",
            reason: format!("must be >= 0, got {noise_sigma}"),
        });
    }
    if !(x.x.is_finite() && x.y.is_finite()) {
        return Err(Error::NonFinite("measurement location"));
    }
    let fading: f64 = rng.sample(StandardNormal);
    let noise: f64 = rng.sample(StandardNormal);
    Ok(RssiSample {
        location: [x.x, x.y],
        ap_id: ap.ap_id.clone(),
        value_dbm: ap.mean_rssi(x) + ap.params.fading_sigma * fading + noise_sigma * noise,
    })
}

/// Factor `F` with `F·Fᵀ = K` for the 1-D squared-exponential correlation
/// matrix over `coords`. Eigen-based so rank-deficient (long length scale)
/// matrices are handled exactly.
fn se_correlation_factor(coords: &[f64], corr_length: f64) -> DMatrix<f64> {
    let n = coords.len();
    let k = DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            1.0
        } else if corr_length == 0.0 {
            0.0
        } else {
            let d = coords[a] - coords[b];
            (-d * d / (2.0 * corr_length * corr_length)).exp()
        }
    });
    let eig = SymmetricEigen::new(k);
    let mut f = eig.eigenvectors;
    for (c, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        f.column_mut(c).scale_mut(s);
    }
    f
}

/// Zero-mean Gaussian field with squared-exponential spatial correlation.
///
/// The 2-D SE kernel on a regular grid separates into `K_x ⊗ K_y`, so the
/// field is `σ · F_y · Z · F_xᵀ` with `Z` i.i.d. standard normal.
pub fn realize_shadowing(
    grid: &GridSpec,
    sigma: f64,
    corr_length: f64,
    rng: &mut SimRng,
) -> Result<ScalarField> {
    grid.validate()?;
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "shadowing_sigma",
            reason: format!("must be >= 0, got {sigma}"),
        });
    }
    if !(corr_length >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "shadowing_corr_length",
            reason: format!("must be >= 0, got {corr_length}"),
        });
    }
    if sigma == 0.0 {
        return Ok(ScalarField::constant(*grid, 0.0));
    }
    let xs: Vec<f64> = (0..grid.width)
        .map(|i| (i as f64 + 0.5) * grid.cell_size)
        .collect();
    let ys: Vec<f64> = (0..grid.height)
        .map(|j| (j as f64 + 0.5) * grid.cell_size)
        .collect();
    let fx = se_correlation_factor(&xs, corr_length);
    let fy = se_correlation_factor(&ys, corr_length);
    let z = DMatrix::from_fn(grid.height, grid.width, |_, _| rng.sample::<f64, _>(StandardNormal));
    let field = &fy * z * fx.transpose() * sigma;
    let values = (0..grid.height)
        .flat_map(|j| (0..grid.width).map(move |i| (i, j)))
        .map(|(i, j)| field[(j, i)])
        .collect();
    ScalarField::new(*grid, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApSpec {
    pub id: ApId,
    pub x: f64,
    pub y: f64,
}

/// On-disk world description (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub bounds_min: [f64; 2],
    pub bounds_max: [f64; 2],
    /// Resolution of the shadowing realization grid (m).
    #[serde(default = "default_shadow_resolution")]
    pub shadow_resolution: f64,
    /// Pins the shadowing realization; otherwise derived from the episode seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub path_loss: PathLossParams,
    pub aps: Vec<ApSpec>,
}

fn default_shadow_resolution() -> f64 {
    0.5
}

impl WorldConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: WorldConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("world config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != WORLD_FORMAT {
            return Err(Error::Config(format!(
                "format: expected `{WORLD_FORMAT}`, got `{}`",
                self.format
            )));
        }
        if self.version != WORLD_VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: WORLD_VERSION,
            });
        }
        if !(self.bounds_max[0] > self.bounds_min[0] && self.bounds_max[1] > self.bounds_min[1]) {
            return Err(Error::Config("bounds_max must exceed bounds_min".into()));
        }
        if !(self.shadow_resolution > 0.0) {
            return Err(Error::Config("shadow_resolution must be > 0".into()));
        }
        self.path_loss
            .validate()
            .map_err(|e| Error::Config(format!("path_loss: {e}")))?;
        let mut ids = std::collections::BTreeSet::new();
        for (k, ap) in self.aps.iter().enumerate() {
            if !ids.insert(ap.id.clone()) {
                return Err(Error::Config(format!("aps[{k}].id: duplicate `{}`", ap.id)));
            }
            if !(ap.x.is_finite() && ap.y.is_finite()) {
                return Err(Error::Config(format!("aps[{k}]: non-finite position")));
            }
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.bounds_max[0] - self.bounds_min[0]) * (self.bounds_max[1] - self.bounds_min[1])
    }

    /// A ~70 m² house-like floor plan with four APs.
    pub fn house() -> Self {
        Self {
            format: WORLD_FORMAT.into(),
            version: WORLD_VERSION,
            name: "house".into(),
            bounds_min: [0.0, 0.0],
            bounds_max: [10.0, 7.0],
            shadow_resolution: 0.5,
            seed: None,
            path_loss: PathLossParams::default(),
            aps: vec![
                ApSpec { id: "ap1".into(), x: 1.6, y: 1.4 },
                ApSpec { id: "ap2".into(), x: 8.3, y: 1.1 },
                ApSpec { id: "ap3".into(), x: 8.6, y: 5.7 },
                ApSpec { id: "ap4".into(), x: 3.1, y: 5.9 },
            ],
        }
    }

    /// A ~100 m² bookstore-like floor plan with six APs.
    pub fn bookstore() -> Self {
        Self {
            format: WORLD_FORMAT.into(),
            version: WORLD_VERSION,
            name: "bookstore".into(),
            bounds_min: [0.0, 0.0],
            bounds_max: [12.5, 8.0],
            shadow_resolution: 0.5,
            seed: None,
            path_loss: PathLossParams::default(),
            aps: vec![
                ApSpec { id: "ap1".into(), x: 1.5, y: 1.2 },
                ApSpec { id: "ap2".into(), x: 6.4, y: 0.9 },
                ApSpec { id: "ap3".into(), x: 11.2, y: 1.6 },
                ApSpec { id: "ap4".into(), x: 10.9, y: 6.8 },
                ApSpec { id: "ap5".into(), x: 5.8, y: 7.1 },
                ApSpec { id: "ap6".into(), x: 1.3, y: 6.3 },
            ],
        }
    }
}

/// Immutable ground truth for one episode.
#[derive(Debug, Clone)]
pub struct World {
    pub name: String,
    pub bounds_min: Point,
    pub bounds_max: Point,
    pub aps: Vec<ApGroundTruth>,
}

impl World {
    /// Realize shadowing for every AP. `seed` is used unless the config pins one.
    pub fn build(cfg: &WorldConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed.unwrap_or(seed);
        // pad so bilinear lookups at the boundary stay inside the realization
        let pad = cfg.shadow_resolution;
        let grid = GridSpec::covering(
            [cfg.bounds_min[0] - pad, cfg.bounds_min[1] - pad],
            [cfg.bounds_max[0] + pad, cfg.bounds_max[1] + pad],
            cfg.shadow_resolution,
        )?;
        let aps = cfg
            .aps
            .iter()
            .enumerate()
            .map(|(k, spec)| {
                let mut rng = stream_rng(seed, stream::SHADOWING, k as u64);
                ApGroundTruth::new(
                    spec.id.clone(),
                    Point::new(spec.x, spec.y),
                    cfg.path_loss,
                    grid,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: cfg.name.clone(),
            bounds_min: Point::new(cfg.bounds_min[0], cfg.bounds_min[1]),
            bounds_max: Point::new(cfg.bounds_max[0], cfg.bounds_max[1]),
            aps,
        })
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.bounds_min.x
            && p.x <= self.bounds_max.x
            && p.y >= self.bounds_min.y
            && p.y <= self.bounds_max.y
    }

    pub fn ap(&self, id: &ApId) -> Option<&ApGroundTruth> {
        self.aps.iter().find(|a| &a.ap_id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn quiet_ap(pos: Point) -> ApGroundTruth {
        let grid = GridSpec::new([-200.0, -200.0], 50.0, 9, 9).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        ApGroundTruth::new(
            "a".into(),
            pos,
            PathLossParams::free_space(-20.0, 1.0, 3.0),
            grid,
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn path_loss_reference_values() {
        let ap = quiet_ap(Point::origin());
        assert_abs_diff_eq!(mean_rssi(&ap, &Point::new(1.0, 0.0)), -20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mean_rssi(&ap, &Point::new(0.0, 10.0)), -50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mean_rssi(&ap, &Point::new(60.0, 80.0)), -80.0, epsilon = 1e-9);
    }

    #[test]
    fn distance_clamped_at_minimum() {
        let mut ap = quiet_ap(Point::origin());
        // −20 − 30·log10(0.1) = 10 dBm at and inside the default 0.1 m clamp
        assert_abs_diff_eq!(mean_rssi(&ap, &Point::origin()), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mean_rssi(&ap, &Point::new(0.06, 0.08)), 10.0, epsilon = 1e-12);
        assert!(mean_rssi(&ap, &Point::new(0.5, 0.0)) > -20.0);

        ap.params.min_distance = ap.params.ref_distance;
        assert_eq!(mean_rssi(&ap, &Point::origin()), -20.0);
        assert_eq!(mean_rssi(&ap, &Point::new(0.3, 0.2)), -20.0);
    }

    #[test]
    fn path_loss_strictly_decreasing_beyond_reference() {
        let ap = quiet_ap(Point::origin());
        let mut prev = f64::INFINITY;
        for k in 0..200 {
            let d = 1.0 + 0.25 * k as f64;
            let v = mean_rssi(&ap, &Point::new(d, 0.0));
            if k > 0 {
                assert!(v < prev);
            }
            prev = v;
        }
    }

    #[test]
    fn zero_noise_measurement_is_the_mean() {
        let ap = quiet_ap(Point::new(2.0, 3.0));
        let mut rng = SimRng::seed_from_u64(4);
        let x = Point::new(5.0, 1.0);
        let s = sample_measurement(&ap, &x, 0.0, &mut rng).unwrap();
        assert_eq!(s.value_dbm, mean_rssi(&ap, &x));
    }

    #[test]
    fn measurement_noise_std() {
        let ap = quiet_ap(Point::origin());
        let mut rng = SimRng::seed_from_u64(11);
        let x = Point::new(3.0, 0.0);
        let mu = mean_rssi(&ap, &x);
        let n = 10_000;
        let vals: Vec<f64> = (0..n)
            .map(|_| sample_measurement(&ap, &x, 1.0, &mut rng).unwrap().value_dbm - mu)
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((0.9..=1.1).contains(&std), "std {std}");
    }

    #[test]
    fn measurements_are_deterministic_per_seed() {
        let ap = quiet_ap(Point::origin());
        let x = Point::new(2.0, 2.0);
        let a = sample_measurement(&ap, &x, 2.0, &mut SimRng::seed_from_u64(9)).unwrap();
        let b = sample_measurement(&ap, &x, 2.0, &mut SimRng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn negative_noise_rejected() {
        let ap = quiet_ap(Point::origin());
        let mut rng = SimRng::seed_from_u64(0);
        assert!(sample_measurement(&ap, &Point::origin(), -1.0, &mut rng).is_err());
    }

    #[test]
    fn zero_sigma_shadowing_is_zero() {
        let g = GridSpec::new([0.0, 0.0], 1.0, 10, 10).unwrap();
        let f = realize_shadowing(&g, 0.0, 3.0, &mut SimRng::seed_from_u64(1)).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shadowing_pooled_std_matches_sigma() {
        let g = GridSpec::new([0.0, 0.0], 0.5, 20, 20).unwrap();
        let mut rng = SimRng::seed_from_u64(2024);
        let mut sq = 0.0;
        let mut count = 0usize;
        for _ in 0..10 {
            let f = realize_shadowing(&g, 6.0, 3.0, &mut rng).unwrap();
            sq += f.values.iter().map(|v| v * v).sum::<f64>();
            count += f.values.len();
        }
        let std = (sq / count as f64).sqrt();
        assert!((4.8..=7.2).contains(&std), "pooled std {std}");
    }

    #[test]
    fn long_correlation_gives_flat_field() {
        let g = GridSpec::new([0.0, 0.0], 0.5, 20, 20).unwrap();
        let f = realize_shadowing(&g, 6.0, 1e6, &mut SimRng::seed_from_u64(3)).unwrap();
        let mean = f.values.iter().sum::<f64>() / f.values.len() as f64;
        let var = f.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f.values.len() as f64;
        assert!(var < 1e-6, "within-realization variance {var}");
    }

    #[test]
    fn shadowing_is_frozen_per_ap() {
        let world = World::build(&WorldConfig::house(), 5).unwrap();
        let x = Point::new(4.2, 3.3);
        let ap = &world.aps[0];
        assert_eq!(ap.mean_rssi(&x), ap.mean_rssi(&x));
        let again = World::build(&WorldConfig::house(), 5).unwrap();
        assert_eq!(again.aps[0].mean_rssi(&x), ap.mean_rssi(&x));
    }

    #[test]
    fn world_config_round_trip_and_validation() {
        let cfg = WorldConfig::house();
        let back = WorldConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert!((cfg.area() - 70.0).abs() < 1e-9);

        let mut dup = cfg.clone();
        dup.aps[1].id = "ap1".into();
        assert!(dup.validate().is_err());

        let mut bad = cfg;
        bad.path_loss.exponent = 5.0;
        assert!(bad.validate().is_err());
    }
}
