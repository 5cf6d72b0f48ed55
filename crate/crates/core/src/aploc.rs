//! Access-point position estimates from predicted RSSI fields.
//!
//! Per AP a robot reports one coarse-to-fine argmax of the predicted mean
//! ("hierarchical" estimate) plus the strong local maxima of the coarse mean
//! field as alternatives. Each estimate carries a weight that falls with the
//! predictive standard deviation around it.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Point, ScalarField};
use crate::mogp::MogpModel;
use crate::ApId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub levels: usize,
    pub coarsest_grid: GridSpec,
    pub refinement_factor: usize,
    /// Half-width in cells of the square neighborhood used for maxima and
    /// local uncertainty.
    pub neighborhood_radius: usize,
}

impl HierarchyConfig {
    pub fn new(coarsest_grid: GridSpec) -> Self {
        Self {
            levels: 4,
            coarsest_grid,
            refinement_factor: 2,
            neighborhood_radius: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.coarsest_grid.validate()?;
        if self.levels == 0 {
            return Err(Error::InvalidParameter {
                name: "levels",
                reason: "must be >= 1".into(),
            });
        }
        if self.refinement_factor < 2 {
            return Err(Error::InvalidParameter {
                name: "refinement_factor",
                reason: "must be >= 2".into(),
            });
        }
        Ok(())
    }

    /// Cell size at the last level.
    pub fn finest_cell(&self) -> f64 {
        self.coarsest_grid.cell_size / (self.refinement_factor as f64).powi(self.levels as i32 - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateConfig {
    pub enabled: bool,
    /// Keep maxima whose mean is within this many dB of the hierarchical estimate.
    pub rssi_closeness: f64,
    pub max_candidates: usize,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rssi_closeness: 6.0,
            max_candidates: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightingConfig {
    pub epsilon: f64,
    pub alpha: f64,
    /// Multiply the local uncertainty by the number of retained maxima.
    pub scale_by_count: bool,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            alpha: 1.5,
            scale_by_count: true,
        }
    }
}

impl WeightingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                reason: "must be in (0, 1]".into(),
            });
        }
        if !(self.alpha >= 1.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    Hierarchical,
    LocalMaximum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApEstimate {
    pub ap_id: ApId,
    pub kind: EstimateKind,
    pub x: f64,
    pub y: f64,
    pub weight: f64,
    /// Local uncertainty `U` in dB.
    pub uncertainty: f64,
}

impl ApEstimate {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Outcome of the coarse-to-fine search.
#[derive(Debug, Clone)]
pub struct HierarchicalResult {
    pub position: Point,
    /// Mean value at the selected finest-level cell.
    pub mean: f64,
    /// The level-1 field the search started from.
    pub coarse_mean: ScalarField,
}

/// Next-level region: the 3×3 block of cells around `center`, `factor` times
/// finer, shifted to stay inside `bounds`.
fn refine(center: Point, cell: f64, factor: usize, bounds: ([f64; 2], [f64; 2])) -> Result<GridSpec> {
    let span = 3.0 * cell;
    let fine = cell / factor as f64;
    let n = 3 * factor;
    let origin = [0, 1].map(|k| {
        let c = [center.x, center.y][k];
        (c - 0.5 * span).min(bounds.1[k] - span).max(bounds.0[k])
    });
    GridSpec::new(origin, fine, n, n)
}

/// Coarse-to-fine argmax of an arbitrary field evaluator.
pub fn hierarchical_search<F>(mut eval: F, cfg: &HierarchyConfig) -> Result<HierarchicalResult>
where
    F: FnMut(&GridSpec) -> Result<ScalarField>,
{
    cfg.validate()?;
    let bounds = cfg.coarsest_grid.extent();
    let coarse = eval(&cfg.coarsest_grid)?;
    let mut field = coarse.clone();
    for _ in 1..cfg.levels {
        let (i, j) = field.argmax();
        let c = field.grid.center_unchecked(i, j);
        let next = refine(c, field.grid.cell_size, cfg.refinement_factor, bounds)?;
        field = eval(&next)?;
    }
    let (i, j) = field.argmax();
    Ok(HierarchicalResult {
        position: field.grid.center_unchecked(i, j),
        mean: field.get(i, j),
        coarse_mean: coarse,
    })
}

pub fn hierarchical_ap_position(model: &MogpModel, ap: &ApId, cfg: &HierarchyConfig) -> Result<Point> {
    let r = hierarchical_search(|g| Ok(model.predict_field(g, ap)?.0), cfg)?;
    Ok(r.position)
}

/// Cells whose value equals the maximum over their neighborhood. Connected
/// (8-neighbor) runs of equal-valued maxima collapse to the member nearest
/// their centroid. Returned in descending value, then index order.
pub fn find_maxima(field: &ScalarField, radius: usize) -> Vec<(usize, usize)> {
    let g = &field.grid;
    let is_max: Vec<bool> = (0..g.len())
        .map(|idx| {
            let (i, j) = g.cell_of_index(idx);
            let v = field.values[idx];
            g.neighborhood(i, j, radius).all(|(a, b)| field.get(a, b) <= v)
        })
        .collect();

    let mut seen = vec![false; g.len()];
    let mut out = Vec::new();
    for start in 0..g.len() {
        if !is_max[start] || seen[start] {
            continue;
        }
        let v = field.values[start];
        let mut members = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(idx) = queue.pop_front() {
            members.push(idx);
            let (i, j) = g.cell_of_index(idx);
            for (a, b) in g.neighborhood(i, j, 1) {
                let n = g.index(a, b);
                if !seen[n] && is_max[n] && field.values[n] == v {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        let k = members.len() as f64;
        let (cx, cy) = members.iter().fold((0.0, 0.0), |(x, y), &idx| {
            let (i, j) = g.cell_of_index(idx);
            (x + i as f64 / k, y + j as f64 / k)
        });
        let rep = *members
            .iter()
            .min_by(|&&p, &&q| {
                let d = |idx: usize| {
                    let (i, j) = g.cell_of_index(idx);
                    (i as f64 - cx).powi(2) + (j as f64 - cy).powi(2)
                };
                d(p).total_cmp(&d(q)).then(p.cmp(&q))
            })
            .expect("non-empty component");
        out.push(rep);
    }
    out.sort_by(|&p, &q| field.values[q].total_cmp(&field.values[p]).then(p.cmp(&q)));
    out.into_iter().map(|idx| g.cell_of_index(idx)).collect()
}

/// Local maxima of the coarse mean field that are close in RSSI to the
/// hierarchical estimate, excluding the cell that contains it.
pub fn detect_local_maxima(
    mean_field: &ScalarField,
    cfg: &HierarchyConfig,
    rssi_closeness: f64,
    hierarchical: &Point,
) -> Vec<Point> {
    let g = &mean_field.grid;
    let hier_cell = g.nearest_cell(hierarchical);
    let reference = mean_field.sample(hierarchical);
    find_maxima(mean_field, cfg.neighborhood_radius)
        .into_iter()
        .filter(|&(i, j)| (i, j) != hier_cell && mean_field.get(i, j) >= reference - rssi_closeness)
        .map(|(i, j)| g.center_unchecked(i, j))
        .collect()
}

/// `(count / |Ω|) · Σ_{u∈Ω(c)} sqrt(var(u))`.
pub fn local_uncertainty(var_field: &ScalarField, cell: (usize, usize), count: usize, cfg: &HierarchyConfig) -> Result<f64> {
    let g = &var_field.grid;
    if cell.0 >= g.width || cell.1 >= g.height {
        return Err(Error::CellOutOfRange {
            i: cell.0,
            j: cell.1,
            width: g.width,
            height: g.height,
        });
    }
    let hood: Vec<_> = g.neighborhood(cell.0, cell.1, cfg.neighborhood_radius).collect();
    let sum: f64 = hood.iter().map(|&(a, b)| var_field.get(a, b).max(0.0).sqrt()).sum();
    Ok(count as f64 * sum / hood.len() as f64)
}

pub fn candidate_weight(uncertainty: f64, cfg: &WeightingConfig) -> f64 {
    (1.0 / (1.0 + uncertainty)).max(cfg.epsilon).min(1.0)
}

pub fn hierarchical_weight(uncertainty: f64, cfg: &WeightingConfig) -> f64 {
    (cfg.alpha / (1.0 + uncertainty)).max(cfg.epsilon).min(1.0)
}

/// Weighted estimates for one AP: the hierarchical estimate first, then the
/// candidates in the given order.
pub fn weigh_candidates(
    ap_id: &ApId,
    hierarchical: Point,
    candidates: &[Point],
    var_field: &ScalarField,
    hcfg: &HierarchyConfig,
    wcfg: &WeightingConfig,
) -> Result<Vec<ApEstimate>> {
    wcfg.validate()?;
    let count = if wcfg.scale_by_count { candidates.len() + 1 } else { 1 };
    let g = &var_field.grid;
    let mut out = Vec::with_capacity(candidates.len() + 1);
    let u = local_uncertainty(var_field, g.nearest_cell(&hierarchical), count, hcfg)?;
    out.push(ApEstimate {
        ap_id: ap_id.clone(),
        kind: EstimateKind::Hierarchical,
        x: hierarchical.x,
        y: hierarchical.y,
        weight: hierarchical_weight(u, wcfg),
        uncertainty: u,
    });
    for c in candidates {
        let u = local_uncertainty(var_field, g.nearest_cell(c), count, hcfg)?;
        out.push(ApEstimate {
            ap_id: ap_id.clone(),
            kind: EstimateKind::LocalMaximum,
            x: c.x,
            y: c.y,
            weight: candidate_weight(u, wcfg),
            uncertainty: u,
        });
    }
    Ok(out)
}

/// Per-AP output of [`estimate_ap`], with the coarse fields kept for plots.
#[derive(Debug, Clone)]
pub struct ApFieldEstimate {
    pub estimates: Vec<ApEstimate>,
    pub mean: ScalarField,
    pub variance: ScalarField,
}

/// Full estimate for one AP from a fitted model.
pub fn estimate_ap(
    model: &MogpModel,
    ap: &ApId,
    hcfg: &HierarchyConfig,
    ccfg: &CandidateConfig,
    wcfg: &WeightingConfig,
) -> Result<ApFieldEstimate> {
    let (mean, variance) = model.predict_field(&hcfg.coarsest_grid, ap)?;
    let mut first = Some(mean.clone());
    let hier = hierarchical_search(
        |g| match first.take() {
            Some(f) => Ok(f),
            None => Ok(model.predict_field(g, ap)?.0),
        },
        hcfg,
    )?;
    let candidates = if ccfg.enabled {
        let mut c = detect_local_maxima(&mean, hcfg, ccfg.rssi_closeness, &hier.position);
        c.truncate(ccfg.max_candidates);
        c
    } else {
        Vec::new()
    };
    let estimates = weigh_candidates(ap, hier.position, &candidates, &variance, hcfg, wcfg)?;
    Ok(ApFieldEstimate {
        estimates,
        mean,
        variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize, cell: f64) -> GridSpec {
        GridSpec::new([0.0, 0.0], cell, w, h).unwrap()
    }

    fn field_from(g: GridSpec, f: impl Fn(&Point) -> f64) -> ScalarField {
        ScalarField::new(g, g.centers().iter().map(f).collect()).unwrap()
    }

    fn bump(center: Point, width: f64) -> impl Fn(&Point) -> f64 {
        move |p| (-(p - center).norm_squared() / (2.0 * width * width)).exp()
    }

    #[test]
    fn unimodal_field_located_within_finest_cell() {
        let cfg = HierarchyConfig::new(grid(20, 14, 0.5));
        for truth in [Point::new(3.17, 4.41), Point::new(0.05, 6.9), Point::new(7.77, 2.0)] {
            let f = bump(truth, 2.0);
            let r = hierarchical_search(|g| Ok(field_from(*g, &f)), &cfg).unwrap();
            let diag = cfg.finest_cell() * 2f64.sqrt();
            assert!((r.position - truth).norm() <= diag, "{truth} -> {}", r.position);
        }
    }

    #[test]
    fn single_level_is_coarse_argmax() {
        let mut cfg = HierarchyConfig::new(grid(10, 10, 1.0));
        cfg.levels = 1;
        let f = bump(Point::new(6.3, 2.2), 1.5);
        let coarse = field_from(cfg.coarsest_grid, &f);
        let r = hierarchical_search(|g| Ok(field_from(*g, &f)), &cfg).unwrap();
        let (i, j) = coarse.argmax();
        assert_eq!(r.position, cfg.coarsest_grid.cell_center(i, j).unwrap());
    }

    #[test]
    fn ties_pick_lowest_index() {
        let mut cfg = HierarchyConfig::new(grid(4, 4, 1.0));
        cfg.levels = 1;
        let mut v = vec![0.0; 16];
        v[6] = 1.0;
        v[9] = 1.0;
        let r = hierarchical_search(|g| ScalarField::new(*g, v.clone()), &cfg).unwrap();
        assert_eq!(r.position, Point::new(2.5, 1.5));
    }

    #[test]
    fn concave_peak_has_one_maximum() {
        let f = field_from(grid(15, 12, 0.5), |p| -(p.x - 3.1).powi(2) - 2.0 * (p.y - 2.2).powi(2));
        assert_eq!(find_maxima(&f, 1).len(), 1);
    }

    #[test]
    fn bimodal_mixture_has_two_maxima() {
        let a = bump(Point::new(2.1, 2.3), 0.8);
        let b = bump(Point::new(8.1, 5.3), 0.8);
        let f = field_from(grid(20, 14, 0.5), |p| a(p) + b(p));
        let m = find_maxima(&f, 1);
        assert_eq!(m.len(), 2);
        let cfg = HierarchyConfig::new(f.grid);
        let hier = Point::new(2.25, 2.25);
        let cands = detect_local_maxima(&f, &cfg, 6.0, &hier);
        assert_eq!(cands, vec![Point::new(8.25, 5.25)]);
    }

    #[test]
    fn constant_field_yields_one_plateau_representative() {
        let f = ScalarField::constant(grid(5, 3, 1.0), -60.0);
        assert_eq!(find_maxima(&f, 1), vec![(2, 1)]);
    }

    #[test]
    fn separate_plateaus_each_represented() {
        // the zero band between the ridges is itself a plateau of per-cell
        // maxima where its neighborhood does not reach a ridge
        let mut v = vec![0.0; 7 * 3];
        for j in 0..3 {
            v[j * 7] = 5.0;
            v[j * 7 + 6] = 5.0;
        }
        let f = ScalarField::new(grid(7, 3, 1.0), v).unwrap();
        assert_eq!(find_maxima(&f, 1), vec![(0, 1), (6, 1), (3, 1)]);
    }

    #[test]
    fn closeness_filter_drops_weak_maxima() {
        let a = bump(Point::new(2.1, 2.3), 0.8);
        let b = bump(Point::new(8.1, 5.3), 0.8);
        let f = field_from(grid(20, 14, 0.5), |p| -40.0 + 10.0 * a(p) + 2.0 * b(p));
        let cfg = HierarchyConfig::new(f.grid);
        let hier = Point::new(2.25, 2.25);
        assert!(detect_local_maxima(&f, &cfg, 6.0, &hier).is_empty());
        assert_eq!(detect_local_maxima(&f, &cfg, 9.0, &hier).len(), 1);
    }

    #[test]
    fn uncertainty_examples() {
        let cfg = HierarchyConfig::new(grid(6, 6, 0.5));
        let zero = ScalarField::constant(cfg.coarsest_grid, 0.0);
        assert_eq!(local_uncertainty(&zero, (2, 2), 1, &cfg).unwrap(), 0.0);
        let uni = ScalarField::constant(cfg.coarsest_grid, 2.25);
        assert_abs_diff_eq!(local_uncertainty(&uni, (0, 0), 1, &cfg).unwrap(), 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(local_uncertainty(&uni, (3, 3), 3, &cfg).unwrap(), 4.5, epsilon = 1e-12);
        assert!(local_uncertainty(&uni, (6, 0), 1, &cfg).is_err());
    }

    #[test]
    fn weight_examples() {
        let w = WeightingConfig::default();
        assert_eq!(candidate_weight(0.0, &w), 1.0);
        assert_eq!(hierarchical_weight(0.0, &w), 1.0);
        assert_eq!(candidate_weight(1e12, &w), w.epsilon);
        assert_eq!(hierarchical_weight(f64::INFINITY, &w), w.epsilon);
        // α/(1+U) reaches 1 at U = α - 1
        assert_abs_diff_eq!(hierarchical_weight(0.5, &w), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hierarchical_weight(2.0, &w), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn weigh_candidates_orders_and_scales() {
        let cfg = HierarchyConfig::new(grid(6, 6, 1.0));
        let var = ScalarField::constant(cfg.coarsest_grid, 1.0);
        let w = WeightingConfig::default();
        let ap = ApId::new("x");
        let est = weigh_candidates(&ap, Point::new(0.5, 0.5), &[Point::new(4.5, 4.5)], &var, &cfg, &w).unwrap();
        assert_eq!(est[0].kind, EstimateKind::Hierarchical);
        assert_eq!(est[1].kind, EstimateKind::LocalMaximum);
        assert_abs_diff_eq!(est[0].uncertainty, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est[1].weight, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est[0].weight, 0.5, epsilon = 1e-12);
        let unscaled = WeightingConfig {
            scale_by_count: false,
            ..w
        };
        let est = weigh_candidates(&ap, Point::new(0.5, 0.5), &[Point::new(4.5, 4.5)], &var, &cfg, &unscaled).unwrap();
        assert_abs_diff_eq!(est[1].uncertainty, 1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn weights_bounded_and_ordered(u in 0.0f64..1e6, eps in 1e-6f64..0.5, alpha in 1.0f64..5.0) {
            let w = WeightingConfig { epsilon: eps, alpha, scale_by_count: true };
            let c = candidate_weight(u, &w);
            let h = hierarchical_weight(u, &w);
            prop_assert!(c >= eps && c <= 1.0);
            prop_assert!(h >= eps && h <= 1.0);
            prop_assert!(h >= c);
        }

        #[test]
        fn weight_monotone_in_variance(v in 0.0f64..100.0, dv in 0.0f64..100.0) {
            let cfg = HierarchyConfig::new(grid(5, 5, 1.0));
            let w = WeightingConfig::default();
            let lo = ScalarField::constant(cfg.coarsest_grid, v);
            let hi = ScalarField::constant(cfg.coarsest_grid, v + dv);
            let ul = local_uncertainty(&lo, (2, 2), 1, &cfg).unwrap();
            let uh = local_uncertainty(&hi, (2, 2), 1, &cfg).unwrap();
            prop_assert!(candidate_weight(uh, &w) <= candidate_weight(ul, &w));
        }

        #[test]
        fn maxima_match_brute_force_without_ties(
            vals in proptest::collection::hash_set(-10_000i32..10_000, 48),
            radius in 1usize..3,
        ) {
            let g = grid(8, 6, 0.5);
            let f = ScalarField::new(g, vals.iter().map(|&v| v as f64).collect()).unwrap();
            let mut got = find_maxima(&f, radius);
            got.sort_by_key(|&(i, j)| (j, i));
            prop_assert_eq!(got, crate::oracle::brute_force_maxima(&f, radius));
        }

        #[test]
        fn maxima_invariant_under_offset(
            vals in proptest::collection::vec(-5i32..5, 36),
            shift in -100i32..100,
        ) {
            let g = grid(6, 6, 1.0);
            let f = ScalarField::new(g, vals.iter().map(|&v| v as f64).collect()).unwrap();
            let s = f.map(|v| v + shift as f64);
            prop_assert_eq!(find_maxima(&f, 1), find_maxima(&s, 1));
            let cfg = HierarchyConfig::new(g);
            let hier = Point::new(2.5, 2.5);
            prop_assert_eq!(
                detect_local_maxima(&f, &cfg, 3.0, &hier),
                detect_local_maxima(&s, &cfg, 3.0, &hier)
            );
        }
    }
}
