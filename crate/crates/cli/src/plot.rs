//! Static images from an episode bundle. Everything is rendered in memory
//! first, so a bundle that fails to load leaves no partial output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mgprl::aploc::EstimateKind;
use mgprl::harness::metrics::{read_csv, write_csv};
use mgprl::harness::{FieldSnapshot, HullSnapshot, MetricsRecord, Summary};
use mgprl::ScalarField;
use serde::{Deserialize, Serialize};

use crate::render::{colormap, series_color, Canvas, BLACK, GRAY, LIGHT, WHITE};

pub struct Bundle {
    pub summary: Summary,
    pub metrics: Vec<MetricsRecord>,
    pub fields: Vec<FieldSnapshot>,
    pub hulls: Vec<HullSnapshot>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    v.sort();
    Ok(v)
}

pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    if !dir.is_dir() {
        bail!("{}: not a bundle directory", dir.display());
    }
    let summary_path = dir.join("summary.json");
    let summary: Summary = serde_json::from_str(
        &std::fs::read_to_string(&summary_path).with_context(|| format!("{}: missing summary.json", dir.display()))?,
    )
    .with_context(|| format!("{}", summary_path.display()))?;
    let metrics: Vec<MetricsRecord> =
        read_csv(dir.join("metrics.csv")).with_context(|| format!("{}: unreadable metrics.csv", dir.display()))?;
    if metrics.is_empty() {
        bail!("{}: metrics.csv has no rows", dir.display());
    }

    let mut fields = Vec::new();
    let fields_dir = dir.join("fields");
    if fields_dir.is_dir() {
        for cycle_dir in sorted_entries(&fields_dir)?.into_iter().filter(|p| p.is_dir()) {
            for f in sorted_entries(&cycle_dir)?.into_iter().filter(|p| p.extension().is_some_and(|e| e == "json")) {
                let text = std::fs::read_to_string(&f)?;
                fields.push(serde_json::from_str::<FieldSnapshot>(&text).with_context(|| format!("{}", f.display()))?);
            }
        }
    }
    if fields.is_empty() {
        bail!("{}: no field snapshots under fields/", dir.display());
    }

    let mut hulls = Vec::new();
    let hulls_dir = dir.join("hulls");
    if hulls_dir.is_dir() {
        for f in sorted_entries(&hulls_dir)?.into_iter().filter(|p| p.extension().is_some_and(|e| e == "json")) {
            let text = std::fs::read_to_string(&f)?;
            hulls.extend(serde_json::from_str::<Vec<HullSnapshot>>(&text).with_context(|| format!("{}", f.display()))?);
        }
    }
    Ok(Bundle {
        summary,
        metrics,
        fields,
        hulls,
    })
}

/// Per-cycle means over robots, the data behind the curve images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub cycle: usize,
    pub waypoints: f64,
    pub ale_ap: Option<f64>,
    pub ale_r: Option<f64>,
    pub field_rmse: Option<f64>,
    pub mean_uncertainty: Option<f64>,
}

pub fn curve_rows(metrics: &[MetricsRecord]) -> Vec<CurveRow> {
    let mut by_cycle: BTreeMap<usize, Vec<&MetricsRecord>> = BTreeMap::new();
    for m in metrics {
        by_cycle.entry(m.cycle).or_default().push(m);
    }
    let mean = |rows: &[&MetricsRecord], f: fn(&MetricsRecord) -> Option<f64>| {
        mgprl::harness::metrics::mean_of(rows.iter().filter_map(|r| f(r)))
    };
    by_cycle
        .into_iter()
        .map(|(cycle, rows)| CurveRow {
            cycle,
            waypoints: rows.iter().map(|r| r.waypoints as f64).sum::<f64>() / rows.len() as f64,
            ale_ap: mean(&rows, |r| r.ale_ap),
            ale_r: mean(&rows, |r| r.ale_r),
            field_rmse: mean(&rows, |r| r.field_rmse),
            mean_uncertainty: mean(&rows, |r| r.mean_uncertainty),
        })
        .collect()
}

const PANEL_PX: f64 = 320.0;
const MARGIN: i64 = 10;
const BAR: i64 = 14;

/// Maps world coordinates onto a panel drawn for `field`'s grid.
struct Frame {
    x0: f64,
    y0: f64,
    origin: [f64; 2],
    scale: f64,
    height_px: f64,
}

impl Frame {
    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        (
            self.x0 + (p[0] - self.origin[0]) * self.scale,
            self.y0 + self.height_px - (p[1] - self.origin[1]) * self.scale,
        )
    }
}

fn cell_px(field: &ScalarField) -> i64 {
    let g = &field.grid;
    ((PANEL_PX / g.width.max(g.height) as f64).floor() as i64).max(2)
}

/// Heatmap with a vertical color bar to its right; y grows upward.
fn heatmap(c: &mut Canvas, field: &ScalarField, x0: i64, y0: i64) -> Frame {
    let g = &field.grid;
    let s = cell_px(field);
    let (lo, hi) = field
        .values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    for j in 0..g.height {
        for i in 0..g.width {
            let t = (field.get(i, j) - lo) / span;
            let row = (g.height - 1 - j) as i64;
            c.fill_rect(x0 + i as i64 * s, y0 + row * s, s, s, colormap(t));
        }
    }
    let h = g.height as i64 * s;
    let bx = x0 + g.width as i64 * s + 4;
    for y in 0..h {
        c.fill_rect(bx, y0 + y, BAR, 1, colormap(1.0 - y as f64 / (h - 1).max(1) as f64));
    }
    Frame {
        x0: x0 as f64,
        y0: y0 as f64,
        origin: g.origin,
        scale: s as f64 / g.cell_size,
        height_px: h as f64,
    }
}

fn panel_size(field: &ScalarField) -> (i64, i64) {
    let s = cell_px(field);
    (field.grid.width as i64 * s + 4 + BAR, field.grid.height as i64 * s)
}

fn mark_estimates(c: &mut Canvas, f: &Frame, snap: &FieldSnapshot) {
    for e in &snap.estimates {
        let p = f.px([e.x, e.y]);
        match e.kind {
            EstimateKind::Hierarchical => {
                c.disc(p, 5.0, BLACK);
                c.disc(p, 3.0, WHITE);
            }
            EstimateKind::LocalMaximum => c.square(p, 4.0, WHITE, 1),
        }
    }
    c.cross(f.px(snap.truth), 6.0, WHITE, 3);
    c.cross(f.px(snap.truth), 6.0, BLACK, 1);
}

/// Mean (left) and variance (right) of one (robot, AP) with the true AP
/// (cross), the hierarchical estimate (dot) and candidates (squares).
fn field_image(snap: &FieldSnapshot) -> Result<Vec<u8>> {
    let (pw, ph) = panel_size(&snap.mean);
    let mut c = Canvas::new((3 * MARGIN + 2 * pw) as u32, (2 * MARGIN + ph) as u32, WHITE);
    let f = heatmap(&mut c, &snap.mean, MARGIN, MARGIN);
    mark_estimates(&mut c, &f, snap);
    let f = heatmap(&mut c, &snap.variance, 2 * MARGIN + pw, MARGIN);
    mark_estimates(&mut c, &f, snap);
    c.png()
}

/// Per-cell maximum over the AP mean fields of one robot.
fn fused_image(snaps: &[&FieldSnapshot]) -> Result<Vec<u8>> {
    let first = &snaps[0].mean;
    let mut values = first.values.clone();
    for s in &snaps[1..] {
        if s.mean.grid != first.grid {
            bail!("{}: field grids differ between APs", s.robot);
        }
        for (v, w) in values.iter_mut().zip(&s.mean.values) {
            *v = v.max(*w);
        }
    }
    let fused = ScalarField::new(first.grid, values)?;
    let (pw, ph) = panel_size(&fused);
    let mut c = Canvas::new((2 * MARGIN + pw) as u32, (2 * MARGIN + ph) as u32, WHITE);
    let f = heatmap(&mut c, &fused, MARGIN, MARGIN);
    for s in snaps {
        c.cross(f.px(s.truth), 6.0, WHITE, 3);
        c.cross(f.px(s.truth), 6.0, BLACK, 1);
    }
    c.png()
}

fn robot_index(summary: &Summary, robot: &str) -> usize {
    robot
        .strip_prefix('r')
        .and_then(|n| n.parse::<usize>().ok())
        .map_or(summary.robots, |n| n.saturating_sub(1))
}

/// World bounds (gray), true APs, start poses, and for every robot the hull of its selected
/// estimates (thick) with each neighbor's aligned hull (thin, neighbor color).
fn hull_image(summary: &Summary, hulls: &[&HullSnapshot]) -> Result<Vec<u8>> {
    let (mut lo, mut hi) = (summary.bounds_min, summary.bounds_max);
    for p in hulls.iter().flat_map(|h| h.hull.iter().chain(&h.neighbor_hull)) {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let scale = (640.0 / (hi[0] - lo[0]).max(hi[1] - lo[1])).clamp(10.0, 80.0);
    let (w, h) = ((hi[0] - lo[0]) * scale, (hi[1] - lo[1]) * scale);
    let m = MARGIN as f64 * 2.0;
    let mut c = Canvas::new((w + 2.0 * m).ceil() as u32, (h + 2.0 * m).ceil() as u32, WHITE);
    let f = Frame {
        x0: m,
        y0: m,
        origin: lo,
        scale,
        height_px: h,
    };
    let (b0, b1) = (summary.bounds_min, summary.bounds_max);
    c.polygon(&[f.px(b0), f.px([b1[0], b0[1]]), f.px(b1), f.px([b0[0], b1[1]])], GRAY, 1);
    for hs in hulls {
        let own = series_color(robot_index(summary, &hs.robot));
        let other = series_color(robot_index(summary, &hs.neighbor));
        let pts: Vec<(f64, f64)> = hs.neighbor_hull.iter().map(|p| f.px(*p)).collect();
        c.polygon(&pts, if hs.accepted { other } else { LIGHT }, 1);
        let pts: Vec<(f64, f64)> = hs.hull.iter().map(|p| f.px(*p)).collect();
        c.polygon(&pts, own, 3);
    }
    for ap in &summary.aps {
        c.cross(f.px([ap.x, ap.y]), 7.0, BLACK, 3);
    }
    for (k, pose) in summary.start_poses.iter().enumerate() {
        let p = f.px([pose.x, pose.y]);
        c.disc(p, 6.0, series_color(k));
        let tip = f.px([pose.x + 0.6 * pose.yaw.cos(), pose.y + 0.6 * pose.yaw.sin()]);
        c.line(p, tip, series_color(k), 2);
    }
    c.png()
}

/// One metric against cycle: thin per-robot lines and the thick robot mean.
fn curve_image(metrics: &[MetricsRecord], rows: &[CurveRow], f: fn(&MetricsRecord) -> Option<f64>, g: fn(&CurveRow) -> Option<f64>) -> Result<Vec<u8>> {
    let (w, h, m) = (640.0, 360.0, 40.0);
    let mut c = Canvas::new(w as u32, h as u32, WHITE);
    let ymax = metrics.iter().filter_map(f).filter(|v| v.is_finite()).fold(0.0f64, f64::max).max(1e-9) * 1.05;
    let (c0, c1) = (rows[0].cycle as f64, rows[rows.len() - 1].cycle as f64);
    let x_of = |cycle: usize| {
        if c1 > c0 {
            m + (cycle as f64 - c0) / (c1 - c0) * (w - 2.0 * m)
        } else {
            w / 2.0
        }
    };
    let y_of = |v: f64| h - m - v / ymax * (h - 2.0 * m);
    for k in 0..=4 {
        let y = y_of(ymax * k as f64 / 4.0);
        c.line((m, y), (w - m, y), LIGHT, 1);
    }
    c.line((m, h - m), (w - m, h - m), BLACK, 2);
    c.line((m, m), (m, h - m), BLACK, 2);

    let mut robots: Vec<&str> = metrics.iter().map(|r| r.robot.as_str()).collect();
    robots.sort();
    robots.dedup();
    for (k, robot) in robots.iter().enumerate() {
        let series: Vec<(usize, Option<f64>)> = metrics.iter().filter(|r| r.robot == *robot).map(|r| (r.cycle, f(r))).collect();
        draw_series(&mut c, &series, &x_of, &y_of, series_color(k), 1);
    }
    let mean: Vec<(usize, Option<f64>)> = rows.iter().map(|r| (r.cycle, g(r))).collect();
    draw_series(&mut c, &mean, &x_of, &y_of, BLACK, 3);
    c.png()
}

/// Missing values break the line.
fn draw_series(
    c: &mut Canvas,
    pts: &[(usize, Option<f64>)],
    x_of: &dyn Fn(usize) -> f64,
    y_of: &dyn Fn(f64) -> f64,
    color: crate::render::Color,
    thickness: i64,
) {
    let mut run: Vec<(f64, f64)> = Vec::new();
    let flush = |run: &mut Vec<(f64, f64)>, c: &mut Canvas| {
        match run.len() {
            0 => {}
            1 => c.disc(run[0], thickness as f64 + 1.0, color),
            _ => c.polyline(run, color, thickness),
        }
        run.clear();
    };
    for &(cycle, v) in pts {
        match v.filter(|v| v.is_finite()) {
            Some(v) => run.push((x_of(cycle), y_of(v))),
            None => flush(&mut run, c),
        }
    }
    flush(&mut run, c);
}

pub struct PlotFile {
    /// Relative to the output directory.
    pub path: PathBuf,
    pub bytes: Vec<u8>,
}

pub fn render(bundle: &Bundle) -> Result<Vec<PlotFile>> {
    let mut files = Vec::new();
    let mut by_cycle: BTreeMap<usize, Vec<&FieldSnapshot>> = BTreeMap::new();
    for f in &bundle.fields {
        by_cycle.entry(f.cycle).or_default().push(f);
    }
    for (cycle, mut snaps) in by_cycle {
        snaps.sort_by(|a, b| (&a.robot, &a.ap).cmp(&(&b.robot, &b.ap)));
        let dir = PathBuf::from(format!("cycle_{cycle:04}"));
        for s in &snaps {
            files.push(PlotFile {
                path: dir.join(format!("{}_{}.png", s.robot, s.ap)),
                bytes: field_image(s)?,
            });
        }
        let mut robots: Vec<&str> = snaps.iter().map(|s| s.robot.as_str()).collect();
        robots.dedup();
        for r in robots {
            let own: Vec<&FieldSnapshot> = snaps.iter().copied().filter(|s| s.robot == r).collect();
            files.push(PlotFile {
                path: dir.join(format!("{r}_fused.png")),
                bytes: fused_image(&own)?,
            });
        }
    }

    let mut hull_cycles: BTreeMap<usize, Vec<&HullSnapshot>> = BTreeMap::new();
    for h in &bundle.hulls {
        hull_cycles.entry(h.cycle).or_default().push(h);
    }
    for (cycle, hs) in hull_cycles {
        files.push(PlotFile {
            path: PathBuf::from(format!("hulls_cycle_{cycle:04}.png")),
            bytes: hull_image(&bundle.summary, &hs)?,
        });
    }

    let rows = curve_rows(&bundle.metrics);
    let curves: [(&str, fn(&MetricsRecord) -> Option<f64>, fn(&CurveRow) -> Option<f64>); 4] = [
        ("ale_ap", |r| r.ale_ap, |r| r.ale_ap),
        ("ale_r", |r| r.ale_r, |r| r.ale_r),
        ("field_rmse", |r| r.field_rmse, |r| r.field_rmse),
        ("uncertainty", |r| r.mean_uncertainty, |r| r.mean_uncertainty),
    ];
    for (name, f, g) in curves {
        files.push(PlotFile {
            path: PathBuf::from(format!("curve_{name}.png")),
            bytes: curve_image(&bundle.metrics, &rows, f, g)?,
        });
    }
    Ok(files)
}

/// Load, render, then write. Nothing is written unless every image rendered.
pub fn plot_bundle(bundle_dir: &Path, out: &Path) -> Result<usize> {
    let bundle = load_bundle(bundle_dir)?;
    let files = render(&bundle)?;
    std::fs::create_dir_all(out)?;
    for f in &files {
        let p = out.join(&f.path);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&p, &f.bytes).with_context(|| format!("cannot write {}", p.display()))?;
    }
    write_csv(out.join("curves.csv"), &curve_rows(&bundle.metrics))?;
    Ok(files.len() + 1)
}
