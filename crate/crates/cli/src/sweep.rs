//! One episode per (value, seed) on a worker pool, aggregated per value.

use std::path::Path;

use anyhow::{bail, Context, Result};
use mgprl::harness::{run_episode, write_bundle, EpisodeConfig, Summary};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{self, Override};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub value: String,
    pub seed: u64,
    pub status: String,
    pub ale_ap: Option<f64>,
    pub ale_ap_hier: Option<f64>,
    pub ale_r: Option<f64>,
    pub field_rmse: Option<f64>,
    pub mean_uncertainty: Option<f64>,
    pub accept_rate: Option<f64>,
    pub consistency: Option<f64>,
}

impl EpisodeRow {
    fn from_summary(value: &str, s: &Summary) -> Self {
        let f = &s.final_metrics;
        Self {
            value: value.to_owned(),
            seed: s.master_seed,
            status: "ok".into(),
            ale_ap: f.ale_ap,
            ale_ap_hier: f.ale_ap_hier,
            ale_r: f.ale_r,
            field_rmse: f.field_rmse,
            mean_uncertainty: f.mean_uncertainty,
            accept_rate: f.accept_rate,
            consistency: s.consistency,
        }
    }

    fn failed(value: &str, seed: u64, err: String) -> Self {
        Self {
            value: value.to_owned(),
            seed,
            status: err,
            ale_ap: None,
            ale_ap_hier: None,
            ale_r: None,
            field_rmse: None,
            mean_uncertainty: None,
            accept_rate: None,
            consistency: None,
        }
    }
}

/// Final-cycle metrics over the seeds of one value. Means and medians skip
/// missing cells; `std` is the sample standard deviation (0 for one value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub axis: String,
    pub value: String,
    pub episodes: usize,
    pub failed: usize,
    pub ale_ap_mean: Option<f64>,
    pub ale_ap_std: Option<f64>,
    pub ale_ap_median: Option<f64>,
    pub ale_ap_hier_mean: Option<f64>,
    pub ale_ap_hier_std: Option<f64>,
    pub ale_r_mean: Option<f64>,
    pub ale_r_std: Option<f64>,
    pub ale_r_median: Option<f64>,
    pub field_rmse_mean: Option<f64>,
    pub field_rmse_std: Option<f64>,
    pub uncertainty_mean: Option<f64>,
    pub uncertainty_std: Option<f64>,
    pub accept_rate_mean: Option<f64>,
    pub accept_rate_std: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

pub fn stats(values: impl IntoIterator<Item = Option<f64>>) -> Option<Stats> {
    let mut v: Vec<f64> = values.into_iter().flatten().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    v.sort_by(f64::total_cmp);
    let k = v.len();
    let median = if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) };
    Some(Stats { mean, std, median })
}

pub fn aggregate(axis: &str, value: &str, rows: &[EpisodeRow]) -> AggregateRow {
    let ok: Vec<&EpisodeRow> = rows.iter().filter(|r| r.status == "ok").collect();
    let col = |f: fn(&EpisodeRow) -> Option<f64>| stats(ok.iter().map(|r| f(r)));
    let (ap, hier, r, rmse, unc, acc) = (
        col(|r| r.ale_ap),
        col(|r| r.ale_ap_hier),
        col(|r| r.ale_r),
        col(|r| r.field_rmse),
        col(|r| r.mean_uncertainty),
        col(|r| r.accept_rate),
    );
    AggregateRow {
        axis: axis.to_owned(),
        value: value.to_owned(),
        episodes: rows.len(),
        failed: rows.len() - ok.len(),
        ale_ap_mean: ap.map(|s| s.mean),
        ale_ap_std: ap.map(|s| s.std),
        ale_ap_median: ap.map(|s| s.median),
        ale_ap_hier_mean: hier.map(|s| s.mean),
        ale_ap_hier_std: hier.map(|s| s.std),
        ale_r_mean: r.map(|s| s.mean),
        ale_r_std: r.map(|s| s.std),
        ale_r_median: r.map(|s| s.median),
        field_rmse_mean: rmse.map(|s| s.mean),
        field_rmse_std: rmse.map(|s| s.std),
        uncertainty_mean: unc.map(|s| s.mean),
        uncertainty_std: unc.map(|s| s.std),
        accept_rate_mean: acc.map(|s| s.mean),
        accept_rate_std: acc.map(|s| s.std),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepManifest {
    pub kind: String,
    pub tool_version: String,
    pub axis: String,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub overrides: Vec<String>,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub config: EpisodeConfig,
}

pub struct SweepPlan {
    pub axis: String,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
    /// Resolved and validated, indexed `[value][seed]`.
    pub configs: Vec<Vec<EpisodeConfig>>,
}

/// Build and validate every episode config before any episode runs.
pub fn plan(
    config_path: Option<&Path>,
    overrides: &[Override],
    axis: &str,
    values: &[String],
    seeds: &[u64],
) -> Result<SweepPlan> {
    if values.is_empty() {
        bail!("--values: at least one value is required");
    }
    if seeds.is_empty() {
        bail!("--seeds: at least one seed is required");
    }
    let mut configs = Vec::with_capacity(values.len());
    let mut labels = Vec::with_capacity(values.len());
    for v in values {
        let point = Override::parse(&format!("{axis}={v}"))?;
        if !point.is_numeric() {
            bail!("--axis {axis}: value `{v}` is not numeric");
        }
        labels.push(v.trim().to_owned());
        let mut all = overrides.to_vec();
        all.push(point);
        let base = config::load(config_path, &all)?;
        let mut row = Vec::with_capacity(seeds.len());
        for &s in seeds {
            let cfg = EpisodeConfig {
                master_seed: s,
                ..base.clone()
            }
            .resolved()
            .with_context(|| format!("{axis}={v}"))?;
            cfg.validate().with_context(|| format!("{axis}={v}"))?;
            row.push(cfg);
        }
        configs.push(row);
    }
    Ok(SweepPlan {
        axis: axis.to_owned(),
        values: labels,
        seeds: seeds.to_vec(),
        configs,
    })
}

pub struct SweepOutput {
    pub episodes: Vec<EpisodeRow>,
    pub aggregates: Vec<AggregateRow>,
}

/// Run every planned episode on `jobs` threads (0 = one per core). When
/// `bundles` is set, each episode's bundle goes under `out/episodes/`.
pub fn execute(plan: &SweepPlan, jobs: usize, out: &Path, bundles: bool) -> Result<SweepOutput> {
    let tasks: Vec<(usize, &EpisodeConfig)> = plan
        .configs
        .iter()
        .enumerate()
        .flat_map(|(vi, row)| row.iter().map(move |c| (vi, c)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let episodes: Vec<EpisodeRow> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(vi, cfg)| {
                let value = &plan.values[vi];
                match run_episode(cfg) {
                    Ok(r) => {
                        if bundles {
                            let dir = out.join("episodes").join(format!("{}_{value}_seed{}", plan.axis, cfg.master_seed));
                            if let Err(e) = write_bundle(&r, &dir) {
                                return EpisodeRow::failed(value, cfg.master_seed, format!("bundle: {e}"));
                            }
                        }
                        EpisodeRow::from_summary(value, &r.summary)
                    }
                    Err(e) => EpisodeRow::failed(value, cfg.master_seed, e.to_string()),
                }
            })
            .collect()
    });
    let aggregates = plan
        .values
        .iter()
        .map(|v| {
            let rows: Vec<EpisodeRow> = episodes.iter().filter(|r| &r.value == v).cloned().collect();
            aggregate(&plan.axis, v, &rows)
        })
        .collect();
    Ok(SweepOutput { episodes, aggregates })
}
