mod config;
mod plot;
mod render;
mod selftest;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mgprl::harness::metrics::write_csv;
use mgprl::harness::{run_episode, write_bundle};

use config::RunManifest;

#[derive(Parser)]
#[command(name = "mgprl", version, about = "Multi-robot RSSI field mapping, AP localization and relative pose estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Episode config (TOML) or a run manifest to replay.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "MGPRL_OUT_DIR", default_value = "mgprl-out")]
    out: PathBuf,
    /// Master seed; overrides `master_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// KEY=VALUE with dotted keys for sections, e.g. `alignment.lambda=0.1`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its artifact bundle.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run one episode per (value, seed) and aggregate final metrics per value.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Numeric config key to vary.
        #[arg(long)]
        axis: String,
        /// Comma-separated values for the axis.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Seeds per value, counting up from --seed (or the config's seed).
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Worker threads; 0 uses one per core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Also keep every episode's bundle under OUT/episodes/.
        #[arg(long)]
        bundles: bool,
    },
    /// Check the numerical kernels against brute-force references.
    Selftest {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Render images from an episode bundle.
    Plot {
        bundle: PathBuf,
        /// Defaults to BUNDLE/plots.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn with_seed(mut overrides: Vec<config::Override>, seed: Option<u64>) -> Result<Vec<config::Override>> {
    if let Some(s) = seed {
        overrides.push(config::Override::parse(&format!("master_seed={s}"))?);
    }
    Ok(overrides)
}

fn cmd_run(c: &Common) -> Result<()> {
    let overrides = with_seed(config::parse_overrides(&c.overrides)?, c.seed)?;
    let cfg = config::load(c.config.as_deref(), &overrides)?.resolved()?;
    cfg.validate()?;

    std::fs::create_dir_all(&c.out).with_context(|| format!("cannot create {}", c.out.display()))?;
    let manifest_path = c.out.join("manifest.toml");
    let mut manifest = RunManifest::new(c.config.as_deref(), &overrides, &c.out, &cfg);
    manifest.write(&manifest_path)?;

    let result = match run_episode(&cfg) {
        Ok(r) => r,
        Err(e) => {
            manifest.finish(format!("failed: {e}"));
            manifest.write(&manifest_path)?;
            return Err(e.into());
        }
    };
    write_bundle(&result, &c.out)?;
    manifest.finish("ok");
    manifest.write(&manifest_path)?;

    let f = &result.summary.final_metrics;
    let show = |v: Option<f64>| v.map_or("n/a".to_owned(), |x| format!("{x:.3}"));
    println!(
        "{} seed {}: ALE(AP) {} m, ALE(R) {} m, RMSE {} dB, uncertainty {} dB, accept rate {}",
        result.summary.world,
        cfg.master_seed,
        show(f.ale_ap),
        show(f.ale_r),
        show(f.field_rmse),
        show(f.mean_uncertainty),
        show(f.accept_rate)
    );
    println!("bundle written to {}", c.out.display());
    Ok(())
}

fn cmd_sweep(c: &Common, axis: &str, values: &[String], n_seeds: u64, jobs: usize, bundles: bool) -> Result<()> {
    let overrides = with_seed(config::parse_overrides(&c.overrides)?, c.seed)?;
    let base = config::load(c.config.as_deref(), &overrides)?;
    let seeds: Vec<u64> = (0..n_seeds).map(|k| base.master_seed + k).collect();
    let plan = sweep::plan(c.config.as_deref(), &overrides, axis, values, &seeds)?;

    std::fs::create_dir_all(&c.out).with_context(|| format!("cannot create {}", c.out.display()))?;
    let manifest_path = c.out.join("sweep_manifest.toml");
    let mut manifest = sweep::SweepManifest {
        kind: "mgprl-sweep-manifest".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        axis: plan.axis.clone(),
        values: plan.values.clone(),
        seeds: plan.seeds.clone(),
        jobs,
        overrides: overrides.iter().map(|o| o.raw.clone()).collect(),
        started_unix: config::unix_now(),
        finished_unix: None,
        config: base,
    };
    std::fs::write(&manifest_path, toml::to_string(&manifest)?)?;

    let out = sweep::execute(&plan, jobs, &c.out, bundles)?;
    write_csv(c.out.join("episodes.csv"), &out.episodes)?;
    write_csv(c.out.join("sweep.csv"), &out.aggregates)?;
    manifest.finished_unix = Some(config::unix_now());
    std::fs::write(&manifest_path, toml::to_string(&manifest)?)?;

    let show = |m: Option<f64>, s: Option<f64>| match (m, s) {
        (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
        _ => "n/a".into(),
    };
    println!("{:>10}  {:>16}  {:>16}  {:>16}  failed", axis, "ALE(AP) m", "ALE(R) m", "RMSE dB");
    for a in &out.aggregates {
        println!(
            "{:>10}  {:>16}  {:>16}  {:>16}  {}/{}",
            a.value,
            show(a.ale_ap_mean, a.ale_ap_std),
            show(a.ale_r_mean, a.ale_r_std),
            show(a.field_rmse_mean, a.field_rmse_std),
            a.failed,
            a.episodes
        );
    }
    println!("aggregates written to {}", c.out.join("sweep.csv").display());
    Ok(())
}

fn cmd_selftest(seed: u64) -> Result<bool> {
    let fault = selftest::fault_from_env()?;
    let results = selftest::run_all(seed, fault);
    print!("{}", selftest::format_table(&results));
    Ok(results.iter().all(|r| r.passed()))
}

fn cmd_plot(bundle: &Path, out: Option<&Path>) -> Result<()> {
    let out = out.map_or_else(|| bundle.join("plots"), Path::to_path_buf);
    let n = plot::plot_bundle(bundle, &out)?;
    println!("{n} files written to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { common } => cmd_run(common).map(|()| true),
        Command::Sweep {
            common,
            axis,
            values,
            seeds,
            jobs,
            bundles,
        } => cmd_sweep(common, axis, values, *seeds, *jobs, *bundles).map(|()| true),
        Command::Selftest { seed } => cmd_selftest(*seed),
        Command::Plot { bundle, out } => cmd_plot(bundle, out.as_deref()).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
