//! Episode config loading with `key=value` overrides, and run manifests.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use mgprl::harness::EpisodeConfig;
use serde::{Deserialize, Serialize};

pub const MANIFEST_KIND: &str = "mgprl-run-manifest";

#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    /// Dotted path into the config, e.g. `alignment.lambda`.
    pub key: String,
    pub value: toml::Value,
    pub raw: String,
}

impl Override {
    pub fn parse(s: &str) -> Result<Self> {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("override `{s}`: expected KEY=VALUE"))?;
        let key = k.trim();
        if key.is_empty() || key.split('.').any(|p| p.trim().is_empty()) {
            bail!("override `{s}`: empty key segment");
        }
        Ok(Self {
            key: key.to_owned(),
            value: parse_value(v.trim()),
            raw: format!("{key}={}", v.trim()),
        })
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.value, toml::Value::Integer(_) | toml::Value::Float(_))
    }

    fn apply(&self, table: &mut toml::Table) -> Result<()> {
        let parts: Vec<&str> = self.key.split('.').map(str::trim).collect();
        let (last, parents) = parts.split_last().expect("non-empty key");
        let mut cur = table;
        for p in parents {
            let entry = cur
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| anyhow!("override {}: `{p}` is not a table", self.key))?;
        }
        cur.insert(last.to_string(), self.value.clone());
        Ok(())
    }
}

/// TOML literal when it parses as one (`2`, `0.5`, `true`, `"x"`, `[1, 2]`),
/// otherwise a bare string.
fn parse_value(v: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_owned()))
}

pub fn parse_overrides(raw: &[String]) -> Result<Vec<Override>> {
    raw.iter().map(|s| Override::parse(s)).collect()
}

/// Read an episode config (or a run manifest, whose `[config]` table is
/// used) and apply `overrides` on top. Without a path the defaults apply.
pub fn load(path: Option<&Path>, overrides: &[Override]) -> Result<EpisodeConfig> {
    let (mut table, source, original) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            let mut t: toml::Table = text.parse().map_err(|e| anyhow!("{}: {e}", p.display()))?;
            let mut original = Some(text);
            if t.get("kind").and_then(|v| v.as_str()) == Some(MANIFEST_KIND) {
                original = None;
                t = match t.remove("config") {
                    Some(toml::Value::Table(c)) => c,
                    _ => bail!("{}: manifest has no [config] table", p.display()),
                };
            }
            (t, p.display().to_string(), original)
        }
        None => (toml::Table::new(), "defaults".to_owned(), None),
    };
    for o in overrides {
        o.apply(&mut table)?;
    }
    // Parse the file as written when nothing changed, so reported line
    // numbers point into it.
    let text = match original {
        Some(t) if overrides.is_empty() => t,
        _ => toml::to_string(&table)?,
    };
    let mut cfg = EpisodeConfig::from_toml_str(&text).map_err(|e| anyhow!("{source}: {e}"))?;
    if let (Some(p), Some(wf)) = (path, &cfg.world_file) {
        if wf.is_relative() {
            cfg.world_file = Some(p.parent().unwrap_or(Path::new(".")).join(wf));
        }
    }
    Ok(cfg)
}

/// Written before the episode starts and rewritten when it ends. Passing
/// it back as `--config` replays the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub tool_version: String,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub status: String,
    pub config: EpisodeConfig,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn new(config_path: Option<&Path>, overrides: &[Override], out_dir: &Path, config: &EpisodeConfig) -> Self {
        Self {
            kind: MANIFEST_KIND.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_path: config_path.map(Path::to_path_buf),
            overrides: overrides.iter().map(|o| o.raw.clone()).collect(),
            seed: config.master_seed,
            out_dir: out_dir.to_path_buf(),
            started_unix: unix_now(),
            finished_unix: None,
            status: "running".into(),
            config: config.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string(self)?).with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn finish(&mut self, status: impl Into<String>) {
        self.finished_unix = Some(unix_now());
        self.status = status.into();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_values_are_typed() {
        let o = Override::parse("noise_level=2").unwrap();
        assert_eq!(o.value, toml::Value::Integer(2));
        assert!(o.is_numeric());
        assert_eq!(Override::parse("alignment.lambda = 0.1").unwrap().raw, "alignment.lambda=0.1");
        assert_eq!(
            Override::parse("world_preset=bookstore").unwrap().value,
            toml::Value::String("bookstore".into())
        );
        assert!(Override::parse("noise_level").is_err());
        assert!(Override::parse("a..b=1").is_err());
    }

    #[test]
    fn overrides_reach_nested_sections() {
        let o = parse_overrides(&["gp.restarts=1".into(), "noise_level=1.5".into(), "robots=4".into()]).unwrap();
        let cfg = load(None, &o).unwrap();
        assert_eq!(cfg.gp.restarts, 1);
        assert_eq!(cfg.noise_level, 1.5);
        assert_eq!(cfg.robots, 4);
        assert_eq!(cfg.cycles, EpisodeConfig::default().cycles);
    }

    #[test]
    fn unknown_keys_are_named() {
        let o = parse_overrides(&["alignment.lamda=0.1".into()]).unwrap();
        let err = load(None, &o).unwrap_err().to_string();
        assert!(err.contains("alignment"), "{err}");
        let o = parse_overrides(&["robots.count=2".into()]).unwrap();
        assert!(load(None, &o).is_err());
    }

    #[test]
    fn manifest_round_trips_and_loads_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let o = parse_overrides(&["noise_level=2".into()]).unwrap();
        let cfg = load(None, &o).unwrap().resolved().unwrap();
        let mut m = RunManifest::new(None, &o, dir.path(), &cfg);
        m.finish("ok");
        let p = dir.path().join("manifest.toml");
        m.write(&p).unwrap();
        let back: RunManifest = toml::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(load(Some(&p), &[]).unwrap(), cfg);
    }
}
