use super::metrics::read_csv;
use super::{run_episode, write_bundle, EpisodeConfig, MetricsRecord};
use crate::rfsim::{ApSpec, WorldConfig};

fn short(seed: u64) -> EpisodeConfig {
    EpisodeConfig {
        master_seed: seed,
        cycles: 6,
        samples_per_cycle: 2,
        ..Default::default()
    }
}

/// Three APs in a 6 m room without shadowing or fading.
fn minimal_world() -> WorldConfig {
    let mut w = WorldConfig::house();
    w.name = "minimal".into();
    w.bounds_max = [6.0, 6.0];
    w.path_loss.shadowing_sigma = 0.0;
    w.path_loss.fading_sigma = 0.0;
    w.aps = vec![
        ApSpec { id: "a".into(), x: 1.0, y: 1.0 },
        ApSpec { id: "b".into(), x: 5.0, y: 1.5 },
        ApSpec { id: "c".into(), x: 2.5, y: 5.0 },
    ];
    w
}

#[test]
fn same_seed_gives_identical_metrics_csv() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_bundle(&run_episode(&short(11)).unwrap(), a.path()).unwrap();
    write_bundle(&run_episode(&short(11)).unwrap(), b.path()).unwrap();
    for f in ["metrics.csv", "ap_metrics.csv", "alignments.csv", "messages.jsonl", "summary.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let c = tempfile::tempdir().unwrap();
    write_bundle(&run_episode(&short(12)).unwrap(), c.path()).unwrap();
    assert_ne!(
        std::fs::read(a.path().join("metrics.csv")).unwrap(),
        std::fs::read(c.path().join("metrics.csv")).unwrap()
    );
}

#[test]
fn one_metrics_row_per_cycle_and_robot() {
    let cfg = EpisodeConfig {
        robots: 4,
        ..short(3)
    };
    let r = run_episode(&cfg).unwrap();
    assert_eq!(r.metrics.len(), cfg.cycles * cfg.robots);
    for (k, row) in r.metrics.iter().enumerate() {
        assert_eq!(row.cycle, k / cfg.robots + 1);
        assert_eq!(row.robot, format!("r{}", k % cfg.robots + 1));
        for v in [row.ale_ap, row.ale_ap_hier, row.ale_r, row.field_rmse, row.mean_uncertainty, row.accept_rate]
            .into_iter()
            .flatten()
        {
            assert!(v >= 0.0 && v.is_finite());
        }
    }
    assert_eq!(r.alignments.len(), cfg.cycles * cfg.robots * (cfg.robots - 1));
}

#[test]
fn bundle_round_trips_and_holds_final_fields() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_episode(&short(5)).unwrap();
    write_bundle(&r, dir.path()).unwrap();
    let back: Vec<MetricsRecord> = read_csv(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(back.len(), r.metrics.len());
    for (a, b) in back.iter().zip(&r.metrics) {
        assert_eq!((a.cycle, &a.robot, &a.status), (b.cycle, &b.robot, &b.status));
    }
    let fields = std::fs::read_dir(dir.path().join("fields/cycle_0006")).unwrap().count();
    assert_eq!(fields, 3 * 4);
    let cfg = EpisodeConfig::load(dir.path().join("config.toml")).unwrap();
    assert!(cfg.world.is_some());
    assert_eq!(run_episode(&cfg).unwrap().metrics, r.metrics);
    let lines = std::fs::read_to_string(dir.path().join("messages.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 6 * 3);
}

#[test]
fn minimal_team_reaches_accepted_alignments() {
    let cfg = EpisodeConfig {
        robots: 2,
        world: Some(minimal_world()),
        cycles: 60,
        master_seed: 0,
        ..Default::default()
    };
    let r = run_episode(&cfg).unwrap();
    assert_eq!(r.summary.error_rows, 0);
    let accepted: Vec<_> = r.alignments.iter().filter(|a| a.accepted == Some(true)).collect();
    assert!(!accepted.is_empty());
    // AP errors well below the ~4 m hull scale once alignments are accepted
    let last = r.final_rows().map(|m| m.ale_ap.unwrap()).fold(0.0, f64::max);
    assert!(last < 1.0, "final ALE {last}");
    for a in accepted {
        assert!(a.weighted_error.unwrap() <= cfg.alignment.lambda);
    }
}

#[test]
fn cycle_failures_are_tagged_rows() {
    // every reading lost at one AP half the time still fits, but a world
    // that loses most readings must leave tagged rows rather than gaps
    let cfg = EpisodeConfig {
        initial_samples: 1,
        cycles: 3,
        motion: super::MotionConfig {
            dropout: 0.9,
            ..Default::default()
        },
        ..short(2)
    };
    let r = run_episode(&cfg).unwrap();
    assert_eq!(r.metrics.len(), cfg.cycles * cfg.robots);
    for row in &r.metrics {
        assert!(row.status == "ok" || row.ale_ap.is_none(), "{row:?}");
    }
}

#[test]
fn inverse_alignments_agree_on_relative_position() {
    let cfg = EpisodeConfig {
        robots: 2,
        world: Some(minimal_world()),
        cycles: 60,
        master_seed: 0,
        ..Default::default()
    };
    let r = run_episode(&cfg).unwrap();
    let c = r.summary.consistency.expect("both directions accepted at the end");
    assert!(c < cfg.consistency_threshold, "loop error {c}");
}

#[test]
fn config_errors_are_reported_not_recorded() {
    let bad = EpisodeConfig {
        robots: 1,
        ..Default::default()
    };
    assert!(run_episode(&bad).is_err());
}
