use std::f64::consts::PI;
use std::process::Command;

use scatter_superres::cmx::read_cmx;
use scatter_superres::config::{ExperimentConfig, Initialization};
use scatter_superres::pipeline::{artifact, Manifest, Metrics, Run, Stage};
use scatter_superres::wavefield::FrequencyScheme;
use scatter_superres::{Error, C64};

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.physics.frequencies = FrequencyScheme::Count(6);
    c.window.n_cross = 5;
    c.window.n_range = 4;
    c.medium.count = 20;
    c.data.measurements = 300;
    c.data.sparsity = 2;
    c.learn.init = Initialization::Perturbed { relative: 0.01 };
    c.image.replicates = 0;
    c
}

fn manifest(dir: &std::path::Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join(artifact::MANIFEST)).unwrap()).unwrap()
}

#[test]
fn scatterer_free_simulation_is_the_analytic_matrix() {
    let mut c = tiny();
    c.medium.count = 0;
    let dir = tempfile::tempdir().unwrap();
    let mut run = Run::new(c.clone(), dir.path()).unwrap();
    run.run(&[Stage::Simulate]).unwrap();
    let s = read_cmx(dir.path().join(artifact::SENSING)).unwrap();
    let geom = c.geometry().unwrap();
    let grid = c.grid();
    let n = geom.n_receivers();
    for (f, &omega) in geom.omegas.iter().enumerate() {
        let k = omega / c.physics.background_speed;
        for (i, r) in geom.receivers.iter().enumerate() {
            for (j, x) in grid.points.iter().enumerate() {
                let d = ((r[0] - x[0]).powi(2) + (r[1] - x[1]).powi(2) + (r[2] - x[2]).powi(2)).sqrt();
                let want = C64::from_polar(1.0 / (4.0 * PI * d), k * d);
                assert!((s[[f * n + i, j]] - want).norm() <= 1e-14 * want.norm());
            }
        }
    }
}

#[test]
fn stages_report_the_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = Run::new(tiny(), dir.path()).unwrap();
    for (stage, name) in [
        (Stage::LearnDict, artifact::DATA),
        (Stage::OrderGrid, artifact::DICTIONARY),
        (Stage::Image, artifact::ORDERED),
    ] {
        match run.run(&[stage]) {
            Err(Error::MissingArtifact(p)) => assert_eq!(p, dir.path().join(name), "{stage}"),
            other => panic!("{stage}: {other:?}"),
        }
    }
    assert!(matches!(run.run(&[Stage::Cluster]), Err(Error::MissingArtifact(_))));
}

#[test]
fn full_chain_writes_a_complete_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = Run::new(tiny(), dir.path()).unwrap();
    run.run(&[Stage::Simulate, Stage::LearnDict, Stage::OrderGrid, Stage::Image, Stage::Evaluate]).unwrap();
    let m = manifest(dir.path());
    assert!(m.is_complete(dir.path(), run.config_hash()));
    assert_eq!(m.stages, vec!["simulate", "learn-dict", "order-grid", "image", "evaluate"]);
    for name in [artifact::SENSING, artifact::DICTIONARY, artifact::ORDERED, artifact::PERMUTATION, artifact::METRICS] {
        assert!(m.artifacts.contains_key(name), "{name}");
    }
    let metrics: Metrics =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(artifact::METRICS)).unwrap()).unwrap();
    assert!(metrics.dictionary_min_correlation.unwrap() > 0.99);
    assert_eq!(metrics.identity_permutation, Some(true));

    let mut other = tiny();
    other.seeds.data += 1;
    let run = Run::new(other, dir.path()).unwrap();
    assert!(!m.is_complete(dir.path(), run.config_hash()));
    assert!(run.manifest().artifacts.is_empty());
}

#[test]
fn reruns_reproduce_simulation_bitwise_and_estimates_closely() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        Run::new(tiny(), d.path()).unwrap().run(&[Stage::Simulate, Stage::LearnDict]).unwrap();
    }
    for name in [artifact::SENSING, artifact::DATA, artifact::TRUE_CODES, artifact::ANCHORS, artifact::MEDIUM] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
    let a = read_cmx(dirs[0].path().join(artifact::DICTIONARY)).unwrap();
    let b = read_cmx(dirs[1].path().join(artifact::DICTIONARY)).unwrap();
    for k in 0..a.ncols() {
        let c: C64 = a.column(k).iter().zip(b.column(k).iter()).map(|(x, y)| x.conj() * y).sum();
        assert!((c.norm() - 1.0).abs() <= 1e-9, "column {k}");
    }
}

#[test]
fn cli_runs_stages_into_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, tiny().to_toml().unwrap()).unwrap();
    let out = dir.path().join("run");
    let status = Command::new(env!("CARGO_BIN_EXE_scatter-superres"))
        .args(["--config", config.to_str().unwrap(), "--workers", "1", "--seed-medium", "5", "simulate"])
        .env("SCATTER_SUPERRES_OUT", &out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(String::from_utf8_lossy(&status.stdout).trim(), out.join(artifact::MANIFEST).display().to_string());
    let m = manifest(&out);
    assert_eq!(m.seeds.medium, 5);
    assert_eq!(m.stages, vec!["simulate"]);

    let bad = Command::new(env!("CARGO_BIN_EXE_scatter-superres"))
        .args(["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "order-grid"])
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains(artifact::DICTIONARY));
}

#[test]
fn shipped_configs_are_the_presets() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (file, preset) in [("full.toml", ExperimentConfig::full()), ("desk.toml", ExperimentConfig::desk())] {
        let mut c = ExperimentConfig::load(dir.join(file)).unwrap();
        assert!(!c.stages.is_empty(), "{file}");
        c.stages.clear();
        assert_eq!(c, preset, "{file}");
    }
}
