//! End-to-end runs of the `perfolab` binary on a small configuration.

use std::path::Path;
use std::process::{Command, Output};

use perfolab_cli::config::ExperimentConfig;
use perfolab_cli::output::Table;

fn small_config(dir: &Path, edit: impl FnOnce(&mut ExperimentConfig)) -> std::path::PathBuf {
    let mut c = ExperimentConfig::default();
    c.lambda = 10.0;
    c.epsilons = vec![0.3, 0.25];
    c.seeds.end = 3;
    c.budgets.identity_samples = 5_000;
    c.budgets.samples_per_ball = 500;
    c.budgets.extension_samples = 500;
    c.budgets.extension_check_samples = 5_000;
    c.budgets.sources = 2;
    c.budgets.nested_clusters = 2;
    c.capacity_n = 32;
    c.pde.n = 16;
    c.pde.bogovskii_n = 16;
    c.pde.epsilons = vec![0.25, 0.125];
    c.out = dir.join("out").to_string_lossy().into_owned();
    edit(&mut c);
    let p = dir.join("config.toml");
    std::fs::write(&p, c.to_toml()).unwrap();
    p
}

fn perfolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perfolab")).args(args).output().expect("binary runs")
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn default_config_prints_and_parses() {
    let out = perfolab(&["--print-default-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), ExperimentConfig::default());
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |_| {});
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("out");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    // Same output path both times, so the recorded configuration matches.
    for (keep, jobs) in [(&a, "0"), (&b, "1")] {
        for cmd in ["generate", "cover-verify"] {
            let o = perfolab(&["--config", cfg, "--jobs", jobs, cmd]);
            assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
        std::fs::rename(&out, keep).unwrap();
    }
    for rel in ["counts.csv", "covering.csv", "covering_checks.csv", "identities.csv", "realizations/eps0p25_seed2.txt", "coverings/eps0p3_seed1.txt"] {
        assert_eq!(read(a.join(rel)), read(b.join(rel)), "{rel}");
    }
    // Tables carry the provenance line and the configuration hash.
    let counts = read(a.join("counts.csv"));
    let hash = ExperimentConfig::from_toml(&read(cfg)).unwrap().hash();
    assert!(counts.starts_with(&format!("# perfolab generate config_hash={hash} seeds=1..3")));
    let t = Table::parse(&counts).unwrap();
    assert_eq!(t.rows.len(), 4);
    let checks = Table::parse(&read(a.join("covering_checks.csv"))).unwrap();
    assert!(checks.floats("violations").unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn zero_intensity_gives_empty_realizations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |c| c.lambda = 0.0);
    let o = perfolab(&["--config", cfg.to_str().unwrap(), "generate"]);
    assert_eq!(o.status.code(), Some(0));
    let t = Table::parse(&read(dir.path().join("out/counts.csv"))).unwrap();
    assert!(t.floats("points").unwrap().iter().all(|v| *v == 0.0));
    let r = read(dir.path().join("out/realizations/eps0p3_seed1.txt"));
    assert!(r.contains("points 0"));
    let parsed = perfolab_core::point_process::read_realization(&r).unwrap();
    assert!(parsed.is_empty());
}

#[test]
fn report_summarizes_what_is_there() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |_| {});
    let cfg = cfg.to_str().unwrap();
    let o = perfolab(&["--config", cfg, "report"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("no tables found"));
    for cmd in ["capacity-sweep", "extension-verify"] {
        let o = perfolab(&["--config", cfg, cmd]);
        assert!(matches!(o.status.code(), Some(0) | Some(2)), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = perfolab(&["--config", cfg, "report"]);
    assert_eq!(o.status.code(), Some(0));
    let md = read(dir.path().join("out/report.md"));
    assert!(md.contains("## Capacity bound"));
    assert!(md.contains("## Extension checks"));
}

#[test]
fn converge_runs_on_a_coarse_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |c| c.seeds.end = 2);
    let o = perfolab(&["--config", cfg.to_str().unwrap(), "converge"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = Table::parse(&read(dir.path().join("out/converge.csv"))).unwrap();
    assert_eq!(t.rows.len(), 8);
    assert!(t.floats("velocity_gap").unwrap().iter().all(|v| v.is_finite() && *v >= 0.0));
    let solver = Table::parse(&read(dir.path().join("out/converge_solver.csv"))).unwrap();
    assert!(solver.floats("stokes_div_residual").unwrap().iter().all(|v| *v <= 1e-8));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown key: usage error.
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "d = 3\nbogus = 1\n").unwrap();
    assert_eq!(perfolab(&["--config", bad.to_str().unwrap(), "generate"]).status.code(), Some(1));
    assert_eq!(perfolab(&["--seeds", "5..2", "generate"]).status.code(), Some(1));
    assert_eq!(perfolab(&[]).status.code(), Some(1));
    // A hole above the top size class: epsilon too large for the covering.
    let cfg = small_config(dir.path(), |c| {
        c.epsilons = vec![0.9];
        c.lambda = 5.0;
        c.covering.k_max = Some(0);
        c.law = perfolab_cli::config::LawConfig::Constant { rho0: 2.0 };
    });
    let o = perfolab(&["--config", cfg.to_str().unwrap(), "cover-verify"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    // The covering swallows the box at this epsilon: the divergence probe
    // has no support, the row is recorded as nan and the run exits 4.
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |c| {
        c.seeds.end = 2;
        c.pde.epsilons = vec![0.5];
    });
    let o = perfolab(&["--config", cfg.to_str().unwrap(), "converge"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let text = read(dir.path().join("out/converge.csv"));
    assert!(text.contains("# error eps=0.5 seed=1"));
}
