use std::process::Command;

fn exitlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_exitlab"))
}

#[test]
fn catalog_lists_models_and_observables() {
    let out = exitlab().arg("catalog").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for id in [
        "bm1",
        "rotated_bm2",
        "state_dependent2",
        "exp_minus_one",
        "smooth_mix",
    ] {
        assert!(text.contains(id), "{id} missing from catalog");
    }
}

#[test]
fn run_exit_code_follows_gating_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sphere.toml");
    std::fs::write(
        &cfg,
        "experiment = \"sphere_uniformity\"\nmodel = \"bm2\"\nobservable = \"identity\"\n\
         n_grid = [100]\npaths = 400\nmethod = \"substepped\"\nmaster_seed = 5\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let status = exitlab()
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--workers",
            "2",
            "--seed",
            "9",
            "--out-dir",
        ])
        .arg(&out_dir)
        .status()
        .unwrap();
    let manifest = exitlab::output::read_manifest(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.master_seed, 9);
    assert_eq!(manifest.workers, 2);
    assert_eq!(
        status.code(),
        Some(if manifest.all_gating_passed { 0 } else { 1 })
    );

    let plots = dir.path().join("plots");
    let status = exitlab()
        .args([
            "plot-data",
            out_dir.join("manifest.json").to_str().unwrap(),
            "--out-dir",
        ])
        .arg(&plots)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(plots.join("ks_vs_n.csv").is_file());
}

#[test]
fn bad_config_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "experiment = \"example1\"\nmodel = \"nope\"\nobservable = \"identity\"\n\
         n_grid = [100]\npaths = 10\nmethod = \"naive\"\nmaster_seed = 5\n",
    )
    .unwrap();
    let out = exitlab()
        .args(["run", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("model"));
}
