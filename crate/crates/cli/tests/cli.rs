//! End-to-end tests of the installed binary: stage plumbing, exit codes,
//! artifact determinism and config-file handling.

use std::path::Path;
use std::process::{Command, Output};

fn rdhedge() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rdhedge"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = rdhedge();
    cmd.args(args).arg("--out").arg(dir);
    cmd.output().expect("spawn rdhedge")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

#[test]
fn example_invocation_passes_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "run",
            "--scenario",
            "defaultable_bond_treasury",
            "--stages",
            "validate,solve-pde,check-oracle",
        ],
    );
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("surface_pde.csv").is_file());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenario"], "defaultable_bond_treasury");
    assert_eq!(manifest["all_checks_passed"], true);
    assert_eq!(manifest["checks"][0]["id"], "value-vs-oracle");
    let surface = std::fs::read_to_string(dir.path().join("surface_pde.csv")).unwrap();
    assert!(surface.starts_with("t,x1,regime,value\n"));
}

#[test]
fn missing_dependency_exits_five() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["run", "--scenario", "defaultable_bond_treasury", "--stages", "hedge"],
    );
    assert_eq!(code(&out), 5);
}

#[test]
fn unknown_stage_exits_two_and_unknown_scenario_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["run", "--scenario", "defaultable_bond_treasury", "--stages", "warp"],
    );
    assert_eq!(code(&out), 2);
    let out = run_in(dir.path(), &["run", "--scenario", "no_such_scenario"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn scenario_and_config_flags_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "schema_version = 1\nscenario = \"contagion_basket\"\n").unwrap();
    let out = run_in(
        dir.path(),
        &[
            "run",
            "--scenario",
            "contagion_basket",
            "--config",
            cfg.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn identical_seeds_give_byte_identical_artifacts() {
    let args = [
        "run",
        "--scenario",
        "defaultable_bond_treasury",
        "--stages",
        "validate,solve-pde,simulate,check-oracle",
        "--seed",
        "11",
        "--paths",
        "500",
        "--grid",
        "128x61",
    ];
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_in(d1.path(), &args)), 0);
    assert_eq!(code(&run_in(d2.path(), &args)), 0);
    for name in ["surface_pde.csv", "paths.csv", "summary.json"] {
        let a = std::fs::read(d1.path().join(name)).unwrap();
        let b = std::fs::read(d2.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn unwritable_output_location_exits_seven() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, b"a file, not a directory").unwrap();
    let out = run_in(
        &blocker.join("sub"),
        &["run", "--scenario", "defaultable_bond_treasury", "--stages", "validate"],
    );
    assert_eq!(code(&out), 7);
}

#[test]
fn config_file_is_honored_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        concat!(
            "schema_version = 1\n",
            "scenario = \"defaultable_bond_treasury\"\n",
            "stages = [\"validate\", \"solve-pde\", \"check-oracle\"]\n",
            "[overrides]\n",
            "seed = 3\n",
            "grid = \"128x81\"\n",
        ),
    )
    .unwrap();
    let out = run_in(dir.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["settings"]["grid_t_steps"], 128);
    assert_eq!(manifest["settings"]["grid_nodes"], 81);

    std::fs::write(&cfg, "schema_version = 1\nscneario = \"x\"\n").unwrap();
    assert_eq!(code(&run_in(dir.path(), &["run", "--config", cfg.to_str().unwrap()])), 3);

    std::fs::write(&cfg, "schema_version = 99\nscenario = \"x\"\n").unwrap();
    assert_eq!(code(&run_in(dir.path(), &["run", "--config", cfg.to_str().unwrap()])), 3);
}

#[test]
fn failed_check_exits_six_but_still_writes_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    // A deliberately coarse march cannot hit the oracle tolerance.
    let out = run_in(
        dir.path(),
        &[
            "run",
            "--scenario",
            "defaultable_bond_treasury",
            "--stages",
            "validate,solve-pde,check-oracle",
            "--grid",
            "4x8",
        ],
    );
    assert_eq!(code(&out), 6);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(manifest["all_checks_passed"], false);
}

#[test]
fn out_dir_env_var_is_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = rdhedge()
        .args([
            "run",
            "--scenario",
            "defaultable_bond_treasury",
            "--stages",
            "validate,solve-pde,check-oracle",
        ])
        .env("RDHEDGE_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(dir.path().join("summary.json").is_file());
}

#[test]
fn list_scenarios_names_every_builtin() {
    let out = rdhedge().arg("list-scenarios").output().unwrap();
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "defaultable_bond_treasury",
        "defaultable_bond_market_value",
        "defaultable_bond_state_linked",
        "contagion_basket",
        "contagion_basket_state_linked",
        "crash_at_default",
        "crash_at_default_full_loss",
        "crash_at_default_no_crash",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
}
