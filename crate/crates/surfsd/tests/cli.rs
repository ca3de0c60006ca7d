//! Black-box tests of the command-line interface: exit codes, artifact
//! layout, determinism and the manifest round trip.

use std::path::Path;
use std::process::Command;

fn surfsd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_surfsd"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const PATCH: &str = r#"
[mesh]
n = 6
[problem]
name = "plane-patch"
[stabilization]
epsilon = 0.0
c_tau = 0.5
gamma = 1.0
tau2 = "inv-tau1"
"#;

#[test]
fn solve_writes_artifacts_and_reports_patch_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    write(&cfg, PATCH);
    let out = dir.path().join("out");
    let output = surfsd()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(out.join("solution.vtk").exists());
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("# l2_err ="));
    let l2: f64 = manifest
        .lines()
        .find(|l| l.starts_with("# l2_err ="))
        .and_then(|l| l.rsplit('=').next())
        .and_then(|v| v.trim().parse().ok())
        .unwrap();
    assert!(l2 <= 1e-10, "patch l2_err {l2}");
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    // Missing file.
    let output = surfsd()
        .args(["solve", "--config"])
        .arg(dir.path().join("nope.toml"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));

    // Unknown key, reported by name.
    let cfg = dir.path().join("bad.toml");
    write(&cfg, &format!("{PATCH}\n[solver]\nbogus_key = 1\n"));
    let output = surfsd().args(["solve", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("bogus_key"));

    // Identical refinement levels.
    let cfg = dir.path().join("levels.toml");
    write(&cfg, &PATCH.replace("n = 6", "levels = [6, 6]"));
    let output = surfsd()
        .args(["convergence", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("mesh.levels"));
}

#[test]
fn numerical_failure_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    // An unreachable tolerance forces NoConvergence.
    write(&cfg, &format!("{PATCH}\n[solver]\ntol = 1e-30\n"));
    let output = surfsd().args(["solve", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&output.stderr).contains("converge"));
}

const SMALL_STUDY: &str = r#"
[mesh]
levels = [4, 6, 8]
[problem]
name = "plane-patch"
[stabilization]
epsilon = 0.0
c_tau = 0.5
gamma = 1.0
tau2 = "inv-tau1"
"#;

#[test]
fn identical_configs_produce_bit_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.toml");
    write(&cfg, SMALL_STUDY);
    let (out1, out2) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&out1, &out2] {
        let output = surfsd()
            .args(["convergence", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert!(output.status.success());
    }
    let a = std::fs::read(out1.join("convergence.csv")).unwrap();
    let b = std::fs::read(out2.join("convergence.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn manifest_reruns_to_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.toml");
    write(&cfg, SMALL_STUDY);
    let out1 = dir.path().join("first");
    assert!(surfsd()
        .args(["convergence", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out1)
        .output()
        .unwrap()
        .status
        .success());

    // The manifest is itself a valid config; re-running it must reproduce
    // the rows bit for bit.
    let out2 = dir.path().join("second");
    let rerun = surfsd()
        .args(["convergence", "--config"])
        .arg(out1.join("manifest.txt"))
        .arg("--out")
        .arg(&out2)
        .output()
        .unwrap();
    assert!(
        rerun.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&rerun.stderr)
    );
    let a = std::fs::read(out1.join("convergence.csv")).unwrap();
    let b = std::fs::read(out2.join("convergence.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn layer_study_emits_vtk_per_parameter_set_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("layer.toml");
    write(
        &cfg,
        r#"
        [mesh]
        n = 6
        [problem]
        name = "spheroid-layer"
        [stabilization]
        epsilon = 0.0
        c_tau = 0.5
        gamma = 0.0
        tau2 = "inv-tau1"
        "#,
    );
    let out = dir.path().join("out");
    let output = surfsd()
        .args(["layer", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    for label in ["reference", "weak", "strong"] {
        assert!(out.join(format!("layer_{label}.vtk")).exists());
    }
    let csv = std::fs::read_to_string(out.join("layer.csv")).unwrap();
    assert!(csv.starts_with("label,c_tau,tau2,gamma,n,n_dofs,min_u,max_u,"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn shipped_configs_parse_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            surfsd::cli::RunConfig::load(&path)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5, "expected the canonical configs, found {seen}");
}

#[test]
fn condition_study_csv_has_offset_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cond.toml");
    write(
        &cfg,
        r#"
        [mesh]
        box_min = [-0.25, -0.25, -0.25]
        box_max = [1.25, 1.25, 1.25]
        n = 8
        [problem]
        name = "spheroid-smooth"
        alpha = "1"
        mean_constraint = false
        [stabilization]
        epsilon = 1e-3
        c_tau = 0.5
        gamma = 1.0
        tau2 = "inv-tau1"
        [study]
        seed = 7
        offsets = 3
        "#,
    );
    let out = dir.path().join("out");
    let output = surfsd()
        .args(["condition", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let csv = std::fs::read_to_string(out.join("condition.csv")).unwrap();
    assert!(csv.starts_with("gamma,n,h,offset_id,kappa,sigma_max,sigma_min"));
    // 1 base row + 3 offsets.
    assert_eq!(csv.lines().count(), 5);
    let kappas: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    assert!(kappas.iter().all(|k| *k >= 1.0 && k.is_finite()));
}
