//! End-to-end checks of the command-line interface: exit codes, output file
//! schemas and environment validation.

use std::path::PathBuf;
use std::process::Command;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_verifem")
}

fn tmp(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("verifem_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn missing_config_file_is_exit_1() {
    let out = Command::new(binary())
        .args(["solve", "--config", "/nonexistent/nope.ini"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read config"));
}

#[test]
fn unknown_key_is_exit_1_with_line_number() {
    let dir = tmp("badkey");
    let cfg = dir.join("bad.ini");
    std::fs::write(&cfg, "problem=sin_sin\nn=4\nwarp_factor=9\n").unwrap();
    let out = Command::new(binary())
        .args(["solve", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("warp_factor"), "{err}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn lambda_validation_message() {
    let dir = tmp("lambda");
    let cfg = dir.join("bad.ini");
    std::fs::write(
        &cfg,
        "problem=sin_sin\nn=4\nestimators=spr\n[adapt]\nlambda=1.5\n",
    )
    .unwrap();
    let out = Command::new(binary())
        .args(["adapt", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda out of [0,1]"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn invalid_thread_cap_is_rejected() {
    let dir = tmp("threads");
    let cfg = dir.join("ok.ini");
    std::fs::write(&cfg, "problem=sin_sin\nn=2\nestimators=zz\n").unwrap();
    let out = Command::new(binary())
        .args(["estimate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("o"))
        .env("VERIFEM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("VERIFEM_THREADS"));
    // a valid cap passes
    let out = Command::new(binary())
        .args(["estimate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("o2"))
        .env("VERIFEM_THREADS", "4")
        .output()
        .unwrap();
    assert!(out.status.success());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn estimate_report_schema_and_goal_ordering() {
    let dir = tmp("schema");
    let cfg = dir.join("run.ini");
    std::fs::write(
        &cfg,
        "problem=sin_sin\nn=8\nestimators=explicit,cre_analytic\n[goal]\nqoi=subdomain_average\nbox=0.25,0.25,0.5,0.5\nmethods=cre,cre_enriched\n",
    )
    .unwrap();
    let out_dir = dir.join("out");
    let out = Command::new(binary())
        .args(["estimate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    // two estimator entries with their bound kinds
    assert!(report.contains("\"name\": \"explicit\""));
    assert!(report.contains("\"bound_kind\": \"indicator\""));
    assert!(report.contains("\"name\": \"cre_analytic\""));
    assert!(report.contains("\"bound_kind\": \"guaranteed_upper\""));
    // goal entries carry the fixed field set and satisfy the ordering
    for method in ["cre_corrected", "cre_plain", "cre_enriched"] {
        assert!(report.contains(&format!("\"method\": \"{method}\"")), "{method}");
    }
    let parse = |key: &str, after: &str| -> f64 {
        let i = report.find(after).unwrap();
        let rest = &report[i..];
        let j = rest.find(key).unwrap();
        let tail = &rest[j + key.len()..];
        let end = tail.find([',', '\n']).unwrap();
        tail[..end].trim().parse().unwrap()
    };
    let lower = parse("\"lower\": ", "cre_corrected");
    let corrected = parse("\"corrected\": ", "cre_corrected");
    let upper = parse("\"upper\": ", "cre_corrected");
    assert!(lower <= corrected && corrected <= upper);
    // floating point values carry 17 significant digits
    assert!(report.contains("e0") || report.contains("e-1"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn solve_writes_vtk_with_solution_field() {
    let dir = tmp("solve");
    let cfg = dir.join("run.ini");
    std::fs::write(&cfg, "problem=fig1_square\nn=4\n").unwrap();
    let out_dir = dir.join("out");
    let out = Command::new(binary())
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let vtk = std::fs::read_to_string(out_dir.join("mesh_00.vtk")).unwrap();
    assert!(vtk.starts_with("# vtk DataFile Version 3.0"));
    assert!(vtk.contains("SCALARS u_h double 1"));
    assert!(vtk.contains("VECTORS q_h double"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn study_reports_rates() {
    let dir = tmp("study");
    let cfg = dir.join("run.ini");
    std::fs::write(
        &cfg,
        "problem=sin_sin\nn=4\nestimators=spr\n[study]\nmode=uniform\nlevels=3\n",
    )
    .unwrap();
    let out_dir = dir.join("out");
    let out = Command::new(binary())
        .args(["study", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let report = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    assert!(report.contains("slope_vs_dofs"));
    assert!(report.contains("slope_vs_h"));
    let csv = std::fs::read_to_string(out_dir.join("study.csv")).unwrap();
    assert!(csv.starts_with("iteration,N,h,eta,ref_error,i_eff,seconds\n"));
    assert_eq!(csv.lines().count(), 4);
    let _ = std::fs::remove_dir_all(&dir);
}
