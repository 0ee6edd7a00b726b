//! End-to-end tests of the `dnlab` binary: every subcommand, the file
//! formats it exchanges, and the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn dnlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dnlab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn mesh_dn_norm_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = dnlab(
        &[
            "mesh",
            "--rings",
            "20",
            "--sectors",
            "80",
            "--snap",
            "0.81,0.9",
            "--out",
            "disc.mesh",
        ],
        d,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("1601 vertices"));

    std::fs::write(
        d.join("ring.sigma"),
        "kind=radial-layered\nradii=[0.81,0.9]\nvalues=[1,2,1]\n",
    )
    .unwrap();
    std::fs::write(d.join("id.sigma"), "kind=constant\nvalue=1\n").unwrap();

    for (sigma, csv) in [("ring.sigma", "ring.csv"), ("id.sigma", "id.csv")] {
        let out = dnlab(
            &[
                "dn",
                "--sigma",
                sigma,
                "--mesh",
                "disc.mesh",
                "--kmax",
                "8",
                "--out",
                csv,
            ],
            d,
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let header = std::fs::read_to_string(d.join("ring.csv")).unwrap();
    assert!(header.starts_with("k_type l_type k l value"));

    let out = dnlab(
        &[
            "norm", "--dn", "ring.csv", "--minus", "id.csv", "--from", "0.5", "--to", "-0.5",
        ],
        d,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let norm: f64 = stdout(&out).trim().parse().unwrap();
    // Coarse-mesh estimate of the ring defect at R=0.9; the analytic sup over
    // k <= 8 is about 0.1935.
    assert!(norm > 0.1 && norm < 0.3, "norm = {norm}");

    // Norm of the free-space DN itself: the weighting sends each diagonal k
    // to k / max(k,1), so the exact value is 1.
    let out = dnlab(&["norm", "--dn", "id.csv"], d);
    assert!(out.status.success());
    let id_norm: f64 = stdout(&out).trim().parse().unwrap();
    assert!((id_norm - 1.0).abs() < 0.1, "got {id_norm}");
}

#[test]
fn dn_dump_solution_writes_vertex_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dnlab(
        &["mesh", "--rings", "8", "--sectors", "32", "--out", "m.mesh"],
        d,
    );
    std::fs::write(d.join("s.sigma"), "kind=constant\nvalue=1\n").unwrap();
    let out = dnlab(
        &[
            "dn",
            "--sigma",
            "s.sigma",
            "--mesh",
            "m.mesh",
            "--kmax",
            "4",
            "--out",
            "dn.csv",
            "--dump-solution",
        ],
        d,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let sol = std::fs::read_to_string(d.join("dn.csv.solution.csv")).unwrap();
    let lines: Vec<&str> = sol.lines().collect();
    assert_eq!(lines[0], "vertex,x,y,value");
    assert_eq!(lines.len(), 1 + 1 + 8 * 32); // header + center + rings

    // Harmonic extension of cos(theta) is x: spot-check the first ring vertex.
    let first: Vec<&str> = lines[2].split(',').collect();
    let x: f64 = first[1].parse().unwrap();
    let v: f64 = first[3].parse().unwrap();
    assert!((v - x).abs() < 5e-3, "value {v} vs x {x}");
}

#[test]
fn oracle_subcommands_print_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = dnlab(&["oracle", "kstar", "--r", "0.95"], d);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("k_star"));
    assert!(text.contains("0.95,1,6,"));
    assert!(text.trim_end().ends_with("true"));

    let out = dnlab(&["oracle", "laminate", "--a", "1", "--b", "2"], d);
    assert!(stdout(&out).contains("1.3333333333333333,0,1.5"));

    let out = dnlab(
        &[
            "oracle", "layered", "--radii", "0.5", "--values", "4,1", "--kmax", "2",
        ],
        d,
    );
    let text = stdout(&out);
    // Two-layer eigenvalue at k=1 is 23/17.
    let k1: f64 = text
        .lines()
        .find(|l| l.starts_with("1,"))
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((k1 - 23.0 / 17.0).abs() < 1e-12, "got {k1}");

    let out = dnlab(
        &["oracle", "mk", "--alpha", "1", "--r", "0.9", "--kmax", "3"],
        d,
    );
    let text = stdout(&out);
    assert!(text.lines().count() == 4);
    assert!(text.contains("1,0.1194829393268"));

    // Out-of-domain radius is rejected with exit code 2.
    let out = dnlab(&["oracle", "kstar", "--r", "0.9"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("oracle error"));
}

#[test]
fn experiment_exit_codes_and_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("calib.cfg"),
        "rings=24\nsectors=96\nkmax=6\ndiag_k_cap=3\ndiag_tol=0.05\nh_cap=0.1\nrefinements=1\n",
    )
    .unwrap();
    let out = dnlab(
        &[
            "experiment",
            "calibration",
            "--config",
            "calib.cfg",
            "--out",
            "rep",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.matches("PASS").count(), 3);
    assert!(d.join("rep/report.json").exists());
    assert!(d.join("rep/calibration_levels.csv").exists());

    // A criterion that cannot hold (no refinement chain) exits 1, and the
    // failing verdict is printed.
    std::fs::write(
        d.join("fail.cfg"),
        "rings=24\nsectors=96\nkmax=6\ndiag_k_cap=3\ndiag_tol=0.05\nh_cap=0.1\nrefinements=0\n",
    )
    .unwrap();
    let out = dnlab(
        &[
            "experiment",
            "calibration",
            "--config",
            "fail.cfg",
            "--out",
            "rep2",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL errors-decrease-under-refinement"));

    // Unknown scenario and invalid config both exit 2 before any report.
    let out = dnlab(&["experiment", "warp", "--out", "rep3"], d);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(d.join("bad.cfg"), "bananas=7\n").unwrap();
    let out = dnlab(
        &[
            "experiment",
            "calibration",
            "--config",
            "bad.cfg",
            "--out",
            "rep4",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("rep4").exists(), "no partial report on rejection");
}

#[test]
fn errors_carry_file_context() {
    let dir = tempfile::tempdir().unwrap();
    let out = dnlab(&["norm", "--dn", "missing.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.csv"));
}
