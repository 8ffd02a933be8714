use std::process::Command;

fn ssd() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ssd"));
    c.env("RUST_LOG", "warn");
    c
}

#[test]
fn help_lists_every_flag() {
    let out = ssd().args(["sweep", "--help"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--config", "--seed", "--out", "--threads", "--n", "--m", "--L", "--q", "--sigma-x",
        "--sigma-w-grid", "--x0-grid", "--trials", "--detector", "--mode", "--delta",
    ] {
        assert!(text.contains(flag), "missing {flag}");
    }
}

#[test]
fn exit_codes() {
    assert_eq!(ssd().arg("nope").status().unwrap().code(), Some(1));
    assert_eq!(ssd().arg("selftest").status().unwrap().code(), Some(0));
    let io = ssd().args(["boundary", "--config", "/no/such/file.json"]).status().unwrap();
    assert_eq!(io.code(), Some(3));
    let dir = tempfile::tempdir().unwrap();
    let blocked = dir.path().join("file");
    std::fs::write(&blocked, "").unwrap();
    // output directory path is a regular file
    let st = ssd()
        .args(["posterior", "--out"])
        .arg(blocked.join("sub"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(3));
}

#[test]
fn fig3d_boundary_csv() {
    let dir = tempfile::tempdir().unwrap();
    let st = ssd()
        .args(["boundary", "--q", "0.05", "--sigma-x", "5", "--L", "4", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(st.success());
    let csv = std::fs::read_to_string(dir.path().join("boundary_q0.05_sx5_L4.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "sigma_w,x0_star_bht,x0_star_csbp");
    assert_eq!(rows.len(), 61);
    for r in &rows[1..] {
        let v: Vec<f64> = r.split(',').map(|s| s.parse().unwrap()).collect();
        assert!(v[1] <= v[2]);
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let st = ssd()
            .args(["sweep", "--mode", "full", "--n", "48", "--m", "24", "--L", "3", "--q", "0.05"])
            .args(["--sigma-w-grid", "0.5,2", "--x0-grid", "1,6", "--trials", "2", "--threads", threads, "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        std::fs::read(dir.path().join("sweep_q0.05_sx10_L3_full_vector.csv")).unwrap()
    };
    assert_eq!(run("1"), run("3"));
}
