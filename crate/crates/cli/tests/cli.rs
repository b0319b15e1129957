use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quasineutral"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn constant_doping_solve_reports_flat_potential() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["solve", "--doping", "constant:0.5", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o)
        .lines()
        .find(|l| l.contains("max |V|"))
        .unwrap()
        .to_string();
    let v: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!(v <= 1e-10, "{line}");
    let csv = fs::read_to_string(dir.path().join("state.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);
    assert!(csv.starts_with("x,C,V,n,p"));
}

#[test]
fn gradcheck_passes_and_exits_zero() {
    let o = run(&[
        "gradcheck",
        "--nodes",
        "50",
        "--lambda2",
        "1e-3",
        "--seed",
        "7",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let line = stdout(&o)
        .lines()
        .find(|l| l.starts_with("max relative error"))
        .unwrap()
        .to_string();
    let err: f64 = line.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(err <= 1e-4);
}

#[test]
fn configuration_errors_exit_two_and_name_the_key() {
    let o = run(&["solve", "--nodes", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`nodes`"), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[optimizer]\nomega = 3.0\n").unwrap();
    let o = run(&["optimize", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("omega"), "{}", stderr(&o));

    let o = run(&["sweep", "--sigma", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`sigma`"));
}

#[test]
fn literal_signs_fail_numerically_with_exit_one() {
    let o = run(&["optimize", "--paper-signs", "--nodes", "40"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no descent step"), "{}", stderr(&o));
}

fn strip_timings(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| !header[i].starts_with("t_"))
        .collect();
    text.lines()
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            keep.iter().map(|&i| cols[i]).collect::<Vec<_>>().join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn sweep_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    fs::write(
        &cfg,
        "[mesh]\nnodes = 40\n[sweep]\nlambda2 = [1e-3, 1e-6, 0.0]\n",
    )
    .unwrap();
    let outs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = run(&[
                "sweep",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ]);
            assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
            out
        })
        .collect();
    let rows = strip_timings(&outs[0].join("sweep.csv"));
    assert_eq!(rows.lines().count(), 4);
    assert_eq!(rows, strip_timings(&outs[1].join("sweep.csv")));
    for name in ["fig_profiles_C.csv", "fig_cost_J.csv"] {
        assert_eq!(
            fs::read(outs[0].join(name)).unwrap(),
            fs::read(outs[1].join(name)).unwrap()
        );
    }
    assert!(fs::read_dir(&outs[0]).unwrap().all(|e| !e
        .unwrap()
        .file_name()
        .to_string_lossy()
        .ends_with(".partial")));
}

#[test]
fn csv_doping_is_interpolated_onto_the_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("c.csv");
    fs::write(&profile, "x,value\n0,0.4\n1,0.4\n").unwrap();
    let arg = format!("csv:{}", profile.display());
    let o = run(&[
        "solve",
        "--nodes",
        "30",
        "--doping",
        &arg,
        "--lambda2",
        "1e-4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o)
        .lines()
        .find(|l| l.contains("max |V|"))
        .unwrap()
        .to_string();
    let v: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!(v <= 1e-10);
}
