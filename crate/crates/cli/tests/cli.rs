//! End-to-end runs of the `glbulk` binary.

use std::path::Path;
use std::process::{Command, Output};

fn glbulk(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glbulk"))
        .args(args)
        .env("GLBULK_CACHE_DIR", cache)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn invalid_b_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = glbulk(&["bulk", "--b", "1.5", "--out", dir.path().to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("(0, 1]"), "{}", stderr(&o));
}

#[test]
fn limit_with_one_side_length_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = glbulk(&["limit", "--flux", "8", "--out", dir.path().to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at least 3"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "b = 0.5\nwidth = 3\n").unwrap();
    let o = glbulk(&["bulk", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("width"));
}

#[test]
fn cache_hit_reproduces_records_and_force_recomputes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cache = dir.path().join("cache");
    let args = ["bulk", "--b", "0.5", "--flux", "1,2", "--bc", "periodic,neumann", "--out", out.to_str().unwrap()];
    let first = glbulk(&args, &cache);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(cache.join("records.jsonl").exists());
    let lines1 = std::fs::read(out.join("bulk.jsonl")).unwrap();
    let csv1 = std::fs::read(out.join("bulk.csv")).unwrap();

    let second = glbulk(&args, &cache);
    assert!(stderr(&second).contains("4 from cache"), "{}", stderr(&second));
    assert_eq!(std::fs::read(out.join("bulk.jsonl")).unwrap(), lines1);
    assert_eq!(std::fs::read(out.join("bulk.csv")).unwrap(), csv1);

    let mut forced = args.to_vec();
    forced.push("--force");
    let third = glbulk(&forced, &cache);
    assert!(stderr(&third).contains("0 from cache"));
    // recomputed energies agree with the cached ones
    let csv3 = String::from_utf8(std::fs::read(out.join("bulk.csv")).unwrap()).unwrap();
    assert_eq!(csv3, String::from_utf8(csv1).unwrap());
}

#[test]
fn flags_override_config_file_and_header_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# spectrum on two squares\nflux = 1, 2\nbc = dirichlet\ncount = 3\n").unwrap();
    let o = glbulk(
        &["spectrum", "--config", cfg.to_str().unwrap(), "--bc", "neumann", "--out", out.to_str().unwrap()],
        &dir.path().join("cache"),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("spectrum.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.contains("\"bc\":[\"neumann\"]") && header.contains("\"flux\":[1,2]"), "{header}");
    assert_eq!(lines.next().unwrap(), "bc,flux,side,n,index,eigenvalue,residual,schema_version");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.starts_with("neumann,")));
}

#[test]
fn energies_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let read = |jobs: &str| -> Vec<f64> {
        let out = dir.path().join(format!("out{jobs}"));
        let o = glbulk(
            &[
                "bulk", "--b", "0.3,0.7", "--flux", "2", "--bc", "periodic,dirichlet", "--jobs", jobs, "--out",
                out.to_str().unwrap(),
            ],
            &dir.path().join(format!("cache{jobs}")),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let text = std::fs::read_to_string(out.join("bulk.csv")).unwrap();
        text.lines().skip(2).map(|l| l.split(',').nth(5).unwrap().parse().unwrap()).collect()
    };
    let a = read("1");
    let b = read("3");
    assert_eq!(a.len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn unconverged_solve_exits_with_solver_failure_and_keeps_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = glbulk(
        &["bulk", "--b", "0.5", "--flux", "1", "--n", "16", "--restarts", "0", "--tol", "1e-300", "--out", out.to_str().unwrap()],
        &dir.path().join("cache"),
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("bulk.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("not_converged"));
}
