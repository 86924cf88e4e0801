//! End-to-end tests of the `cubeq` binary: argument validation and exit
//! codes, output schemas, result-store round trips, and thread-count
//! determinism.

use std::path::PathBuf;
use std::process::Output;

fn write_form(dir: &std::path::Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn fermat_json(n: usize) -> String {
    let terms: Vec<String> = (0..n)
        .map(|i| {
            let e: Vec<String> = (0..n).map(|j| if i == j { "3" } else { "0" }.into()).collect();
            format!("{{\"e\":[{}],\"c\":1}}", e.join(","))
        })
        .collect();
    format!("{{\"n\":{n},\"terms\":[{}]}}", terms.join(","))
}

fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_cubeq"));
    cmd.args(args).env_remove("CUBEQ_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn cubeq")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn expsum_examples_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let f1 = write_form(dir.path(), "fermat1.json", &fermat_json(1));

    // Q(0,5) = 0 for the n=1 cuspidal form
    let out = run(&["expsum", "--form", f1.to_str().unwrap(), "--m", "0,0", "--k", "5"]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert!(text.contains("|Q| = 0") || text.contains("e-1"), "{text}");

    // k = 1 gives exactly 1
    let out = run(&["expsum", "--form", f1.to_str().unwrap(), "--m", "0,0", "--k", "1"]);
    assert!(stdout_str(&out).contains("|Q| = 1"));

    // wrong m length is invalid input: exit 2
    let out = run(&["expsum", "--form", f1.to_str().unwrap(), "--m", "0,0,0", "--k", "5"]);
    assert_eq!(out.status.code(), Some(2));

    // k = 0 is invalid
    let out = run(&["expsum", "--form", f1.to_str().unwrap(), "--m", "0,0", "--k", "0"]);
    assert_eq!(out.status.code(), Some(2));

    // cross-checked run agrees over a composite modulus
    let f2 = write_form(dir.path(), "fermat2.json", &fermat_json(2));
    let out = run(&[
        "expsum", "--check", "--form", f2.to_str().unwrap(), "--m", "1,2,0", "--k", "35",
    ]);
    assert!(out.status.success(), "{}", stdout_str(&out));
    assert!(stdout_str(&out).contains("check: all routes agree"));

    // json format carries the method tag
    let out = run(&[
        "expsum", "--form", f2.to_str().unwrap(), "--m", "1,2,0", "--k", "35", "--format", "json",
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(v["method"], "crt");
}

#[test]
fn form_file_validation() {
    let dir = tempfile::tempdir().unwrap();
    for (name, body) in [
        ("dup.json", r#"{"n":2,"terms":[{"e":[3,0],"c":1},{"e":[3,0],"c":2}]}"#),
        ("deg.json", r#"{"n":2,"terms":[{"e":[2,0],"c":1}]}"#),
        ("empty.json", r#"{"n":2,"terms":[]}"#),
        ("garbage.json", "not json"),
    ] {
        let path = write_form(dir.path(), name, body);
        let out = run(&["expsum", "--form", path.to_str().unwrap(), "--m", "0,0,0", "--k", "5"]);
        assert_eq!(out.status.code(), Some(2), "{name} should be rejected");
    }
    // missing file
    let out = run(&["expsum", "--form", "/nonexistent.json", "--m", "0,0", "--k", "5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn scan_schema_and_store_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let f3 = write_form(dir.path(), "fermat3.json", &fermat_json(3));
    let store = dir.path().join("store");
    let args = [
        "scan",
        "--form",
        f3.to_str().unwrap(),
        "--p",
        "7",
        "--thresholds",
        "1,2,4",
        "--store",
        store.to_str().unwrap(),
    ];
    let first = run(&args);
    assert!(first.status.success());
    let header = "p,tau,exceed_count,p_pow_nminus1,fraction";
    assert!(stdout_str(&first).starts_with(header));
    // spectrum file persisted
    let files: Vec<_> = std::fs::read_dir(&store)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    assert!(files.iter().any(|f| f.starts_with("sp_") && f.ends_with("_p7.cqs")));

    // second run reads the cache and reproduces the same bytes
    let second = run(&args);
    assert!(second.status.success());
    assert_eq!(first.stdout, second.stdout);
    assert!(String::from_utf8_lossy(&second.stderr).contains("cache hit"));

    // non-prime p rejected
    let out = run(&["scan", "--form", f3.to_str().unwrap(), "--p", "9", "--thresholds", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn expsum_store_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let f2 = write_form(dir.path(), "fermat2.json", &fermat_json(2));
    let store = dir.path().join("store");
    let args = [
        "expsum",
        "--form",
        f2.to_str().unwrap(),
        "--m",
        "1,-2,3",
        "--k",
        "15",
        "--store",
        store.to_str().unwrap(),
    ];
    let first = run(&args);
    assert!(first.status.success());
    let second = run(&args);
    assert_eq!(first.stdout, second.stdout);
    assert!(String::from_utf8_lossy(&second.stderr).contains("cache hit"));
}

#[test]
fn averages_and_sseries_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let f1 = write_form(dir.path(), "fermat1.json", &fermat_json(1));

    let out = run(&[
        "averages", "--form", f1.to_str().unwrap(), "--k", "5,15", "--quantity", "D",
    ]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert!(text.starts_with("p,quantity,parameter,value,bound,ratio"));
    // D(5,0) = 20 sqrt(5), ratio 0.8
    assert!(text.contains("5,D,0,44.7213595"), "{text}");
    assert!(text.contains(",0.8"), "{text}");

    let f2 = write_form(dir.path(), "fermat2.json", &fermat_json(2));
    let out = run(&["sseries", "--form", f2.to_str().unwrap(), "--P", "7", "--A", "2"]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert!(text.starts_with("p,A,route_expsum,route_count,sigma_p,stabilized"));
    assert_eq!(text.lines().count(), 5); // header + p in {2,3,5,7}
    assert!(String::from_utf8_lossy(&out.stderr).contains("S_truncated"));

    // json mirrors the rows as an array of objects
    let out = run(&[
        "sseries", "--form", f2.to_str().unwrap(), "--P", "7", "--A", "2", "--format", "json",
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
    assert!(v[0]["sigma_p"].as_f64().unwrap() > 0.0);
}

#[test]
fn count_and_asymptotic() {
    let dir = tempfile::tempdir().unwrap();
    let f6 = write_form(dir.path(), "fermat6.json", &fermat_json(6));
    let out = run(&["count", "--form", f6.to_str().unwrap(), "--X", "1"]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert!(text.starts_with("X,upsilon,raw"));
    assert!(text.contains("8.315287191035682e-7,1"), "{text}");

    // toy asymptotic table on the n=2 form: grid quadrature, no seed needed
    let f2 = write_form(dir.path(), "fermat2.json", &fermat_json(2));
    let out = run(&[
        "asymptotic",
        "--form",
        f2.to_str().unwrap(),
        "--X",
        "4,6",
        "--P",
        "7",
        "--A",
        "2",
        "--grid",
        "80",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout_str(&out);
    assert!(text.starts_with("X,upsilon,raw,main_term,ratio,slope_estimate"));
    assert_eq!(text.lines().count(), 3);
    // final row carries a slope estimate
    assert!(!text.lines().last().unwrap().ends_with(','));

    // the n=6 singular integral needs Monte Carlo, which demands a seed
    let out = run(&[
        "asymptotic", "--form", f6.to_str().unwrap(), "--X", "2", "--P", "3", "--A", "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    // user-supplied anchors are validated
    let out = run(&[
        "count", "--form", f2.to_str().unwrap(), "--X", "2", "--anchor", "1,1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&[
        "count", "--form", f2.to_str().unwrap(), "--X", "2", "--anchor", "1,-1",
    ]);
    assert!(out.status.success());
}

#[test]
fn verify_cli_and_env_threads() {
    // bad suite name: exit 2
    let out = run(&["verify", "--suite", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    // density without a seed: exit 2 (mandatory for Monte Carlo determinism)
    let out = run(&["verify", "--suite", "density"]);
    assert_eq!(out.status.code(), Some(2));
    // malformed CUBEQ_THREADS: exit 2
    let out = run_env(&["verify", "--suite", "identities"], &[("CUBEQ_THREADS", "abc")]);
    assert_eq!(out.status.code(), Some(2));
    // CUBEQ_THREADS overrides --threads and still succeeds deterministically
    let a = run_env(
        &["verify", "--suite", "identities", "--threads", "1"],
        &[("CUBEQ_THREADS", "2")],
    );
    assert!(a.status.success());
    let b = run(&["verify", "--suite", "identities", "--threads", "4"]);
    assert_eq!(a.stdout, b.stdout);
    // csv format is machine readable
    let out = run(&["verify", "--suite", "identities", "--format", "csv"]);
    assert!(stdout_str(&out).starts_with("suite,check,pass,detail"));
}

#[test]
fn out_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let f1 = write_form(dir.path(), "fermat1.json", &fermat_json(1));
    let out_path = dir.path().join("scan.csv");
    let to_stdout = run(&[
        "scan", "--form", f1.to_str().unwrap(), "--p", "5", "--thresholds", "1,2",
    ]);
    let to_file = run(&[
        "scan",
        "--form",
        f1.to_str().unwrap(),
        "--p",
        "5",
        "--thresholds",
        "1,2",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(to_file.status.success());
    assert!(to_file.stdout.is_empty());
    assert_eq!(std::fs::read(&out_path).unwrap(), to_stdout.stdout);
}
