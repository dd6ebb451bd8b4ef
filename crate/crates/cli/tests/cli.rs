use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swarm-amr")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn heuristic_evaluation_csvs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        ok(&["evaluate", "--method", "heuristic", "--theta", "0.5", "--family", "laplace", "--eval-count", "2", "--out", path(out)]);
    }
    let text = fs::read(&a).unwrap();
    assert_eq!(text, fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(text).unwrap().lines().count(), 3);
    assert!(dir.path().join("a.walltime.csv").exists());
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, format!("method = \"uniform\"\nfamily = \"poisson\"\nsweep = [1, 2]\neval_count = 2\nhorizon = 2\nout = {:?}\n", path(dir.path()))).unwrap();
    ok(&["evaluate", "--config", path(&cfg), "--value", "2"]);
    let csv = fs::read_to_string(dir.path().join("uniform_2_s0.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (n0, n): (usize, usize) = (f[4].parse().unwrap(), f[5].parse().unwrap());
        assert_eq!(n, 16 * n0);
    }
    ok(&["sweep", "--config", path(&cfg)]);
    assert!(dir.path().join("uniform.csv").exists());
    let agg = dir.path().join("agg");
    let fits = ok(&["aggregate", path(dir.path()), "--out", path(&agg)]);
    assert!(fits.starts_with("method,points,slope,log10_intercept\nuniform,"));
    assert!(agg.join("scatter.csv").exists());
    // shell globs pick up the wall-time sidecars too
    let sidecar = dir.path().join("uniform.walltime.csv");
    assert!(sidecar.exists());
    ok(&["aggregate", path(&dir.path().join("uniform.csv")), path(&sidecar), "--out", path(&agg)]);
}

#[test]
fn aggregate_recovers_an_exact_power_law() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("method,sweep_value,seed,problem_id,initial_elements,final_elements,squared_error,linear_error\n");
    for (i, n) in [40usize, 160, 640, 2560].iter().enumerate() {
        csv.push_str(&format!("m,{i},0,0,40,{n},{},1\n", 2.0 * (*n as f64).powf(-0.75)));
    }
    let file = dir.path().join("m.csv");
    fs::write(&file, csv).unwrap();
    let out = ok(&["aggregate", path(&file), "--out", path(dir.path())]);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert!((row[2].parse::<f64>().unwrap() + 0.75).abs() < 1e-10);
    assert!((row[3].parse::<f64>().unwrap() - 2f64.log10()).abs() < 1e-10);
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["evaluate".into(), "--method".into(), "asmr".into(), "--alpha".into(), "0.05".into()],
        vec!["evaluate".into(), "--method".into(), "asmr".into(), "--alpha".into(), "0.05".into(), "--checkpoint".into(), "/nonexistent/x.ckpt".into()],
        vec!["evaluate".into(), "--method".into(), "heuristic".into(), "--theta".into(), "2".into()],
        vec!["evaluate".into(), "--method".into(), "teleport".into()],
        vec!["train".into(), "--method".into(), "heuristic".into(), "--theta".into(), "0.1".into()],
        vec!["evaluate".into(), "--config".into(), path(&dir.path().join("missing.toml")).into()],
        vec!["aggregate".into(), path(&dir.path().join("nothing")).into(), "--out".into(), path(dir.path()).into()],
    ];
    for args in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = run(&args);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "), "{args:?}");
    }
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "method=random\nsweep=0.5\nwobble=3\n").unwrap();
    let out = run(&["sweep", "--config", path(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("wobble"));
}

#[test]
fn render_writes_an_svg() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("mesh.svg");
    ok(&["render", "--method", "heuristic", "--theta", "0.3", "--eval-count", "3", "--problem", "1", "--field", "solution", "--out", path(&svg)]);
    assert!(fs::read_to_string(&svg).unwrap().contains("<polygon"));
}
