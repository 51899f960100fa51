use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posjump"))
        .args(args)
        .output()
        .unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn out_path(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

#[test]
fn exit_codes_follow_the_verdict() {
    let cf = fixture("controller_failure.json");
    assert_eq!(code(&["validate", "--model", &cf]), 0);
    assert_eq!(code(&["analyze", "--model", &cf, "--param", "a=0.9"]), 0);
    assert_eq!(code(&["analyze", "--model", &cf, "--param", "a=1.1"]), 1);
    assert_eq!(
        code(&["analyze", "--model", &cf, "--param", "a=0.95", "--degree", "2"]),
        1
    );
    assert_eq!(
        code(&[
            "analyze-markov",
            "--model",
            &fixture("feedback_fast_design.json")
        ]),
        0
    );
    assert!(code(&["analyze", "--model", &fixture("discrete_two_mode.json")]) <= 1);
}

#[test]
fn input_errors_exit_with_two() {
    let cf = fixture("controller_failure.json");
    assert_eq!(code(&["analyze", "--model", "/nonexistent/model.json"]), 2);
    assert_eq!(code(&["analyze", "--model", &cf, "--param", "b=1"]), 2);
    assert_eq!(code(&["analyze", "--model", &cf, "--degree", "0"]), 2);
    assert_eq!(
        code(&["sweep", "--model", &cf, "--param", "a=grid(1,0,0.1)"]),
        2
    );

    let dir = tempfile::tempdir().unwrap();
    let bad = out_path(&dir, "bad.json");
    std::fs::write(
        &bad,
        r#"{"kind": "semi_markov", "modes": [[[1.0]]], "transition": [[1.0, 0.0]]}"#,
    )
    .unwrap();
    let o = run(&["validate", "--model", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn sweep_emits_a_table_and_brackets() {
    let dir = tempfile::tempdir().unwrap();
    let csv = out_path(&dir, "sweep.csv");
    let json = out_path(&dir, "sweep.json");
    let cf = fixture("controller_failure.json");
    let grid = "a=grid(0.8,1.2,0.05)";
    assert_eq!(
        code(&[
            "sweep",
            "--model",
            &cf,
            "--param",
            grid,
            "--out",
            csv.to_str().unwrap()
        ]),
        0
    );
    assert_eq!(
        code(&[
            "sweep",
            "--model",
            &cf,
            "--param",
            grid,
            "--out",
            json.to_str().unwrap()
        ]),
        0
    );

    let table = std::fs::read_to_string(&csv).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "a,indicator,normalized_indicator,margin,verdict"
    );
    assert_eq!(lines.count(), 9);

    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let text = v.to_string();
    assert!(text.contains("1.05") && text.contains("1.0"), "{text}");
}

#[test]
fn simulate_writes_positive_paths_and_ensembles() {
    let dir = tempfile::tempdir().unwrap();
    let path = out_path(&dir, "path.csv");
    let ens = out_path(&dir, "ens.csv");
    let m = fixture("markov_two_mode.json");
    let status = code(&[
        "simulate",
        "--model",
        &m,
        "--horizon",
        "5",
        "--seed",
        "3",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(status <= 1);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,x1,x2,mode");
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert!(f[1].parse::<f64>().unwrap() >= 0.0 && f[2].parse::<f64>().unwrap() >= 0.0);
        assert!(matches!(f[3], "1" | "2"));
    }

    let args = [
        "simulate",
        "--model",
        &m,
        "--horizon",
        "2",
        "--paths",
        "200",
        "--seed",
        "5",
        "--norm",
        "manhattan",
        "--out",
    ];
    let mut a = args.to_vec();
    a.push(ens.to_str().unwrap());
    assert!(code(&a) <= 1);
    let text = std::fs::read_to_string(&ens).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,mean,stderr,exact");
}

#[test]
fn artifacts_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cf = fixture("controller_failure.json");
    let cases: Vec<Vec<String>> = vec![
        vec![
            "simulate",
            "--model",
            &cf,
            "--param",
            "a=1",
            "--horizon",
            "20",
            "--seed",
            "9",
        ],
        vec![
            "simulate",
            "--model",
            &cf,
            "--horizon",
            "5",
            "--paths",
            "300",
            "--seed",
            "2",
        ],
        vec![
            "sweep",
            "--model",
            &cf,
            "--param",
            "a=grid(0.9,1.1,0.1)",
            "--degree",
            "2",
        ],
        vec![
            "moments",
            "--model",
            &fixture("markov_two_mode.json"),
            "--horizon",
            "3",
            "--degree",
            "2",
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for (k, case) in cases.iter().enumerate() {
        let mut bytes = Vec::new();
        for rep in 0..2 {
            let file = out_path(&dir, &format!("{k}_{rep}.csv"));
            let mut args: Vec<&str> = case.iter().map(String::as_str).collect();
            args.extend(["--out", file.to_str().unwrap()]);
            assert!(code(&args) <= 1, "{case:?}");
            bytes.push(std::fs::read(&file).unwrap());
        }
        assert!(!bytes[0].is_empty());
        assert_eq!(bytes[0], bytes[1], "{case:?}");
    }
}

#[test]
fn csv_floats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let file = out_path(&dir, "m.csv");
    let m = fixture("markov_two_mode.json");
    assert!(
        code(&[
            "moments",
            "--model",
            &m,
            "--horizon",
            "1",
            "--out",
            file.to_str().unwrap()
        ]) <= 1
    );
    let text = std::fs::read_to_string(&file).unwrap();
    let field = text
        .lines()
        .nth(2)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .to_string();
    let mantissa = field.split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 17, "{field}");
}
