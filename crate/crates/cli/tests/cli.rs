use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_provprof"));
    c.env("PROVPROF_THREADS", "1").env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const GLM_CONFIG: &str = "\
[nuisance.propensity]
members = [{ kind = \"glm\" }]
[nuisance.outcome]
members = [{ kind = \"glm\" }]
";

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_reader(csv.as_bytes());
    let j = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[j].to_string()).collect()
}

#[test]
fn toy_ratio_matches_hand_computation() {
    let dir = TempDir::new().unwrap();
    let input = write(
        dir.path(),
        "toy.csv",
        "w1,provider,y\n0.5,1,1\n0.5,1,0\n0.5,2,1\n0.5,2,1\n",
    );
    let cfg = write(dir.path(), "cfg.toml", GLM_CONFIG);
    let out = dir.path().join("out");
    let o = run(&[
        "estimate",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--parameters",
        "psi1,psi2,smr",
        "--folds",
        "1",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("estimates.csv")).unwrap();
    let smr: Vec<f64> = column(&text, "smr")
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(
        (smr[0] - 2.0 / 3.0).abs() < 1e-8 && (smr[1] - 4.0 / 3.0).abs() < 1e-8,
        "{smr:?}"
    );
    assert_eq!(column(&text, "provider"), ["1", "2"]);
    let header = text.lines().next().unwrap();
    assert!(header
        .split(',')
        .all(|h| !h.starts_with("phi") && !h.starts_with("er")));
    assert!(out.join("positivity.csv").exists());
}

/// Provider `c` is almost never seen at w = 1, so its propensity there is tiny.
fn separated_csv(dir: &Path) -> PathBuf {
    let mut s = String::from("w1,provider,y\n");
    for i in 0..300 {
        let w = i % 2;
        let p = match (w, i % 3) {
            (1, _) => ["a", "b"][i % 4 / 2],
            (_, k) => ["a", "b", "c"][k],
        };
        let p = if i == 1 { "c" } else { p };
        s.push_str(&format!("{w},{p},{}\n", (i * 7 % 5) % 2));
    }
    write(dir, "sep.csv", &s)
}

#[test]
fn strict_positivity_refuses_direct_parameter() {
    let dir = TempDir::new().unwrap();
    let input = separated_csv(dir.path());
    let cfg = write(dir.path(), "cfg.toml", GLM_CONFIG);
    let common = |extra: &[&str]| {
        let mut args = vec![
            "estimate",
            "--config",
            cfg.to_str().unwrap(),
            "--input",
            input.to_str().unwrap(),
            "--parameters",
            "phi,psi1",
            "--folds",
            "2",
            "--truncation",
            "1e-6",
            "--out-dir",
        ];
        args.extend_from_slice(extra);
        run(&args)
    };
    let out = dir.path().join("strict");
    let o = common(&[out.to_str().unwrap()]);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert_eq!(code(&o), 3, "{stderr}");
    assert!(stderr.contains("provider c"), "{stderr}");
    assert!(!out.join("estimates.csv").exists());

    let out = dir.path().join("forced");
    let o = common(&[out.to_str().unwrap(), "--force-direct"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("estimates.csv")).unwrap();
    let notes = column(&text, "notes");
    let flags = column(&text, "positivity_flag");
    assert_eq!(flags[2], "practical_violation");
    assert!(notes[2].contains("positivity violation overridden"));
}

#[test]
fn estimate_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let input = separated_csv(dir.path());
    let outputs: Vec<Vec<u8>> = (0..2)
        .map(|k| {
            let out = dir.path().join(format!("run{k}"));
            let o = run(&[
                "estimate",
                "--input",
                input.to_str().unwrap(),
                "--seed",
                "9",
                "--out-dir",
                out.to_str().unwrap(),
            ]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            std::fs::read(out.join("estimates.csv")).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn estimate_validation_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let bad = write(
        dir.path(),
        "bad.csv",
        "w1,provider,y\n0.1,a,1\n0.2,b,oops\n",
    );
    let o = run(&["estimate", "--input", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("oops"));
    assert_eq!(code(&run(&["estimate"])), 2);
    let cfg = write(dir.path(), "cfg.toml", "folds = 2\nlevel = 1.5\n");
    let o = run(&[
        "estimate",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    let cfg = write(dir.path(), "typo.toml", "fold = 2\n");
    assert_eq!(
        code(&run(&["estimate", "--config", cfg.to_str().unwrap()])),
        2
    );
}

#[test]
fn printed_config_reloads_to_the_same_config() {
    let dir = TempDir::new().unwrap();
    let o = run(&[
        "estimate",
        "--print-config",
        "--folds",
        "3",
        "--parameters",
        "phi,smr",
        "--input",
        "x.csv",
    ]);
    assert_eq!(code(&o), 0);
    let first = String::from_utf8(o.stdout).unwrap();
    assert!(first.contains("folds = 3"));
    let cfg = write(dir.path(), "cfg.toml", &first);
    let o = run(&[
        "estimate",
        "--print-config",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), first);

    let o = run(&[
        "simulate",
        "--print-config",
        "--study",
        "sim2",
        "--N",
        "20000",
    ]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(
        text.contains("study = \"sim2\"") && text.contains("n = 20000"),
        "{text}"
    );
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.join(name);
    let mut args = vec![
        "simulate",
        "--study",
        "sim1",
        "--N",
        "400",
        "--m",
        "4",
        "--replicates",
        "2",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    (run(&args), out)
}

#[test]
fn simulate_writes_schema_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let audit = dir.path().join("audit.csv");
    let (o, a) = simulate(dir.path(), "a.csv", &["--audit", audit.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (o, b) = simulate(dir.path(), "b.csv", &[]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(
        text.lines().next().unwrap(),
        "study,scenario,estimator,parameter,N,ME,MAE,coverage,replicates,failures"
    );
    for est in ["tmle", "glm"] {
        for p in ["phi", "psi2", "er", "smr"] {
            assert!(
                column(&text, "estimator")
                    .iter()
                    .zip(column(&text, "parameter"))
                    .any(|(e, q)| e == est && q == p),
                "{est} {p}"
            );
        }
    }
    let audit = std::fs::read_to_string(audit).unwrap();
    assert!(audit.lines().count() > 2 * 4);
}

#[test]
fn unknown_scenario_exits_2() {
    let dir = TempDir::new().unwrap();
    let (o, _) = simulate(dir.path(), "x.csv", &["--scenarios", "s1,s7"]);
    assert_eq!(code(&o), 2);
    let cfg = write(dir.path(), "cfg.toml", "scenarios = [\"s5\"]\n");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

const FUNNEL_INPUT: &str = "\
provider,n,smr,smr_se,positivity_flag,notes
low,900,0.5,0.01,ok,
mid,400,1.02,0.05,ok,
wide,50,1.3,0.4,ok,
";

#[test]
fn funnel_classifies_and_draws_one_point_per_provider() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "est.csv", FUNNEL_INPUT);
    let out = dir.path().join("funnel.csv");
    let svg = dir.path().join("funnel.svg");
    let o = run(&[
        "funnel",
        "--estimates",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let class = column(&text, "classification");
    assert_eq!(&class[..3], ["low@0.999", "inside", "inside"]);
    let levels: std::collections::BTreeSet<String> = column(&text, "level")
        .into_iter()
        .filter(|l| !l.is_empty())
        .collect();
    assert_eq!(
        levels.into_iter().collect::<Vec<_>>(),
        ["0.95", "0.99", "0.999"]
    );
    let svg = std::fs::read_to_string(svg).unwrap();
    assert_eq!(svg.matches("<circle").count(), 3);
}

#[test]
fn funnel_without_ratio_columns_exits_2() {
    let dir = TempDir::new().unwrap();
    let input = write(
        dir.path(),
        "est.csv",
        "provider,n,psi1,positivity_flag,notes\na,3,0.4,ok,\n",
    );
    assert_eq!(
        code(&run(&["funnel", "--estimates", input.to_str().unwrap()])),
        2
    );
}

#[test]
fn oracle_check_exit_codes() {
    let o = run(&["oracle-check"]);
    assert_eq!(code(&o), 0);
    let report = String::from_utf8(o.stdout).unwrap();
    assert!(report.contains("laws 200"));
    for p in ["phi", "psi1", "psi2"] {
        let line = report
            .lines()
            .find(|l| l.starts_with(&format!("max_residual {p} ")))
            .unwrap();
        let v: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
        assert!(v <= 1e-10, "{line}");
    }
    let a = run(&["oracle-check", "--laws", "1", "--seed", "5"]);
    let b = run(&["oracle-check", "--laws", "1", "--seed", "5"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(code(&run(&["oracle-check", "--tolerance", "0"])), 1);
    assert_eq!(code(&run(&["oracle-check", "--laws", "0"])), 2);
}
