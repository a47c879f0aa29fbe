mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{fixture, read_fixture};

fn uhoi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uhoi"))
        .args(args)
        .env_remove("UHOI_CHAT_URL")
        .env_remove("UHOI_EMBED_URL")
        .env_remove("UHOI_T2G_URL")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = uhoi(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stages_reproduce_the_golden_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let config = fixture("e2e/config.toml");
    let ann = fixture("e2e/annotations.json");
    let common = ["--config", s(&config), "--run-dir", s(&run)];
    ok(&[&["pairs"], &common[..], &["--annotations", s(&ann)]].concat());
    ok(&[&["generate"], &common[..]].concat());
    ok(&[&["extract"], &common[..]].concat());
    let table = ok(&[&["evaluate"], &common[..], &["--annotations", s(&ann)]].concat());
    assert!(table.starts_with("Method"), "{table}");
    assert_eq!(
        fs::read_to_string(run.join("report.json")).unwrap(),
        read_fixture("e2e/golden_report.json")
    );

    // an external baseline next to the run, compared in one table
    let base = dir.path().join("baseline");
    let preds = fixture("e2e/baseline_predictions.json");
    ok(&[
        &[
            "evaluate",
            "--config",
            s(&config),
            "--run-dir",
            s(&base),
            "--annotations",
            s(&ann),
        ][..],
        &["--predictions", s(&preds), "--label", "baseline"],
    ]
    .concat());
    let csv = dir.path().join("cmp.csv");
    let table = ok(&[
        "report",
        s(&run.join("report.json")),
        s(&base.join("report.json")),
        "--csv",
        s(&csv),
    ]);
    assert_eq!(table.lines().count(), 4, "{table}");
    assert!(table.contains("baseline"));
    let csv = fs::read_to_string(csv).unwrap();
    assert!(
        csv.starts_with("label,full,rare,nonrare,sr,map@0.6"),
        "{csv}"
    );

    // the baseline has no generation count, so it cannot be plotted
    let out = uhoi(&[
        "report",
        s(&base.join("report.json")),
        "--plot",
        s(&dir.path().join("p.svg")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let svg = dir.path().join("n.svg");
    ok(&["report", s(&run.join("report.json")), "--plot", s(&svg)]);
    assert!(fs::read_to_string(svg).unwrap().starts_with("<svg"));
}

#[test]
fn overrides_and_mismatched_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("e2e/config.toml");
    let ann = fixture("e2e/annotations.json");
    let preds = fixture("e2e/baseline_predictions.json");
    for (name, extra) in [("a", vec![]), ("b", vec!["--thresholds", "0.5,0.9"])] {
        let run = dir.path().join(name);
        let args = [
            &[
                "evaluate",
                "--config",
                s(&config),
                "--run-dir",
                s(&run),
                "--annotations",
                s(&ann),
            ][..],
            &["--predictions", s(&preds)],
            &extra[..],
        ]
        .concat();
        ok(&args);
    }
    let b = fs::read_to_string(dir.path().join("b/report.json")).unwrap();
    assert!(b.contains("\"0.5\""), "{b}");
    let out = uhoi(&[
        "report",
        s(&dir.path().join("a/report.json")),
        s(&dir.path().join("b/report.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("thresholds"));
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = uhoi(&[
        "evaluate",
        "--run-dir",
        s(&run),
        "--annotations",
        s(&fixture("e2e/annotations.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = uhoi(&["extract", "--run-dir", s(&run), "--k", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k must be at least 1"));
}

#[test]
fn filter_verbs_with_mock_answers() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("answers.json");
    fs::write(
        &pool,
        r#"{"ride": ["Yes."], "sleep": ["No, a person cannot."], "glow": ["maybe"]}"#,
    )
    .unwrap();
    let candidates = dir.path().join("candidates.txt");
    fs::write(&candidates, "ride\nsleep\n# comment\nglow\n").unwrap();
    let out_vocab = dir.path().join("vocab.txt");
    let out = uhoi(&[
        "filter-verbs",
        "--run-dir",
        s(dir.path()),
        "--mock-pool",
        s(&pool),
        "--candidates",
        s(&candidates),
        "--out",
        s(&out_vocab),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("kept 1, rejected 1, undecided 1"));
    assert_eq!(fs::read_to_string(&out_vocab).unwrap(), "ride\n");
    assert!(out_vocab.with_extension("outcome.json").exists());
}
