//! Drives the installed binary through every subcommand and checks the
//! documented exit codes: 0 success, 2 invalid input, 3 stage failure.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CORPUS: &[&str] = &[
    "CCOCCCNC", "CCCCOCCN", "CCNCCOCC", "CCCOCCCN", "NCCOCCCC", "CCOCCNCC",
    "CCCCNCCO", "OCCCNCCC", "CCOCCCCN", "CCNCCCCO", "COCCCNCC", "CCCNCCOC",
    "CCCCCOCN", "NCCCCOCC", "CCOCNCCC", "COCCNCCC", "CCCNCOCC", "OCCNCCCC",
    "CCCCOCNC", "CNCCOCCC", "COCCCCNC", "CCNCOCCC", "NCCCOCCC", "CCCOCNCC",
];

const CONFIG: &str = r#"{
  "molecules_per_iteration": 50,
  "k": 4,
  "restarts": 3,
  "scoring_per_cluster": 5,
  "scoring_total": 20,
  "threshold": 30.0,
  "replica_floor": 30,
  "sample_target": 20,
  "iterations": 1,
  "seed": 11
}"#;

fn molgen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_molgen"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn molgen")
}

fn expect_ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn expect_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn line_count(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

fn setup(dir: &Path) {
    fs::write(dir.join("corpus.smi"), CORPUS.join("\n")).unwrap();
    fs::write(dir.join("cfg.json"), CONFIG).unwrap();
}

#[test]
fn the_stage_subcommands_compose_into_the_loop() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);

    let out = molgen(
        dir,
        &["run-loop", "--corpus", "corpus.smi", "--out", "run", "--config", "cfg.json"],
    );
    let stdout = expect_ok(&out);
    assert!(stdout.contains("iter 0:"), "{stdout}");
    assert!(stdout.contains("iter 1:"), "{stdout}");
    assert!(stdout.contains("pass rate"), "{stdout}");

    // a second invocation resumes the finished run instead of redoing it
    let again = expect_ok(&molgen(
        dir,
        &["run-loop", "--corpus", "corpus.smi", "--out", "run", "--config", "cfg.json"],
    ));
    assert!(again.contains("resumed 2 completed iterations"), "{again}");

    let report = expect_ok(&molgen(
        dir,
        &["report", "--run", "run", "--references", "corpus.smi"],
    ));
    assert!(report.starts_with("iteration,percent_above,"), "{report}");
    for file in [
        "table.csv",
        "score_histogram.csv",
        "cluster_sizes.csv",
        "generation_metrics.csv",
        "similarity.csv",
    ] {
        assert!(dir.join("run/report").join(file).is_file(), "missing {file}");
    }

    expect_ok(&molgen(
        dir,
        &["pretrain", "--corpus", "corpus.smi", "--out", "pre", "--config", "cfg.json"],
    ));
    assert!(dir.join("pre/checkpoint").is_file());
    assert!(dir.join("pre/vocab.json").is_file());

    let gen = expect_ok(&molgen(
        dir,
        &[
            "generate", "--checkpoint", "pre/checkpoint", "--vocab", "pre/vocab.json",
            "--out", "gen.smi", "--count", "30", "--config", "cfg.json",
        ],
    ));
    assert!(gen.contains("unique molecules"), "{gen}");
    let generated = line_count(&dir.join("gen.smi"));
    assert!(generated > 0 && generated <= 30);

    expect_ok(&molgen(
        dir,
        &["descriptors", "--in", "gen.smi", "--out", "desc.csv"],
    ));
    assert_eq!(line_count(&dir.join("desc.csv")), generated + 1);

    expect_ok(&molgen(
        dir,
        &[
            "cluster", "--in", "desc.csv", "--pca", "run/pca.json", "--k", "3",
            "--out", "clus.json", "--config", "cfg.json",
        ],
    ));
    let clustering: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("clus.json")).unwrap()).unwrap();
    assert_eq!(clustering["k"], 3);
    assert_eq!(clustering["assignments"].as_array().unwrap().len(), generated);

    expect_ok(&molgen(
        dir,
        &[
            "score", "--points", "desc.csv", "--pca", "run/pca.json",
            "--clustering", "clus.json", "--out", "scores.csv", "--config", "cfg.json",
        ],
    ));
    assert_eq!(line_count(&dir.join("scores.csv")), generated + 1);

    let al = expect_ok(&molgen(
        dir,
        &[
            "build-al-set", "--scores", "scores.csv", "--clustering", "clus.json",
            "--pool", "gen.smi", "--out", "al.smi", "--config", "cfg.json",
            "--method", "softdiv",
        ],
    ));
    let reported: usize = al
        .split("AL set: ")
        .nth(1)
        .and_then(|rest| rest.split(' ').next())
        .and_then(|n| n.parse().ok())
        .expect("AL set size in output");
    assert_eq!(line_count(&dir.join("al.smi")), reported);

    expect_ok(&molgen(
        dir,
        &[
            "finetune", "--checkpoint", "pre/checkpoint", "--vocab", "pre/vocab.json",
            "--al-set", "al.smi", "--out", "tuned.ckpt", "--config", "cfg.json",
        ],
    ));
    let ckpt: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("tuned.ckpt")).unwrap()).unwrap();
    assert!(ckpt["model"].is_object());
}

#[test]
fn invalid_inputs_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    fs::write(dir.join("bad.json"), r#"{"iterations": 0}"#).unwrap();

    // rejected configuration
    expect_code(
        &molgen(
            dir,
            &["run-loop", "--corpus", "corpus.smi", "--out", "r", "--config", "bad.json"],
        ),
        2,
    );
    // missing input file
    expect_code(
        &molgen(dir, &["run-loop", "--corpus", "nope.smi", "--out", "r"]),
        2,
    );
    // missing checkpoint
    expect_code(
        &molgen(
            dir,
            &["generate", "--checkpoint", "no.ckpt", "--vocab", "no.json", "--out", "g.smi"],
        ),
        2,
    );
    // divisor factor without the softdiv method
    expect_code(
        &molgen(
            dir,
            &[
                "build-al-set", "--scores", "s.csv", "--clustering", "c.json",
                "--pool", "p.smi", "--out", "a.smi", "--method", "linear", "--divf", "2.0",
            ],
        ),
        2,
    );
    // unknown flag is a usage error
    expect_code(&molgen(dir, &["run-loop", "--frobnicate"]), 2);
}

#[test]
fn stage_failures_exit_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    // fingerprint ingest cannot serve as the in-loop score source
    let mut cfg: serde_json::Value = serde_json::from_str(CONFIG).unwrap();
    cfg["score_source"] = serde_json::json!({"source": "ingest", "path": "docked.csv"});
    fs::write(dir.join("ing.json"), cfg.to_string()).unwrap();

    let out = molgen(
        dir,
        &["run-loop", "--corpus", "corpus.smi", "--out", "run", "--config", "ing.json"],
    );
    expect_code(&out, 3);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("stage score failed"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
