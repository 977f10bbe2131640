//! End-to-end exercise of the command-line surface: synthetic corpus
//! through vocabulary building, extraction of all six features, training
//! of both groups, evaluation, and n-best scoring, all via the binary.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mtnet")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn extract_cmd(dir: &Path, task_flags: &[&str], out: &str) {
    let mut args = vec!["extract"];
    args.extend_from_slice(task_flags);
    args.extend_from_slice(&[
        "--src", "toy.src", "--tgt", "toy.tgt", "--align", "toy.align",
        "--src-vocab", "src.vocab", "--tgt-vocab", "tgt.vocab", "--out", out,
    ]);
    run_ok(dir, &args);
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    run_ok(
        d,
        &[
            "gen-synth",
            "--pattern",
            "block-swap",
            "--sentences",
            "800",
            "--vocab-size",
            "20",
            "--seed",
            "3",
            "--out-prefix",
            "toy",
        ],
    );
    run_ok(
        d,
        &[
            "build-vocab", "--input", "toy.src", "--side", "source", "--min-count", "1",
            "--out", "src.vocab",
        ],
    );
    run_ok(
        d,
        &[
            "build-vocab", "--input", "toy.tgt", "--side", "target", "--min-count", "1",
            "--out", "tgt.vocab",
        ],
    );

    // the six features: the joint model, one offset variant, the lexical
    // translation model with its two context offsets, orientation, and
    // fertility
    extract_cmd(d, &["--task", "jmo", "--k", "0", "--n", "3", "--m", "1"], "jm.shard");
    extract_cmd(d, &["--task", "jmo", "--k", "1", "--n", "3", "--m", "1"], "jmo1.shard");
    extract_cmd(d, &["--task", "tcm", "--dprime", "-1", "--m", "1"], "tcm_m1.shard");
    extract_cmd(d, &["--task", "tcm", "--dprime", "0", "--m", "1"], "ltm.shard");
    extract_cmd(d, &["--task", "tcm", "--dprime", "1", "--m", "1"], "tcm_p1.shard");
    extract_cmd(d, &["--task", "ori", "--m", "1"], "ori.shard");
    extract_cmd(d, &["--task", "fert", "--m", "1"], "fert.shard");

    run_ok(
        d,
        &[
            "train", "--group", "hypen",
            "--shard", "jm.shard", "--shard", "jmo1.shard",
            "--layers", "2", "--shared", "0", "--hidden", "12", "--embed", "6",
            "--tensor", "on", "--alpha", "0.1", "--epochs", "2", "--batch", "32",
            "--lr", "0.3", "--seed", "1",
            "--src-vocab", "src.vocab", "--tgt-vocab", "tgt.vocab",
            "--out", "hypen.mtnn",
        ],
    );
    run_ok(
        d,
        &[
            "train", "--group", "srcen",
            "--shard", "tcm_m1.shard", "--shard", "ltm.shard", "--shard", "tcm_p1.shard",
            "--shard", "ori.shard", "--shard", "fert.shard",
            "--layers", "2", "--shared", "1", "--hidden", "12", "--embed", "6",
            "--tensor", "on", "--alpha", "0.1", "--epochs", "2", "--batch", "32",
            "--lr", "0.3", "--seed", "1",
            "--src-vocab", "src.vocab", "--tgt-vocab", "tgt.vocab",
            "--out", "srcen.mtnn",
        ],
    );

    let eval_out = run_ok(
        d,
        &[
            "eval", "--model", "srcen.mtnn",
            "--shard", "tcm_m1.shard", "--shard", "ltm.shard", "--shard", "tcm_p1.shard",
            "--shard", "ori.shard", "--shard", "fert.shard",
        ],
    );
    let stdout = String::from_utf8_lossy(&eval_out.stdout);
    assert!(stdout.contains("tcm_d0"), "eval output:\n{stdout}");
    assert!(stdout.contains("sum\tavg_loglik="));

    // one hypothesis per line, reusing the first training sentence
    let first_tgt = std::fs::read_to_string(d.join("toy.tgt")).unwrap();
    let first_align = std::fs::read_to_string(d.join("toy.align")).unwrap();
    let nbest = format!(
        "0 ||| {} ||| {}\n",
        first_tgt.lines().next().unwrap(),
        first_align.lines().next().unwrap()
    );
    std::fs::write(d.join("test.nbest"), nbest).unwrap();

    let score_out = run_ok(
        d,
        &[
            "score",
            "--model", "hypen.mtnn", "--model", "srcen.mtnn",
            "--nbest", "test.nbest", "--source", "toy.src",
            "--mode", "exact",
            "--weights", "jmo_k0=1.0,srcen=0.5",
        ],
    );
    let scored = String::from_utf8_lossy(&score_out.stdout);
    for needle in [
        "jmo_k0=", "jmo_k1=", "tcm_d-1=", "tcm_d0=", "tcm_d1=", "ori=", "fert=", "srcen=",
        "total=",
    ] {
        assert!(scored.contains(needle), "missing {needle} in:\n{scored}");
    }

    // log headers echo effective settings
    let header = run_ok(
        d,
        &[
            "gen-synth", "--pattern", "monotone", "--sentences", "5",
            "--vocab-size", "4", "--seed", "9", "--out-prefix", "tiny",
        ],
    );
    let stderr = String::from_utf8_lossy(&header.stderr);
    assert!(stderr.contains("command = gen-synth"));
    assert!(stderr.contains("# seed = 9"));
}

#[test]
fn errors_are_single_line_and_categorized() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = run(
        d,
        &[
            "eval", "--model", "missing.mtnn", "--shard", "missing.shard",
        ],
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let error_lines: Vec<&str> = stderr.lines().filter(|l| l.starts_with("error: ")).collect();
    assert_eq!(error_lines.len(), 1, "stderr:\n{stderr}");
    assert!(error_lines[0].starts_with("error: io: "), "{}", error_lines[0]);

    // corrupt magic surfaces its own category
    std::fs::write(d.join("bad.shard"), b"WHAT????????????????").unwrap();
    std::fs::write(d.join("empty.mtnn"), b"MTNN").unwrap();
    let out = run(d, &["eval", "--model", "empty.mtnn", "--shard", "bad.shard"]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("error: truncated: "),
        "stderr:\n{stderr}"
    );
}

#[test]
fn config_file_feeds_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.conf"), "sentences = 7\nseed = 4\n").unwrap();

    // sentences comes from the file, seed from the flag
    let out = run_ok(
        d,
        &[
            "gen-synth", "--pattern", "monotone", "--vocab-size", "4",
            "--seed", "11", "--out-prefix", "cfg", "--config", "run.conf",
        ],
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("# sentences = 7"), "{stderr}");
    assert!(stderr.contains("# seed = 11"), "{stderr}");
    let lines = std::fs::read_to_string(d.join("cfg.src")).unwrap();
    assert_eq!(lines.lines().count(), 7);

    let deterministic = run_ok(
        d,
        &[
            "gen-synth", "--pattern", "monotone", "--vocab-size", "4",
            "--seed", "11", "--out-prefix", "cfg2", "--config", "run.conf",
        ],
    );
    assert!(deterministic.status.success());
    assert_eq!(
        std::fs::read(d.join("cfg.src")).unwrap(),
        std::fs::read(d.join("cfg2.src")).unwrap()
    );
}
