use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ppt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppt"))
        .args(args)
        .output()
        .expect("spawn ppt")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &[&str] = &[
    "--set",
    "policy.d_model=16",
    "--set",
    "policy.n_heads=2",
    "--set",
    "data.n_pretrain=60",
    "--set",
    "pretrain.epochs=1",
    "--set",
    "data.n_pairs=8",
    "--set",
    "data.n_pairs_held_out=4",
    "--set",
    "data.n_s2=8",
    "--set",
    "data.n_s3_existing=2",
    "--set",
    "data.n_s3_generated=6",
    "--set",
    "s1.epochs=1",
    "--set",
    "s2.epochs=1",
    "--set",
    "s3.epochs=1",
    "--set",
    "s2.sample.max_new=24",
    "--set",
    "s3.sample.max_new=24",
    "--set",
    "eval.n_per_task=5",
    "--set",
    "eval.n_complex=3",
];

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    let mut v = head.to_vec();
    v.extend_from_slice(TINY);
    v
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&ppt(&[])), 2);
    assert_eq!(code(&ppt(&["no-such-command"])), 2);
    assert_eq!(code(&ppt(&["eval", "--bogus"])), 2);
}

#[test]
fn config_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = ppt(&["synth-pairs", "--out", out, "--set", "s1.no_such_knob=1"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[config]"));
    assert_eq!(
        code(&ppt(&["curriculum", "--out", out, "--plan", "s9,s1"])),
        3
    );
    assert_eq!(
        code(&ppt(&["synth-pairs", "--out", out, "--set", "s1.beta=-1"])),
        3
    );
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\"policy\": {\"d_model\": \"wide\"}}").unwrap();
    assert_eq!(
        code(&ppt(&[
            "synth-pairs",
            "--out",
            out,
            "--config",
            cfg.to_str().unwrap()
        ])),
        3
    );
}

#[test]
fn synthesized_pairs_pass_inspection() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = ppt(&["synth-pairs", "--out", out, "--set", "data.n_pairs=25"]);
    assert_eq!(code(&o), 0);
    let o = ppt(&["inspect", dir.path().join("pairs.jsonl").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert!(s.contains("preference pairs: 25"), "{s}");
    assert!(s.contains("construction validator: pass"), "{s}");
    let o = ppt(&["inspect", out]);
    assert!(
        stdout(&o).contains("digest mismatches: 0"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn inspect_rejects_out_of_range_reports() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.json");
    fs::write(&p, r#"{"tasks": [{"acc_i": 1.5}]}"#).unwrap();
    let o = ppt(&["inspect", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error[inspect]"));
    fs::write(&p, r#"{"tasks": [{"acc_i": 0.5}]}"#).unwrap();
    assert_eq!(code(&ppt(&["inspect", p.to_str().unwrap()])), 0);
    assert_eq!(
        code(&ppt(&[
            "inspect",
            dir.path().join("missing").to_str().unwrap()
        ])),
        1
    );
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ppt(&["gradcheck", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("max_rel_err="));
}

#[test]
fn oracle_studies_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = ppt(&[
        "study-speedpitch",
        "--oracle",
        "--out",
        out,
        "--set",
        "eval.n_speedpitch_texts=10",
    ]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert!(
        s.contains("speed spearman=1.0000") && s.contains("pitch spearman=1.0000"),
        "{s}"
    );
    let o = ppt(&[
        "study-judge",
        "--oracle",
        "--out",
        out,
        "--set",
        "eval.n_judge_prompts=200",
    ]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("macro_f1="));
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn tiny_curriculum_is_reproducible_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, workers) in [(&a, "1"), (&b, "3")] {
        let args = with_tiny(&[
            "curriculum",
            "--seed",
            "7",
            "--workers",
            workers,
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        let o = ppt(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "manifest.json",
        "metrics.jsonl",
        "report.json",
        "model.ckpt",
    ] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs");
    }
    let o = ppt(&["inspect", a.path().to_str().unwrap()]);
    assert!(stdout(&o).contains("digest mismatches: 0"));
    let o = ppt(&["inspect", a.path().join("report.json").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn single_stage_from_checkpoint() {
    let a = tempfile::tempdir().unwrap();
    let args = with_tiny(&["pretrain", "--out", a.path().to_str().unwrap()]);
    assert_eq!(code(&ppt(&args)), 0);
    let ck = a.path().join("model.ckpt");
    let o = ppt(&["inspect", ck.to_str().unwrap()]);
    assert!(stdout(&o).contains("parameters:"));
    let b = tempfile::tempdir().unwrap();
    let args = with_tiny(&[
        "align-s2",
        "--init",
        ck.to_str().unwrap(),
        "--out",
        b.path().to_str().unwrap(),
    ]);
    let o = ppt(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(b.path().join("logs/s2_steps.jsonl").exists());
    assert!(!b.path().join("pretrained.ckpt").exists());
}
