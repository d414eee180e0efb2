//! Read-only summaries of checkpoints, datasets, reports and run directories.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::fs;
use std::path::Path;

use ppt_core::policy::{Checkpoint, FORMAT_VERSION, MAGIC};
use ppt_core::synthvoice::{PreferenceTriple, PromptRecord};
use serde_json::Value;

use crate::run::{verify_manifest, MANIFEST};
use crate::{CliError, CliResult};

/// Keys whose values must lie in [0, 1] in any report.
const UNIT_KEYS: [&str; 10] = [
    "acc_i",
    "acc_t",
    "acc_r",
    "e_sim",
    "sv_rate",
    "content_error_mean",
    "decoupling_average",
    "complex_average",
    "overall",
    "gold_pass_rate",
];

pub fn inspect(path: &Path) -> CliResult<String> {
    if path.is_dir() {
        return inspect_run(path);
    }
    let bytes =
        fs::read(path).map_err(|e| CliError::Inspect(format!("{}: {e}", path.display())))?;
    if bytes.starts_with(MAGIC) {
        return inspect_checkpoint(&bytes);
    }
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| CliError::Inspect("unrecognized binary file".into()))?;
    if let Ok(v) = serde_json::from_str::<Value>(text) {
        return inspect_report(&v);
    }
    inspect_jsonl(text)
}

fn inspect_run(dir: &Path) -> CliResult<String> {
    if !dir.join(MANIFEST).exists() {
        return Err(CliError::Inspect(format!(
            "{} has no {MANIFEST}",
            dir.display()
        )));
    }
    let bad = verify_manifest(dir)?;
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)
        .map_err(|e| CliError::Inspect(e.to_string()))?;
    let mut s = String::new();
    let _ = writeln!(s, "run directory: command {}", v["command"]);
    let files = v["files"].as_object().map_or(0, |m| m.len());
    let _ = writeln!(s, "files: {files}, digest mismatches: {}", bad.len());
    for b in bad {
        let _ = writeln!(s, "  mismatch: {b}");
    }
    let _ = writeln!(s, "config: {}", v["config"]);
    Ok(s)
}

fn inspect_checkpoint(bytes: &[u8]) -> CliResult<String> {
    let ck = Checkpoint::from_bytes(bytes).map_err(|e| CliError::Inspect(e.to_string()))?;
    let p = &ck.policy;
    let mut s = String::new();
    let _ = writeln!(s, "checkpoint format v{FORMAT_VERSION}");
    let _ = writeln!(
        s,
        "parameters: {} (closed form {})",
        p.num_params(),
        p.config.param_count()
    );
    let _ = writeln!(
        s,
        "optimizer state: {}",
        if ck.optimizer.is_some() {
            "present"
        } else {
            "absent"
        }
    );
    let _ = writeln!(
        s,
        "config: {}",
        serde_json::to_string(&p.config).unwrap_or_default()
    );
    for (name, t) in p.names.iter().zip(&p.params) {
        let (lo, hi) = t
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                (a.min(x), b.max(x))
            });
        let _ = writeln!(s, "  {name:<22} {:?} range [{lo:.4}, {hi:.4}]", t.shape());
    }
    Ok(s)
}

fn check_ranges(v: &Value, path: &str, bad: &mut Vec<String>, seen: &mut usize) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let p = format!("{path}.{k}");
                if UNIT_KEYS.contains(&k.as_str())
                    || path.ends_with("pass_rate")
                    || path.ends_with("by_config")
                {
                    if let Some(f) = x.as_f64() {
                        *seen += 1;
                        if !(0.0..=1.0).contains(&f) {
                            bad.push(format!("{p}={f}"));
                        }
                    }
                }
                check_ranges(x, &p, bad, seen);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                check_ranges(x, &format!("{path}[{i}]"), bad, seen);
            }
        }
        _ => {}
    }
}

fn inspect_report(v: &Value) -> CliResult<String> {
    if !v.is_object() && !v.is_array() {
        return Err(CliError::Inspect("unrecognized JSON document".into()));
    }
    let (mut bad, mut seen) = (Vec::new(), 0);
    check_ranges(v, "", &mut bad, &mut seen);
    let mut s = String::new();
    let keys: Vec<&str> = v
        .as_object()
        .map(|m| m.keys().map(String::as_str).collect())
        .unwrap_or_default();
    let _ = writeln!(s, "report with keys {keys:?}");
    let _ = writeln!(
        s,
        "metric values checked: {seen}, outside [0, 1]: {}",
        bad.len()
    );
    for b in &bad {
        let _ = writeln!(s, "  out of range: {b}");
    }
    if !bad.is_empty() {
        return Err(CliError::Inspect(format!(
            "{} metric values outside [0, 1]",
            bad.len()
        )));
    }
    Ok(s)
}

fn inspect_jsonl(text: &str) -> CliResult<String> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.is_empty() {
        return Err(CliError::Inspect("empty or unrecognized file".into()));
    }
    let mut s = String::new();
    if let Ok(pairs) = lines
        .iter()
        .map(|l| serde_json::from_str::<PreferenceTriple>(l))
        .collect::<Result<Vec<_>, _>>()
    {
        let failures: Vec<String> = pairs
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.validate().err().map(|e| format!("#{i}: {e}")))
            .collect();
        let _ = writeln!(s, "preference pairs: {}", pairs.len());
        let _ = writeln!(
            s,
            "construction validator: {} ({} failing)",
            if failures.is_empty() { "pass" } else { "fail" },
            failures.len()
        );
        for f in failures.iter().take(10) {
            let _ = writeln!(s, "  {f}");
        }
        return Ok(s);
    }
    let records: Vec<PromptRecord> = lines
        .iter()
        .map(|l| serde_json::from_str(l))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Inspect(format!("unrecognized JSONL: {e}")))?;
    let mut by_source: BTreeMap<String, usize> = BTreeMap::new();
    for r in &records {
        let key = match &r.meta.config {
            Some(c) => format!("{}/{c}", r.meta.source),
            None => r.meta.source.clone(),
        };
        *by_source.entry(key).or_default() += 1;
    }
    let with_ref = records
        .iter()
        .filter(|r| r.reference_tokens.is_some())
        .count();
    let with_target = records.iter().filter(|r| r.target_tokens.is_some()).count();
    let max_prompt = records.iter().map(|r| r.prompt().len()).max().unwrap_or(0);
    let _ = writeln!(s, "prompt records: {}", records.len());
    let _ = writeln!(
        s,
        "with reference: {with_ref}, with target: {with_target}, longest prompt: {max_prompt}"
    );
    for (k, n) in by_source {
        let _ = writeln!(s, "  {k}: {n}");
    }
    Ok(s)
}
