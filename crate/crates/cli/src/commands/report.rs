use std::fmt::Write as _;
use std::fs;

use serde_json::Value;

use super::{write_output, SUMMARY_FILE};
use crate::config::RunConfig;

fn read_json(path: &std::path::Path) -> Option<Value> {
    serde_json::from_str(&fs::read_to_string(path).ok()?).ok()
}

fn fmt(v: &Value) -> String {
    match v {
        Value::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() => format!("{f:.4}"),
            _ => n.to_string(),
        },
        Value::Null => "n/a".into(),
        Value::Array(a) => a.iter().map(fmt).collect::<Vec<_>>().join(" – "),
        other => other.to_string(),
    }
}

fn table(s: &mut String, header: &str, rows: &[(&str, String)]) {
    let _ = writeln!(s, "## {header}\n\n| | |\n|---|---|");
    for (k, v) in rows {
        let _ = writeln!(s, "| {k} | {v} |");
    }
    s.push('\n');
}

/// Collects whichever stage outputs exist under `<out>` into
/// `<out>/report.md`.
pub fn report(config: &RunConfig) -> anyhow::Result<()> {
    let out = &config.out;
    let mut s = String::from("# Run report\n\n");
    let mut sections = 0;

    if let Some(Value::Object(m)) = read_json(&out.join(SUMMARY_FILE)) {
        let rows: Vec<(&str, String)> = m.iter().map(|(k, v)| (k.as_str(), fmt(v))).collect();
        table(&mut s, "Data summary", &rows);
        sections += 1;
    }
    if let Some(r) = read_json(&out.join("pretrain").join("report.json")) {
        let rows = [
            ("epochs run", fmt(&r["epochs_run"])),
            ("best epoch", fmt(&r["best_epoch"])),
            ("best validation AUROC", fmt(&r["best_valid_auroc"])),
            ("mean test AUROC", fmt(&r["mean_test_auroc"])),
        ];
        table(&mut s, "Pretraining", &rows);
        sections += 1;
    }
    if let Some(r) = read_json(&out.join("finetune").join("report.json")) {
        let n = |k: &str| r["split"][k].as_array().map_or(0, Vec::len).to_string();
        let rows = [
            ("training genes", n("train")),
            ("held-out genes", n("test")),
            ("training accuracy", fmt(&r["train_accuracy"])),
        ];
        table(&mut s, "Fine-tuning", &rows);
        sections += 1;
    }
    if let Some(r) = read_json(&out.join("compare").join("summary.json")) {
        let _ = writeln!(
            s,
            "## Model vs random-walk baseline\n\n| metric | model | baseline | wins | contexts | % |\n|---|---|---|---|---|---|"
        );
        for m in r["wins"]["metrics"].as_array().into_iter().flatten() {
            let name = m["metric"].as_str().unwrap_or_default();
            let _ = writeln!(
                s,
                "| {name} | {} | {} | {} | {} | {:.2} |",
                fmt(&r["model_mean"][name]),
                fmt(&r["baseline_mean"][name]),
                m["wins"],
                m["total"],
                m["percentage"].as_f64().unwrap_or(0.0)
            );
        }
        s.push('\n');
        sections += 1;
    }
    if sections == 0 {
        eprintln!("warning: no stage outputs found under {}", out.display());
    }
    write_output(&out.join("report.md"), s)
}
