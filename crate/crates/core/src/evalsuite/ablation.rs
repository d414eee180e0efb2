use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_benchmark, BenchReport, Benchmark};
use crate::error::Result;
use crate::policy::Policy;
use crate::training::{run_curriculum, CurriculumPlan, StageConfigs, StageData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub preset: String,
    pub stages: Vec<String>,
    /// Instruction accuracy per decoupling task.
    pub decoupling: BTreeMap<String, f64>,
    pub decoupling_average: f64,
    /// Gold pass rate per complex-instruction configuration.
    pub complex: BTreeMap<String, f64>,
    pub complex_average: f64,
}

impl AblationRow {
    pub fn from_report(plan: &CurriculumPlan, report: &BenchReport) -> Self {
        Self {
            preset: plan.name.clone(),
            stages: plan.stages.iter().map(|s| s.name().to_string()).collect(),
            decoupling: report
                .tasks
                .iter()
                .map(|t| (t.task.to_string(), t.acc_i))
                .collect(),
            decoupling_average: report.decoupling_average,
            complex: report.complex.pass_rate.clone(),
            complex_average: report.complex_average,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, preset: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.preset == preset)
    }

    /// Aligned plain-text rendering; columns follow the first row's keys.
    pub fn to_text(&self) -> String {
        let Some(first) = self.rows.first() else {
            return String::new();
        };
        let mut header = vec!["preset".to_string()];
        header.extend(first.decoupling.keys().cloned());
        header.push("decoupling_avg".into());
        header.extend(first.complex.keys().cloned());
        header.push("complex_avg".into());
        let mut lines = vec![header];
        for r in &self.rows {
            let mut l = vec![r.preset.clone()];
            l.extend(r.decoupling.values().map(|v| format!("{v:.3}")));
            l.push(format!("{:.3}", r.decoupling_average));
            l.extend(r.complex.values().map(|v| format!("{v:.3}")));
            l.push(format!("{:.3}", r.complex_average));
            lines.push(l);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| {
                lines
                    .iter()
                    .map(|l| l.get(c).map_or(0, String::len))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

/// Runs every plan from a clone of `base` with the same data and configs and
/// evaluates the final model on `bench`.
pub fn run_ablation(
    plans: &[CurriculumPlan],
    base: &Policy,
    data: &StageData<'_>,
    cfgs: &StageConfigs,
    bench: &Benchmark,
) -> Result<(AblationTable, Vec<BenchReport>)> {
    let mut rows = Vec::with_capacity(plans.len());
    let mut reports = Vec::with_capacity(plans.len());
    for plan in plans {
        let mut model = base.clone();
        run_curriculum(&mut model, plan, data, cfgs, |_, _, _| Ok(()))?;
        let report = evaluate_benchmark(&model, bench)?;
        rows.push(AblationRow::from_report(plan, &report));
        reports.push(report);
    }
    Ok((AblationTable { rows }, reports))
}

/// The eight presets in table order.
pub fn default_presets() -> Vec<CurriculumPlan> {
    CurriculumPlan::PRESETS
        .iter()
        .map(|p| CurriculumPlan::preset(p).expect("listed preset"))
        .collect()
}
