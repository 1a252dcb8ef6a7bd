//! CSV and JSON result writers. Angles are written in degrees; outaged
//! branches are numbered from 1 in branch table order.

use std::io::Write;

use super::{RunReport, TaskResult};
use crate::grid::GridCase;

/// One row per task: `task,status,iterations,max_mismatch`, then `outage`
/// when any task has one, then `vm_<id>` and `va_<id>` per bus when
/// `voltages` is set.
pub fn write_results_csv(
    results: &[TaskResult],
    case: &GridCase,
    voltages: bool,
    out: impl Write,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let with_outage = results.iter().any(|r| r.outage.is_some());
    let mut header: Vec<String> = ["task", "status", "iterations", "max_mismatch"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if with_outage {
        header.push("outage".into());
    }
    if voltages {
        header.extend(case.buses().iter().map(|b| format!("vm_{}", b.id)));
        header.extend(case.buses().iter().map(|b| format!("va_{}", b.id)));
    }
    w.write_record(&header)?;
    for r in results {
        let mut row = vec![
            r.task.to_string(),
            r.status.as_str().to_string(),
            r.iterations.to_string(),
            format!("{:e}", r.max_mismatch),
        ];
        if with_outage {
            row.push(r.outage.map(|k| (k + 1).to_string()).unwrap_or_default());
        }
        if voltages {
            row.extend(r.vm.iter().map(|v| v.to_string()));
            row.extend(r.va.iter().map(|v| v.to_degrees().to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per task and branch of the tasks that carry flows.
pub fn write_flows_csv(
    results: &[TaskResult],
    case: &GridCase,
    out: impl Write,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "task", "branch", "from_bus", "to_bus", "p_from", "q_from", "p_to", "q_to", "loading",
    ])?;
    for r in results {
        for (k, f) in r.flows.iter().enumerate() {
            let br = &case.branches()[k];
            w.write_record([
                r.task.to_string(),
                (k + 1).to_string(),
                br.from_bus.to_string(),
                br.to_bus.to_string(),
                f.p_from.to_string(),
                f.q_from.to_string(),
                f.p_to.to_string(),
                f.q_to.to_string(),
                f.loading.map(|l| l.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn report_json(report: &RunReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}
