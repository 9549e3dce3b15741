use std::path::Path;

use super::{HarnessError, RunSummary};

pub fn load_summary(path: &Path) -> Result<RunSummary, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

/// Final test metrics side by side, best mean accuracy first, in percent.
pub fn compare(summaries: &[RunSummary]) -> Result<String, HarnessError> {
    if summaries.len() < 2 {
        return Err(HarnessError::Config(format!("compare needs at least two summaries, got {}", summaries.len())));
    }
    let classes = summaries[0].class_count;
    if let Some(odd) = summaries.iter().find(|s| s.class_count != classes) {
        return Err(HarnessError::Config(format!(
            "class counts differ: {} has {} classes, {} has {}",
            summaries[0].policy.name(),
            classes,
            odd.policy.name(),
            odd.class_count
        )));
    }
    let mut rows: Vec<&RunSummary> = summaries.iter().collect();
    rows.sort_by(|a, b| b.final_test.mean_accuracy.total_cmp(&a.final_test.mean_accuracy));

    let label_width = rows.iter().map(|r| r.policy.display_name().len()).max().unwrap_or(0).max("Metrics".len());
    let mut out = format!("| {:<label_width$} | Mean Accuracy | Mean Recall |\n", "Metrics");
    out.push_str(&format!("|{}|---------------|-------------|\n", "-".repeat(label_width + 2)));
    for r in rows {
        out.push_str(&format!(
            "| {:<label_width$} | {:>13.2} | {:>11.2} |\n",
            r.policy.display_name(),
            100.0 * r.final_test.mean_accuracy,
            100.0 * r.final_test.mean_recall
        ));
    }
    Ok(out)
}
