//! Plain-text report tables.

use super::ErrorBreakdown;
use crate::optimizer::OptimizationStats;

fn grid(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            widths[i] = widths[i].max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        format!("| {} |\n", parts.join(" | "))
    };
    let mut s = line(header.to_vec());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    s.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for r in rows {
        s.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    s
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |a| format!("{a:.1}"))
}

/// Rewrite counts, then step totals before and after optimization.
pub fn optimization_table(stats: &OptimizationStats, acc_before: Option<f64>, acc_after: Option<f64>) -> String {
    let counts = grid(
        &["#LLM Drops", "#SQL Drops", "#SQL Merge", "#LLM Merge", "#SQL Reorder"],
        &[vec![
            stats.llm_drops.to_string(),
            stats.sql_drops.to_string(),
            stats.sql_merges.to_string(),
            stats.llm_merges.to_string(),
            stats.sql_reorders.to_string(),
        ]],
    );
    let totals = grid(
        &["", "#LLM", "#SQL", "#Total Steps", "Accuracy"],
        &[
            vec![
                "Before".into(),
                stats.llm_steps_before.to_string(),
                stats.sql_steps_before.to_string(),
                stats.steps_before.to_string(),
                pct(acc_before),
            ],
            vec![
                "After".into(),
                stats.llm_steps_after.to_string(),
                stats.sql_steps_after.to_string(),
                stats.steps_after.to_string(),
                pct(acc_after),
            ],
        ],
    );
    format!("{counts}\n{totals}")
}

pub fn api_calls_table(label: &str, avg_calls: f64) -> String {
    grid(&["Method", "API calls/Query"], &[vec![label.to_string(), format!("{avg_calls:.2}")]])
}

pub fn error_table(label: &str, b: &ErrorBreakdown) -> String {
    grid(
        &["Method", "SQL Error %", "Plan Generation %"],
        &[vec![
            label.to_string(),
            format!("{:.1}", b.sql_error * 100.0),
            format!("{:.1}", b.plan_error * 100.0),
        ]],
    )
}

pub fn step_table(label: &str, llm: usize, sql: usize) -> String {
    grid(
        &["Dataset", "LLM Steps", "SQL Steps", "Total"],
        &[vec![label.to_string(), llm.to_string(), sql.to_string(), (llm + sql).to_string()]],
    )
}

pub fn token_table(label: &str, input: f64, output: f64) -> String {
    grid(
        &["Method", "Input tokens/Query", "Output tokens/Query"],
        &[vec![label.to_string(), format!("{input:.1}"), format!("{output:.1}")]],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_have_expected_headers() {
        let s = optimization_table(&OptimizationStats::default(), Some(50.0), None);
        assert!(s.contains("#LLM Drops") && s.contains("#SQL Reorder") && s.contains("#Total Steps"));
        assert!(s.contains("| Before |"));
        let e = error_table("x", &ErrorBreakdown { sql_error: 0.25, plan_error: 0.5, none: 0.25 });
        assert!(e.contains("25.0") && e.contains("50.0"));
        assert!(step_table("soccer", 1, 2).contains("| soccer  |         1 |         2 |     3 |"));
    }
}
