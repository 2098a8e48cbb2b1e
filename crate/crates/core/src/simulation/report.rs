use std::io::Write;

use super::{MetricRow, MetricsTable};
use crate::error::Result;

fn ordered_unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

fn render(table: &MetricsTable, title: &str, cell: impl Fn(&MetricRow) -> String) -> String {
    let parameters = ordered_unique(table.rows.iter().map(|r| r.parameter.as_str()));
    let estimators = ordered_unique(table.rows.iter().map(|r| r.estimator.as_str()));
    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["Parameter".to_string()];
    header.extend(estimators.iter().map(|e| e.to_string()));
    grid.push(header);
    for p in &parameters {
        let mut line = vec![p.to_string()];
        for e in &estimators {
            let parts: Vec<String> = table
                .rows
                .iter()
                .filter(|r| r.parameter == *p && r.estimator == *e)
                .map(&cell)
                .collect();
            line.push(parts.join(" - "));
        }
        grid.push(line);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| {
            grid.iter()
                .map(|row| row[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = format!("{title} ({}, NS = {})\n", table.design, table.replicates);
    for (i, row) in grid.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}", w = *w))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}

fn number(v: f64) -> String {
    if v.is_finite() {
        // Adding 0.0 turns a rounded -0 into 0.
        format!("{:.0}", v.round() + 0.0)
    } else {
        "NA".into()
    }
}

/// "RRMSE (RB)" cells; knot counts of one estimator are joined by " - ".
pub fn format_table(table: &MetricsTable) -> String {
    render(table, "RRMSE (RB)", |r| {
        format!("{} ({})", number(r.rrmse), number(r.rb))
    })
}

/// Coverage percentages, laid out like [`format_table`].
pub fn format_coverage_table(table: &MetricsTable) -> String {
    let title = format!("Coverage (%) at nominal {}%", number(100.0 * table.level));
    render(table, &title, |r| number(r.coverage))
}

/// One CSV row per (parameter, estimator, K).
pub fn write_metrics_csv<W: Write>(table: &MetricsTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "parameter",
        "estimator",
        "knots",
        "truth",
        "rb",
        "rb_absolute",
        "rrmse",
        "coverage",
        "negative_variances",
        "failures",
        "variance_failures",
        "replicates_used",
        "mean_runtime_ms",
    ])?;
    for r in &table.rows {
        w.write_record([
            r.parameter.clone(),
            r.estimator.clone(),
            r.knots.map(|k| k.to_string()).unwrap_or_default(),
            r.truth.to_string(),
            r.rb.to_string(),
            r.rb_absolute.to_string(),
            r.rrmse.to_string(),
            r.coverage.to_string(),
            r.negative_variances.to_string(),
            r.failures.to_string(),
            r.variance_failures.to_string(),
            r.replicates_used.to_string(),
            r.mean_runtime_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(parameter: &str, estimator: &str, knots: Option<usize>, rrmse: f64) -> MetricRow {
        MetricRow {
            parameter: parameter.into(),
            estimator: estimator.into(),
            knots,
            truth: 1.0,
            rb: 0.4,
            rb_absolute: false,
            rrmse,
            coverage: 94.6,
            negative_variances: 0,
            failures: 0,
            variance_failures: 0,
            replicates_used: 10,
            mean_runtime_ms: 0.1,
        }
    }

    fn table() -> MetricsTable {
        MetricsTable {
            replicates: 10,
            design: "SRSWOR(n=500)".into(),
            level: 0.95,
            rows: vec![
                row("gini", "HT", None, 100.0),
                row("gini", "BS(2)", Some(2), 50.2),
                row("gini", "BS(2)", Some(4), 49.6),
            ],
        }
    }

    #[test]
    fn knot_columns_are_dash_separated() {
        let text = format_table(&table());
        assert!(text.contains("50 (0) - 50 (0)"), "{text}");
        assert!(text.lines().nth(1).unwrap().starts_with("Parameter"));
        assert!(format_coverage_table(&table()).contains("95 - 95"));
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let mut buf = Vec::new();
        write_metrics_csv(&table(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(2).unwrap().starts_with("gini,BS(2),2,"));
    }
}
