//! Text tables and plot-ready curve files for training logs and
//! adaptation reports.

use std::fmt::Write as _;

use hdnn::adaptation::AdaptReport;
use hdnn::training::TrainRun;

pub enum Artifact {
    Train(TrainRun),
    Adapt(AdaptReport),
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&mut out, header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, &rule);
    for row in rows {
        line(&mut out, row);
    }
    out
}

fn settings_line(config: &[(String, String)]) -> String {
    config
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn render_train(name: &str, run: &TrainRun) -> String {
    let mut header: Vec<String> = ["epoch", "objective", "train_acc", "dev_acc", "seconds"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(run.extra_columns.iter().cloned());
    let rows: Vec<Vec<String>> = std::iter::once(&run.baseline)
        .chain(&run.records)
        .map(|r| {
            let mut row = vec![
                r.epoch.to_string(),
                format!("{:.5}", r.objective),
                format!("{:.2}", r.train_acc),
                format!("{:.2}", r.dev_acc),
                format!("{:.2}", r.seconds),
            ];
            row.extend(r.extra.iter().map(|v| format!("{v:.5}")));
            row
        })
        .collect();
    format!("== {name}\n{}\n{}", settings_line(&run.config), table(&header, &rows))
}

pub fn train_curve(run: &TrainRun) -> String {
    let mut out = String::from("# epoch objective train_acc dev_acc seconds");
    for c in &run.extra_columns {
        out.push(' ');
        out.push_str(c);
    }
    out.push('\n');
    for r in std::iter::once(&run.baseline).chain(&run.records) {
        let _ = write!(out, "{} {:.8} {:.6} {:.6} {:.6}", r.epoch, r.objective, r.train_acc, r.dev_acc, r.seconds);
        for v in &r.extra {
            let _ = write!(out, " {v:.8}");
        }
        out.push('\n');
    }
    out
}

pub fn render_adapt(name: &str, report: &AdaptReport) -> String {
    let agg = report.aggregate();
    let iters = agg.len();
    let mut header = vec!["speaker".to_string(), "label_acc".into(), "err_si".into()];
    header.extend((1..iters).map(|i| format!("sd@{i}")));
    let mut rows = Vec::new();
    for spk in report.speakers() {
        let spk_rows = report.speaker_rows(spk);
        let label_acc = report
            .label_accuracy
            .iter()
            .find(|(s, _)| s == spk)
            .map_or("-".to_string(), |(_, a)| format!("{a:.2}"));
        let mut row = vec![spk.to_string(), label_acc, format!("{:.2}", spk_rows[0].err_si)];
        row.extend(spk_rows.iter().skip(1).map(|r| format!("{:.2}", r.err_sd)));
        rows.push(row);
    }
    if let Some(&(_, si, _)) = agg.first() {
        let mut row = vec!["mean".to_string(), "".into(), format!("{si:.2}")];
        row.extend(agg.iter().skip(1).map(|(_, _, sd)| format!("{sd:.2}")));
        rows.push(row);
    }
    format!("== {name}\n{}\n{}", settings_line(&report.config), table(&header, &rows))
}

pub fn adapt_curve(report: &AdaptReport) -> String {
    let mut out = String::from("# iteration mean_err_si mean_err_sd\n");
    for (it, si, sd) in report.aggregate() {
        let _ = writeln!(out, "{it} {si:.6} {sd:.6}");
    }
    out
}

/// One line per training log: final and best held-out accuracy.
pub fn render_summary(runs: &[(String, &TrainRun)]) -> String {
    let header: Vec<String> = ["run", "objective", "mask", "epochs", "train_acc", "dev_acc", "best_dev"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|(name, run)| {
            let last = run.records.last().unwrap_or(&run.baseline);
            let best = run.dev_curve().into_iter().fold(f64::MIN, f64::max);
            vec![
                name.clone(),
                run.config_value("objective").unwrap_or("-").to_string(),
                run.config_value("mask").unwrap_or("-").to_string(),
                run.records.len().to_string(),
                format!("{:.2}", last.train_acc),
                format!("{:.2}", last.dev_acc),
                format!("{best:.2}"),
            ]
        })
        .collect();
    table(&header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_aligns_columns() {
        let t = table(
            &["a".into(), "bb".into()],
            &[vec!["xyz".into(), "1".into()], vec!["q".into(), "22".into()]],
        );
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "a    bb");
        assert_eq!(lines[2], "xyz   1");
        assert_eq!(lines[3], "q    22");
    }
}
