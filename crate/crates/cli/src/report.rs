//! Human-readable evaluation and ablation reports: per-metric "mean ± std"
//! with three decimals, split into Global and Tumor sections.

use cediff_core::metrics::{MetricReport, MetricValues};

use crate::trainer::AblationRow;

pub fn fmt_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.3} ± {std:.3}")
}

const METRIC_NAMES: [&str; 4] = ["SSIM", "PSNR", "NMSE", "nHFEN"];

fn selectors() -> [fn(&MetricValues<f64>) -> f64; 4] {
    [|v| v.ssim, |v| v.psnr, |v| v.nmse, |v| v.nhfen]
}

/// Four formatted "mean ± std" cells for one report.
pub fn metric_cells(report: &MetricReport<f64>) -> Vec<String> {
    selectors()
        .iter()
        .map(|sel| {
            let (m, s) = report.mean_std(sel);
            fmt_mean_std(m, s)
        })
        .collect()
}

fn section(title: &str, report: &MetricReport<f64>) -> String {
    let mut out = format!("{title} ({} cases)\n", report.per_case.len());
    if report.per_case.is_empty() {
        out.push_str("  (no cases)\n");
        return out;
    }
    for (name, cell) in METRIC_NAMES.iter().zip(metric_cells(report)) {
        out.push_str(&format!("  {name:<6} {cell}\n"));
    }
    out
}

/// Evaluation report: a Global section over whole images and a Tumor section
/// over tumor-masked regions.
pub fn render_eval_report(global: &MetricReport<f64>, tumor: &MetricReport<f64>) -> String {
    format!("{}\n{}", section("Global", global), section("Tumor", tumor))
}

/// Ablation table: one row per variant, with component switches and the eight
/// metric cells (four global, four tumor).
pub fn render_ablation_table(rows: &[AblationRow]) -> String {
    let mut header = format!("{:<14} {:<5} {:<6} {:<5}", "Configuration", "UncA", "FDisp", "Perc");
    for scope in ["Global", "Tumor"] {
        for name in METRIC_NAMES {
            header.push_str(&format!(" | {:<15}", format!("{scope} {name}")));
        }
    }
    let mut out = String::new();
    out.push_str(&header);
    out.push('\n');
    out.push_str(&"-".repeat(header.len()));
    out.push('\n');
    for row in rows {
        let mark = |b: bool| if b { "x" } else { " " };
        out.push_str(&format!(
            "{:<14} {:<5} {:<6} {:<5}",
            row.label,
            mark(row.flags.uncertainty),
            mark(row.flags.dispersive),
            mark(row.flags.perceptual)
        ));
        for report in [&row.global, &row.tumor] {
            if report.per_case.is_empty() {
                for _ in 0..4 {
                    out.push_str(&format!(" | {:<15}", "-"));
                }
            } else {
                for cell in metric_cells(report) {
                    out.push_str(&format!(" | {cell:<15}"));
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use cediff_core::metrics::MetricScope;

    fn report(vals: &[f64]) -> MetricReport<f64> {
        let mut r = MetricReport::new(MetricScope::Global);
        for (i, &v) in vals.iter().enumerate() {
            r.push(i as u64, MetricValues { ssim: v, psnr: 30.0 + v, nmse: v / 10.0, nhfen: v / 5.0 });
        }
        r
    }

    #[test]
    fn mean_std_formats_three_decimals() {
        assert_eq!(fmt_mean_std(0.90911, 0.02749), "0.909 ± 0.027");
        assert_eq!(fmt_mean_std(24.0, 0.0), "24.000 ± 0.000");
    }

    #[test]
    fn eval_report_has_both_sections_and_all_metrics() {
        let text = render_eval_report(&report(&[0.8, 0.9]), &report(&[0.7]));
        assert!(text.contains("Global (2 cases)"));
        assert!(text.contains("Tumor (1 cases)"));
        for name in METRIC_NAMES {
            assert!(text.contains(name), "missing {name}");
        }
        assert!(text.contains("0.850 ± 0.050"));
    }

    #[test]
    fn ablation_table_lists_all_variants() {
        let rows: Vec<AblationRow> = crate::trainer::ablation_variants()
            .into_iter()
            .map(|(label, flags)| AblationRow {
                label: label.to_string(),
                flags,
                global: report(&[0.9]),
                tumor: report(&[0.8]),
            })
            .collect();
        let text = render_ablation_table(&rows);
        for label in ["Baseline", "+UncA", "+UncA+FDisp", "Full"] {
            assert!(text.contains(label), "missing row {label}");
        }
        assert_eq!(text.lines().count(), 6); // header, rule, 4 rows
    }
}
