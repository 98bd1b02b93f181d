//! Markdown and CSV tables for metrics and analysis output.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analytics::AnalysisOutput;
use crate::metrics::{MetricLine, MetricValue, MetricsReport, PairOutcome};
use crate::model::Category;

pub const MICRO_LABEL: &str = "Micro Avg.";
pub const MACRO_LABEL: &str = "Macro Avg.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedReport {
    pub markdown: String,
    pub csv: String,
}

fn header_cells() -> Vec<&'static str> {
    Category::ALL
        .iter()
        .map(|c| c.short_label())
        .chain([MICRO_LABEL, MACRO_LABEL])
        .collect()
}

fn metric_cells(
    report: &MetricsReport,
    pick: fn(&MetricLine) -> MetricValue,
    macro_value: MetricValue,
) -> Vec<String> {
    report
        .per_category
        .values()
        .map(|l| pick(l).percent())
        .chain([pick(&report.micro).percent(), macro_value.percent()])
        .collect()
}

fn md_row(out: &mut String, cells: impl IntoIterator<Item = impl AsRef<str>>) {
    out.push('|');
    for c in cells {
        out.push(' ');
        out.push_str(c.as_ref());
        out.push_str(" |");
    }
    out.push('\n');
}

fn md_table(out: &mut String, first: &str, rows: &[(&str, Vec<String>)], header: &[&str]) {
    md_row(out, std::iter::once(first).chain(header.iter().copied()));
    md_row(
        out,
        std::iter::once(":--").chain(header.iter().map(|_| "--:")),
    );
    for (label, cells) in rows {
        md_row(
            out,
            std::iter::once(label.to_string()).chain(cells.iter().cloned()),
        );
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "\u{2014}".to_string(), |x| format!("{x:.6}"))
}

fn render_analysis(out: &mut String, a: &AnalysisOutput) {
    out.push_str("\n## Attention and confidence\n\n");
    let aa = &a.answer_attention;
    let _ = writeln!(out, "| Quantity | Value |");
    let _ = writeln!(out, "| :-- | --: |");
    let _ = writeln!(
        out,
        "| Answer attention to system tokens | {} |",
        fmt_opt(aa.to_system)
    );
    let _ = writeln!(
        out,
        "| Answer attention to visual tokens | {} |",
        fmt_opt(aa.to_visual)
    );
    let _ = writeln!(
        out,
        "| Answer attention to question tokens | {} |",
        fmt_opt(aa.to_question)
    );
    let _ = writeln!(out, "| Dumps averaged | {} |", aa.n);
    let rs = &a.ratio_summary;
    let _ = writeln!(
        out,
        "| Neg/pos system attention ratio | {} |",
        fmt_opt(rs.sys)
    );
    let _ = writeln!(
        out,
        "| Neg/pos visual attention ratio | {} |",
        fmt_opt(rs.vis)
    );
    let _ = writeln!(
        out,
        "| Pairs in ratio ({} skipped) | {} |",
        rs.skipped, rs.n
    );
    let uf = &a.uf_confidence;
    let _ = writeln!(
        out,
        "| UF confidence ratio ({}) | {} |",
        a.aggregation,
        fmt_opt(uf.mean_ratio)
    );
    let _ = writeln!(out, "| UF pairs with logits | {} |", uf.count);
}

/// Renders the RA and MR tables. Pure: identical inputs give identical bytes.
pub fn render(report: &MetricsReport, analytics: Option<&AnalysisOutput>) -> RenderedReport {
    let header = header_cells();
    let ra = metric_cells(report, |l| l.ra, report.macro_avg.ra);
    let mr = metric_cells(report, |l| l.mr, report.macro_avg.mr);

    let mut md = String::new();
    md.push_str("# Robustness report\n\n");
    md.push_str("## Robustness Accuracy (RA, %, higher is better)\n\n");
    md_table(&mut md, "Metric", &[("RA", ra.clone())], &header);
    md.push_str("\n## Misleading Rate (MR, %, lower is better)\n\n");
    md_table(&mut md, "Metric", &[("MR", mr.clone())], &header);

    md.push_str("\n## Pair outcomes\n\n");
    let count_header: Vec<&str> = Category::ALL
        .iter()
        .map(|c| c.short_label())
        .chain(["Total"])
        .collect();
    let rows: Vec<(&str, Vec<String>)> = PairOutcome::ALL
        .iter()
        .map(|o| {
            let pick = |l: &MetricLine| match o {
                PairOutcome::UnderstandingRobust => l.counts.n_ur,
                PairOutcome::UnderstandingFragile => l.counts.n_uf,
                PairOutcome::NotUnderstandingRobust => l.counts.n_nr,
                PairOutcome::NotUnderstandingFragile => l.counts.n_nf,
            };
            let cells = report
                .per_category
                .values()
                .map(|l| pick(l).to_string())
                .chain([pick(&report.micro).to_string()])
                .collect();
            (o.code(), cells)
        })
        .collect();
    md_table(&mut md, "Outcome", &rows, &count_header);
    let _ = write!(
        md,
        "\nMacro averages are unweighted means over categories with a defined value \
         (undefined: RA {}, MR {}).\n",
        report.macro_avg.undefined_ra, report.macro_avg.undefined_mr
    );
    if let Some(a) = analytics {
        render_analysis(&mut md, a);
    }

    let mut csv = String::from("metric");
    for h in &header {
        csv.push(',');
        csv.push_str(h);
    }
    csv.push('\n');
    for (label, cells) in [("RA", &ra), ("MR", &mr)] {
        csv.push_str(label);
        for c in cells {
            csv.push(',');
            csv.push_str(c);
        }
        csv.push('\n');
    }
    RenderedReport { markdown: md, csv }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GoldenDiff {
    Equal,
    /// First differing line, 1-based. `None` means that side has no such line.
    Mismatch {
        line: usize,
        expected: Option<String>,
        actual: Option<String>,
    },
}

impl GoldenDiff {
    pub fn is_equal(&self) -> bool {
        *self == GoldenDiff::Equal
    }
}

/// Byte-exact comparison. Lines split on `\n` only, so a `\r` shows up in the
/// reported line.
pub fn compare_golden(rendered: &[u8], golden: &[u8]) -> GoldenDiff {
    if rendered == golden {
        return GoldenDiff::Equal;
    }
    let mut exp = golden.split(|b| *b == b'\n');
    let mut act = rendered.split(|b| *b == b'\n');
    let mut line = 1;
    loop {
        let (e, a) = (exp.next(), act.next());
        if e != a {
            let show = |x: Option<&[u8]>| x.map(|b| String::from_utf8_lossy(b).into_owned());
            return GoldenDiff::Mismatch {
                line,
                expected: show(e),
                actual: show(a),
            };
        }
        line += 1;
    }
}
