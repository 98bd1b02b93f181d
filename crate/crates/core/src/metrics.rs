//! Misleading Rate and Robustness Accuracy over pair outcomes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::Category;

/// Outcome of one positive/negative pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairOutcome {
    /// Positive correct, negative correct.
    #[serde(rename = "UR")]
    UnderstandingRobust,
    /// Positive correct, negative wrong.
    #[serde(rename = "UF")]
    UnderstandingFragile,
    /// Positive wrong, negative correct.
    #[serde(rename = "NR")]
    NotUnderstandingRobust,
    /// Both wrong.
    #[serde(rename = "NF")]
    NotUnderstandingFragile,
}

impl PairOutcome {
    pub const ALL: [PairOutcome; 4] = [
        PairOutcome::UnderstandingRobust,
        PairOutcome::UnderstandingFragile,
        PairOutcome::NotUnderstandingRobust,
        PairOutcome::NotUnderstandingFragile,
    ];

    pub fn code(self) -> &'static str {
        match self {
            PairOutcome::UnderstandingRobust => "UR",
            PairOutcome::UnderstandingFragile => "UF",
            PairOutcome::NotUnderstandingRobust => "NR",
            PairOutcome::NotUnderstandingFragile => "NF",
        }
    }
}

impl fmt::Display for PairOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for PairOutcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PairOutcome::ALL
            .into_iter()
            .find(|o| o.code() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// Maps correctness on the positive and negative question to an outcome.
pub fn classify_pair(pos_correct: bool, neg_correct: bool) -> PairOutcome {
    match (pos_correct, neg_correct) {
        (true, true) => PairOutcome::UnderstandingRobust,
        (true, false) => PairOutcome::UnderstandingFragile,
        (false, true) => PairOutcome::NotUnderstandingRobust,
        (false, false) => PairOutcome::NotUnderstandingFragile,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub n_ur: u64,
    pub n_uf: u64,
    pub n_nr: u64,
    pub n_nf: u64,
}

impl OutcomeCounts {
    pub fn new(n_ur: u64, n_uf: u64, n_nr: u64, n_nf: u64) -> Self {
        OutcomeCounts {
            n_ur,
            n_uf,
            n_nr,
            n_nf,
        }
    }

    pub fn total(&self) -> u64 {
        self.n_ur + self.n_uf + self.n_nr + self.n_nf
    }

    pub fn add(&mut self, outcome: PairOutcome) {
        match outcome {
            PairOutcome::UnderstandingRobust => self.n_ur += 1,
            PairOutcome::UnderstandingFragile => self.n_uf += 1,
            PairOutcome::NotUnderstandingRobust => self.n_nr += 1,
            PairOutcome::NotUnderstandingFragile => self.n_nf += 1,
        }
    }

    pub fn merge(&mut self, other: &OutcomeCounts) {
        self.n_ur += other.n_ur;
        self.n_uf += other.n_uf;
        self.n_nr += other.n_nr;
        self.n_nf += other.n_nf;
    }
}

impl FromIterator<PairOutcome> for OutcomeCounts {
    fn from_iter<I: IntoIterator<Item = PairOutcome>>(iter: I) -> Self {
        let mut counts = OutcomeCounts::default();
        iter.into_iter().for_each(|o| counts.add(o));
        counts
    }
}

/// A rate that may be undefined because its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricValue(Option<f64>);

impl MetricValue {
    pub const UNDEFINED: MetricValue = MetricValue(None);

    pub fn defined(value: f64) -> Self {
        MetricValue(Some(value))
    }

    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            MetricValue(None)
        } else {
            MetricValue(Some(num as f64 / den as f64))
        }
    }

    pub fn is_defined(&self) -> bool {
        self.0.is_some()
    }

    pub fn value(&self) -> Option<f64> {
        self.0
    }

    /// Percentage with two decimals, `—` when undefined.
    pub fn percent(&self) -> String {
        match self.0 {
            Some(v) => format_percent(v),
            None => "\u{2014}".to_string(),
        }
    }
}

/// Formats a fraction as a percentage rounded half away from zero to two
/// decimals, with a `.` separator regardless of locale.
pub fn format_percent(fraction: f64) -> String {
    let hundredths = (fraction * 10_000.0).round();
    let sign = if hundredths < 0.0 { "-" } else { "" };
    let abs = hundredths.abs() as u64;
    format!("{sign}{}.{:02}", abs / 100, abs % 100)
}

/// `n_uf / (n_ur + n_uf)`.
pub fn misleading_rate(counts: &OutcomeCounts) -> MetricValue {
    MetricValue::ratio(counts.n_uf, counts.n_ur + counts.n_uf)
}

/// `n_ur / total`.
pub fn robustness_accuracy(counts: &OutcomeCounts) -> MetricValue {
    MetricValue::ratio(counts.n_ur, counts.total())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricLine {
    pub counts: OutcomeCounts,
    pub ra: MetricValue,
    pub mr: MetricValue,
}

impl MetricLine {
    pub fn from_counts(counts: OutcomeCounts) -> Self {
        MetricLine {
            counts,
            ra: robustness_accuracy(&counts),
            mr: misleading_rate(&counts),
        }
    }
}

/// Unweighted mean over categories with a defined value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAverage {
    pub ra: MetricValue,
    pub mr: MetricValue,
    pub undefined_ra: usize,
    pub undefined_mr: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Every category, including ones without pairs.
    pub per_category: BTreeMap<Category, MetricLine>,
    pub micro: MetricLine,
    #[serde(rename = "macro")]
    pub macro_avg: MacroAverage,
}

fn mean_defined(values: impl Iterator<Item = MetricValue>) -> (MetricValue, usize) {
    let (mut sum, mut n, mut undefined) = (0.0, 0usize, 0usize);
    for v in values {
        match v.value() {
            Some(x) => {
                sum += x;
                n += 1;
            }
            None => undefined += 1,
        }
    }
    let mean = if n == 0 {
        MetricValue::UNDEFINED
    } else {
        MetricValue::defined(sum / n as f64)
    };
    (mean, undefined)
}

pub fn build_report<I>(outcomes: I) -> MetricsReport
where
    I: IntoIterator<Item = (Category, PairOutcome)>,
{
    let mut counts: BTreeMap<Category, OutcomeCounts> = Category::ALL
        .iter()
        .map(|c| (*c, OutcomeCounts::default()))
        .collect();
    for (category, outcome) in outcomes {
        counts
            .get_mut(&category)
            .expect("all categories present")
            .add(outcome);
    }

    let mut micro = OutcomeCounts::default();
    for c in counts.values() {
        micro.merge(c);
    }
    let per_category: BTreeMap<Category, MetricLine> = counts
        .into_iter()
        .map(|(cat, c)| (cat, MetricLine::from_counts(c)))
        .collect();

    let (ra, undefined_ra) = mean_defined(per_category.values().map(|l| l.ra));
    let (mr, undefined_mr) = mean_defined(per_category.values().map(|l| l.mr));

    MetricsReport {
        per_category,
        micro: MetricLine::from_counts(micro),
        macro_avg: MacroAverage {
            ra,
            mr,
            undefined_ra,
            undefined_mr,
        },
    }
}
