//! Attention statistics over token segments, and option-logit confidence.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::adapter::{AttentionDump, SegmentLengths};
use crate::error::AnalyticsError;
use crate::metrics::PairOutcome;
use crate::model::OptionLetter;

/// Denominator guard for attention ratios.
pub const RATIO_EPSILON: f64 = 1e-12;

/// Square attention matrix, row-major; row `i` attends to column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    n: usize,
    data: Vec<f64>,
}

impl AttentionMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self, AnalyticsError> {
        if data.len() != n * n {
            return Err(AnalyticsError::Shape(format!(
                "{} values cannot form a {n}x{n} matrix",
                data.len()
            )));
        }
        Ok(AttentionMatrix { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        AttentionMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n..(row + 1) * self.n]
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    fn check(&self, seg: &SegmentLengths) -> Result<(), AnalyticsError> {
        if seg.total() != self.n {
            return Err(AnalyticsError::Shape(format!(
                "segments sum to {} tokens but the matrix is {n}x{n}",
                seg.total(),
                n = self.n
            )));
        }
        Ok(())
    }

    /// Row-wise maxima of the block `rows x cols`.
    fn block_row_maxima<'a>(
        &'a self,
        rows: Range<usize>,
        cols: Range<usize>,
    ) -> impl Iterator<Item = f64> + 'a {
        rows.map(move |r| {
            self.row(r)[cols.clone()]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
    }
}

/// Element-wise mean over the head axis.
pub fn average_heads(dump: &AttentionDump) -> AttentionMatrix {
    let n = dump.seq_len();
    let heads = dump.heads();
    let mut data = vec![0.0f64; n * n];
    for h in 0..heads {
        for (acc, v) in data.iter_mut().zip(dump.head(h)) {
            *acc += *v as f64;
        }
    }
    let scale = 1.0 / heads as f64;
    data.iter_mut().for_each(|v| *v *= scale);
    AttentionMatrix { n, data }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerAttentionScores {
    pub to_system: f64,
    pub to_visual: f64,
    pub to_question: f64,
}

/// For each target segment: the mean over answer rows of the row-wise
/// maximum inside that segment's columns.
pub fn answer_attention_scores(
    a: &AttentionMatrix,
    seg: &SegmentLengths,
) -> Result<AnswerAttentionScores, AnalyticsError> {
    a.check(seg)?;
    let mean_of_maxima = |cols: Range<usize>| {
        let rows = seg.answer();
        let n = rows.len() as f64;
        a.block_row_maxima(rows, cols).sum::<f64>() / n
    };
    Ok(AnswerAttentionScores {
        to_system: mean_of_maxima(seg.system()),
        to_visual: mean_of_maxima(seg.visual()),
        to_question: mean_of_maxima(seg.question()),
    })
}

/// Lower bound of question-token attention into the system and visual segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuestionAttentionBound {
    pub to_system: f64,
    pub to_visual: f64,
}

/// For each target segment: the minimum over question rows of the row-wise
/// maximum inside that segment's columns.
pub fn question_attention_bound(
    a: &AttentionMatrix,
    seg: &SegmentLengths,
) -> Result<QuestionAttentionBound, AnalyticsError> {
    a.check(seg)?;
    let min_of_maxima = |cols: Range<usize>| {
        a.block_row_maxima(seg.question(), cols)
            .fold(f64::INFINITY, f64::min)
    };
    Ok(QuestionAttentionBound {
        to_system: min_of_maxima(seg.system()),
        to_visual: min_of_maxima(seg.visual()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairAttentionRatios {
    pub sys_ratio: f64,
    pub vis_ratio: f64,
}

/// Negative-over-positive bound ratios; `None` when a positive-side bound is
/// below [`RATIO_EPSILON`].
pub fn pair_attention_ratios(
    pos: &QuestionAttentionBound,
    neg: &QuestionAttentionBound,
) -> Option<PairAttentionRatios> {
    if pos.to_system < RATIO_EPSILON || pos.to_visual < RATIO_EPSILON {
        return None;
    }
    Some(PairAttentionRatios {
        sys_ratio: neg.to_system / pos.to_system,
        vis_ratio: neg.to_visual / pos.to_visual,
    })
}

/// Softmax probabilities over the four options, ordered A..D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionProbabilities(pub [f64; 4]);

impl OptionProbabilities {
    pub fn get(&self, letter: OptionLetter) -> f64 {
        self.0[letter.index()]
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64; 4]) -> Result<OptionProbabilities, AnalyticsError> {
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(AnalyticsError::NonFiniteLogit(i));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|l| (l - max).exp());
    let sum: f64 = exps.iter().sum();
    Ok(OptionProbabilities(exps.map(|e| e / sum)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRatio {
    pub p_pos: f64,
    pub p_neg: f64,
    pub ratio: f64,
}

/// Probability of the correct option under the negative question divided by
/// the same under the positive question.
pub fn confidence_ratio(
    pos_logits: &[f64; 4],
    pos_answer: OptionLetter,
    neg_logits: &[f64; 4],
    neg_answer: OptionLetter,
) -> Result<ConfidenceRatio, AnalyticsError> {
    let p_pos = softmax(pos_logits)?.get(pos_answer);
    let p_neg = softmax(neg_logits)?.get(neg_answer);
    Ok(ConfidenceRatio {
        p_pos,
        p_neg,
        ratio: p_neg / p_pos,
    })
}

/// Per-pair inputs to [`aggregate_uf_ratios`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairLogits {
    pub pair_id: String,
    pub outcome: PairOutcome,
    pub pos_logits: Option<[f64; 4]>,
    pub pos_answer: OptionLetter,
    pub neg_logits: Option<[f64; 4]>,
    pub neg_answer: OptionLetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairConfidence {
    pub pair_id: String,
    #[serde(flatten)]
    pub confidence: ConfidenceRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UfConfidenceSummary {
    pub count: usize,
    /// Arithmetic mean of per-pair ratios.
    pub mean_ratio: Option<f64>,
    /// UF pairs excluded for missing logits on either side.
    pub missing_logits: usize,
    pub pairs: Vec<PairConfidence>,
}

/// Mean confidence ratio over UF pairs that carry logits on both sides.
pub fn aggregate_uf_ratios<'a, I>(pairs: I) -> Result<UfConfidenceSummary, AnalyticsError>
where
    I: IntoIterator<Item = &'a PairLogits>,
{
    let mut out = Vec::new();
    let mut missing = 0;
    for p in pairs
        .into_iter()
        .filter(|p| p.outcome == PairOutcome::UnderstandingFragile)
    {
        match (&p.pos_logits, &p.neg_logits) {
            (Some(pos), Some(neg)) => out.push(PairConfidence {
                pair_id: p.pair_id.clone(),
                confidence: confidence_ratio(pos, p.pos_answer, neg, p.neg_answer)?,
            }),
            _ => missing += 1,
        }
    }
    let mean_ratio = if out.is_empty() {
        None
    } else {
        Some(out.iter().map(|p| p.confidence.ratio).sum::<f64>() / out.len() as f64)
    };
    Ok(UfConfidenceSummary {
        count: out.len(),
        mean_ratio,
        missing_logits: missing,
        pairs: out,
    })
}

/// Corpus-level mean of answer attention scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerAttentionSummary {
    pub to_system: Option<f64>,
    pub to_visual: Option<f64>,
    pub to_question: Option<f64>,
    /// Number of dumps averaged.
    pub n: usize,
}

impl AnswerAttentionSummary {
    pub fn from_scores(scores: &[AnswerAttentionScores]) -> Self {
        let mean = |f: fn(&AnswerAttentionScores) -> f64| {
            (!scores.is_empty()).then(|| scores.iter().map(f).sum::<f64>() / scores.len() as f64)
        };
        AnswerAttentionSummary {
            to_system: mean(|s| s.to_system),
            to_visual: mean(|s| s.to_visual),
            to_question: mean(|s| s.to_question),
            n: scores.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    /// Mean of per-pair `neg/pos` system ratios.
    pub sys: Option<f64>,
    pub vis: Option<f64>,
    /// Pairs skipped by the denominator guard.
    pub skipped: usize,
    pub n: usize,
}

impl RatioSummary {
    /// `None` entries are pairs that the epsilon guard skipped.
    pub fn from_ratios(ratios: &[Option<PairAttentionRatios>]) -> Self {
        let kept: Vec<_> = ratios.iter().flatten().collect();
        let mean = |f: fn(&PairAttentionRatios) -> f64| {
            (!kept.is_empty()).then(|| kept.iter().map(|r| f(r)).sum::<f64>() / kept.len() as f64)
        };
        RatioSummary {
            sys: mean(|r| r.sys_ratio),
            vis: mean(|r| r.vis_ratio),
            skipped: ratios.len() - kept.len(),
            n: kept.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UfConfidence {
    pub count: usize,
    pub mean_ratio: Option<f64>,
}

/// The per-run analysis document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub answer_attention: AnswerAttentionSummary,
    pub ratio_summary: RatioSummary,
    pub uf_confidence: UfConfidence,
    /// How per-pair ratios are combined across the corpus.
    pub aggregation: String,
}

pub const AGGREGATION_MEAN_OF_RATIOS: &str = "mean_of_ratios";

/// Everything recorded for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEvidence {
    pub logits: PairLogits,
    pub pos_attention: Option<AttentionDump>,
    pub neg_attention: Option<AttentionDump>,
}

/// Corpus summary: answer attention over every dump, neg/pos ratios over
/// pairs with both dumps, confidence ratios over UF pairs with logits.
pub fn analyze(pairs: &[PairEvidence]) -> Result<AnalysisOutput, AnalyticsError> {
    let mut scores = Vec::new();
    let mut ratios = Vec::new();
    for p in pairs {
        let mut bounds = [None, None];
        for (slot, dump) in bounds.iter_mut().zip([&p.pos_attention, &p.neg_attention]) {
            if let Some(d) = dump {
                let a = average_heads(d);
                scores.push(answer_attention_scores(&a, d.segments())?);
                *slot = Some(question_attention_bound(&a, d.segments())?);
            }
        }
        if let [Some(pos), Some(neg)] = &bounds {
            ratios.push(pair_attention_ratios(pos, neg));
        }
    }
    let uf = aggregate_uf_ratios(pairs.iter().map(|p| &p.logits))?;
    Ok(AnalysisOutput {
        answer_attention: AnswerAttentionSummary::from_scores(&scores),
        ratio_summary: RatioSummary::from_ratios(&ratios),
        uf_confidence: UfConfidence {
            count: uf.count,
            mean_ratio: uf.mean_ratio,
        },
        aggregation: AGGREGATION_MEAN_OF_RATIOS.to_string(),
    })
}
