//! Prompt rendering, option extraction and the paired evaluation loop.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::adapter::{
    self, ModelBackend, ModelRequest, ModelResponse, TAG_CGR_EXTRACT, TAG_MAIN, TAG_VAR_ATTENTION,
};
use crate::error::{AdapterError, EvalError, ModelError};
use crate::metrics::{classify_pair, PairOutcome};
use crate::model::{BenchmarkItem, Category, ItemPair, OptionLetter, Options};
use crate::pool::parallel_map;
use crate::prompts::{render_template, PromptSet};
use crate::var::{refine_encoded, VarParams};

pub const ANSWER_DIRECTIVE: &str =
    "Answer with the option's letter from the given choices directly.";
pub const MAX_INFO_CHARS: usize = 2048;
pub const DEFAULT_WORKERS: usize = 4;
pub const DEFAULT_MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Baseline,
    Instruction,
    Cgr,
    Var,
    #[serde(rename = "cgr+var")]
    CgrPlusVar,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Baseline,
        StrategyKind::Instruction,
        StrategyKind::Cgr,
        StrategyKind::Var,
        StrategyKind::CgrPlusVar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Baseline => "baseline",
            StrategyKind::Instruction => "instruction",
            StrategyKind::Cgr => "cgr",
            StrategyKind::Var => "var",
            StrategyKind::CgrPlusVar => "cgr+var",
        }
    }

    pub fn uses_cgr(self) -> bool {
        matches!(self, StrategyKind::Cgr | StrategyKind::CgrPlusVar)
    }

    pub fn uses_var(self) -> bool {
        matches!(self, StrategyKind::Var | StrategyKind::CgrPlusVar)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| EvalError::UnknownStrategy(s.to_string()))
    }
}

/// A refinement strategy plus the text-only ablation switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Strategy {
    kind: StrategyKind,
    no_image: bool,
}

impl Strategy {
    pub fn new(kind: StrategyKind, no_image: bool) -> Result<Self, EvalError> {
        if no_image && kind.uses_var() {
            return Err(EvalError::IncompatibleMode {
                strategy: kind.as_str(),
            });
        }
        Ok(Strategy { kind, no_image })
    }

    pub fn baseline() -> Self {
        Strategy {
            kind: StrategyKind::Baseline,
            no_image: false,
        }
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn no_image(&self) -> bool {
        self.no_image
    }

    /// Model calls per item.
    pub fn calls_per_item(&self) -> usize {
        1 + self.kind.uses_cgr() as usize + self.kind.uses_var() as usize
    }
}

/// "A. text" through "D. text", one per line, no trailing newline.
pub fn format_options(options: &Options) -> String {
    options
        .iter()
        .map(|(l, t)| format!("{l}. {t}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders the answer-step prompt for one item. `extracted_info` must be
/// given for CGR strategies and omitted otherwise.
pub fn build_prompt(
    item: &BenchmarkItem,
    strategy: &Strategy,
    extracted_info: Option<&str>,
    prompts: &PromptSet,
) -> Result<String, EvalError> {
    let options = format_options(&item.options);
    if strategy.kind.uses_cgr() != extracted_info.is_some() {
        return Err(EvalError::ExtractedInfo {
            strategy: strategy.kind.as_str(),
        });
    }
    let body = match (strategy.kind, extracted_info) {
        (StrategyKind::Instruction, _) => {
            format!(
                "{}\n\n{}\n{}",
                prompts.instruction.trim_end(),
                item.question,
                options
            )
        }
        (_, Some(info)) => render_template(
            &prompts.cgr_answer,
            &[
                ("info", info),
                ("question", &item.question),
                ("options", &options),
            ],
        )?
        .trim_end()
        .to_string(),
        _ => format!("{}\n{}", item.question, options),
    };
    Ok(format!("{body}\n{ANSWER_DIRECTIVE}"))
}

/// Extraction-step prompt for CGR.
pub fn build_extraction_prompt(prompts: &PromptSet) -> Result<String, EvalError> {
    Ok(render_template(&prompts.cgr_extract, &[])?
        .trim_end()
        .to_string())
}

/// Caps extracted info at [`MAX_INFO_CHARS`] characters, cutting after the
/// last sentence terminator inside the limit when there is one.
pub fn truncate_info(text: &str) -> String {
    let text = text.trim();
    let Some((cut, _)) = text.char_indices().nth(MAX_INFO_CHARS) else {
        return text.to_string();
    };
    let head = &text[..cut];
    match head.rfind(['.', '!', '?', '\n']) {
        Some(i) if i > 0 => head[..=i].trim_end().to_string(),
        _ => head.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMethod {
    LeadingLetter,
    Parenthesized,
    OptionTextMatch,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedChoice {
    pub letter: Option<OptionLetter>,
    pub method: ExtractionMethod,
}

impl ExtractedChoice {
    pub const NONE: ExtractedChoice = ExtractedChoice {
        letter: None,
        method: ExtractionMethod::None,
    };

    fn by(letter: OptionLetter, method: ExtractionMethod) -> Self {
        ExtractedChoice {
            letter: Some(letter),
            method,
        }
    }
}

fn parenthesized_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([A-D])\)|(?i:answer is)\s*:?\s*\(?([A-D])\b").unwrap())
}

/// Maps a free-text reply to an option letter. Rules, first hit wins:
/// a leading letter, a parenthesized letter or "answer is X", then a unique
/// case-insensitive match of one option's full text.
pub fn extract_option(raw_text: &str, options: &Options) -> ExtractedChoice {
    let text = raw_text.trim();
    let mut chars = text.chars();
    if let Some(letter) = chars.next().and_then(OptionLetter::from_char) {
        if matches!(chars.next(), None | Some('.' | ')' | ':' | ',')) {
            return ExtractedChoice::by(letter, ExtractionMethod::LeadingLetter);
        }
    }
    if let Some(caps) = parenthesized_re().captures(text) {
        let m = caps.get(1).or_else(|| caps.get(2)).unwrap();
        let letter = OptionLetter::from_char(m.as_str().chars().next().unwrap()).unwrap();
        return ExtractedChoice::by(letter, ExtractionMethod::Parenthesized);
    }
    let lower = text.to_lowercase();
    let mut hits = options
        .iter()
        .filter(|(_, t)| !t.trim().is_empty() && lower.contains(&t.trim().to_lowercase()))
        .map(|(l, _)| l);
    match (hits.next(), hits.next()) {
        (Some(l), None) => ExtractedChoice::by(l, ExtractionMethod::OptionTextMatch),
        _ => ExtractedChoice::NONE,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub strategy: Strategy,
    pub workers: usize,
    /// Abort when the fraction of failed items exceeds this.
    pub max_failure_rate: f64,
    /// Base directory for relative image references.
    pub image_root: PathBuf,
    pub var: VarParams,
    pub want_logits: bool,
}

impl EvalOptions {
    pub fn new(strategy: Strategy, image_root: impl Into<PathBuf>) -> Self {
        EvalOptions {
            strategy,
            workers: DEFAULT_WORKERS,
            max_failure_rate: DEFAULT_MAX_FAILURE_RATE,
            image_root: image_root.into(),
            var: VarParams::default(),
            want_logits: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemResult {
    pub item_id: String,
    /// Every response received for this item, in request order.
    pub exchanges: Vec<ModelResponse>,
    pub choice: ExtractedChoice,
    pub correct: bool,
    pub error: Option<ItemError>,
}

impl ItemResult {
    /// The answer-step response, when the item got that far.
    pub fn answer(&self) -> Option<&ModelResponse> {
        self.exchanges.iter().find(|r| r.tag == TAG_MAIN)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemError {
    pub message: String,
    pub transport: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    pub pair: ItemPair,
    pub positive: ItemResult,
    pub negative: ItemResult,
    pub outcome: PairOutcome,
}

impl PairResult {
    pub fn outcome_record(&self) -> OutcomeRecord {
        OutcomeRecord {
            pair_id: self.pair.pair_id.clone(),
            category: self.pair.category(),
            outcome: self.outcome,
            pos_choice: self.positive.choice.letter,
            neg_choice: self.negative.choice.letter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub results: Vec<PairResult>,
    pub failed_items: usize,
    pub unparseable_items: usize,
}

impl EvalRun {
    pub fn outcome_records(&self) -> Vec<OutcomeRecord> {
        self.results
            .iter()
            .map(PairResult::outcome_record)
            .collect()
    }

    pub fn unparseable_rate(&self) -> Option<f64> {
        let n = self.results.len() * 2;
        (n > 0).then(|| self.unparseable_items as f64 / n as f64)
    }
}

struct Failure {
    message: String,
    transport: bool,
}

impl From<AdapterError> for Failure {
    fn from(e: AdapterError) -> Self {
        Failure {
            transport: e.is_transport(),
            message: e.to_string(),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure {
            transport: false,
            message: e.to_string(),
        }
    }
}

struct ItemRunner<'a> {
    backend: &'a dyn ModelBackend,
    prompts: &'a PromptSet,
    opts: &'a EvalOptions,
}

impl ItemRunner<'_> {
    fn run(&self, item: &BenchmarkItem) -> ItemResult {
        let mut exchanges = Vec::new();
        let outcome = self.exchange(item, &mut exchanges);
        let (choice, error) = match outcome {
            Ok(text) => (extract_option(&text, &item.options), None),
            Err(f) => {
                log::warn!("item {}: {}", item.item_id, f.message);
                (
                    ExtractedChoice::NONE,
                    Some(ItemError {
                        message: f.message,
                        transport: f.transport,
                    }),
                )
            }
        };
        ItemResult {
            item_id: item.item_id.clone(),
            exchanges,
            correct: choice.letter == Some(item.answer),
            choice,
            error,
        }
    }

    fn call(
        &self,
        request: ModelRequest,
        log: &mut Vec<ModelResponse>,
    ) -> Result<ModelResponse, Failure> {
        let response = adapter::send(self.backend, &request)?;
        log.push(response.clone());
        Ok(response)
    }

    fn exchange(
        &self,
        item: &BenchmarkItem,
        log: &mut Vec<ModelResponse>,
    ) -> Result<String, Failure> {
        let strategy = &self.opts.strategy;
        let kind = strategy.kind();
        let image = if strategy.no_image() {
            None
        } else {
            let path = self.opts.image_root.join(&item.image_ref);
            Some(std::fs::read(&path).map_err(|e| Failure {
                message: format!("image {}: {e}", path.display()),
                transport: false,
            })?)
        };

        let info = if kind.uses_cgr() {
            let request = ModelRequest::new(
                &item.item_id,
                TAG_CGR_EXTRACT,
                build_extraction_prompt(self.prompts)?,
            )
            .with_image(image.clone());
            Some(truncate_info(&self.call(request, log)?.raw_text))
        } else {
            None
        };
        let prompt = build_prompt(item, strategy, info.as_deref(), self.prompts)?;

        let image = if kind.uses_var() {
            let original = image.expect("VAR strategies always carry an image");
            let request = ModelRequest::new(&item.item_id, TAG_VAR_ATTENTION, prompt.clone())
                .with_image(Some(original.clone()))
                .with_attention(true);
            let response = self.call(request, log)?;
            let dump = response.load_attention()?.ok_or_else(|| Failure {
                message: format!("item {}: no attention returned for VAR", item.item_id),
                transport: false,
            })?;
            let refined =
                refine_encoded(&original, &dump, &self.opts.var).map_err(|e| Failure {
                    message: format!("item {}: VAR refinement failed: {e}", item.item_id),
                    transport: false,
                })?;
            Some(refined)
        } else {
            image
        };

        let request = ModelRequest::new(&item.item_id, TAG_MAIN, prompt)
            .with_image(image)
            .with_logits(self.opts.want_logits);
        Ok(self.call(request, log)?.raw_text)
    }
}

/// Evaluates every pair once. Results come back in input order whatever the
/// worker count. Failed items score as incorrect; the run aborts when the
/// failure fraction exceeds `opts.max_failure_rate`.
pub fn run_eval(
    pairs: &[ItemPair],
    backend: &dyn ModelBackend,
    prompts: &PromptSet,
    opts: &EvalOptions,
) -> Result<EvalRun, EvalError> {
    if opts.workers == 0 {
        return Err(EvalError::InvalidWorkers(0));
    }
    let runner = ItemRunner {
        backend,
        prompts,
        opts,
    };
    let results = parallel_map(pairs, opts.workers, |pair| {
        let positive = runner.run(&pair.positive);
        let negative = runner.run(&pair.negative);
        let outcome = classify_pair(positive.correct, negative.correct);
        PairResult {
            pair: pair.clone(),
            positive,
            negative,
            outcome,
        }
    });

    let items = || results.iter().flat_map(|r| [&r.positive, &r.negative]);
    let failed = items().filter(|i| i.error.is_some()).count();
    let transport = items()
        .filter(|i| i.error.as_ref().is_some_and(|e| e.transport))
        .count();
    let unparseable = items()
        .filter(|i| i.error.is_none() && i.choice.letter.is_none())
        .count();
    let total = results.len() * 2;
    if total > 0 && failed as f64 / total as f64 > opts.max_failure_rate {
        return Err(EvalError::TooManyFailures {
            failed,
            transport,
            total,
            threshold: opts.max_failure_rate,
        });
    }
    Ok(EvalRun {
        results,
        failed_items: failed,
        unparseable_items: unparseable,
    })
}

/// Scores a pair from already-recorded answer texts.
pub fn score_pair(
    pair: &ItemPair,
    pos_text: &str,
    neg_text: &str,
) -> (PairOutcome, ExtractedChoice, ExtractedChoice) {
    let pos = extract_option(pos_text, &pair.positive.options);
    let neg = extract_option(neg_text, &pair.negative.options);
    let outcome = classify_pair(
        pos.letter == Some(pair.positive.answer),
        neg.letter == Some(pair.negative.answer),
    );
    (outcome, pos, neg)
}

/// One line of the outcomes log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRecord {
    pub pair_id: String,
    pub category: Category,
    pub outcome: PairOutcome,
    pub pos_choice: Option<OptionLetter>,
    pub neg_choice: Option<OptionLetter>,
}

pub fn write_outcomes<W: Write>(records: &[OutcomeRecord], mut writer: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_outcomes<R: BufRead>(reader: R) -> Result<Vec<OutcomeRecord>, ModelError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| ModelError::Json {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

pub fn read_outcomes_file(path: impl AsRef<Path>) -> Result<Vec<OutcomeRecord>, ModelError> {
    read_outcomes(std::io::BufReader::new(std::fs::File::open(path)?))
}
