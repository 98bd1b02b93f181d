//! Paired instruction-data construction: generation through an LLM,
//! filtering, composition and the training JSON format.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::adapter::{self, ModelBackend, ModelRequest, TAG_GENERATE};
use crate::error::{AdapterError, DatagenError};
use crate::model::OptionLetter;
use crate::pool::parallel_map;
use crate::prompts::{render_template, PromptSet};

pub const DEFAULT_PARSE_RETRIES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Human,
    Gpt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversationTurn {
    pub from: Speaker,
    pub value: String,
    /// Four answer options on a human turn (prompt version 3 only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
}

impl ConversationTurn {
    pub fn human(value: impl Into<String>) -> Self {
        ConversationTurn {
            from: Speaker::Human,
            value: value.into(),
            options: None,
        }
    }

    pub fn gpt(value: impl Into<String>) -> Self {
        ConversationTurn {
            from: Speaker::Gpt,
            value: value.into(),
            options: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Conversations {
    Single(Vec<ConversationTurn>),
    Paired {
        pos: Vec<ConversationTurn>,
        neg: Vec<ConversationTurn>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSample", into = "RawSample")]
pub struct GeneratedSample {
    pub id: String,
    pub image: String,
    pub conversations: Conversations,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSample {
    id: String,
    image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conversations: Option<Vec<ConversationTurn>>,
    #[serde(
        default,
        rename = "conversations-pos",
        skip_serializing_if = "Option::is_none"
    )]
    conversations_pos: Option<Vec<ConversationTurn>>,
    #[serde(
        default,
        rename = "conversations-neg",
        skip_serializing_if = "Option::is_none"
    )]
    conversations_neg: Option<Vec<ConversationTurn>>,
}

impl TryFrom<RawSample> for GeneratedSample {
    type Error = String;

    fn try_from(raw: RawSample) -> Result<Self, String> {
        let conversations = match (raw.conversations, raw.conversations_pos, raw.conversations_neg) {
            (Some(c), None, None) => Conversations::Single(c),
            (None, Some(pos), Some(neg)) => Conversations::Paired { pos, neg },
            _ => {
                return Err("expected either \"conversations\" or both \"conversations-pos\" and \"conversations-neg\"".into())
            }
        };
        let sample = GeneratedSample {
            id: raw.id,
            image: raw.image,
            conversations,
        };
        sample.validate()?;
        Ok(sample)
    }
}

impl From<GeneratedSample> for RawSample {
    fn from(s: GeneratedSample) -> Self {
        let (conversations, conversations_pos, conversations_neg) = match s.conversations {
            Conversations::Single(c) => (Some(c), None, None),
            Conversations::Paired { pos, neg } => (None, Some(pos), Some(neg)),
        };
        RawSample {
            id: s.id,
            image: s.image,
            conversations,
            conversations_pos,
            conversations_neg,
        }
    }
}

fn validate_turns(turns: &[ConversationTurn]) -> Result<(), String> {
    if turns.is_empty() {
        return Err("empty conversation".into());
    }
    if !turns.len().is_multiple_of(2) {
        return Err(format!("odd turn count {}", turns.len()));
    }
    for (i, t) in turns.iter().enumerate() {
        let expect = if i % 2 == 0 {
            Speaker::Human
        } else {
            Speaker::Gpt
        };
        if t.from != expect {
            return Err(format!("turn {i} should be from {expect:?}"));
        }
        if t.value.trim().is_empty() {
            return Err(format!("turn {i} is empty"));
        }
        match (&t.options, t.from) {
            (None, _) => {}
            (Some(_), Speaker::Gpt) => return Err(format!("turn {i}: options on a gpt turn")),
            (Some(opts), Speaker::Human) => {
                if opts.len() != 4 || opts.iter().any(|o| o.trim().is_empty()) {
                    return Err(format!("turn {i}: expected 4 non-empty options"));
                }
                if !opts.contains(&turns[i + 1].value) {
                    return Err(format!("turn {}: answer is not one of the options", i + 1));
                }
            }
        }
    }
    Ok(())
}

impl GeneratedSample {
    /// Alternating human/gpt turns starting with human; every turn non-empty;
    /// option lists well formed.
    pub fn validate(&self) -> Result<(), String> {
        match &self.conversations {
            Conversations::Single(c) => validate_turns(c),
            Conversations::Paired { pos, neg } => {
                validate_turns(pos).map_err(|e| format!("conversations-pos: {e}"))?;
                validate_turns(neg).map_err(|e| format!("conversations-neg: {e}"))
            }
        }
    }

    pub fn is_paired(&self) -> bool {
        matches!(self.conversations, Conversations::Paired { .. })
    }

    /// Question/answer rounds across all conversations.
    pub fn rounds(&self) -> usize {
        match &self.conversations {
            Conversations::Single(c) => c.len() / 2,
            Conversations::Paired { pos, neg } => (pos.len() + neg.len()) / 2,
        }
    }

    fn has_options(&self) -> bool {
        let any = |c: &[ConversationTurn]| c.iter().any(|t| t.options.is_some());
        match &self.conversations {
            Conversations::Single(c) => any(c),
            Conversations::Paired { pos, neg } => any(pos) || any(neg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptVersion {
    V0,
    V1,
    V2,
    V3,
}

impl PromptVersion {
    pub const ALL: [PromptVersion; 4] = [
        PromptVersion::V0,
        PromptVersion::V1,
        PromptVersion::V2,
        PromptVersion::V3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Versions 2 and 3 produce positive/negative conversation pairs.
    pub fn is_paired(self) -> bool {
        matches!(self, PromptVersion::V2 | PromptVersion::V3)
    }

    pub fn has_options(self) -> bool {
        self == PromptVersion::V3
    }

    /// Checks a parsed sample against this version's schema.
    pub fn check(self, sample: &GeneratedSample) -> Result<(), String> {
        if sample.is_paired() != self.is_paired() {
            return Err(format!(
                "version {self} expects {} conversations",
                if self.is_paired() { "paired" } else { "single" }
            ));
        }
        let all_human_have_options = |c: &[ConversationTurn]| {
            c.iter()
                .filter(|t| t.from == Speaker::Human)
                .all(|t| t.options.is_some())
        };
        if self.has_options() {
            let ok = match &sample.conversations {
                Conversations::Single(c) => all_human_have_options(c),
                Conversations::Paired { pos, neg } => {
                    all_human_have_options(pos) && all_human_have_options(neg)
                }
            };
            if !ok {
                return Err(format!("version {self} requires options on every question"));
            }
        } else if sample.has_options() {
            return Err(format!("version {self} does not use options"));
        }
        Ok(())
    }
}

impl fmt::Display for PromptVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.index())
    }
}

impl FromStr for PromptVersion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptVersion::ALL
            .into_iter()
            .find(|v| v.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown prompt version \"{s}\" (expected v0..v3)"))
    }
}

/// The full generation prompt for one image.
pub fn render_generation_prompt(
    prompts: &PromptSet,
    version: PromptVersion,
    id: &str,
    image: &str,
) -> Result<String, DatagenError> {
    let template = format!(
        "{}\n\n{}",
        prompts.gen_common.trim_end(),
        prompts.gen_versions[version.index()].trim_end()
    );
    Ok(render_template(&template, &[("id", id), ("image", image)])?)
}

/// Removes a surrounding Markdown code fence, if any.
pub fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let Some(body) = rest.strip_suffix("```") else {
        return t;
    };
    match body.find('\n') {
        Some(nl) if body[..nl].chars().all(|c| c.is_ascii_alphanumeric()) => body[nl + 1..].trim(),
        _ => body.trim(),
    }
}

/// Parses an LLM reply strictly against `version`'s schema.
pub fn parse_reply(text: &str, version: PromptVersion) -> Result<GeneratedSample, String> {
    let sample: GeneratedSample =
        serde_json::from_str(strip_code_fence(text)).map_err(|e| e.to_string())?;
    version.check(&sample)?;
    Ok(sample)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOptions {
    pub version: PromptVersion,
    pub workers: usize,
    /// Extra attempts after an unparseable reply.
    pub parse_retries: usize,
}

impl GenerationOptions {
    pub fn new(version: PromptVersion) -> Self {
        GenerationOptions {
            version,
            workers: 4,
            parse_retries: DEFAULT_PARSE_RETRIES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub image: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutput {
    pub samples: Vec<GeneratedSample>,
    pub skipped: Vec<SkippedImage>,
}

/// Request tag for attempt `k` (0-based). Retries get distinct tags so a
/// replay log can script them.
pub fn generation_tag(attempt: usize) -> String {
    if attempt == 0 {
        TAG_GENERATE.to_string()
    } else {
        format!("{TAG_GENERATE}#{attempt}")
    }
}

fn sample_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn image_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

enum ImageResult {
    Sample(GeneratedSample),
    Skipped(SkippedImage),
    Fatal(AdapterError),
}

fn generate_one(
    path: &Path,
    backend: &dyn ModelBackend,
    prompts: &PromptSet,
    opts: &GenerationOptions,
) -> ImageResult {
    let id = sample_id(path);
    let image = image_name(path);
    let skip = |reason: String| {
        log::warn!("skipping {}: {reason}", path.display());
        ImageResult::Skipped(SkippedImage {
            image: image.clone(),
            reason,
        })
    };
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => return skip(format!("unreadable image: {e}")),
    };
    let prompt = match render_generation_prompt(prompts, opts.version, &id, &image) {
        Ok(p) => p,
        Err(e) => return skip(e.to_string()),
    };
    let mut last = String::new();
    for attempt in 0..=opts.parse_retries {
        let request = ModelRequest::new(&id, generation_tag(attempt), prompt.clone())
            .with_image(Some(bytes.clone()));
        let reply = match adapter::send(backend, &request) {
            Ok(r) => r,
            Err(e) if e.is_transport() => return ImageResult::Fatal(e),
            Err(e) => return skip(e.to_string()),
        };
        match parse_reply(&reply.raw_text, opts.version) {
            Ok(mut sample) => {
                sample.id = id;
                sample.image = image;
                return ImageResult::Sample(sample);
            }
            Err(e) => {
                log::debug!(
                    "{}: attempt {} unparseable: {e}",
                    path.display(),
                    attempt + 1
                );
                last = e;
            }
        }
    }
    skip(format!(
        "no valid reply after {} attempts: {last}",
        opts.parse_retries + 1
    ))
}

/// One request per image. Unparseable replies are retried, then the image is
/// skipped. A transport failure aborts; skipping more than half of the images
/// is a systemic failure.
pub fn generate_samples(
    images: &[PathBuf],
    backend: &dyn ModelBackend,
    prompts: &PromptSet,
    opts: &GenerationOptions,
) -> Result<GenerationOutput, DatagenError> {
    let results = parallel_map(images, opts.workers, |p| {
        generate_one(p, backend, prompts, opts)
    });
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            ImageResult::Sample(s) => samples.push(s),
            ImageResult::Skipped(s) => skipped.push(s),
            ImageResult::Fatal(e) => return Err(e.into()),
        }
    }
    if skipped.len() * 2 > images.len() {
        return Err(DatagenError::Systemic {
            skipped: skipped.len(),
            total: images.len(),
        });
    }
    Ok(GenerationOutput { samples, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FilterOptions {
    /// Drop rounds containing the redundant phrase instead of editing them.
    pub drop_on_phrase: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub rounds_removed: usize,
    pub phrases_stripped_questions: usize,
    pub phrases_stripped_answers: usize,
    pub samples_removed: usize,
}

impl FilterReport {
    pub fn phrases_stripped(&self) -> usize {
        self.phrases_stripped_questions + self.phrases_stripped_answers
    }

    /// Total edits: removed rounds plus stripped phrases.
    pub fn edits(&self) -> usize {
        self.rounds_removed + self.phrases_stripped()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<GeneratedSample>,
    pub removed: Vec<GeneratedSample>,
    pub report: FilterReport,
}

fn uncertain_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\buncertain\b").unwrap())
}

fn phrase_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bin\s+the\s+image\b").unwrap())
}

fn leading_phrase_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*in\s+the\s+image\b\s*,?\s*").unwrap())
}

fn space_before_punct_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s+([?.!,;:])").unwrap())
}

pub fn has_uncertain(text: &str) -> bool {
    uncertain_re().is_match(text)
}

pub fn has_redundant_phrase(text: &str) -> bool {
    phrase_re().is_match(text)
}

fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Removes every "in the image" and normalizes whitespace around the cut.
/// Returns the text and how many occurrences were removed.
pub fn strip_redundant_phrase(text: &str) -> (String, usize) {
    let mut out = text.to_string();
    let mut count = 0;
    loop {
        if let Some(m) = leading_phrase_re().find(&out) {
            if phrase_re().is_match(m.as_str()) {
                out = capitalize_first(&out[m.end()..]);
                count += 1;
                continue;
            }
        }
        let n = phrase_re().find_iter(&out).count();
        if n == 0 {
            break;
        }
        out = phrase_re().replace_all(&out, "").into_owned();
        count += n;
    }
    if count == 0 {
        return (out, 0);
    }
    let collapsed = out.split_whitespace().collect::<Vec<_>>().join(" ");
    (
        space_before_punct_re()
            .replace_all(&collapsed, "$1")
            .into_owned(),
        count,
    )
}

fn filter_turns(
    turns: &[ConversationTurn],
    opts: FilterOptions,
    report: &mut FilterReport,
) -> Vec<ConversationTurn> {
    let mut out = Vec::with_capacity(turns.len());
    for round in turns.chunks(2) {
        let [q, a] = round else { continue };
        if has_uncertain(&a.value) {
            report.rounds_removed += 1;
            continue;
        }
        let texts_of = |t: &ConversationTurn| {
            std::iter::once(t.value.clone())
                .chain(t.options.iter().flatten().cloned())
                .collect::<Vec<_>>()
        };
        if opts.drop_on_phrase {
            if texts_of(q)
                .iter()
                .chain(texts_of(a).iter())
                .any(|t| has_redundant_phrase(t))
            {
                report.rounds_removed += 1;
                continue;
            }
            out.push(q.clone());
            out.push(a.clone());
            continue;
        }
        let mut q = q.clone();
        let mut a = a.clone();
        let (v, n) = strip_redundant_phrase(&q.value);
        q.value = v;
        report.phrases_stripped_questions += n;
        if let Some(opts) = q.options.as_mut() {
            for o in opts.iter_mut() {
                let (v, n) = strip_redundant_phrase(o);
                *o = v;
                report.phrases_stripped_answers += n;
            }
        }
        let (v, n) = strip_redundant_phrase(&a.value);
        a.value = v;
        report.phrases_stripped_answers += n;
        if q.value.is_empty() || a.value.is_empty() {
            report.rounds_removed += 1;
            continue;
        }
        out.push(q);
        out.push(a);
    }
    out
}

/// Removes rounds whose answer says "uncertain" (whole word, any case),
/// strips "in the image" from every turn, and drops samples left with no
/// rounds. A paired sample is dropped when either side is empty.
pub fn filter_samples(samples: &[GeneratedSample], opts: FilterOptions) -> FilterOutcome {
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for s in samples {
        let conversations = match &s.conversations {
            Conversations::Single(c) => Conversations::Single(filter_turns(c, opts, &mut report)),
            Conversations::Paired { pos, neg } => Conversations::Paired {
                pos: filter_turns(pos, opts, &mut report),
                neg: filter_turns(neg, opts, &mut report),
            },
        };
        let empty = match &conversations {
            Conversations::Single(c) => c.is_empty(),
            Conversations::Paired { pos, neg } => pos.is_empty() || neg.is_empty(),
        };
        if empty {
            report.samples_removed += 1;
            removed.push(s.clone());
        } else {
            kept.push(GeneratedSample {
                conversations,
                ..s.clone()
            });
        }
    }
    FilterOutcome {
        kept,
        removed,
        report,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rounds {
    One,
    Two,
    Four,
    All,
}

impl Rounds {
    pub fn limit(self) -> Option<usize> {
        match self {
            Rounds::One => Some(1),
            Rounds::Two => Some(2),
            Rounds::Four => Some(4),
            Rounds::All => None,
        }
    }
}

impl FromStr for Rounds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "r1" => Ok(Rounds::One),
            "2" | "r2" => Ok(Rounds::Two),
            "4" | "r4" => Ok(Rounds::Four),
            "all" => Ok(Rounds::All),
            _ => Err(format!("rounds must be one of 1, 2, 4, all; got \"{s}\"")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompositionStrategy {
    Concat(Rounds),
    Combine,
    Replace(usize),
}

/// Uniform integer in `0..n` by rejection, so the result does not depend on
/// any library's range-reduction scheme.
fn uniform_below(rng: &mut Xoshiro256StarStar, n: usize) -> usize {
    let n = n as u64;
    let zone = u64::MAX - (u64::MAX % n + 1) % n;
    loop {
        let x = rng.next_u64();
        if x <= zone {
            return (x % n) as usize;
        }
    }
}

/// Picks `k` distinct indices from `0..n` with a partial Fisher-Yates shuffle.
fn sample_indices(rng: &mut Xoshiro256StarStar, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + uniform_below(rng, n - i);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

fn concat(sample: &GeneratedSample, rounds: Rounds) -> GeneratedSample {
    match &sample.conversations {
        Conversations::Single(_) => sample.clone(),
        Conversations::Paired { pos, neg } => {
            let take = rounds.limit().map_or(neg.len(), |r| (2 * r).min(neg.len()));
            let turns = pos.iter().chain(&neg[..take]).cloned().collect();
            GeneratedSample {
                conversations: Conversations::Single(turns),
                ..sample.clone()
            }
        }
    }
}

/// Builds a training set from `base` and `extra`.
///
/// `Concat` and `Combine` rewrite paired samples of `base` followed by `extra`;
/// single samples pass through. `Replace(n)` drops `n` base samples and adds
/// `n` extra samples, both chosen uniformly with xoshiro256** seeded from
/// `seed`; kept base samples keep their order and the additions follow in
/// their original order.
pub fn compose(
    base: &[GeneratedSample],
    extra: &[GeneratedSample],
    strategy: CompositionStrategy,
    seed: u64,
) -> Result<Vec<GeneratedSample>, DatagenError> {
    match strategy {
        CompositionStrategy::Concat(r) => {
            Ok(base.iter().chain(extra).map(|s| concat(s, r)).collect())
        }
        CompositionStrategy::Combine => Ok(base
            .iter()
            .chain(extra)
            .flat_map(|s| match &s.conversations {
                Conversations::Single(_) => vec![s.clone()],
                Conversations::Paired { pos, neg } => vec![
                    GeneratedSample {
                        id: format!("{}-pos", s.id),
                        image: s.image.clone(),
                        conversations: Conversations::Single(pos.clone()),
                    },
                    GeneratedSample {
                        id: format!("{}-neg", s.id),
                        image: s.image.clone(),
                        conversations: Conversations::Single(neg.clone()),
                    },
                ],
            })
            .collect()),
        CompositionStrategy::Replace(n) => {
            if n > base.len() || n > extra.len() {
                return Err(DatagenError::Precondition(format!(
                    "replace {n} needs at least {n} base and extra samples (have {} and {})",
                    base.len(),
                    extra.len()
                )));
            }
            let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
            let mut drop = vec![false; base.len()];
            for i in sample_indices(&mut rng, base.len(), n) {
                drop[i] = true;
            }
            let mut add = sample_indices(&mut rng, extra.len(), n);
            add.sort_unstable();
            Ok(base
                .iter()
                .zip(&drop)
                .filter(|(_, d)| !**d)
                .map(|(s, _)| s.clone())
                .chain(add.into_iter().map(|i| extra[i].clone()))
                .collect())
        }
    }
}

fn render_turns(turns: &[ConversationTurn]) -> Vec<ConversationTurn> {
    turns
        .iter()
        .map(|t| match &t.options {
            None => ConversationTurn {
                options: None,
                ..t.clone()
            },
            Some(opts) => {
                let mut value = t.value.clone();
                for (letter, o) in OptionLetter::ALL.iter().zip(opts) {
                    value.push_str(&format!("\n{letter}. {o}"));
                }
                ConversationTurn {
                    from: t.from,
                    value,
                    options: None,
                }
            }
        })
        .collect()
}

/// Training form of a sample: option lists are folded into the question text.
pub fn render_training_sample(sample: &GeneratedSample) -> GeneratedSample {
    let conversations = match &sample.conversations {
        Conversations::Single(c) => Conversations::Single(render_turns(c)),
        Conversations::Paired { pos, neg } => Conversations::Paired {
            pos: render_turns(pos),
            neg: render_turns(neg),
        },
    };
    GeneratedSample {
        conversations,
        ..sample.clone()
    }
}

/// Writes a pretty-printed JSON array of training samples.
pub fn write_training_json<W: Write>(
    samples: &[GeneratedSample],
    mut sink: W,
) -> Result<(), DatagenError> {
    let rendered: Vec<_> = samples.iter().map(render_training_sample).collect();
    serde_json::to_writer_pretty(&mut sink, &rendered)?;
    sink.write_all(b"\n")?;
    Ok(())
}

pub fn read_training_json<R: Read>(reader: R) -> Result<Vec<GeneratedSample>, DatagenError> {
    Ok(serde_json::from_reader(reader)?)
}

pub fn read_training_file(path: impl AsRef<Path>) -> Result<Vec<GeneratedSample>, DatagenError> {
    read_training_json(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Contents of `dataset.report.json`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetReport {
    pub generated: usize,
    pub skipped: usize,
    pub rounds_removed: usize,
    pub phrases_stripped: usize,
    pub phrases_stripped_questions: usize,
    pub phrases_stripped_answers: usize,
    pub samples_removed: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_images: Vec<SkippedImage>,
}

impl DatasetReport {
    pub fn from_generation(out: &GenerationOutput) -> Self {
        DatasetReport {
            generated: out.samples.len(),
            skipped: out.skipped.len(),
            skipped_images: out.skipped.clone(),
            ..Default::default()
        }
    }

    pub fn with_filter(mut self, f: &FilterReport) -> Self {
        self.rounds_removed = f.rounds_removed;
        self.phrases_stripped = f.phrases_stripped();
        self.phrases_stripped_questions = f.phrases_stripped_questions;
        self.phrases_stripped_answers = f.phrases_stripped_answers;
        self.samples_removed = f.samples_removed;
        self
    }
}
