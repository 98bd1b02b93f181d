//! Benchmark data model: categories, paired items, and the JSONL record format.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// The three levels the twelve categories are grouped into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryLevel {
    Character,
    Attribute,
    Context,
}

/// Question category. Declaration order is the column order used in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    CharNum,
    Presence,
    ColorTexture,
    Number,
    Shape,
    Posture,
    Position,
    AbstractKnowledge,
    ConcreteKnowledge,
    Expertise,
    Activity,
    Relationships,
}

/// File name, report header, level.
const CATEGORY_TABLE: [(Category, &str, &str, CategoryLevel); 12] = [
    (
        Category::CharNum,
        "char_num",
        "Char/Num",
        CategoryLevel::Character,
    ),
    (
        Category::Presence,
        "presence",
        "Pres.",
        CategoryLevel::Attribute,
    ),
    (
        Category::ColorTexture,
        "color_texture",
        "Color/Tex",
        CategoryLevel::Attribute,
    ),
    (Category::Number, "number", "Num.", CategoryLevel::Attribute),
    (Category::Shape, "shape", "Shape", CategoryLevel::Attribute),
    (
        Category::Posture,
        "posture",
        "Posture",
        CategoryLevel::Attribute,
    ),
    (
        Category::Position,
        "position",
        "Pos.",
        CategoryLevel::Attribute,
    ),
    (
        Category::AbstractKnowledge,
        "abstract_knowledge",
        "Abstract.",
        CategoryLevel::Context,
    ),
    (
        Category::ConcreteKnowledge,
        "concrete_knowledge",
        "Concrete.",
        CategoryLevel::Context,
    ),
    (
        Category::Expertise,
        "expertise",
        "Expert.",
        CategoryLevel::Context,
    ),
    (
        Category::Activity,
        "activity",
        "Act.",
        CategoryLevel::Context,
    ),
    (
        Category::Relationships,
        "relationships",
        "Rel.",
        CategoryLevel::Context,
    ),
];

impl Category {
    pub const ALL: [Category; 12] = [
        Category::CharNum,
        Category::Presence,
        Category::ColorTexture,
        Category::Number,
        Category::Shape,
        Category::Posture,
        Category::Position,
        Category::AbstractKnowledge,
        Category::ConcreteKnowledge,
        Category::Expertise,
        Category::Activity,
        Category::Relationships,
    ];

    fn entry(self) -> &'static (Category, &'static str, &'static str, CategoryLevel) {
        &CATEGORY_TABLE[self as usize]
    }

    pub fn level(self) -> CategoryLevel {
        self.entry().3
    }

    /// snake_case name used in benchmark files.
    pub fn as_str(self) -> &'static str {
        self.entry().1
    }

    /// Short column header used in rendered tables.
    pub fn short_label(self) -> &'static str {
        self.entry().2
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CATEGORY_TABLE
            .iter()
            .find(|(_, name, _, _)| *name == s)
            .map(|(c, ..)| *c)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptionLetter {
    A,
    B,
    C,
    D,
}

impl OptionLetter {
    pub const ALL: [OptionLetter; 4] = [
        OptionLetter::A,
        OptionLetter::B,
        OptionLetter::C,
        OptionLetter::D,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_char(self) -> char {
        (b'A' + self as u8) as char
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'A' => Some(OptionLetter::A),
            'B' => Some(OptionLetter::B),
            'C' => Some(OptionLetter::C),
            'D' => Some(OptionLetter::D),
            _ => None,
        }
    }
}

impl fmt::Display for OptionLetter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for OptionLetter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => OptionLetter::from_char(c).ok_or_else(|| s.to_string()),
            _ => Err(s.to_string()),
        }
    }
}

/// The four option texts of a question, indexed by letter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Options {
    #[serde(rename = "A")]
    pub a: String,
    #[serde(rename = "B")]
    pub b: String,
    #[serde(rename = "C")]
    pub c: String,
    #[serde(rename = "D")]
    pub d: String,
}

impl Options {
    pub fn new(texts: [String; 4]) -> Self {
        let [a, b, c, d] = texts;
        Options { a, b, c, d }
    }

    pub fn get(&self, letter: OptionLetter) -> &str {
        match letter {
            OptionLetter::A => &self.a,
            OptionLetter::B => &self.b,
            OptionLetter::C => &self.c,
            OptionLetter::D => &self.d,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (OptionLetter, &str)> {
        OptionLetter::ALL.into_iter().map(move |l| (l, self.get(l)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchmarkItem {
    pub item_id: String,
    pub pair_id: String,
    pub image_ref: String,
    pub category: Category,
    pub polarity: Polarity,
    pub question: String,
    pub options: Options,
    pub answer: OptionLetter,
}

impl BenchmarkItem {
    /// Checks the per-item invariants: non-empty, pairwise distinct options.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        for (letter, text) in self.options.iter() {
            if text.trim().is_empty() {
                return Err(format!("option {letter} is empty"));
            }
            if !seen.insert(text) {
                return Err(format!("option {letter} duplicates another option"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemPair {
    pub pair_id: String,
    pub positive: BenchmarkItem,
    pub negative: BenchmarkItem,
}

impl ItemPair {
    pub fn category(&self) -> Category {
        self.positive.category
    }
}

// Wire form. Strings for enums so errors can name the bad value.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ItemRecord {
    item_id: String,
    pair_id: String,
    image: String,
    category: String,
    polarity: String,
    question: String,
    options: BTreeMap<String, String>,
    answer: String,
}

#[derive(Serialize)]
struct ItemRecordOut<'a> {
    item_id: &'a str,
    pair_id: &'a str,
    image: &'a str,
    category: &'a str,
    polarity: &'a str,
    question: &'a str,
    options: &'a Options,
    answer: OptionLetter,
}

fn item_from_record(record: ItemRecord, line: usize) -> Result<BenchmarkItem, ModelError> {
    let category = record
        .category
        .parse::<Category>()
        .map_err(|value| ModelError::UnknownCategory { line, value })?;
    let polarity =
        record
            .polarity
            .parse::<Polarity>()
            .map_err(|value| ModelError::InvalidField {
                line,
                field: "polarity",
                value,
            })?;
    let answer =
        record
            .answer
            .parse::<OptionLetter>()
            .map_err(|value| ModelError::InvalidField {
                line,
                field: "answer",
                value,
            })?;

    let mut options = record.options;
    if let Some(extra) = options.keys().find(|k| k.parse::<OptionLetter>().is_err()) {
        return Err(ModelError::UnexpectedOption {
            line,
            key: extra.clone(),
        });
    }
    let mut texts: [String; 4] = Default::default();
    for letter in OptionLetter::ALL {
        texts[letter.index()] =
            options
                .remove(&letter.to_string())
                .ok_or(ModelError::MissingOption {
                    line,
                    key: letter.as_char(),
                })?;
    }

    let item = BenchmarkItem {
        item_id: record.item_id,
        pair_id: record.pair_id,
        image_ref: record.image,
        category,
        polarity,
        question: record.question,
        options: Options::new(texts),
        answer,
    };
    item.validate().map_err(|reason| ModelError::InvalidItem {
        line,
        item_id: item.item_id.clone(),
        reason,
    })?;
    Ok(item)
}

/// Parses a benchmark JSONL stream. Blank lines are ignored; line numbers are 1-based.
pub fn parse_benchmark<R: BufRead>(reader: R) -> Result<Vec<BenchmarkItem>, ModelError> {
    let mut items = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ItemRecord =
            serde_json::from_str(&line).map_err(|source| ModelError::Json {
                line: line_no,
                source,
            })?;
        let item = item_from_record(record, line_no)?;
        if !ids.insert(item.item_id.clone()) {
            return Err(ModelError::DuplicateItemId {
                line: line_no,
                item_id: item.item_id,
            });
        }
        items.push(item);
    }
    Ok(items)
}

pub fn parse_benchmark_str(text: &str) -> Result<Vec<BenchmarkItem>, ModelError> {
    parse_benchmark(text.as_bytes())
}

pub fn serialize_benchmark<W: Write>(
    items: &[BenchmarkItem],
    mut writer: W,
) -> std::io::Result<()> {
    for item in items {
        let record = ItemRecordOut {
            item_id: &item.item_id,
            pair_id: &item.pair_id,
            image: &item.image_ref,
            category: item.category.as_str(),
            polarity: item.polarity.as_str(),
            question: &item.question,
            options: &item.options,
            answer: item.answer,
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn serialize_benchmark_string(items: &[BenchmarkItem]) -> String {
    let mut buf = Vec::new();
    serialize_benchmark(items, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Groups items into positive/negative pairs, sorted by pair id.
///
/// Every pair id must carry exactly one item of each polarity over the same
/// image and category; all offending ids are reported together.
pub fn pair_items(items: &[BenchmarkItem]) -> Result<Vec<ItemPair>, ModelError> {
    let mut groups: BTreeMap<&str, Vec<&BenchmarkItem>> = BTreeMap::new();
    for item in items {
        groups.entry(item.pair_id.as_str()).or_default().push(item);
    }

    let mut pairs = Vec::with_capacity(groups.len());
    let mut offenders = Vec::new();
    for (pair_id, group) in groups {
        let pos: Vec<_> = group
            .iter()
            .filter(|i| i.polarity == Polarity::Positive)
            .collect();
        let neg: Vec<_> = group
            .iter()
            .filter(|i| i.polarity == Polarity::Negative)
            .collect();
        match (pos.as_slice(), neg.as_slice()) {
            ([p], [n]) if p.image_ref == n.image_ref && p.category == n.category => {
                pairs.push(ItemPair {
                    pair_id: pair_id.to_string(),
                    positive: (**p).clone(),
                    negative: (**n).clone(),
                })
            }
            _ => offenders.push(pair_id.to_string()),
        }
    }

    if offenders.is_empty() {
        Ok(pairs)
    } else {
        Err(ModelError::InvalidPairs {
            pair_ids: offenders,
        })
    }
}
