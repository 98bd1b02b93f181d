//! Evaluation toolkit for paired positive/negative visual questions.
//!
//! The crate covers the benchmark data model ([`model`]), a uniform channel
//! to the model under test ([`adapter`]), the evaluation engine ([`eval`]),
//! robustness metrics ([`metrics`]), attention and logit diagnostics
//! ([`analytics`]), visual attention refinement ([`var`]), paired training
//! data generation ([`datagen`]) and table rendering ([`report`]).

pub mod adapter;
pub mod analytics;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
mod pool;
pub mod prompts;
pub mod report;
pub mod var;

pub use adapter::{
    AttentionDump, Endpoint, ModelBackend, ModelRequest, ModelResponse, SegmentLengths,
};
pub use analytics::{AnalysisOutput, AttentionMatrix};
pub use datagen::{CompositionStrategy, GeneratedSample, PromptVersion};
pub use error::{
    AdapterError, AnalyticsError, DatagenError, DumpError, EvalError, ModelError, TemplateError,
    VarError,
};
pub use eval::{
    build_prompt, extract_option, run_eval, EvalOptions, ExtractedChoice, Strategy, StrategyKind,
};
pub use metrics::{
    build_report, classify_pair, MetricValue, MetricsReport, OutcomeCounts, PairOutcome,
};
pub use model::{
    pair_items, parse_benchmark, serialize_benchmark, BenchmarkItem, Category, CategoryLevel,
    ItemPair, OptionLetter, Options, Polarity,
};
pub use prompts::PromptSet;
pub use report::{compare_golden, render, RenderedReport};
pub use var::VarParams;
