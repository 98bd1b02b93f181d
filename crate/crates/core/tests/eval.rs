use std::path::{Path, PathBuf};

use mmvu_core::adapter::ReplayBackend;
use mmvu_core::eval::ExtractionMethod;
use mmvu_core::model::{pair_items, parse_benchmark_str, OptionLetter, Options};
use mmvu_core::{extract_option, run_eval, EvalOptions, PromptSet, Strategy, StrategyKind};
use proptest::prelude::*;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn opts() -> Options {
    Options::new([
        "red apple".into(),
        "green pear".into(),
        "blue plum".into(),
        "yellow lime".into(),
    ])
}

#[test]
fn outcomes_do_not_depend_on_worker_count() {
    let fx = fixtures();
    let pairs = pair_items(
        &parse_benchmark_str(&std::fs::read_to_string(fx.join("benchmark.jsonl")).unwrap())
            .unwrap(),
    )
    .unwrap();
    let backend = ReplayBackend::load(fx.join("responses.jsonl")).unwrap();
    for kind in [
        StrategyKind::Baseline,
        StrategyKind::Cgr,
        StrategyKind::CgrPlusVar,
    ] {
        let mut seen = None;
        for workers in [1, 2, 3, 8, 64] {
            let mut o = EvalOptions::new(Strategy::new(kind, false).unwrap(), &fx);
            o.workers = workers;
            let run = run_eval(&pairs, &backend, &PromptSet::default(), &o).unwrap();
            let records = run.outcome_records();
            match &seen {
                None => seen = Some(records),
                Some(s) => assert_eq!(s, &records, "{kind:?} with {workers} workers"),
            }
        }
    }
}

#[test]
fn missing_replay_entry_counts_as_failure() {
    let fx = fixtures();
    let pairs = pair_items(
        &parse_benchmark_str(&std::fs::read_to_string(fx.join("benchmark.jsonl")).unwrap())
            .unwrap(),
    )
    .unwrap();
    let backend = ReplayBackend::from_responses(Vec::new());
    let o = EvalOptions::new(Strategy::baseline(), &fx);
    assert!(run_eval(&pairs, &backend, &PromptSet::default(), &o).is_err());
}

proptest! {
    #[test]
    fn extracting_a_letter_twice_agrees(raw in ".{0,40}") {
        let first = extract_option(&raw, &opts());
        if let Some(l) = first.letter {
            let again = extract_option(&l.as_char().to_string(), &opts());
            prop_assert_eq!(again.letter, Some(l));
        }
    }

    #[test]
    fn no_letter_no_option_text_gives_none(raw in "[e-z0-9 ,.!?]{0,40}") {
        let e = extract_option(&raw, &opts());
        prop_assert_eq!(e.letter, None);
        prop_assert_eq!(e.method, ExtractionMethod::None);
    }

    #[test]
    fn leading_letter_wins(i in 0usize..4, tail in "[ .):,]?[a-z ]{0,20}") {
        let l = OptionLetter::from_index(i).unwrap();
        let raw = format!("{}{}", l.as_char(), tail);
        let follows_ok = tail.is_empty() || matches!(tail.chars().next(), Some('.' | ')' | ':' | ','));
        if follows_ok {
            prop_assert_eq!(extract_option(&raw, &opts()).letter, Some(l));
        }
    }
}
