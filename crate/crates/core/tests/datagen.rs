use mmvu_core::datagen::{
    compose, filter_samples, has_uncertain, read_training_json, strip_redundant_phrase,
    write_training_json, ConversationTurn, Conversations, FilterOptions, GeneratedSample, Rounds,
};
use mmvu_core::CompositionStrategy;
use proptest::prelude::*;

fn fragment() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "what",
        "is",
        "In the image",
        "in the image,",
        "IN THE IMAGE",
        "uncertain",
        "uncertainty",
        "red",
        "the",
        "image",
        "in",
        "Uncertain.",
        "cat",
        "(uncertain)",
        "?",
        "imagery",
    ])
    .prop_map(str::to_string)
}

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(fragment(), 1..8).prop_map(|w| w.join(" "))
}

fn turns() -> impl Strategy<Value = Vec<ConversationTurn>> {
    prop::collection::vec((text(), text()), 1..5).prop_map(|rs| {
        rs.into_iter()
            .flat_map(|(q, a)| [ConversationTurn::human(q), ConversationTurn::gpt(a)])
            .collect()
    })
}

fn sample() -> impl Strategy<Value = GeneratedSample> {
    (any::<u16>(), prop::bool::ANY, turns(), turns()).prop_map(|(id, paired, a, b)| {
        GeneratedSample {
            id: format!("s{id}"),
            image: format!("s{id}.png"),
            conversations: if paired {
                Conversations::Paired { pos: a, neg: b }
            } else {
                Conversations::Single(a)
            },
        }
    })
}

fn paired_sample() -> impl Strategy<Value = GeneratedSample> {
    (any::<u16>(), turns(), turns()).prop_map(|(id, pos, neg)| GeneratedSample {
        id: format!("p{id}"),
        image: format!("p{id}.png"),
        conversations: Conversations::Paired { pos, neg },
    })
}

proptest! {
    #[test]
    fn filtering_is_idempotent(corpus in prop::collection::vec(sample(), 0..12), drop in prop::bool::ANY) {
        let opts = FilterOptions { drop_on_phrase: drop };
        let once = filter_samples(&corpus, opts);
        let twice = filter_samples(&once.kept, opts);
        prop_assert_eq!(&twice.kept, &once.kept);
        prop_assert_eq!(twice.report.edits(), 0);
        prop_assert_eq!(once.kept.len() + once.removed.len(), corpus.len());
    }

    #[test]
    fn stripped_text_has_no_phrase(t in text()) {
        let (out, n) = strip_redundant_phrase(&t);
        let words: Vec<String> = out
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        prop_assert!(!words.windows(3).any(|w| w == ["in", "the", "image"]), "{}", out);
        if n == 0 {
            prop_assert_eq!(out, t);
        }
    }

    #[test]
    fn concat_and_combine_counts(base in prop::collection::vec(paired_sample(), 0..10), r in 0usize..4) {
        let rounds = [Rounds::One, Rounds::Two, Rounds::Four, Rounds::All][r];
        let out = compose(&base, &[], CompositionStrategy::Concat(rounds), 0).unwrap();
        for (o, b) in out.iter().zip(&base) {
            let Conversations::Paired { pos, neg } = &b.conversations else { unreachable!() };
            let n = neg.len() / 2;
            prop_assert_eq!(o.rounds(), pos.len() / 2 + rounds.limit().map_or(n, |l| l.min(n)));
        }
        let combined = compose(&base, &[], CompositionStrategy::Combine, 0).unwrap();
        prop_assert_eq!(combined.len(), 2 * base.len());
        prop_assert!(combined.iter().all(|s| !s.is_paired()));
    }

    #[test]
    fn replace_keeps_size_and_members(
        base in prop::collection::vec(paired_sample(), 1..15),
        extra in prop::collection::vec(paired_sample(), 1..15),
        seed: u64,
        frac in 0.0f64..=1.0,
    ) {
        let n = ((base.len().min(extra.len())) as f64 * frac) as usize;
        let a = compose(&base, &extra, CompositionStrategy::Replace(n), seed).unwrap();
        let b = compose(&base, &extra, CompositionStrategy::Replace(n), seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), base.len());
        let kept = base.len() - n;
        // Survivors are a subsequence of base in order.
        let mut it = base.iter();
        for s in &a[..kept] {
            prop_assert!(it.any(|x| x == s));
        }
        for s in &a[kept..] {
            prop_assert!(extra.contains(s));
        }
    }

    #[test]
    fn training_json_round_trips(corpus in prop::collection::vec(sample(), 0..6)) {
        let mut buf = Vec::new();
        write_training_json(&corpus, &mut buf).unwrap();
        prop_assert_eq!(read_training_json(buf.as_slice()).unwrap(), corpus);
    }
}

#[test]
fn uncertain_needs_a_whole_word() {
    assert!(has_uncertain("Uncertain."));
    assert!(has_uncertain("it is UNCERTAIN"));
    assert!(has_uncertain("(uncertain)"));
    assert!(!has_uncertain("the uncertainty is high"));
    assert!(!has_uncertain("uncertainly"));
    assert!(!has_uncertain("nuncertain"));
}

#[test]
fn replace_rejects_oversized_n() {
    let s = GeneratedSample {
        id: "a".into(),
        image: "a.png".into(),
        conversations: Conversations::Single(vec![]),
    };
    assert!(compose(
        std::slice::from_ref(&s),
        std::slice::from_ref(&s),
        CompositionStrategy::Replace(2),
        1
    )
    .is_err());
}
