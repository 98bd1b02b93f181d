//! Exit-gate checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use image::{Rgb, RgbImage};
use mmvu_core::adapter::ReplayBackend;
use mmvu_core::analytics::{
    answer_attention_scores, average_heads, question_attention_bound, softmax,
};
use mmvu_core::datagen::{
    compose, filter_samples, ConversationTurn, Conversations, FilterOptions, GeneratedSample,
    Rounds,
};
use mmvu_core::error::DumpError;
use mmvu_core::metrics::{misleading_rate, robustness_accuracy};
use mmvu_core::model::{pair_items, parse_benchmark_str, serialize_benchmark_string, Category};
use mmvu_core::var::{
    blend, refine, refine_encoded, spatialize_and_filter, FilterParams, FullMask, HeatMask,
};
use mmvu_core::{
    build_report, classify_pair, compare_golden, render, run_eval, AttentionDump,
    CompositionStrategy, EvalOptions, OutcomeCounts, PairOutcome, PromptSet, SegmentLengths,
    Strategy, VarParams,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixtures() -> PathBuf {
    root().join("fixtures")
}

fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report.md")
}

fn check_time(label: &str, start: Instant, limit: Duration) {
    let took = start.elapsed();
    assert!(took < limit, "{label} took {took:?}, limit {limit:?}");
}

// ---- metrics ----

fn metric_oracle() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    for _ in 0..1000 {
        let n = rng.gen_range(0..200);
        let pairs: Vec<(Category, bool, bool)> = (0..n)
            .map(|_| {
                (
                    Category::ALL[rng.gen_range(0..12)],
                    rng.gen_bool(0.6),
                    rng.gen_bool(0.5),
                )
            })
            .collect();

        let (mut both, mut pos_only, mut total) = (0u64, 0u64, 0u64);
        for &(_, p, q) in &pairs {
            total += 1;
            if p && q {
                both += 1;
            }
            if p && !q {
                pos_only += 1;
            }
        }
        let want_mr = if both + pos_only == 0 {
            None
        } else {
            Some(pos_only as f64 / (both + pos_only) as f64)
        };
        let want_ra = if total == 0 {
            None
        } else {
            Some(both as f64 / total as f64)
        };

        let report = build_report(pairs.iter().map(|&(c, p, q)| (c, classify_pair(p, q))));
        close_opt(report.micro.mr.value(), want_mr, 1e-12);
        close_opt(report.micro.ra.value(), want_ra, 1e-12);

        let counts: OutcomeCounts = pairs.iter().map(|&(_, p, q)| classify_pair(p, q)).collect();
        close_opt(misleading_rate(&counts).value(), want_mr, 1e-12);
        close_opt(robustness_accuracy(&counts).value(), want_ra, 1e-12);

        for cat in Category::ALL {
            let sub: Vec<_> = pairs.iter().filter(|t| t.0 == cat).collect();
            let b = sub.iter().filter(|t| t.1 && t.2).count() as f64;
            let f = sub.iter().filter(|t| t.1 && !t.2).count() as f64;
            let line = &report.per_category[&cat];
            close_opt(
                line.ra.value(),
                (!sub.is_empty()).then(|| b / sub.len() as f64),
                1e-12,
            );
            close_opt(line.mr.value(), (b + f > 0.0).then(|| f / (b + f)), 1e-12);
        }
    }
    check_time("metric oracle", start, Duration::from_secs(1));
}

fn close_opt(got: Option<f64>, want: Option<f64>, tol: f64) {
    match (got, want) {
        (None, None) => {}
        (Some(g), Some(w)) => assert!((g - w).abs() <= tol, "got {g}, want {w}"),
        _ => panic!("definedness differs: got {got:?}, want {want:?}"),
    }
}

fn outcome_taxonomy() {
    assert_eq!(classify_pair(true, true), PairOutcome::UnderstandingRobust);
    assert_eq!(
        classify_pair(true, false),
        PairOutcome::UnderstandingFragile
    );
    assert_eq!(
        classify_pair(false, true),
        PairOutcome::NotUnderstandingRobust
    );
    assert_eq!(
        classify_pair(false, false),
        PairOutcome::NotUnderstandingFragile
    );
    let codes: Vec<_> = [(true, true), (true, false), (false, true), (false, false)]
        .iter()
        .map(|&(p, n)| classify_pair(p, n).code())
        .collect();
    assert_eq!(codes, ["UR", "UF", "NR", "NF"]);
}

// ---- softmax ----

/// Neumaier-compensated sum.
fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        c += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    sum + c
}

/// p_i = 1 / sum_j exp(l_j - l_i): no max shift, no shared normalizer.
fn reference_softmax(l: &[f64; 4]) -> [f64; 4] {
    std::array::from_fn(|i| {
        let mut terms: Vec<f64> = l.iter().map(|lj| (lj - l[i]).exp()).collect();
        terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        1.0 / compensated_sum(terms)
    })
}

fn softmax_checks() {
    let mut rng = StdRng::seed_from_u64(0x5eed_0002);
    for _ in 0..1000 {
        let l: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-30.0..30.0));
        let p = softmax(&l).unwrap().0;
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let shift = rng.gen_range(-100.0..100.0);
        let q = softmax(&l.map(|x| x + shift)).unwrap().0;
        let r = reference_softmax(&l);
        for i in 0..4 {
            assert!((p[i] - q[i]).abs() <= 1e-9, "shift {shift}: {p:?} vs {q:?}");
            assert!((p[i] - r[i]).abs() <= 1e-9, "{p:?} vs reference {r:?}");
        }
    }
    let p = softmax(&[1.0, 0.0, 0.0, 0.0]).unwrap().0;
    assert!((p[0] - 0.475367).abs() <= 1e-6, "p1 = {}", p[0]);
}

// ---- attention ----

fn random_segments(rng: &mut StdRng) -> SegmentLengths {
    loop {
        let grid_rows = rng.gen_range(1..=5);
        let grid_cols = rng.gen_range(1..=5);
        let seg = SegmentLengths {
            n_sys: rng.gen_range(1..=12),
            n_vis: grid_rows * grid_cols,
            n_q: rng.gen_range(1..=16),
            n_a: rng.gen_range(1..=12),
            heads: rng.gen_range(1..=8),
            grid_rows,
            grid_cols,
        };
        if seg.total() <= 64 {
            return seg;
        }
    }
}

fn random_dump(rng: &mut StdRng) -> AttentionDump {
    let seg = random_segments(rng);
    let n = seg.total();
    let values = (0..seg.heads as usize * n * n)
        .map(|_| rng.gen::<f32>())
        .collect();
    AttentionDump::new(seg, values).unwrap()
}

/// Head-mean of one cell, straight from the dump.
fn cell(d: &AttentionDump, r: usize, c: usize) -> f64 {
    let h = d.heads();
    (0..h).map(|k| d.get(k, r, c) as f64).sum::<f64>() / h as f64
}

fn naive_row_max(d: &AttentionDump, r: usize, cols: std::ops::Range<usize>) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for c in cols {
        let v = cell(d, r, c);
        if v > best {
            best = v;
        }
    }
    best
}

fn attention_statistics() {
    let mut rng = StdRng::seed_from_u64(0x5eed_0003);
    for _ in 0..200 {
        let d = random_dump(&mut rng);
        let seg = *d.segments();
        let a = average_heads(&d);
        let got = answer_attention_scores(&a, &seg).unwrap();
        let mean = |cols: std::ops::Range<usize>| {
            let mut s = 0.0;
            for r in seg.answer() {
                s += naive_row_max(&d, r, cols.clone());
            }
            s / seg.n_a as f64
        };
        assert!((got.to_system - mean(seg.system())).abs() <= 1e-6);
        assert!((got.to_visual - mean(seg.visual())).abs() <= 1e-6);
        assert!((got.to_question - mean(seg.question())).abs() <= 1e-6);

        let bound = question_attention_bound(&a, &seg).unwrap();
        let min = |cols: std::ops::Range<usize>| {
            let mut m = f64::INFINITY;
            for r in seg.question() {
                m = m.min(naive_row_max(&d, r, cols.clone()));
            }
            m
        };
        assert!((bound.to_system - min(seg.system())).abs() <= 1e-6);
        assert!((bound.to_visual - min(seg.visual())).abs() <= 1e-6);
    }

    // Single-hot blocks with exactly representable values.
    let seg = SegmentLengths {
        n_sys: 2,
        n_vis: 4,
        n_q: 3,
        n_a: 2,
        heads: 2,
        grid_rows: 2,
        grid_cols: 2,
    };
    let n = seg.total();
    let mut v = vec![0.0f32; 2 * n * n];
    let mut put = |r: usize, c: usize, x: f32| {
        for h in 0..2 {
            v[h * n * n + r * n + c] = x;
        }
    };
    // answer rows 9 and 10
    put(9, 3, 1.0);
    put(10, 0, 0.5);
    // question rows 6, 7, 8
    put(6, 1, 0.75);
    put(7, 0, 0.25);
    put(8, 1, 0.5);
    put(6, 5, 0.5);
    put(7, 2, 0.125);
    put(8, 4, 1.0);
    let d = AttentionDump::new(seg, v).unwrap();
    let a = average_heads(&d);
    let s = answer_attention_scores(&a, &seg).unwrap();
    assert_eq!(s.to_visual, 0.5);
    assert_eq!(s.to_system, 0.25);
    assert_eq!(s.to_question, 0.0);
    let b = question_attention_bound(&a, &seg).unwrap();
    assert_eq!(b.to_system, 0.25);
    assert_eq!(b.to_visual, 0.125);
}

// ---- VAR ----

fn uniform_dump(rows: u32, cols: u32) -> AttentionDump {
    let seg = SegmentLengths {
        n_sys: 3,
        n_vis: rows * cols,
        n_q: 4,
        n_a: 2,
        heads: 2,
        grid_rows: rows,
        grid_cols: cols,
    };
    let n = seg.total();
    AttentionDump::new(seg, vec![0.1; 2 * n * n]).unwrap()
}

fn gaussian(kernel: usize, sigma: f64) -> Vec<f64> {
    let r = kernel as i64 / 2;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|w| w / s).collect()
}

fn naive_spatialize(m: &HeatMask, w: u32, h: u32, f: &FilterParams) -> Vec<f64> {
    let (w, h) = (w as i64, h as i64);
    let src = |p: i64, grid: usize, out: i64| -> f64 {
        let g = (p as f64 + 0.5) * grid as f64 / out as f64 - 0.5;
        g.max(0.0).min((grid - 1) as f64)
    };
    let sample = |x: i64, y: i64| -> f64 {
        let gx = src(x, m.cols(), w);
        let gy = src(y, m.rows(), h);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(m.cols() - 1), (y0 + 1).min(m.rows() - 1));
        let (tx, ty) = (gx - x0 as f64, gy - y0 as f64);
        m.get(y0, x0) * (1.0 - tx) * (1.0 - ty)
            + m.get(y0, x1) * tx * (1.0 - ty)
            + m.get(y1, x0) * (1.0 - tx) * ty
            + m.get(y1, x1) * tx * ty
    };
    let k = gaussian(f.kernel, f.sigma);
    let r = f.kernel as i64 / 2;
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let sx = (x + dx).clamp(0, w - 1);
                    let sy = (y + dy).clamp(0, h - 1);
                    acc += k[(dy + r) as usize] * k[(dx + r) as usize] * sample(sx, sy);
                }
            }
            out.push(acc.clamp(0.0, 1.0));
        }
    }
    out
}

fn var_checks() {
    // Constant attention gives salience 0, inverted to 1; white stays white.
    let white = RgbImage::from_pixel(40, 30, Rgb([255, 255, 255]));
    let out = refine(&white, &uniform_dump(3, 4), &VarParams::default()).unwrap();
    assert_eq!(out.as_raw(), white.as_raw());
    for g in 0..=255u8 {
        let img = RgbImage::from_pixel(8, 8, Rgb([g, g, g]));
        let mask = FullMask {
            width: 8,
            height: 8,
            data: vec![g as f64 / 255.0; 64],
        };
        assert_eq!(
            blend(&img, &mask, 0.85, 0.15).unwrap().as_raw(),
            img.as_raw(),
            "gray {g}"
        );
    }

    let gray = RgbImage::from_pixel(1, 1, Rgb([128, 128, 128]));
    let ones = FullMask {
        width: 1,
        height: 1,
        data: vec![1.0],
    };
    assert_eq!(
        blend(&gray, &ones, 0.85, 0.15).unwrap().get_pixel(0, 0).0,
        [147, 147, 147]
    );

    let mut rng = StdRng::seed_from_u64(0x5eed_0004);
    for _ in 0..20 {
        let rows = rng.gen_range(1..=6);
        let cols = rng.gen_range(1..=6);
        let m = HeatMask::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen::<f64>()).collect(),
        )
        .unwrap();
        let (w, h) = (rng.gen_range(1..=40), rng.gen_range(1..=40));
        let f = FilterParams {
            kernel: [1, 3, 5, 7][rng.gen_range(0..4)],
            sigma: rng.gen_range(0.3..2.5),
        };
        let got = spatialize_and_filter(&m, w, h, &f).unwrap();
        let want = naive_spatialize(&m, w, h, &f);
        for (g, r) in got.data.iter().zip(&want) {
            assert!((g - r).abs() <= 1e-6, "{g} vs {r}");
        }
    }

    let fx = fixtures();
    let img = std::fs::read(fx.join("images/char_num.png")).unwrap();
    let dump = AttentionDump::read_file(fx.join("dumps/char_num-a-pos.bin")).unwrap();
    let a = refine_encoded(&img, &dump, &VarParams::default()).unwrap();
    let b = refine_encoded(&img, &dump, &VarParams::default()).unwrap();
    assert_eq!(a, b);

    let big = RgbImage::from_fn(512, 512, |x, y| {
        Rgb([(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8])
    });
    let seg = SegmentLengths {
        n_sys: 4,
        n_vis: 256,
        n_q: 8,
        n_a: 2,
        heads: 2,
        grid_rows: 16,
        grid_cols: 16,
    };
    let n = seg.total();
    let dump = AttentionDump::new(seg, (0..2 * n * n).map(|_| rng.gen::<f32>()).collect()).unwrap();
    let start = Instant::now();
    let png =
        mmvu_core::var::encode_png(&refine(&big, &dump, &VarParams::default()).unwrap()).unwrap();
    check_time("512x512 refinement", start, Duration::from_secs(5));
    assert!(!png.is_empty());
}

// ---- wire formats ----

fn wire_formats() {
    let mut rng = StdRng::seed_from_u64(0x5eed_0005);
    let dir = tempfile::tempdir().unwrap();
    for i in 0..100 {
        let d = random_dump(&mut rng);
        let path = dir.path().join(format!("{i}.bin"));
        d.write_file(&path).unwrap();
        let back = AttentionDump::read_file(&path).unwrap();
        assert_eq!(back.segments(), d.segments());
        let bits = |x: &AttentionDump| x.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&d));
        assert_eq!(back.to_bytes(), d.to_bytes());
    }

    let text = std::fs::read_to_string(fixtures().join("benchmark.jsonl")).unwrap();
    let items = parse_benchmark_str(&text).unwrap();
    let again = parse_benchmark_str(&serialize_benchmark_string(&items)).unwrap();
    assert_eq!(items, again);

    let good = random_dump(&mut rng).to_bytes();
    let mut bad = good.clone();
    bad[0] ^= 0xff;
    assert!(matches!(
        AttentionDump::from_bytes(&bad),
        Err(DumpError::BadMagic)
    ));
    let mut bad = good.clone();
    bad[8] = 9;
    assert!(matches!(
        AttentionDump::from_bytes(&bad),
        Err(DumpError::UnsupportedVersion(9))
    ));
    assert!(matches!(
        AttentionDump::from_bytes(&good[..good.len() - 4]),
        Err(DumpError::SizeMismatch { .. })
    ));
}

// ---- end to end ----

fn end_to_end_replay() {
    let start = Instant::now();
    let fx = fixtures();
    let text = std::fs::read_to_string(fx.join("benchmark.jsonl")).unwrap();
    let pairs = pair_items(&parse_benchmark_str(&text).unwrap()).unwrap();
    assert_eq!(pairs.len(), 24);
    let backend = ReplayBackend::load(fx.join("responses.jsonl")).unwrap();
    let opts = EvalOptions::new(Strategy::baseline(), &fx);
    let run = run_eval(&pairs, &backend, &PromptSet::default(), &opts).unwrap();
    let report = build_report(
        run.outcome_records()
            .iter()
            .map(|r| (r.category, r.outcome)),
    );
    assert_eq!(report.micro.counts, OutcomeCounts::new(12, 6, 3, 3));
    assert_eq!(report.micro.ra.percent(), "50.00");
    assert_eq!(report.micro.mr.percent(), "33.33");
    let rendered = render(&report, None);
    let expected = std::fs::read(golden()).unwrap();
    let diff = compare_golden(rendered.markdown.as_bytes(), &expected);
    assert!(diff.is_equal(), "{diff:?}");
    check_time("replay run", start, Duration::from_secs(2));
}

// ---- filtering ----

fn word_uncertain(text: &str) -> bool {
    text.split(|c: char| !c.is_alphanumeric() && c != '_')
        .any(|w| w.eq_ignore_ascii_case("uncertain"))
}

fn mentions_phrase(text: &str) -> bool {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    words.windows(3).any(|w| w == ["in", "the", "image"])
}

fn filtering() {
    let mut rng = StdRng::seed_from_u64(0x5eed_0006);
    let answers = [
        "Yes.",
        "Uncertain.",
        "It is uncertain whether the cup is full.",
        "The uncertainty is low; it is red.",
        "UNCERTAIN",
        "Two dogs are visible in the image.",
        "Not uncertainly so.",
        "No, (uncertain) at best.",
    ];
    let questions = [
        "In the image, what colour is the car?",
        "How many people are in the image?",
        "What is written on the sign in the   image?",
        "Is the door open?",
        "in the image in the image, where is the cat?",
    ];
    let mut corpus = Vec::new();
    let mut expected_kept = Vec::new();
    for s in 0..20 {
        let mut turns = Vec::new();
        let mut keep = Vec::new();
        for r in 0..rng.gen_range(1..=5) {
            let q = format!(
                "[q{s}.{r}] {}",
                questions[rng.gen_range(0..questions.len())]
            );
            let a = answers[rng.gen_range(0..answers.len())];
            if !word_uncertain(a) {
                keep.push(format!("[q{s}.{r}]"));
            }
            turns.push(ConversationTurn::human(q));
            turns.push(ConversationTurn::gpt(a));
        }
        corpus.push(GeneratedSample {
            id: format!("s{s}"),
            image: format!("s{s}.png"),
            conversations: Conversations::Single(turns),
        });
        expected_kept.push(keep);
    }

    let out = filter_samples(&corpus, FilterOptions::default());
    let removed_rounds: usize = expected_kept
        .iter()
        .zip(&corpus)
        .map(|(k, s)| s.rounds() - k.len())
        .sum();
    assert_eq!(out.report.rounds_removed, removed_rounds);

    let kept_markers: Vec<Vec<String>> = out
        .kept
        .iter()
        .map(|s| match &s.conversations {
            Conversations::Single(t) => t
                .chunks(2)
                .map(|r| r[0].value.split(']').next().unwrap().to_string() + "]")
                .collect(),
            _ => unreachable!(),
        })
        .collect();
    let want: Vec<Vec<String>> = expected_kept
        .into_iter()
        .filter(|k| !k.is_empty())
        .collect();
    assert_eq!(kept_markers, want);

    for s in &out.kept {
        if let Conversations::Single(t) = &s.conversations {
            for turn in t {
                assert!(!mentions_phrase(&turn.value), "left in: {}", turn.value);
                assert!(
                    !word_uncertain(&turn.value) || turn.from == mmvu_core::datagen::Speaker::Human
                );
            }
        }
    }

    let twice = filter_samples(&out.kept, FilterOptions::default());
    assert_eq!(twice.kept, out.kept);
    assert_eq!(twice.report.edits(), 0);
}

// ---- composition ----

fn paired(id: usize, pos: usize, neg: usize) -> GeneratedSample {
    let side = |tag: &str, k: usize| {
        (0..k)
            .flat_map(|r| {
                [
                    ConversationTurn::human(format!("{tag} q{r}")),
                    ConversationTurn::gpt(format!("{tag} a{r}")),
                ]
            })
            .collect::<Vec<_>>()
    };
    GeneratedSample {
        id: format!("p{id}"),
        image: format!("p{id}.png"),
        conversations: Conversations::Paired {
            pos: side("pos", pos),
            neg: side("neg", neg),
        },
    }
}

fn composition() {
    let mut rng = StdRng::seed_from_u64(0x5eed_0007);
    let base: Vec<_> = (0..30)
        .map(|i| paired(i, rng.gen_range(1..=5), rng.gen_range(1..=6)))
        .collect();
    let extra: Vec<_> = (100..120)
        .map(|i| paired(i, rng.gen_range(1..=5), rng.gen_range(1..=6)))
        .collect();

    for (rounds, limit) in [
        (Rounds::One, Some(1)),
        (Rounds::Two, Some(2)),
        (Rounds::Four, Some(4)),
        (Rounds::All, None),
    ] {
        let out = compose(&base, &[], CompositionStrategy::Concat(rounds), 0).unwrap();
        assert_eq!(out.len(), base.len());
        for (o, b) in out.iter().zip(&base) {
            let Conversations::Paired { pos, neg } = &b.conversations else {
                unreachable!()
            };
            let (p, n) = (pos.len() / 2, neg.len() / 2);
            assert_eq!(o.rounds(), p + limit.map_or(n, |r: usize| r.min(n)));
            assert!(!o.is_paired());
        }
    }

    let combined = compose(&base, &extra, CompositionStrategy::Combine, 0).unwrap();
    assert_eq!(combined.len(), 2 * (base.len() + extra.len()));

    for n in [0, 1, 7, 20] {
        let a = compose(&base, &extra, CompositionStrategy::Replace(n), 42).unwrap();
        let b = compose(&base, &extra, CompositionStrategy::Replace(n), 42).unwrap();
        assert_eq!(a.len(), base.len());
        assert_eq!(a, b);
        assert_eq!(
            a.iter()
                .filter(|s| s.id.starts_with("p1") && s.id.len() == 4)
                .count(),
            n
        );
    }
}

// ---- CLI ----

fn mmvu(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmvu"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MMVU_REPLAY")
        .env_remove("MMVU_BASE_URL")
        .env_remove("MMVU_CHAT_URL")
        .env_remove("MMVU_WORKERS")
        .output()
        .unwrap()
}

/// Runs every subcommand into `out`; returns stdout of each.
fn run_all(out: &Path) -> Vec<Vec<u8>> {
    let fx = fixtures();
    let f = |p: &str| fx.join(p).to_string_lossy().into_owned();
    let o = |p: &str| out.join(p).to_string_lossy().into_owned();
    let datagen_images = [
        f("datagen/images/kitchen.png"),
        f("datagen/images/street.png"),
        f("datagen/images/garden.png"),
        f("datagen/images/office.png"),
    ];

    let mut runs: Vec<Vec<String>> = vec![
        vec![
            "validate".into(),
            "--benchmark".into(),
            f("benchmark.jsonl"),
        ],
        vec![
            "eval".into(),
            "--benchmark".into(),
            f("benchmark.jsonl"),
            "--replay".into(),
            f("responses.jsonl"),
            "--out".into(),
            o("outcomes.jsonl"),
            "--responses-out".into(),
            o("responses.jsonl"),
            "--logits".into(),
        ],
        vec![
            "eval".into(),
            "--benchmark".into(),
            f("benchmark.jsonl"),
            "--replay".into(),
            f("responses.jsonl"),
            "--out".into(),
            o("outcomes-var.jsonl"),
            "--strategy".into(),
            "cgr+var".into(),
        ],
        vec![
            "metrics".into(),
            "--outcomes".into(),
            o("outcomes.jsonl"),
            "--out-dir".into(),
            o("metrics"),
        ],
        vec![
            "attn".into(),
            "--dump".into(),
            f("dumps/char_num-a-pos.bin"),
            f("attention.bin"),
        ],
        vec![
            "attn".into(),
            "--benchmark".into(),
            f("benchmark.jsonl"),
            "--responses".into(),
            f("responses.jsonl"),
            "--out".into(),
            o("analysis.json"),
        ],
        vec![
            "logits".into(),
            "--benchmark".into(),
            f("benchmark.jsonl"),
            "--responses".into(),
            f("responses.jsonl"),
            "--out".into(),
            o("logits.json"),
        ],
        vec![
            "var".into(),
            "--image".into(),
            f("images/char_num.png"),
            "--dump".into(),
            f("dumps/char_num-a-pos.bin"),
            "--out".into(),
            o("refined.png"),
            "--sidecar".into(),
            o("refined.json"),
        ],
    ];
    let mut gen = vec!["gen".to_string(), "--images".into()];
    gen.extend(datagen_images);
    gen.extend([
        "--replay".into(),
        f("datagen/responses.jsonl"),
        "--out".into(),
        o("dataset.json"),
    ]);
    runs.push(gen);
    runs.extend([
        vec![
            "filter".into(),
            "--input".into(),
            o("dataset.json"),
            "--out".into(),
            o("filtered.json"),
            "--report".into(),
            o("filter.json"),
        ],
        vec![
            "compose".into(),
            "--base".into(),
            o("dataset.json"),
            "--strategy".into(),
            "concat".into(),
            "--rounds".into(),
            "2".into(),
            "--out".into(),
            o("concat.json"),
        ],
        vec![
            "compose".into(),
            "--base".into(),
            o("dataset.json"),
            "--strategy".into(),
            "combine".into(),
            "--out".into(),
            o("combine.json"),
        ],
        vec![
            "compose".into(),
            "--base".into(),
            o("dataset.json"),
            "--extra".into(),
            o("filtered.json"),
            "--strategy".into(),
            "replace".into(),
            "--n".into(),
            "2".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            o("replace.json"),
        ],
        vec![
            "report".into(),
            "--metrics".into(),
            o("metrics/metrics.json"),
            "--analysis".into(),
            o("analysis.json"),
            "--out-dir".into(),
            o("report"),
        ],
        vec![
            "report".into(),
            "--metrics".into(),
            o("metrics/metrics.json"),
            "--out-dir".into(),
            o("report-golden"),
            "--golden".into(),
            golden().to_string_lossy().into_owned(),
        ],
    ]);

    let mut stdouts = Vec::new();
    for args in &runs {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let r = mmvu(&refs, out);
        assert_eq!(
            r.status.code(),
            Some(0),
            "{:?} failed: {}",
            args,
            String::from_utf8_lossy(&r.stderr)
        );
        stdouts.push(r.stdout);
    }
    stdouts
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn cli_checks() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = run_all(a.path());
    let sb = run_all(b.path());
    assert_eq!(sa, sb, "standard output differs between runs");
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), tb.len());
    assert!(ta.len() >= 15, "only {} files written", ta.len());
    for ((pa, ba), (pb, bb)) in ta.iter().zip(&tb) {
        assert_eq!(pa, pb);
        assert!(ba == bb, "{} differs between runs", pa.display());
    }

    let fx = fixtures();
    let bench = fx.join("benchmark.jsonl").to_string_lossy().into_owned();
    let replay = fx.join("responses.jsonl").to_string_lossy().into_owned();
    let usage: [&[&str]; 7] = [
        &["frobnicate"],
        &["eval", "--benchmark", &bench],
        &["eval", "--benchmark", &bench, "--out", "x.jsonl"],
        &[
            "eval",
            "--benchmark",
            &bench,
            "--out",
            "x.jsonl",
            "--replay",
            &replay,
            "--workers",
            "0",
        ],
        &[
            "eval",
            "--benchmark",
            &bench,
            "--out",
            "x.jsonl",
            "--replay",
            &replay,
            "--strategy",
            "var",
            "--no-image",
        ],
        &[
            "eval",
            "--benchmark",
            &bench,
            "--out",
            "x.jsonl",
            "--replay",
            &replay,
            "--strategy",
            "guess",
        ],
        &[
            "compose",
            "--base",
            &bench,
            "--strategy",
            "concat",
            "--rounds",
            "3",
            "--out",
            "x.json",
        ],
    ];
    for args in usage {
        let r = mmvu(args, a.path());
        assert_eq!(
            r.status.code(),
            Some(3),
            "{args:?}: {}",
            String::from_utf8_lossy(&r.stderr)
        );
    }
}

fn main() {
    let criteria: [(&str, fn()); 10] = [
        ("metric oracle equivalence", metric_oracle),
        ("outcome taxonomy", outcome_taxonomy),
        ("softmax", softmax_checks),
        ("attention statistics", attention_statistics),
        ("visual attention refinement", var_checks),
        ("wire formats", wire_formats),
        ("end-to-end replay", end_to_end_replay),
        ("filtering", filtering),
        ("composition", composition),
        ("cli", cli_checks),
    ];
    std::panic::set_hook(Box::new(|info| eprintln!("  {info}")));
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let ok = catch_unwind(AssertUnwindSafe(check)).is_ok();
        println!(
            "{} {name} ({:.2?})",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed()
        );
        failed += usize::from(!ok);
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
