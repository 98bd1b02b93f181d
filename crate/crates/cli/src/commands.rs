use std::collections::BTreeSet;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mmvu_core::adapter::{AttentionRef, ReplayBackend, ResponseRecord, TAG_MAIN};
use mmvu_core::analytics::{
    aggregate_uf_ratios, analyze, answer_attention_scores, average_heads, question_attention_bound,
    AnswerAttentionScores, AnswerAttentionSummary, PairEvidence, PairLogits,
    QuestionAttentionBound,
};
use mmvu_core::datagen::{
    compose, filter_samples, generate_samples, read_training_file, write_training_json,
    CompositionStrategy, DatasetReport, FilterOptions, GenerationOptions, PromptVersion, Rounds,
};
use mmvu_core::eval::{read_outcomes_file, score_pair, write_outcomes, DEFAULT_MAX_FAILURE_RATE};
use mmvu_core::report::{compare_golden, render, GoldenDiff};
use mmvu_core::var::{refine_encoded, FilterParams, VarSidecar};
use mmvu_core::{
    build_report, pair_items, parse_benchmark, run_eval, AnalysisOutput, AttentionDump,
    EvalOptions, ItemPair, MetricsReport, PromptSet, SegmentLengths, Strategy, StrategyKind,
    VarParams,
};
use serde::{Deserialize, Serialize};

use crate::config::{usage, Settings};
use crate::{AttnArgs, Command, ComposeArgs, EvalArgs, GenArgs, VarArgs, VarFlags};

pub fn run(command: Command, config: Option<&Path>) -> Result<()> {
    let settings = Settings::load(config)?;
    match command {
        Command::Validate { benchmark } => validate(&benchmark),
        Command::Eval(args) => eval(&settings, args),
        Command::Metrics { outcomes, out_dir } => metrics(&outcomes, &out_dir),
        Command::Attn(args) => attn(args),
        Command::Logits {
            benchmark,
            responses,
            out,
        } => logits(&benchmark, &responses, out.as_deref()),
        Command::Var(args) => var(args),
        Command::Gen(args) => gen(&settings, args),
        Command::Filter {
            input,
            out,
            drop_on_phrase,
            report,
        } => filter(&input, &out, drop_on_phrase, report.as_deref()),
        Command::Compose(args) => compose_cmd(&settings, args),
        Command::Report {
            metrics,
            analysis,
            out_dir,
            golden,
        } => report(&metrics, analysis.as_deref(), &out_dir, golden.as_deref()),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

/// Writes JSON to `out`, or to standard output.
fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let bytes = json_bytes(value)?;
    match out {
        Some(p) => write_file(p, bytes),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&bytes)?;
            Ok(())
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parsing {}", path.display()))
}

fn load_pairs(path: &Path) -> Result<Vec<ItemPair>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let items = parse_benchmark(BufReader::new(file))
        .with_context(|| format!("benchmark {}", path.display()))?;
    pair_items(&items).with_context(|| format!("benchmark {}", path.display()))
}

fn validate(benchmark: &Path) -> Result<()> {
    let pairs = load_pairs(benchmark)?;
    let categories: BTreeSet<_> = pairs.iter().map(ItemPair::category).collect();
    println!(
        "{} pairs, {} categories touched",
        pairs.len(),
        categories.len()
    );
    Ok(())
}

fn var_params(flags: &VarFlags) -> Result<VarParams> {
    let d = VarParams::default();
    let params = VarParams {
        alpha: flags.alpha.unwrap_or(d.alpha),
        beta: flags.beta.unwrap_or(d.beta),
        filter: FilterParams {
            kernel: flags.kernel.unwrap_or(d.filter.kernel),
            sigma: flags.sigma.unwrap_or(d.filter.sigma),
        },
        invert: !flags.no_invert,
    };
    params.filter.validate().map_err(|e| usage(e.to_string()))?;
    for (name, v) in [("alpha", params.alpha), ("beta", params.beta)] {
        if !v.is_finite() || v < 0.0 {
            return Err(usage(format!("--{name} must be a non-negative number")));
        }
    }
    Ok(params)
}

fn prompt_set(settings: &Settings, flag: Option<PathBuf>) -> Result<PromptSet> {
    match settings.pick(flag, "prompts_dir", |f| f.prompts_dir.clone())? {
        Some(dir) => Ok(PromptSet::load_dir(dir)?),
        None => Ok(PromptSet::default()),
    }
}

fn absolute(path: &Path) -> String {
    fs::canonicalize(path)
        .unwrap_or_else(|_| path.to_path_buf())
        .display()
        .to_string()
}

fn eval(settings: &Settings, args: EvalArgs) -> Result<()> {
    let kind: StrategyKind = settings
        .pick(args.strategy.clone(), "strategy", |f| f.strategy.clone())?
        .unwrap_or_else(|| "baseline".to_string())
        .parse()?;
    let strategy = Strategy::new(kind, args.no_image)?;
    let pairs = load_pairs(&args.benchmark)?;
    let endpoint = settings.endpoint(&args.transport)?;
    let backend = endpoint.connect()?;
    let prompts = prompt_set(settings, args.prompts.clone())?;

    let mut opts = EvalOptions::new(
        strategy,
        match &args.images {
            Some(dir) => dir.clone(),
            None => args
                .benchmark
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_default(),
        },
    );
    opts.workers = settings.workers(args.workers)?;
    opts.max_failure_rate = settings
        .pick(args.max_failure_rate, "max_failure_rate", |f| {
            f.max_failure_rate
        })?
        .unwrap_or(DEFAULT_MAX_FAILURE_RATE);
    opts.var = var_params(&args.var)?;
    opts.want_logits = args.logits;

    let run = run_eval(&pairs, &*backend, &prompts, &opts)?;

    let mut outcomes = Vec::new();
    write_outcomes(&run.outcome_records(), &mut outcomes)?;
    write_file(&args.out, outcomes)?;

    if let Some(path) = &args.responses_out {
        let mut log = String::new();
        for item in run.results.iter().flat_map(|r| [&r.positive, &r.negative]) {
            for response in &item.exchanges {
                let attention_file = match &response.attention {
                    None => None,
                    Some(AttentionRef::File { resolved, .. }) => Some(absolute(resolved)),
                    Some(AttentionRef::Inline(dump)) => match &args.attn_dir {
                        Some(dir) => {
                            let file =
                                dir.join(format!("{}.{}.bin", response.item_id, response.tag));
                            write_file(&file, dump.to_bytes())?;
                            Some(absolute(&file))
                        }
                        None => {
                            log::warn!(
                                "{}: inline attention dropped; pass --attn-dir to keep it",
                                response.item_id
                            );
                            None
                        }
                    },
                };
                log.push_str(&ResponseRecord::from_response(response, attention_file).to_line());
            }
        }
        write_file(path, log)?;
    }

    let rate = run
        .unparseable_rate()
        .map_or("n/a".to_string(), |r| format!("{:.2}%", r * 100.0));
    eprintln!(
        "{} pairs evaluated with strategy {}{}; {} items failed; unparseable answers {} ({rate})",
        run.results.len(),
        kind,
        if args.no_image { " (no image)" } else { "" },
        run.failed_items,
        run.unparseable_items,
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricsDoc {
    metrics: MetricsReport,
    /// Items whose answer could not be mapped to an option.
    unanswered_items: usize,
    total_items: usize,
}

fn write_report_files(
    out_dir: &Path,
    report: &MetricsReport,
    analysis: Option<&AnalysisOutput>,
) -> Result<String> {
    let rendered = render(report, analysis);
    write_file(&out_dir.join("report.md"), &rendered.markdown)?;
    write_file(&out_dir.join("report.csv"), &rendered.csv)?;
    Ok(rendered.markdown)
}

fn metrics(outcomes: &Path, out_dir: &Path) -> Result<()> {
    let records =
        read_outcomes_file(outcomes).with_context(|| format!("outcomes {}", outcomes.display()))?;
    let report = build_report(records.iter().map(|r| (r.category, r.outcome)));
    let unanswered = records
        .iter()
        .map(|r| r.pos_choice.is_none() as usize + r.neg_choice.is_none() as usize)
        .sum();
    let doc = MetricsDoc {
        metrics: report,
        unanswered_items: unanswered,
        total_items: records.len() * 2,
    };
    write_file(&out_dir.join("metrics.json"), json_bytes(&doc)?)?;
    write_report_files(out_dir, &doc.metrics, None)?;
    eprintln!(
        "{} pairs: micro RA {}, micro MR {}",
        records.len(),
        doc.metrics.micro.ra.percent(),
        doc.metrics.micro.mr.percent()
    );
    Ok(())
}

fn report(
    metrics: &Path,
    analysis: Option<&Path>,
    out_dir: &Path,
    golden: Option<&Path>,
) -> Result<()> {
    let doc: MetricsDoc = read_json(metrics)?;
    let analysis: Option<AnalysisOutput> = analysis.map(read_json).transpose()?;
    let markdown = write_report_files(out_dir, &doc.metrics, analysis.as_ref())?;
    if let Some(g) = golden {
        let expected = fs::read(g).with_context(|| format!("reading golden {}", g.display()))?;
        if let GoldenDiff::Mismatch {
            line,
            expected,
            actual,
        } = compare_golden(markdown.as_bytes(), &expected)
        {
            bail!(
                "report.md differs from {} at line {line}\n  golden:   {}\n  rendered: {}",
                g.display(),
                expected.as_deref().unwrap_or("<end of file>"),
                actual.as_deref().unwrap_or("<end of file>")
            );
        }
        eprintln!("report.md matches {}", g.display());
    }
    Ok(())
}

/// Answer-step responses for every pair, scored.
fn recorded_pairs(benchmark: &Path, responses: &Path) -> Result<Vec<PairEvidence>> {
    let pairs = load_pairs(benchmark)?;
    let log = ReplayBackend::load(responses)?;
    let mut out = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let get = |id: &str| {
            log.get(id, TAG_MAIN).with_context(|| {
                format!(
                    "no \"{TAG_MAIN}\" response for item {id} in {}",
                    responses.display()
                )
            })
        };
        let pos = get(&pair.positive.item_id)?;
        let neg = get(&pair.negative.item_id)?;
        let (outcome, _, _) = score_pair(pair, &pos.raw_text, &neg.raw_text);
        out.push(PairEvidence {
            logits: PairLogits {
                pair_id: pair.pair_id.clone(),
                outcome,
                pos_logits: pos.option_logits,
                pos_answer: pair.positive.answer,
                neg_logits: neg.option_logits,
                neg_answer: pair.negative.answer,
            },
            pos_attention: pos.load_attention()?,
            neg_attention: neg.load_attention()?,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct DumpSummary {
    path: String,
    segments: SegmentLengths,
    answer_attention: AnswerAttentionScores,
    question_bound: QuestionAttentionBound,
}

#[derive(Debug, Serialize)]
struct DumpsOutput {
    dumps: Vec<DumpSummary>,
    answer_attention: AnswerAttentionSummary,
}

fn attn(args: AttnArgs) -> Result<()> {
    match (&args.benchmark, &args.responses) {
        (Some(b), Some(r)) => {
            let evidence = recorded_pairs(b, r)?;
            emit_json(&analyze(&evidence)?, args.out.as_deref())
        }
        _ if !args.dump.is_empty() => {
            let mut dumps = Vec::new();
            for path in &args.dump {
                let dump = AttentionDump::read_file(path)
                    .with_context(|| format!("dump {}", path.display()))?;
                let a = average_heads(&dump);
                dumps.push(DumpSummary {
                    path: path.display().to_string(),
                    segments: *dump.segments(),
                    answer_attention: answer_attention_scores(&a, dump.segments())?,
                    question_bound: question_attention_bound(&a, dump.segments())?,
                });
            }
            let scores: Vec<_> = dumps.iter().map(|d| d.answer_attention).collect();
            let out = DumpsOutput {
                answer_attention: AnswerAttentionSummary::from_scores(&scores),
                dumps,
            };
            emit_json(&out, args.out.as_deref())
        }
        _ => Err(usage(
            "attn needs --dump files or --benchmark with --responses",
        )),
    }
}

fn logits(benchmark: &Path, responses: &Path, out: Option<&Path>) -> Result<()> {
    let evidence = recorded_pairs(benchmark, responses)?;
    let summary = aggregate_uf_ratios(evidence.iter().map(|e| &e.logits))?;
    emit_json(&summary, out)
}

fn var(args: VarArgs) -> Result<()> {
    let params = var_params(&args.var)?;
    let image =
        fs::read(&args.image).with_context(|| format!("reading {}", args.image.display()))?;
    let dump = AttentionDump::read_file(&args.dump)
        .with_context(|| format!("dump {}", args.dump.display()))?;
    let refined = refine_encoded(&image, &dump, &params)?;
    write_file(&args.out, &refined)?;
    if let Some(path) = &args.sidecar {
        let decoded = mmvu_core::var::decode_rgb(&refined)?;
        let sidecar = VarSidecar {
            input: args.image.display().to_string(),
            attention: args.dump.display().to_string(),
            alpha: params.alpha,
            beta: params.beta,
            kernel: params.filter.kernel,
            sigma: params.filter.sigma,
            invert: params.invert,
            normalization: "min_max".into(),
            salience_reduction: "max_over_question_rows".into(),
            width: decoded.width(),
            height: decoded.height(),
        };
        write_file(path, json_bytes(&sidecar)?)?;
    }
    Ok(())
}

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "webp", "bmp"];

fn collect_images(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.extension().and_then(|e| e.to_str()).is_some_and(|e| {
                        IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str())
                    })
                })
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn gen(settings: &Settings, args: GenArgs) -> Result<()> {
    let version: PromptVersion = args.version.parse().map_err(usage)?;
    let images = collect_images(&args.images)?;
    let endpoint = settings.endpoint(&args.transport)?;
    let backend = endpoint.connect()?;
    let prompts = prompt_set(settings, args.prompts.clone())?;
    let mut opts = GenerationOptions::new(version);
    opts.workers = settings.workers(args.workers)?;

    let generated = generate_samples(&images, &*backend, &prompts, &opts)?;
    let filtered = filter_samples(
        &generated.samples,
        FilterOptions {
            drop_on_phrase: args.drop_on_phrase,
        },
    );
    let report = DatasetReport::from_generation(&generated).with_filter(&filtered.report);

    let mut data = Vec::new();
    write_training_json(&filtered.kept, &mut data)?;
    write_file(&args.out, data)?;
    let report_path = args.report.clone().unwrap_or_else(|| {
        let stem = args
            .out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        args.out.with_file_name(format!("{stem}.report.json"))
    });
    write_file(&report_path, json_bytes(&report)?)?;
    eprintln!(
        "{} images: {} samples generated, {} skipped, {} kept after filtering",
        images.len(),
        report.generated,
        report.skipped,
        filtered.kept.len()
    );
    Ok(())
}

fn filter(input: &Path, out: &Path, drop_on_phrase: bool, report: Option<&Path>) -> Result<()> {
    let samples =
        read_training_file(input).with_context(|| format!("dataset {}", input.display()))?;
    let result = filter_samples(&samples, FilterOptions { drop_on_phrase });
    let mut data = Vec::new();
    write_training_json(&result.kept, &mut data)?;
    write_file(out, data)?;
    emit_json(&result.report, report)
}

fn compose_cmd(settings: &Settings, args: ComposeArgs) -> Result<()> {
    let strategy = match args.strategy.as_str() {
        "concat" => CompositionStrategy::Concat(args.rounds.parse::<Rounds>().map_err(usage)?),
        "combine" => CompositionStrategy::Combine,
        "replace" => {
            CompositionStrategy::Replace(args.n.ok_or_else(|| usage("replace needs --n"))?)
        }
        other => {
            return Err(usage(format!(
                "unknown composition strategy \"{other}\" (concat, combine, replace)"
            )))
        }
    };
    let seed = settings.pick(args.seed, "seed", |f| f.seed)?.unwrap_or(0);
    let base = read_training_file(&args.base)
        .with_context(|| format!("dataset {}", args.base.display()))?;
    let extra = match &args.extra {
        Some(p) => read_training_file(p).with_context(|| format!("dataset {}", p.display()))?,
        None => Vec::new(),
    };
    let composed = compose(&base, &extra, strategy, seed)?;
    let mut data = Vec::new();
    write_training_json(&composed, &mut data)?;
    write_file(&args.out, data)?;
    eprintln!("{} samples written", composed.len());
    Ok(())
}
