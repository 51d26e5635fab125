//! Command line front end. Subcommands cover the whole pipeline: `build`
//! inspects a triple store, `gen` emits training questions, `train` fits
//! embeddings, `finetune` adds the rescoring matrix, `answer` and `eval`
//! run inference, `neighbors` inspects the learned word space.
//!
//! Exit codes: 0 success, 1 numeric failure inside a solver or training
//! loop, 2 usage errors including unreadable or malformed inputs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use triqa::datagen::{
    default_question_count, generate_question, load_paraphrases, patterns, tokenize, QAPair,
    QuestionStream, VocabBuilder,
};
use triqa::error::{Error, Result};
use triqa::evalkit::{EvalReport, LabeledRanking};
use triqa::finetune::{fit, FinetuneConfig, FinetuneSet};
use triqa::kb::{KnowledgeBase, SymbolKind, Triple};
use triqa::model::io::{self as model_io, ModelBundle};
use triqa::model::EmbeddingModel;
use triqa::ranker::{answer, full_ranking, rank, AnswerOptions, CandidateSet};
use triqa::trainer::{train, QaPairs, TrainConfig};

#[derive(Parser)]
#[command(name = "triqa", version, about = "Question answering over a triple store")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load a triple store and print its index summary.
    Build(BuildArgs),
    /// Generate template questions from a triple store.
    Gen(GenArgs),
    /// Train embeddings on generated or file-provided questions.
    Train(TrainArgs),
    /// Fit the rescoring matrix on top of a trained model.
    Finetune(FinetuneArgs),
    /// Answer a single question.
    Answer(AnswerArgs),
    /// Score ranked answers against labeled candidates.
    Eval(EvalArgs),
    /// List nearest neighbors of a word in embedding space.
    Neighbors(NeighborsArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Triple store TSV: left<TAB>relation<TAB>right per line.
    #[arg(long)]
    kb: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, required_unless_present = "dump_patterns")]
    kb: Option<PathBuf>,
    /// Questions to emit; defaults to sixteen per triple.
    #[arg(long)]
    count: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the question templates instead of generating.
    #[arg(long)]
    dump_patterns: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    kb: PathBuf,
    /// QA pairs TSV (as written by `gen`); generated on the fly when absent.
    #[arg(long)]
    qa: Option<PathBuf>,
    /// Generator seed used when --qa is absent.
    #[arg(long, default_value_t = 0)]
    gen_seed: u64,
    /// Generator count used when --qa is absent; default sixteen per triple.
    #[arg(long)]
    gen_count: Option<u64>,
    /// Paraphrase pairs TSV: text<TAB>text per line.
    #[arg(long)]
    paraphrases: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    lr0: f32,
    #[arg(long, default_value_t = 0.1)]
    margin: f32,
    #[arg(long, default_value_t = 0.66)]
    corrupt_prob: f64,
    #[arg(long)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Progress window; one log line per window on stderr.
    #[arg(long, default_value_t = 1000)]
    log_every: u64,
    /// Save the model every N steps; 0 saves only at the end.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
    /// Model directory to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    kb: PathBuf,
    /// QA pairs TSV to build rescoring examples from; generated when absent.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    gen_seed: u64,
    /// Number of generated pairs used when --pairs is absent.
    #[arg(long, default_value_t = 1000)]
    gen_count: u64,
    #[arg(long, default_value_t = 0.66)]
    corrupt_prob: f64,
    /// Seed for negative sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated regularization strengths; half-decade grid when absent.
    #[arg(long)]
    lambda_grid: Option<String>,
    #[arg(long, default_value_t = 0.4)]
    train_fraction: f64,
    /// Solver gradient tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Solver iteration cap per grid entry.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Directory for the full augmented model; updates --model in place when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnswerArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    question: String,
    /// Rescore with the fitted similarity matrix.
    #[arg(long)]
    finetuned: bool,
    /// Rank the whole store instead of string-matched candidates.
    #[arg(long)]
    no_filter: bool,
    #[arg(long, default_value_t = 5)]
    topn: usize,
    /// Candidate strings above this corpus frequency are ignored.
    #[arg(long, default_value_t = 1000)]
    freq_threshold: u32,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    /// Rank only the provided candidate triples per question.
    Rerank,
    /// Rank every triple in the store; candidates supply the labels.
    Full,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    kb: PathBuf,
    /// Labeled candidates TSV: question<TAB>left<TAB>rel<TAB>right<TAB>label.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalMode::Rerank)]
    mode: EvalMode,
    #[arg(long)]
    finetuned: bool,
    /// Abstention threshold on the top score.
    #[arg(long, default_value_t = f32::NEG_INFINITY)]
    threshold: f32,
    /// Comma-separated k values for top-k hit rates.
    #[arg(long, default_value = "1,10")]
    ks: String,
    /// Label for the report's method column.
    #[arg(long)]
    method: Option<String>,
    /// Write the precision-recall sweep to this file.
    #[arg(long)]
    pr_out: Option<PathBuf>,
}

#[derive(Args)]
struct NeighborsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    word: String,
    #[arg(long, default_value_t = 10)]
    topn: usize,
}

fn main() {
    // Die quietly when the consumer closes the pipe (e.g. `triqa gen | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Build(a) => cmd_build(a),
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Finetune(a) => cmd_finetune(a),
        Cmd::Answer(a) => cmd_answer(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Neighbors(a) => cmd_neighbors(a),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(if e.is_runtime() { 1 } else { 2 });
    }
}

fn cmd_build(args: BuildArgs) -> Result<()> {
    let kb = KnowledgeBase::load(&args.kb)?;
    println!("triples={}", kb.len());
    println!("entities={}", kb.entity_count());
    println!("relations={}", kb.relation_count());
    println!("slots={}", kb.slot_count());
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    if args.dump_patterns {
        return dump_patterns();
    }
    let kb = KnowledgeBase::load(args.kb.as_ref().expect("kb required by clap"))?;
    let count = args.count.unwrap_or_else(|| default_question_count(&kb));
    let stream = QuestionStream::new(&kb, args.seed, count)?;
    let mut out = open_out(args.out.as_deref())?;
    for pair in stream.iter() {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            pair.question.join(" "),
            kb.symbol_name(pair.answer.left),
            kb.symbol_name(pair.answer.rel),
            kb.symbol_name(pair.answer.right),
        )
        .map_err(|e| Error::io(args.out.clone().unwrap_or_else(|| "<stdout>".into()), e))?;
    }
    Ok(())
}

/// Renders every template against a tiny demonstration store.
fn dump_patterns() -> Result<()> {
    let demo = KnowledgeBase::from_names([
        ("winston-churchill.e", "suffer-from.r", "depression.e"),
        ("cilantro.e", "grow-in.r", "summer.e"),
        ("festival.e", "fall-on.r", "monday.e"),
    ])?;
    for p in patterns() {
        let t = demo
            .triples()
            .iter()
            .find(|t| p.applies_to(&demo, t))
            .expect("demo store covers every constraint");
        let q = generate_question(&demo, t, p)?;
        println!(
            "{}\tasks={}\tconstraint={}\t{}",
            p.id,
            match p.asked {
                triqa::datagen::QuestionedSlot::Left => "left",
                triqa::datagen::QuestionedSlot::Right => "right",
            },
            match p.constraint {
                triqa::datagen::RelConstraint::None => "none",
                triqa::datagen::RelConstraint::In => "-in",
                triqa::datagen::RelConstraint::On => "-on",
            },
            q.question.join(" "),
        );
    }
    Ok(())
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| Error::io(p, e))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(BufWriter::new(std::io::stdout()))),
    }
}

/// Reads `question<TAB>left<TAB>rel<TAB>right` rows back into pairs. Symbols
/// must exist in the store with the right kinds.
fn load_qa_pairs(path: &Path, kb: &KnowledgeBase) -> Result<Vec<QAPair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(q), Some(l), Some(r), Some(rt), None) =
            (cols.next(), cols.next(), cols.next(), cols.next(), cols.next())
        else {
            return Err(Error::parse(path, lineno, "expected 4 tab-separated columns"));
        };
        let question: Vec<String> = q.split(' ').filter(|t| !t.is_empty()).map(String::from).collect();
        if question.is_empty() {
            return Err(Error::parse(path, lineno, "empty question"));
        }
        let answer = resolve_triple(kb, l, r, rt, path, lineno)?;
        pairs.push(QAPair { question, answer });
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput(format!("{}: no pairs", path.display())));
    }
    Ok(pairs)
}

fn resolve_triple(
    kb: &KnowledgeBase,
    left: &str,
    rel: &str,
    right: &str,
    path: &Path,
    lineno: usize,
) -> Result<Triple> {
    let lookup = |name: &str, kind: SymbolKind| {
        let id = kb
            .symbol_id(name)
            .ok_or_else(|| Error::parse(path, lineno, format!("unknown symbol {name:?}")))?;
        if kb.symbol_kind(id) != kind {
            return Err(Error::parse(path, lineno, format!("{name:?} used in the wrong slot")));
        }
        Ok(id)
    };
    Ok(Triple {
        left: lookup(left, SymbolKind::Entity)?,
        rel: lookup(rel, SymbolKind::Relation)?,
        right: lookup(right, SymbolKind::Entity)?,
    })
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let kb = KnowledgeBase::load(&args.kb)?;
    let paras = match &args.paraphrases {
        Some(p) => Some(load_paraphrases(p)?),
        None => None,
    };

    let file_pairs;
    let gen_stream;
    let source: &dyn triqa::trainer::QaSource = match &args.qa {
        Some(path) => {
            file_pairs = QaPairs(load_qa_pairs(path, &kb)?);
            &file_pairs
        }
        None => {
            let count = args.gen_count.unwrap_or_else(|| default_question_count(&kb));
            gen_stream = QuestionStream::new(&kb, args.gen_seed, count)?;
            &gen_stream
        }
    };

    let mut vb = VocabBuilder::default();
    for i in 0..source.len() {
        vb.add_tokens(&source.pair_at(i).question);
    }
    if let Some(paras) = &paras {
        for pp in paras {
            vb.add_tokens(&pp.first);
            vb.add_tokens(&pp.second);
        }
    }
    let vocab = vb.finish()?;
    eprintln!(
        "training: {} questions, vocabulary {}, {} paraphrase pairs",
        source.len(),
        vocab.len(),
        paras.as_ref().map_or(0, Vec::len)
    );

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut model = EmbeddingModel::init(vocab.len(), kb.slot_count(), args.k, &mut rng)?;
    let cfg = TrainConfig {
        margin: args.margin,
        lr0: args.lr0,
        corrupt_prob: args.corrupt_prob,
        steps: args.steps,
        seed: args.seed,
        workers: args.workers,
        log_every: args.log_every,
        checkpoint_every: (args.checkpoint_every > 0).then_some(args.checkpoint_every),
    };

    let symbols: Vec<String> = kb.symbol_names().map(String::from).collect();
    let out = args.out.clone();
    let vocab_ref = &vocab;
    let symbols_ref = &symbols;
    let mut save_checkpoint = |step: u64, m: &EmbeddingModel| -> Result<()> {
        model_io::save(&out, m, vocab_ref, symbols_ref, None)?;
        eprintln!("checkpoint at step {step}");
        Ok(())
    };
    let checkpoint: Option<&mut dyn FnMut(u64, &EmbeddingModel) -> Result<()>> =
        if cfg.checkpoint_every.is_some() { Some(&mut save_checkpoint) } else { None };

    let stats = train(&mut model, &kb, source, paras.as_deref(), &vocab, &cfg, checkpoint)?;
    for point in &stats.history {
        eprintln!(
            "step {}: qa_loss {:.5} para_loss {:.5} violations {:.4}",
            point.step, point.qa_loss, point.para_loss, point.violation_rate
        );
    }
    model_io::save(&args.out, &model, &vocab, &symbols, None)?;

    println!("total_steps={}", stats.total_steps);
    println!("qa_steps={}", stats.qa_steps);
    println!("para_steps={}", stats.para_steps);
    println!("qa_loss_mean={:.6}", stats.qa_loss_mean);
    println!("para_loss_mean={:.6}", stats.para_loss_mean);
    println!("qa_violation_rate={:.6}", stats.qa_violation_rate);
    println!("para_violation_rate={:.6}", stats.para_violation_rate);
    println!("oov_dropped={}", stats.oov_dropped);
    Ok(())
}

fn cmd_finetune(args: FinetuneArgs) -> Result<()> {
    let kb = KnowledgeBase::load(&args.kb)?;
    let bundle = model_io::load(&args.model)?;
    bundle.verify_kb(&kb)?;

    let pairs: Vec<QAPair> = match &args.pairs {
        Some(path) => load_qa_pairs(path, &kb)?,
        None => QuestionStream::new(&kb, args.gen_seed, args.gen_count)?.iter().collect(),
    };

    let mut cfg = FinetuneConfig::default();
    cfg.train_fraction = args.train_fraction;
    if let Some(grid) = &args.lambda_grid {
        cfg.lambda_grid = parse_numbers(grid, "lambda")?;
    }
    if let Some(tol) = args.tol {
        cfg.tol = tol;
    }
    if let Some(cap) = args.max_iters {
        cfg.max_iters = cap;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let set = FinetuneSet::build(&bundle.model, &kb, &bundle.vocab, &pairs, args.corrupt_prob, &mut rng)?;
    let (matrix, report) = fit(&set, &cfg)?;

    println!("lambda\ttrain_objective\tval_accuracy\tconverged");
    for row in &report.rows {
        println!(
            "{:.3e}\t{:.6}\t{:.4}\t{}",
            row.lambda, row.train_objective, row.val_accuracy, row.converged
        );
    }
    println!("selected_lambda={:.3e}", report.selected_lambda);
    println!("identity_val_accuracy={:.4}", report.identity_val_accuracy);
    println!("selected_identity={}", report.selected_identity);
    println!("refit_objective={:.6}", report.refit_objective);

    match &args.out {
        Some(dir) => {
            model_io::save(dir, &bundle.model, &bundle.vocab, &bundle.symbols, Some(&matrix))?
        }
        None => model_io::save_similarity(&args.model, &matrix)?,
    }
    Ok(())
}

fn load_bundle_for_kb(model_dir: &Path, kb: &KnowledgeBase) -> Result<ModelBundle> {
    let bundle = model_io::load(model_dir)?;
    bundle.verify_kb(kb)?;
    Ok(bundle)
}

fn similarity<'a>(bundle: &'a ModelBundle, finetuned: bool) -> Result<Option<&'a triqa::model::SimilarityMatrix>> {
    if !finetuned {
        return Ok(None);
    }
    bundle
        .similarity
        .as_ref()
        .map(Some)
        .ok_or_else(|| Error::InvalidConfig("--finetuned set but the model has no rescoring matrix".into()))
}

fn cmd_answer(args: AnswerArgs) -> Result<()> {
    let kb = KnowledgeBase::load(&args.kb)?;
    let bundle = load_bundle_for_kb(&args.model, &kb)?;
    let matrix = similarity(&bundle, args.finetuned)?;
    let question = tokenize(&args.question);
    let opts = AnswerOptions {
        use_filter: !args.no_filter,
        freq_threshold: args.freq_threshold,
        topn: args.topn,
    };
    let ranked = answer(&question, &kb, &bundle.model, &bundle.vocab, matrix, &opts)?;
    print_ranking(&kb, ranked.entries.iter());
    Ok(())
}

fn print_ranking<'a>(kb: &KnowledgeBase, entries: impl Iterator<Item = &'a (u32, f32)>) {
    for (i, (ti, score)) in entries.enumerate() {
        let t = kb.triple(*ti);
        println!(
            "{}\t{:.6}\t{}\t{}\t{}",
            i + 1,
            score,
            kb.symbol_name(t.left),
            kb.symbol_name(t.rel),
            kb.symbol_name(t.right),
        );
    }
}

/// One evaluation question: its tokens and labeled candidate pool.
struct EvalGroup {
    text: String,
    tokens: Vec<String>,
    pool: Vec<u32>,
    relevant: Vec<u32>,
}

fn load_candidates(path: &Path, kb: &KnowledgeBase) -> Result<Vec<EvalGroup>> {
    let index: HashMap<Triple, u32> =
        kb.triples().iter().enumerate().map(|(i, t)| (*t, i as u32)).collect();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, EvalGroup> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 && cols.len() != 5 {
            return Err(Error::parse(path, lineno, "expected 4 or 5 tab-separated columns"));
        }
        let relevant = match cols.get(4) {
            None | Some(&"0") => false,
            Some(&"1") => true,
            Some(other) => {
                return Err(Error::parse(path, lineno, format!("label must be 0 or 1, got {other:?}")))
            }
        };
        let triple = resolve_triple(kb, cols[1], cols[2], cols[3], path, lineno)?;
        let ti = *index
            .get(&triple)
            .ok_or_else(|| Error::parse(path, lineno, "candidate triple not present in the store"))?;
        let group = groups.entry(cols[0].to_string()).or_insert_with(|| {
            order.push(cols[0].to_string());
            EvalGroup {
                text: cols[0].to_string(),
                tokens: tokenize(cols[0]),
                pool: Vec::new(),
                relevant: Vec::new(),
            }
        });
        if !group.pool.contains(&ti) {
            group.pool.push(ti);
        }
        if relevant && !group.relevant.contains(&ti) {
            group.relevant.push(ti);
        }
    }
    if order.is_empty() {
        return Err(Error::EmptyInput(format!("{}: no candidates", path.display())));
    }
    Ok(order.into_iter().map(|q| groups.remove(&q).expect("grouped")).collect())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let kb = KnowledgeBase::load(&args.kb)?;
    let bundle = load_bundle_for_kb(&args.model, &kb)?;
    let matrix = similarity(&bundle, args.finetuned)?;
    let ks = parse_numbers::<usize>(&args.ks, "k")?;
    if ks.iter().any(|&k| k == 0) {
        return Err(Error::InvalidConfig("k values must be positive".into()));
    }
    let groups = load_candidates(&args.candidates, &kb)?;

    let mut rankings = Vec::with_capacity(groups.len());
    for g in &groups {
        let ranked = match args.mode {
            EvalMode::Rerank => {
                let set = CandidateSet::provided(g.tokens.clone(), g.pool.clone(), &kb)?;
                rank(&set, &kb, &bundle.model, &bundle.vocab, matrix)?
            }
            EvalMode::Full => full_ranking(&g.tokens, &kb, &bundle.model, &bundle.vocab, matrix)?,
        };
        rankings.push(LabeledRanking::from_ranked(&g.text, &ranked, |ti| g.relevant.contains(&ti)));
    }

    let report = EvalReport::compute(&rankings, args.threshold, &ks)?;
    let method = args.method.clone().unwrap_or_else(|| {
        if args.finetuned { "embeddings+rescoring".into() } else { "embeddings".into() }
    });
    println!("{}", report.table(&method));
    println!();
    print!("{}", report.dump());
    if let Some(path) = &args.pr_out {
        std::fs::write(path, report.pr_curve_text()).map_err(|e| Error::io(path, e))?;
        eprintln!("wrote precision-recall sweep to {}", path.display());
    }
    Ok(())
}

fn cmd_neighbors(args: NeighborsArgs) -> Result<()> {
    let bundle = model_io::load(&args.model)?;
    let vocab = &bundle.vocab;
    let query = vocab
        .lookup(&args.word)
        .ok_or_else(|| Error::UnknownWord(args.word.clone()))?;
    let qrow = bundle.model.word_row(query);
    let qnorm = norm(qrow);

    let mut scored: Vec<(u32, f32)> = (0..vocab.len() as u32)
        .filter(|&w| w != query)
        .map(|w| {
            let row = bundle.model.word_row(w);
            let denom = qnorm * norm(row);
            let sim = if denom > 0.0 { dot(qrow, row) / denom } else { 0.0 };
            (w, sim)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (i, (w, sim)) in scored.iter().take(args.topn).enumerate() {
        println!("{}\t{:.6}\t{}", i + 1, sim, vocab.word(*w));
    }
    Ok(())
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f32]) -> f32 {
    dot(a, a).sqrt()
}

fn parse_numbers<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::InvalidConfig(format!("bad {what} value {s:?}")))
        })
        .collect()
}
