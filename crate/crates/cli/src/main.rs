use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use poelm::constraints::{check_candidate_with, Candidate, CheckOptions, VerdictRecord};
use poelm::descriptor::{
    augment_corpus, parse_cls_token, strip_control_tokens, ClassFrequencies, LineSpec, Rhyme, RhymeScheme, StructureDescriptor,
    MASK_PROB,
};
use poelm::evalkit::{
    filtering_rate_report, parse_poem_file, perplexity_report, rhyme_proximity_curve, write_poem_file, EvalBlock, Poem, Prompt,
    CURVE_MAX_TOKENS, CURVE_MIN_TOKENS,
};
use poelm::lm::{checkpoint_scalar, train_lm, AnyModel, Checkpoint, LmConfig, Scalar};
use poelm::phonology::{rhyme_class, Language};
use poelm::pipeline::{render_lines, run_scheme, top_n_listing, write_artifacts, GenerationOptions, PoemOutcome, DEFAULT_K, DEFAULT_POOL, LISTING_SIZE};
use poelm::segmentation::{load_documents, CorpusLayout};
use poelm::synth;
use poelm::tokenizer::{train_vocab, TokenId, Vocab, DEFAULT_CONTROL_BUDGET, DEFAULT_VOCAB_SIZE};

/// Structure-conditioned formal verse generation.
#[derive(Debug, Parser)]
#[command(name = "poelm", version, about)]
struct Cli {
    /// Worker threads (default: all logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment a corpus and write the descriptor-augmented training stream.
    Augment(AugmentArgs),
    /// Train the subword vocabulary with its control-token block.
    TrainVocab(TrainVocabArgs),
    /// Train the structure-aware model on an augmented stream.
    TrainLm(TrainArgs),
    /// Train the baseline model on the same stream with control tokens removed.
    TrainBaseline(TrainArgs),
    /// Sample, filter and rerank a poem for a rhyme scheme.
    Generate(GenerateArgs),
    /// Check a poem against a scheme or descriptor.
    Validate(ValidateArgs),
    /// Automatic evaluations.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Write a synthetic corpus, evaluation poems and prompts.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Layout {
    /// One document per file.
    Files,
    /// Documents separated by blank lines.
    BlankLines,
}

impl From<Layout> for CorpusLayout {
    fn from(l: Layout) -> Self {
        match l {
            Layout::Files => CorpusLayout::FilePerDocument,
            Layout::BlankLines => CorpusLayout::BlankLineSeparated,
        }
    }
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Corpus directory (or a single file).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "es")]
    lang: Language,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Augmented stream, one block per line. Also written: `<out>.plain`,
    /// `<out>.classes.tsv` and `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
    /// Probability of replacing a rhyme class with <CLS_UNK>.
    #[arg(long, default_value_t = MASK_PROB)]
    mask_prob: f64,
    #[arg(long, value_enum, default_value = "files")]
    layout: Layout,
}

#[derive(Debug, Args)]
struct TrainVocabArgs {
    /// Augmented or plain training stream.
    #[arg(long = "in")]
    input: PathBuf,
    /// Total vocabulary size, control tokens included.
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    size: usize,
    /// Slots reserved for control tokens.
    #[arg(long, default_value_t = DEFAULT_CONTROL_BUDGET)]
    control: usize,
    /// Rhyme-class frequency table; by default classes are counted from the
    /// <CLS_*> tokens of the input.
    #[arg(long)]
    classes: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScalarKind {
    F32,
    F64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Augmented training stream.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// TOML model configuration (`backend = "transformer"` or `"ngram"`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured number of steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum, default_value = "f32")]
    scalar: ScalarKind,
}

#[derive(Debug, Args)]
struct SamplingArgs {
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 50)]
    top_k: usize,
    /// Maximum sampled tokens per candidate.
    #[arg(long, default_value_t = 256)]
    max_new: usize,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Rhyme scheme, e.g. "11A 11B 11B 11A"; `-` marks an unrhymed line.
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    first_line: Option<String>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "es")]
    lang: Language,
    /// Number of most frequent rhyme classes letters are drawn from.
    #[arg(long, default_value_t = DEFAULT_POOL)]
    pool: usize,
    /// Downgrade first-line mismatches to warnings.
    #[arg(long)]
    force: bool,
    /// Print the top candidates and read one numeric choice from stdin.
    #[arg(long)]
    interactive: bool,
    /// Directory for candidates.jsonl and summary.json.
    #[arg(long, default_value = "poelm-run")]
    out_dir: PathBuf,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Rhyme scheme; each letter is bound to the class of its first line.
    #[arg(long, conflicts_with = "descriptor", required_unless_present = "descriptor")]
    scheme: Option<String>,
    /// Explicit descriptor, e.g. "<PREF> <LEN_8> <CLS_ar> </PREF>".
    #[arg(long)]
    descriptor: Option<String>,
    #[arg(long, default_value = "es")]
    lang: Language,
    /// Only check line count, syllables and rhyme.
    #[arg(long)]
    structural: bool,
    /// Poem, one line per line; blank lines are ignored.
    file: PathBuf,
}

#[derive(Debug, Args)]
struct ModelPair {
    /// Structure-aware checkpoint.
    #[arg(long)]
    poelm: PathBuf,
    /// Baseline checkpoint.
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value = "es")]
    lang: Language,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for CSV and summary output.
    #[arg(long, default_value = "poelm-eval")]
    out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Percentage of candidates rejected per reason, for both models.
    Filtering {
        #[command(flatten)]
        models: ModelPair,
        /// Prompt file: `scheme<TAB>first line` per line.
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_POOL)]
        pool: usize,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Perplexity of poems and prose under both models.
    Perplexity {
        #[command(flatten)]
        models: ModelPair,
        /// Poem file (`# scheme:` records).
        #[arg(long)]
        poems: PathBuf,
        /// Held-out prose corpus.
        #[arg(long)]
        prose: PathBuf,
        #[arg(long, value_enum, default_value = "files")]
        layout: Layout,
    },
    /// Log-probability advantage against position in the line.
    Curve {
        #[command(flatten)]
        models: ModelPair,
        /// Held-out corpus.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "files")]
        layout: Layout,
        #[arg(long, default_value_t = CURVE_MIN_TOKENS)]
        min_tokens: usize,
        #[arg(long, default_value_t = CURVE_MAX_TOKENS)]
        max_tokens: usize,
    },
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory: corpus/, heldout/, poems.txt, prompts.tsv.
    #[arg(long)]
    out: PathBuf,
    /// Minimum number of words in the training corpus.
    #[arg(long, default_value_t = 1_000_000)]
    words: usize,
    /// Minimum number of words in the held-out corpus.
    #[arg(long, default_value_t = 100_000)]
    heldout_words: usize,
    /// Schemes for evaluation poems and prompts (repeatable).
    #[arg(long = "scheme", default_values_t = default_schemes())]
    schemes: Vec<String>,
    /// Poems per scheme.
    #[arg(long, default_value_t = 50)]
    poems: usize,
    /// Number of generation prompts.
    #[arg(long, default_value_t = 10)]
    prompts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn default_schemes() -> Vec<String> {
    synth::DEFAULT_SCHEMES.iter().map(|s| s.to_string()).collect()
}

/// A failure that maps to exit status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Result of a command that can fail on domain grounds.
enum Outcome {
    Ok,
    Failed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .parse_default_env()
        .init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Augment(a) => augment(a),
        Command::TrainVocab(a) => vocab(a),
        Command::TrainLm(a) => train(a, false),
        Command::TrainBaseline(a) => train(a, true),
        Command::Generate(a) => match scalar_of(&a.model)? {
            ScalarKind::F32 => generate::<f32>(a),
            ScalarKind::F64 => generate::<f64>(a),
        },
        Command::Validate(a) => validate(a),
        Command::Eval(e) => {
            let models = match &e {
                EvalCommand::Filtering { models, .. }
                | EvalCommand::Perplexity { models, .. }
                | EvalCommand::Curve { models, .. } => models,
            };
            match scalar_of(&models.poelm)? {
                ScalarKind::F32 => eval::<f32>(e),
                ScalarKind::F64 => eval::<f64>(e),
            }
        }
        Command::Synth(a) => synthesize(a),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, content: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn augment(a: AugmentArgs) -> Result<Outcome> {
    if !(0.0..=1.0).contains(&a.mask_prob) {
        return Err(usage(format!("--mask-prob must be in [0, 1], got {}", a.mask_prob)));
    }
    let docs = load_documents(&a.corpus, a.layout.into()).with_context(|| format!("loading {}", a.corpus.display()))?;
    let corpus = augment_corpus(&docs, a.lang, a.seed, a.mask_prob);
    write(&a.out, corpus.augmented_text())?;
    write(&with_suffix(&a.out, ".plain"), corpus.plain_text())?;
    write(&with_suffix(&a.out, ".classes.tsv"), corpus.class_freqs.to_tsv())?;
    let meta = serde_json::json!({
        "seed": a.seed,
        "lang": a.lang.to_string(),
        "mask_prob": a.mask_prob,
        "documents": docs.len(),
        "blocks": corpus.blocks.len(),
    });
    write(&with_suffix(&a.out, ".meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    println!(
        "seed {}: {} documents, {} blocks -> {}",
        a.seed,
        docs.len(),
        corpus.blocks.len(),
        a.out.display()
    );
    Ok(Outcome::Ok)
}

/// Counts the `<CLS_*>` tokens of an augmented stream.
fn classes_in_stream(text: &str) -> ClassFrequencies {
    let mut f = ClassFrequencies::default();
    for tok in text.split_whitespace() {
        if let Some(Rhyme::Class(k)) = parse_cls_token(tok) {
            f.add(&k, 1);
        }
    }
    f
}

fn vocab(a: TrainVocabArgs) -> Result<Outcome> {
    let text = read(&a.input)?;
    let freqs = match &a.classes {
        Some(p) => ClassFrequencies::from_tsv(&read(p)?).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?,
        None => classes_in_stream(&text),
    };
    let keys: Vec<String> = freqs.ranked().into_iter().map(|(k, _)| k).collect();
    let plain: String = text.lines().map(|l| strip_control_tokens(l) + "\n").collect();
    let v = train_vocab(&plain, a.size, a.control, &keys).map_err(|e| usage(e.to_string()))?;
    write(&a.out, v.to_tsv())?;
    println!("{} entries ({} control) -> {}", v.len(), v.control_range().len(), a.out.display());
    Ok(Outcome::Ok)
}

fn load_vocab(path: &Path) -> Result<Vocab> {
    Vocab::from_tsv(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn train(a: TrainArgs, baseline: bool) -> Result<Outcome> {
    let v = load_vocab(&a.vocab)?;
    let mut cfg: LmConfig = match &a.config {
        Some(p) => toml::from_str(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => LmConfig::default(),
    };
    if let LmConfig::Transformer(t) = &mut cfg {
        if let Some(s) = a.seed {
            t.seed = s;
        }
        if let Some(s) = a.steps {
            t.steps = s;
        }
    }
    let text = read(&a.input)?;
    let segments: Vec<Vec<TokenId>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| if baseline { v.encode(&strip_control_tokens(l)) } else { v.encode(l) })
        .collect();
    match a.scalar {
        ScalarKind::F32 => train_with::<f32>(&segments, &v, &cfg, &a.out),
        ScalarKind::F64 => train_with::<f64>(&segments, &v, &cfg, &a.out),
    }
}

fn train_with<T: Scalar>(segments: &[Vec<TokenId>], v: &Vocab, cfg: &LmConfig, out: &Path) -> Result<Outcome> {
    let trained = train_lm::<T>(segments, v.len(), cfg)?;
    let ckpt = Checkpoint {
        model: trained.model,
        vocab_hash: v.content_hash(),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ckpt.save(out)?;
    let losses: String = trained.losses.iter().enumerate().map(|(i, l)| format!("{i},{l:.6}\n")).collect();
    write(&with_suffix(out, ".loss.csv"), format!("step,loss\n{losses}"))?;
    match trained.losses.last() {
        Some(l) => println!("final loss {l:.4} -> {}", out.display()),
        None => println!("-> {}", out.display()),
    }
    Ok(Outcome::Ok)
}

fn scalar_of(path: &Path) -> Result<ScalarKind> {
    match checkpoint_scalar(&read(path)?)?.as_str() {
        "f32" => Ok(ScalarKind::F32),
        "f64" => Ok(ScalarKind::F64),
        other => bail!("{}: unknown scalar type {other}", path.display()),
    }
}

fn load_model<T: Scalar>(path: &Path, v: &Vocab) -> Result<AnyModel<T>> {
    let ckpt = Checkpoint::<T>::from_json(&read(path)?).with_context(|| format!("loading {}", path.display()))?;
    if ckpt.vocab_hash != v.content_hash() {
        bail!("{} was trained with a different vocabulary", path.display());
    }
    Ok(ckpt.model)
}

fn parse_scheme(s: &str) -> Result<RhymeScheme> {
    s.parse().map_err(|e| usage(format!("invalid scheme `{s}`: {e}")))
}

fn pool_of(v: &Vocab, n: usize) -> Vec<String> {
    v.class_keys().into_iter().take(n).collect()
}

fn generation_options(k: usize, s: &SamplingArgs) -> GenerationOptions {
    GenerationOptions {
        k,
        temperature: s.temperature,
        top_k: s.top_k,
        max_new: s.max_new,
    }
}

fn generate<T: Scalar>(a: GenerateArgs) -> Result<Outcome> {
    let scheme = parse_scheme(&a.scheme)?;
    let v = load_vocab(&a.vocab)?;
    let model = load_model::<T>(&a.model, &v)?;
    let opts = generation_options(a.k, &a.sampling);
    let run = run_scheme(&model, &v, &scheme, &pool_of(&v, a.pool), a.first_line.as_deref(), &opts, a.lang, a.seed, a.force)?;
    write_artifacts(&run, &a.out_dir).with_context(|| format!("writing {}", a.out_dir.display()))?;
    eprintln!(
        "seed {}: {} of {} candidates passed ({}); artifacts in {}",
        a.seed,
        run.tally.correct,
        run.tally.total,
        run.descriptor,
        a.out_dir.display()
    );
    if a.interactive {
        let listing = top_n_listing(&run, LISTING_SIZE);
        if listing.is_empty() {
            println!("no valid poem");
            return Ok(Outcome::Failed);
        }
        for (i, c) in listing.iter().enumerate() {
            println!("[{}]", i + 1);
            println!("{}\n", render_lines(&c.lines));
        }
        print!("choose 1-{}: ", listing.len());
        io::stdout().flush()?;
        let mut line = String::new();
        io::stdin().lock().read_line(&mut line)?;
        let choice: usize = line
            .trim()
            .parse()
            .ok()
            .filter(|n| (1..=listing.len()).contains(n))
            .ok_or_else(|| usage(format!("expected a number from 1 to {}, got `{}`", listing.len(), line.trim())))?;
        println!("{}", render_lines(&listing[choice - 1].lines));
        return Ok(Outcome::Ok);
    }
    match PoemOutcome::of(&run) {
        PoemOutcome::Poem { lines, .. } => {
            println!("{}", render_lines(&lines));
            Ok(Outcome::Ok)
        }
        PoemOutcome::NoValidPoem { tally } => {
            println!("no valid poem");
            eprintln!("{}", serde_json::to_string(&tally)?);
            Ok(Outcome::Failed)
        }
    }
}

/// Binds every scheme letter to the rhyme class of the first line using it.
fn descriptor_from_poem(scheme: &RhymeScheme, lines: &[String], lang: Language) -> StructureDescriptor {
    let mut bound: BTreeMap<char, Rhyme> = BTreeMap::new();
    let specs = scheme
        .lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let rhyme = match l.letter {
                None => Rhyme::Unk,
                Some(c) => bound
                    .entry(c)
                    .or_insert_with(|| {
                        let key = lines.get(i).and_then(|t| rhyme_class(t, lang).key().map(str::to_string));
                        key.map_or(Rhyme::Unk, Rhyme::Class)
                    })
                    .clone(),
            };
            LineSpec::new(l.syllables, rhyme)
        })
        .collect();
    StructureDescriptor::new(specs)
}

fn validate(a: ValidateArgs) -> Result<Outcome> {
    let lines: Vec<String> = read(&a.file)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let desc = match (&a.scheme, &a.descriptor) {
        (Some(s), _) => descriptor_from_poem(&parse_scheme(s)?, &lines, a.lang),
        (None, Some(d)) => d.parse().map_err(|e| usage(format!("invalid descriptor: {e}")))?,
        (None, None) => return Err(usage("give --scheme or --descriptor")),
    };
    let cand = Candidate::from_lines(0, lines, Vec::new(), a.lang);
    let opts = if a.structural { CheckOptions::STRUCTURAL } else { CheckOptions::default() };
    let verdict = check_candidate_with(&cand, &desc, opts);
    let pass = verdict.is_pass();
    println!("{}", serde_json::to_string(&VerdictRecord::new(&cand, verdict.clone()))?);
    match verdict.rejection() {
        None => eprintln!("pass: {}", desc.to_control_string()),
        Some(r) => eprintln!("reject: {r}"),
    }
    Ok(if pass { Outcome::Ok } else { Outcome::Failed })
}

fn parse_prompts(text: &str) -> Result<Vec<Prompt>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            let (scheme, first) = l
                .split_once('\t')
                .ok_or_else(|| usage(format!("prompt line {}: expected `scheme<TAB>first line`", i + 1)))?;
            parse_scheme(scheme)?;
            Ok(Prompt {
                first_line: first.trim().to_string(),
                scheme: scheme.trim().to_string(),
            })
        })
        .collect()
}

fn heldout_blocks(path: &Path, layout: Layout, lang: Language, seed: u64) -> Result<Vec<EvalBlock>> {
    let docs = load_documents(path, layout.into()).with_context(|| format!("loading {}", path.display()))?;
    Ok(augment_corpus(&docs, lang, seed, 0.0).blocks.iter().map(EvalBlock::from_augmented).collect())
}

fn eval<T: Scalar>(e: EvalCommand) -> Result<Outcome> {
    let models = match &e {
        EvalCommand::Filtering { models, .. } | EvalCommand::Perplexity { models, .. } | EvalCommand::Curve { models, .. } => {
            models
        }
    };
    let v = load_vocab(&models.vocab)?;
    let poelm = load_model::<T>(&models.poelm, &v)?;
    let base = load_model::<T>(&models.baseline, &v)?;
    let dir = &models.out_dir;
    let (name, csv, summary) = match &e {
        EvalCommand::Filtering {
            prompts, k, pool, sampling, ..
        } => {
            let prompts = parse_prompts(&read(prompts)?)?;
            let opts = generation_options(*k, sampling);
            let r = filtering_rate_report(&poelm, &base, &v, &prompts, &pool_of(&v, *pool), &opts, models.lang, models.seed)?;
            write(&dir.join("filtering.json"), serde_json::to_string_pretty(&r)? + "\n")?;
            ("filtering", r.to_csv(), r.summary())
        }
        EvalCommand::Perplexity { poems, prose, layout, .. } => {
            let poems = parse_poem_file(&read(poems)?)?;
            let poetic: Vec<EvalBlock> = poems.iter().map(|p| EvalBlock::from_poem(p, models.lang)).collect();
            let prose = heldout_blocks(prose, *layout, models.lang, models.seed)?;
            let r = perplexity_report(&poelm, &base, &v, &poetic, &prose)?;
            ("perplexity", format!("# seed={}\n{}", models.seed, r.to_csv()), r.summary())
        }
        EvalCommand::Curve {
            corpus,
            layout,
            min_tokens,
            max_tokens,
            ..
        } => {
            let blocks = heldout_blocks(corpus, *layout, models.lang, models.seed)?;
            let c = rhyme_proximity_curve(&poelm, &base, &v, &blocks, *min_tokens, *max_tokens)?;
            let s = format!(
                "{} lines; mean advantage x<=0.2: {:.4}, x>=0.8: {:.4}\n",
                c.lines,
                c.mean_between(0.0, 0.2),
                c.mean_between(0.8, 1.0)
            );
            ("curve", format!("# seed={}\n{}", models.seed, c.to_csv()), s)
        }
    };
    write(&dir.join(format!("{name}.csv")), csv)?;
    write(&dir.join(format!("{name}.txt")), &summary)?;
    print!("{summary}");
    Ok(Outcome::Ok)
}

fn synthesize(a: SynthArgs) -> Result<Outcome> {
    let schemes: Vec<RhymeScheme> = a.schemes.iter().map(|s| parse_scheme(s)).collect::<Result<_>>()?;
    let write_docs = |dir: &Path, docs: &[poelm::segmentation::Document]| -> Result<()> {
        fs::create_dir_all(dir)?;
        for d in docs {
            write(&dir.join(format!("{:06}.txt", d.id)), format!("{}\n", d.text))?;
        }
        Ok(())
    };
    let train = synth::prose_documents(a.seed, a.words, 0);
    write_docs(&a.out.join("corpus"), &train)?;
    let held = synth::prose_documents(a.seed.wrapping_add(1), a.heldout_words, train.len() as u64);
    write_docs(&a.out.join("heldout"), &held)?;
    let mut poems: Vec<Poem> = Vec::new();
    for (i, s) in schemes.iter().enumerate() {
        poems.extend(synth::poems(a.seed.wrapping_add(100 + i as u64), s, a.poems));
    }
    write(&a.out.join("poems.txt"), write_poem_file(&poems))?;
    let classes = augment_corpus(&train, Language::Spanish, a.seed, 0.0).class_freqs.top(DEFAULT_POOL);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(2));
    let prompts = synth::prompts(&mut rng, &schemes, &classes, a.prompts);
    let mut tsv = format!("# seed={}\n", a.seed);
    for p in &prompts {
        tsv.push_str(&format!("{}\t{}\n", p.scheme, p.first_line));
    }
    write(&a.out.join("prompts.tsv"), tsv)?;
    println!(
        "seed {}: {} training and {} held-out documents, {} poems, {} prompts -> {}",
        a.seed,
        train.len(),
        held.len(),
        poems.len(),
        prompts.len(),
        a.out.display()
    );
    Ok(Outcome::Ok)
}
