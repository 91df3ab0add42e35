//! Poem generation: sample k candidates after a descriptor prefix, filter,
//! rerank by unconditioned fluency, and report.

use std::cmp::Ordering;
use std::fs;
use std::io::{self, Write as _};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{check_candidate_with, Candidate, Check, CheckOptions, Verdict, VerdictRecord};
use crate::descriptor::{build_descriptor_from_scheme, BindError, RhymeScheme, StructureDescriptor};
use crate::lm::{sample, score_tokens, LanguageModel, LmError, SampleOptions, Scalar};
use crate::phonology::Language;
use crate::tokenizer::{TokenId, Vocab};

/// Lines are joined with this when a candidate is scored as plain text.
pub const LINE_DELIMITER: &str = "\n";
pub const DEFAULT_K: usize = 200;
pub const DEFAULT_POOL: usize = 5;
pub const LISTING_SIZE: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("model has {model} outputs but the vocabulary has {vocab} entries")]
    VocabMismatch { model: usize, vocab: usize },
    #[error("the sampling prefix is empty; give a descriptor or a first line")]
    NoPrefix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationOptions {
    pub k: usize,
    pub temperature: f64,
    pub top_k: usize,
    pub max_new: usize,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        GenerationOptions {
            k: DEFAULT_K,
            temperature: 1.0,
            top_k: 50,
            max_new: 256,
        }
    }
}

/// `<PREF> ... </PREF> first line <BRK>`, either part optional.
pub fn sampling_prefix(vocab: &Vocab, desc: Option<&StructureDescriptor>, first_line: Option<&str>) -> Vec<TokenId> {
    let mut out = Vec::new();
    if let Some(d) = desc {
        out.extend(vocab.encode(&d.to_control_string()));
    }
    if let Some(line) = first_line {
        out.extend(vocab.encode(line));
        if desc.is_some() {
            out.push(vocab.brk());
        }
    }
    out
}

/// Draws one independent seed per candidate.
pub fn derive_seeds<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<u64> {
    (0..k).map(|_| rng.gen()).collect()
}

fn check_vocab<T: Scalar, M: LanguageModel<T> + ?Sized>(model: &M, vocab: &Vocab) -> Result<(), PipelineError> {
    if model.vocab_size() != vocab.len() {
        return Err(PipelineError::VocabMismatch {
            model: model.vocab_size(),
            vocab: vocab.len(),
        });
    }
    Ok(())
}

fn sample_all<T, M>(
    model: &M,
    vocab: &Vocab,
    prefix: &[TokenId],
    opts: &GenerationOptions,
    rng: &mut (impl Rng + ?Sized),
) -> Result<Vec<Vec<TokenId>>, PipelineError>
where
    T: Scalar,
    M: LanguageModel<T> + Sync + ?Sized,
{
    check_vocab(model, vocab)?;
    if prefix.is_empty() {
        return Err(PipelineError::NoPrefix);
    }
    let sopts = SampleOptions {
        temperature: opts.temperature,
        top_k: opts.top_k,
        max_new: opts.max_new,
        stop: vec![vocab.pref()],
    };
    derive_seeds(rng, opts.k)
        .into_par_iter()
        .map(|seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            Ok(sample(model, prefix, &mut r, &sopts)?.tokens)
        })
        .collect()
}

/// Splits sampled tokens into lines at `<BRK>`. A trailing empty line (the
/// sample ended right after a break) is dropped.
pub fn tokens_to_lines(vocab: &Vocab, tokens: &[TokenId]) -> Vec<String> {
    let mut lines: Vec<String> = tokens
        .split(|&t| t == vocab.brk())
        .map(|seg| vocab.decode(seg).unwrap_or_default())
        .collect();
    if lines.len() > 1 && lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}

/// Samples `k` candidates after the descriptor (and first line, which
/// becomes line one of every candidate). Each sample stops at the next
/// `<PREF>` or after `max_new` tokens.
pub fn generate_candidates<T, M, R>(
    model: &M,
    vocab: &Vocab,
    desc: &StructureDescriptor,
    first_line: Option<&str>,
    opts: &GenerationOptions,
    language: Language,
    rng: &mut R,
) -> Result<Vec<Candidate>, PipelineError>
where
    T: Scalar,
    M: LanguageModel<T> + Sync + ?Sized,
    R: Rng + ?Sized,
{
    let prefix = sampling_prefix(vocab, Some(desc), first_line);
    let samples = sample_all(model, vocab, &prefix, opts, rng)?;
    Ok(samples
        .into_par_iter()
        .enumerate()
        .map(|(index, tokens)| {
            let mut lines: Vec<String> = first_line.map(|l| l.split_whitespace().collect::<Vec<_>>().join(" ")).into_iter().collect();
            lines.extend(tokens_to_lines(vocab, &tokens));
            Candidate::from_lines(index, lines, tokens, language)
        })
        .collect())
}

/// Samples `k` continuations of `first_line` from a model trained without
/// descriptors. Each text is the first line followed by the decoded
/// continuation with any control tokens removed.
pub fn generate_unsegmented<T, M, R>(
    model: &M,
    vocab: &Vocab,
    first_line: &str,
    opts: &GenerationOptions,
    rng: &mut R,
) -> Result<Vec<String>, PipelineError>
where
    T: Scalar,
    M: LanguageModel<T> + Sync + ?Sized,
    R: Rng + ?Sized,
{
    let prefix = sampling_prefix(vocab, None, Some(first_line));
    let samples = sample_all(model, vocab, &prefix, opts, rng)?;
    Ok(samples
        .into_par_iter()
        .map(|tokens| {
            let body: Vec<TokenId> = tokens.into_iter().filter(|&t| !vocab.is_control(t)).collect();
            let rest = vocab.decode(&body).unwrap_or_default();
            format!("{first_line} {rest}").split_whitespace().collect::<Vec<_>>().join(" ")
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub index: usize,
    /// Mean per-token log-likelihood of the plain text.
    pub score: f64,
}

/// Mean log-likelihood of the candidate's lines as plain text, with no
/// descriptor. Texts too short to score get negative infinity.
pub fn fluency<T, M>(model: &M, vocab: &Vocab, cand: &Candidate) -> f64
where
    T: Scalar,
    M: LanguageModel<T> + ?Sized,
{
    let tokens: Vec<TokenId> = vocab
        .encode(&cand.text(LINE_DELIMITER))
        .into_iter()
        .filter(|&t| !vocab.is_control(t))
        .collect();
    let limit = model.context_limit();
    let tokens = &tokens[..tokens.len().min(limit)];
    match score_tokens(model, tokens, |_, _| false) {
        Ok(ll) => ll.mean(),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Orders candidates by fluency, best first; ties go to the earlier index.
pub fn rerank<T, M>(model: &M, vocab: &Vocab, survivors: &[&Candidate]) -> Vec<Ranked>
where
    T: Scalar,
    M: LanguageModel<T> + Sync + ?Sized,
{
    let mut ranked: Vec<Ranked> = survivors
        .par_iter()
        .map(|c| Ranked {
            index: c.index,
            score: fluency(model, vocab, c),
        })
        .collect();
    ranked.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.index.cmp(&b.index),
        o => o,
    });
    ranked
}

/// Candidate counts by outcome.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterTally {
    pub total: usize,
    pub correct: usize,
    pub line_count: usize,
    pub syllables: usize,
    pub rhyme: usize,
    pub repeated_word: usize,
    pub bleu: usize,
}

impl FilterTally {
    pub fn record(&mut self, verdict: &Verdict) {
        self.total += 1;
        match verdict.rejection().map(|r| r.check()) {
            None => self.correct += 1,
            Some(Check::LineCount) => self.line_count += 1,
            Some(Check::Syllables) => self.syllables += 1,
            Some(Check::Rhyme) => self.rhyme += 1,
            Some(Check::RepeatedWord) => self.repeated_word += 1,
            Some(Check::Bleu) => self.bleu += 1,
        }
    }

    pub fn merge(&mut self, other: &FilterTally) {
        self.total += other.total;
        self.correct += other.correct;
        self.line_count += other.line_count;
        self.syllables += other.syllables;
        self.rhyme += other.rhyme;
        self.repeated_word += other.repeated_word;
        self.bleu += other.bleu;
    }

    pub fn rejected(&self) -> usize {
        self.line_count + self.syllables + self.rhyme + self.repeated_word + self.bleu
    }
}

/// Everything about one generation run. Timing is kept out of the
/// serialized form so that artifacts are reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRun {
    pub scheme: Option<String>,
    pub descriptor: String,
    pub first_line: Option<String>,
    pub k: usize,
    pub seed: u64,
    pub options: GenerationOptions,
    pub candidates: Vec<Candidate>,
    pub verdicts: Vec<Verdict>,
    pub ranked: Vec<Ranked>,
    /// Ranking of candidates passing every check but BLEU.
    pub ranked_without_bleu: Vec<Ranked>,
    pub tally: FilterTally,
    #[serde(skip)]
    pub elapsed_ms: u128,
}

impl GenerationRun {
    pub fn survivors(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().zip(&self.verdicts).filter(|(_, v)| v.is_pass()).map(|(c, _)| c)
    }

    pub fn best(&self) -> Option<&Candidate> {
        self.ranked.first().map(|r| &self.candidates[r.index])
    }

    pub fn records(&self) -> Vec<VerdictRecord> {
        self.candidates
            .iter()
            .zip(&self.verdicts)
            .map(|(c, v)| VerdictRecord::new(c, v.clone()))
            .collect()
    }
}

/// Samples, filters and reranks for a bound descriptor.
#[allow(clippy::too_many_arguments)]
pub fn run_descriptor<T, M>(
    model: &M,
    vocab: &Vocab,
    desc: &StructureDescriptor,
    scheme: Option<&RhymeScheme>,
    first_line: Option<&str>,
    opts: &GenerationOptions,
    language: Language,
    seed: u64,
) -> Result<GenerationRun, PipelineError>
where
    T: Scalar,
    M: LanguageModel<T> + Sync + ?Sized,
{
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let candidates = generate_candidates(model, vocab, desc, first_line, opts, language, &mut rng)?;
    let verdicts: Vec<Verdict> = candidates.par_iter().map(|c| check_candidate_with(c, desc, CheckOptions::default())).collect();
    let mut tally = FilterTally::default();
    verdicts.iter().for_each(|v| tally.record(v));

    let survivors: Vec<&Candidate> = candidates.iter().zip(&verdicts).filter(|(_, v)| v.is_pass()).map(|(c, _)| c).collect();
    let ranked = rerank(model, vocab, &survivors);
    let loose: Vec<&Candidate> = candidates
        .iter()
        .zip(&verdicts)
        .filter(|(c, v)| match v.rejection() {
            None => true,
            Some(r) => r.check() == Check::Bleu && check_candidate_with(c, desc, CheckOptions::WITHOUT_BLEU).is_pass(),
        })
        .map(|(c, _)| c)
        .collect();
    let ranked_without_bleu = rerank(model, vocab, &loose);

    Ok(GenerationRun {
        scheme: scheme.map(|s| s.to_string()),
        descriptor: desc.to_control_string(),
        first_line: first_line.map(str::to_string),
        k: opts.k,
        seed,
        options: opts.clone(),
        candidates,
        verdicts,
        ranked,
        ranked_without_bleu,
        tally,
        elapsed_ms: start.elapsed().as_millis(),
    })
}

/// Binds `scheme` against the `pool` classes, then runs. The binding uses
/// its own random stream of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn run_scheme<T, M>(
    model: &M,
    vocab: &Vocab,
    scheme: &RhymeScheme,
    pool: &[String],
    first_line: Option<&str>,
    opts: &GenerationOptions,
    language: Language,
    seed: u64,
    force: bool,
) -> Result<GenerationRun, PipelineError>
where
    T: Scalar,
    M: LanguageModel<T> + Sync + ?Sized,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let desc = build_descriptor_from_scheme(scheme, pool, &mut rng, first_line, language, force)?;
    run_descriptor(model, vocab, &desc, Some(scheme), first_line, opts, language, seed)
}

/// Top `n / 2` survivors of all checks followed by the top `n / 2` of the
/// run without BLEU, duplicates removed.
pub fn top_n_listing(run: &GenerationRun, n: usize) -> Vec<&Candidate> {
    let half = n / 2;
    let mut seen = Vec::new();
    for r in run.ranked.iter().take(half).chain(run.ranked_without_bleu.iter().take(half)) {
        if !seen.contains(&r.index) {
            seen.push(r.index);
        }
    }
    seen.into_iter().map(|i| &run.candidates[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum PoemOutcome {
    Poem { lines: Vec<String>, index: usize, score: f64 },
    NoValidPoem { tally: FilterTally },
}

impl PoemOutcome {
    pub fn of(run: &GenerationRun) -> Self {
        match run.ranked.first() {
            Some(r) => PoemOutcome::Poem {
                lines: run.candidates[r.index].lines.clone(),
                index: r.index,
                score: r.score,
            },
            None => PoemOutcome::NoValidPoem { tally: run.tally },
        }
    }
}

/// Bind, sample, filter and rerank; the best survivor or the tally.
#[allow(clippy::too_many_arguments)]
pub fn generate_poem<T, M>(
    model: &M,
    vocab: &Vocab,
    scheme: &RhymeScheme,
    pool: &[String],
    first_line: Option<&str>,
    opts: &GenerationOptions,
    language: Language,
    seed: u64,
) -> Result<PoemOutcome, PipelineError>
where
    T: Scalar,
    M: LanguageModel<T> + Sync + ?Sized,
{
    let run = run_scheme(model, vocab, scheme, pool, first_line, opts, language, seed, false)?;
    Ok(PoemOutcome::of(&run))
}

#[derive(Serialize)]
struct Summary<'a> {
    scheme: &'a Option<String>,
    descriptor: &'a str,
    first_line: &'a Option<String>,
    k: usize,
    seed: u64,
    options: &'a GenerationOptions,
    tally: FilterTally,
    ranked: &'a [Ranked],
    ranked_without_bleu: &'a [Ranked],
    outcome: PoemOutcome,
}

/// Writes `candidates.jsonl` (one verdict record per candidate) and
/// `summary.json` into `dir`.
pub fn write_artifacts(run: &GenerationRun, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut jsonl = Vec::new();
    for rec in run.records() {
        serde_json::to_writer(&mut jsonl, &rec)?;
        jsonl.push(b'\n');
    }
    fs::write(dir.join("candidates.jsonl"), jsonl)?;
    let summary = Summary {
        scheme: &run.scheme,
        descriptor: &run.descriptor,
        first_line: &run.first_line,
        k: run.k,
        seed: run.seed,
        options: &run.options,
        tally: run.tally,
        ranked: &run.ranked,
        ranked_without_bleu: &run.ranked_without_bleu,
        outcome: PoemOutcome::of(run),
    };
    let mut f = fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    f.write_all(b"\n")
}

/// Joins lines for display.
pub fn render_lines(lines: &[String]) -> String {
    lines.join(LINE_DELIMITER)
}
