//! Automatic evaluations: filtering rates per rejection reason, perplexity
//! with and without structure, and the log-probability advantage curve
//! against position within a line.
//!
//! # Poem files
//!
//! Evaluation poems are plain UTF-8 text. Each record starts with a
//! `# scheme: <scheme>` line, followed by one poem line per text line.
//! Records are separated by blank lines; other lines starting with `#` are
//! comments.
//!
//! ```text
//! # scheme: 8A 8B 8B 8A
//! bajo la luna callada
//! el viejo quiere cantar
//! ...
//! ```

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::check_unsegmented;
use crate::descriptor::{extract_descriptor, AugmentedBlock, RhymeScheme, SchemeError, StructureDescriptor};
use crate::lm::{score_tokens, LanguageModel, LmError, Scalar};
use crate::phonology::Language;
use crate::pipeline::{generate_unsegmented, run_scheme, FilterTally, GenerationOptions, PipelineError};
use crate::segmentation::{Block, Phrase};
use crate::tokenizer::{TokenId, Vocab};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("no line has between {min} and {max} tokens")]
    EmptyCurve { min: usize, max: usize },
    #[error("nothing to score in the {0} set")]
    EmptySet(&'static str),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error("poem file line {line}: {message}")]
    PoemFile { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Poem {
    pub scheme: RhymeScheme,
    pub lines: Vec<String>,
}

impl Poem {
    pub fn descriptor(&self, language: Language) -> StructureDescriptor {
        extract_descriptor(&lines_block(&self.lines), language)
    }
}

fn lines_block(lines: &[String]) -> Block {
    Block {
        phrases: lines.iter().map(|l| Phrase::new(l.as_str())).collect(),
    }
}

pub fn parse_poem_file(text: &str) -> Result<Vec<Poem>, EvalError> {
    let mut poems = Vec::new();
    let mut current: Option<Poem> = None;
    let finish = |p: Option<Poem>, poems: &mut Vec<Poem>, line: usize| -> Result<(), EvalError> {
        if let Some(p) = p {
            if p.lines.is_empty() {
                return Err(EvalError::PoemFile {
                    line,
                    message: "record has a scheme but no lines".into(),
                });
            }
            poems.push(p);
        }
        Ok(())
    };
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            finish(current.take(), &mut poems, n)?;
        } else if let Some(rest) = line.strip_prefix('#') {
            if let Some(s) = rest.trim().strip_prefix("scheme:") {
                finish(current.take(), &mut poems, n)?;
                let scheme = s.trim().parse().map_err(|e: SchemeError| EvalError::PoemFile {
                    line: n,
                    message: e.to_string(),
                })?;
                current = Some(Poem {
                    scheme,
                    lines: Vec::new(),
                });
            }
        } else {
            match current.as_mut() {
                Some(p) => p.lines.push(line.to_string()),
                None => {
                    return Err(EvalError::PoemFile {
                        line: n,
                        message: "poem line before any `# scheme:` header".into(),
                    })
                }
            }
        }
    }
    finish(current, &mut poems, text.lines().count())?;
    Ok(poems)
}

pub fn write_poem_file(poems: &[Poem]) -> String {
    let mut out = String::new();
    for (i, p) in poems.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "# scheme: {}", p.scheme);
        for l in &p.lines {
            out.push_str(l);
            out.push('\n');
        }
    }
    out
}

/// A generation prompt: a first line and the scheme it opens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub first_line: String,
    pub scheme: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptResult {
    pub prompt: Prompt,
    pub descriptor: String,
    pub poelm: FilterTally,
    pub baseline: FilterTally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteringReport {
    pub seed: u64,
    pub k: usize,
    pub poelm: FilterTally,
    pub baseline: FilterTally,
    pub prompts: Vec<PromptResult>,
}

/// Percentage of `count` in `total`.
pub fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 * 100.0 / total as f64
    }
}

impl FilteringReport {
    /// One row per outcome, percentages per model. The baseline is never
    /// tested for repeated words or BLEU, so those cells are `-`.
    pub fn to_csv(&self) -> String {
        let (p, b) = (&self.poelm, &self.baseline);
        let rows: [(&str, usize, Option<usize>); 6] = [
            ("correct", p.correct, Some(b.correct)),
            ("line_count", p.line_count, Some(b.line_count)),
            ("syllables", p.syllables, Some(b.syllables)),
            ("rhyme", p.rhyme, Some(b.rhyme)),
            ("repeated_word", p.repeated_word, None),
            ("bleu", p.bleu, None),
        ];
        let mut out = format!("# seed={} k={} prompts={}\n", self.seed, self.k, self.prompts.len());
        out.push_str("row,poelm_count,poelm_percent,baseline_count,baseline_percent\n");
        for (name, pc, bc) in rows {
            let _ = match bc {
                Some(bc) => writeln!(
                    out,
                    "{name},{pc},{:.2},{bc},{:.2}",
                    percent(pc, p.total),
                    percent(bc, b.total)
                ),
                None => writeln!(out, "{name},{pc},{:.2},-,-", percent(pc, p.total)),
            };
        }
        out
    }

    pub fn summary(&self) -> String {
        let (p, b) = (&self.poelm, &self.baseline);
        let mut s = format!(
            "filtering over {} prompts, k={} (seed {})\n{:<14}{:>10}{:>10}\n",
            self.prompts.len(),
            self.k,
            self.seed,
            "",
            "PoeLM",
            "LM"
        );
        let rows = [
            ("Correct", p.correct, Some(b.correct)),
            ("#Verse", p.line_count, Some(b.line_count)),
            ("#Slb", p.syllables, Some(b.syllables)),
            ("Rhyme", p.rhyme, Some(b.rhyme)),
            ("Rep-word", p.repeated_word, None),
            ("BLEU", p.bleu, None),
        ];
        for (name, pc, bc) in rows {
            let bcell = bc.map_or("-".to_string(), |c| format!("{:.1}", percent(c, b.total)));
            let _ = writeln!(s, "{name:<14}{:>10.1}{bcell:>10}", percent(pc, p.total));
        }
        s
    }
}

/// Runs every prompt through both models with `k` samples each. The
/// descriptor bound for PoeLM also scores the baseline's unsegmented text.
#[allow(clippy::too_many_arguments)]
pub fn filtering_rate_report<T, P, B>(
    poelm: &P,
    baseline: &B,
    vocab: &Vocab,
    prompts: &[Prompt],
    pool: &[String],
    opts: &GenerationOptions,
    language: Language,
    seed: u64,
) -> Result<FilteringReport, EvalError>
where
    T: Scalar,
    P: LanguageModel<T> + Sync + ?Sized,
    B: LanguageModel<T> + Sync + ?Sized,
{
    let mut report = FilteringReport {
        seed,
        k: opts.k,
        poelm: FilterTally::default(),
        baseline: FilterTally::default(),
        prompts: Vec::new(),
    };
    for (i, prompt) in prompts.iter().enumerate() {
        let scheme: RhymeScheme = prompt.scheme.parse()?;
        let prompt_seed = seed.wrapping_add(i as u64);
        let run = run_scheme(poelm, vocab, &scheme, pool, Some(&prompt.first_line), opts, language, prompt_seed, false)?;
        let desc: StructureDescriptor = run.descriptor.parse().expect("run descriptors parse");
        let mut rng = ChaCha8Rng::seed_from_u64(prompt_seed);
        rng.set_stream(3);
        let texts = generate_unsegmented(baseline, vocab, &prompt.first_line, opts, &mut rng)?;
        let mut base = FilterTally::default();
        for t in &texts {
            base.record(&check_unsegmented(t, &desc, language).1);
        }
        report.poelm.merge(&run.tally);
        report.baseline.merge(&base);
        report.prompts.push(PromptResult {
            prompt: prompt.clone(),
            descriptor: run.descriptor.clone(),
            poelm: run.tally,
            baseline: base,
        });
    }
    Ok(report)
}

/// One evaluation unit: a block's descriptor and its lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalBlock {
    pub descriptor: StructureDescriptor,
    pub lines: Vec<String>,
}

impl EvalBlock {
    pub fn from_poem(p: &Poem, language: Language) -> Self {
        EvalBlock {
            descriptor: p.descriptor(language),
            lines: p.lines.clone(),
        }
    }

    pub fn from_augmented(b: &AugmentedBlock) -> Self {
        EvalBlock {
            descriptor: b.descriptor.clone(),
            lines: b.phrases.clone(),
        }
    }
}

/// Token views of one block that share the same text tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockTokens {
    /// Text tokens only, lines run together.
    pub plain: Vec<TokenId>,
    /// Descriptor, then lines separated by `<BRK>`.
    pub structured: Vec<TokenId>,
    /// Lines separated by `<BRK>`, no descriptor.
    pub unstructured: Vec<TokenId>,
    /// Number of text tokens per line.
    pub line_lengths: Vec<usize>,
}

pub fn block_tokens(vocab: &Vocab, block: &EvalBlock) -> BlockTokens {
    let lines: Vec<Vec<TokenId>> = block
        .lines
        .iter()
        .map(|l| vocab.encode(l).into_iter().filter(|&t| !vocab.is_control(t)).collect())
        .collect();
    let mut unstructured = Vec::new();
    for (i, l) in lines.iter().enumerate() {
        if i > 0 {
            unstructured.push(vocab.brk());
        }
        unstructured.extend_from_slice(l);
    }
    let mut structured = vocab.encode(&block.descriptor.to_control_string());
    structured.extend_from_slice(&unstructured);
    BlockTokens {
        plain: lines.concat(),
        structured,
        unstructured,
        line_lengths: lines.iter().map(Vec::len).collect(),
    }
}

/// Log-probabilities of the text tokens of a sequence, in order, skipping
/// control tokens. The first text token is skipped as well so every view
/// scores the same tokens.
fn text_logprobs<T, M>(model: &M, vocab: &Vocab, tokens: &[TokenId]) -> Result<Vec<f64>, LmError>
where
    T: Scalar,
    M: LanguageModel<T> + ?Sized,
{
    let first_text = tokens.iter().position(|&t| !vocab.is_control(t));
    let ll = score_tokens(model, tokens, |i, id| vocab.is_control(id) || Some(i) == first_text)?;
    Ok(ll.per_token.iter().filter(|s| !s.excluded).map(|s| s.logprob).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerplexityCell {
    pub total_logprob: f64,
    pub tokens: usize,
}

impl PerplexityCell {
    pub fn perplexity(&self) -> f64 {
        (-self.total_logprob / self.tokens as f64).exp()
    }

    fn add(&mut self, lps: &[f64]) {
        self.total_logprob += lps.iter().sum::<f64>();
        self.tokens += lps.len();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerplexityRow {
    pub baseline: PerplexityCell,
    pub with_structure: PerplexityCell,
    pub without_structure: PerplexityCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub poetic: PerplexityRow,
    pub prose: PerplexityRow,
}

fn perplexity_row<T, P, B>(poelm: &P, baseline: &B, vocab: &Vocab, blocks: &[EvalBlock]) -> Result<PerplexityRow, LmError>
where
    T: Scalar,
    P: LanguageModel<T> + Sync + ?Sized,
    B: LanguageModel<T> + Sync + ?Sized,
{
    let per_block: Vec<Option<[Vec<f64>; 3]>> = blocks
        .par_iter()
        .map(|b| {
            let toks = block_tokens(vocab, b);
            if toks.plain.len() < 2 {
                return Ok(None);
            }
            let base = text_logprobs(baseline, vocab, &toks.plain)?;
            let with = text_logprobs(poelm, vocab, &toks.structured)?;
            let without = text_logprobs(poelm, vocab, &toks.unstructured)?;
            debug_assert!(base.len() == with.len() && with.len() == without.len());
            Ok(Some([base, with, without]))
        })
        .collect::<Result<_, LmError>>()?;
    let mut row = PerplexityRow::default();
    for [b, w, wo] in per_block.into_iter().flatten() {
        row.baseline.add(&b);
        row.with_structure.add(&w);
        row.without_structure.add(&wo);
    }
    Ok(row)
}

/// Token-weighted perplexity of the same text tokens under the baseline,
/// PoeLM with its descriptor in context, and PoeLM without it. `<BRK>` and
/// descriptor tokens are context only, never scored.
pub fn perplexity_report<T, P, B>(
    poelm: &P,
    baseline: &B,
    vocab: &Vocab,
    poetic: &[EvalBlock],
    prose: &[EvalBlock],
) -> Result<PerplexityReport, EvalError>
where
    T: Scalar,
    P: LanguageModel<T> + Sync + ?Sized,
    B: LanguageModel<T> + Sync + ?Sized,
{
    let poetic_row = perplexity_row(poelm, baseline, vocab, poetic)?;
    if poetic_row.baseline.tokens == 0 {
        return Err(EvalError::EmptySet("poetic"));
    }
    let prose_row = perplexity_row(poelm, baseline, vocab, prose)?;
    if prose_row.baseline.tokens == 0 {
        return Err(EvalError::EmptySet("prose"));
    }
    Ok(PerplexityReport {
        poetic: poetic_row,
        prose: prose_row,
    })
}

impl PerplexityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("set,baseline,poelm_with_structure,poelm_without_structure,tokens\n");
        for (name, r) in [("poetic", &self.poetic), ("prose", &self.prose)] {
            let _ = writeln!(
                out,
                "{name},{:.4},{:.4},{:.4},{}",
                r.baseline.perplexity(),
                r.with_structure.perplexity(),
                r.without_structure.perplexity(),
                r.baseline.tokens
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{:<10}{:>12}{:>12}{:>12}\n", "", "LM", "w/ struc", "no struc");
        for (name, r) in [("poetic", &self.poetic), ("prose", &self.prose)] {
            let _ = writeln!(
                s,
                "{name:<10}{:>12.2}{:>12.2}{:>12.2}",
                r.baseline.perplexity(),
                r.with_structure.perplexity(),
                r.without_structure.perplexity()
            );
        }
        s
    }
}

pub const CURVE_POINTS: usize = 101;
pub const CURVE_MIN_TOKENS: usize = 15;
pub const CURVE_MAX_TOKENS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub advantage: Vec<f64>,
    pub lines: usize,
}

/// Evenly spaced grid on `[0, 1]`.
pub fn grid(points: usize) -> Vec<f64> {
    (0..points).map(|i| i as f64 / (points - 1) as f64).collect()
}

/// Linear interpolation of samples at `0, 1/(n-1), ..., 1` onto `xs`.
pub fn interpolate(ys: &[f64], xs: &[f64]) -> Vec<f64> {
    let n = ys.len();
    if n == 1 {
        return vec![ys[0]; xs.len()];
    }
    let last = (n - 1) as f64;
    xs.iter()
        .map(|&x| {
            let pos = x * last;
            let i = (pos.floor() as usize).min(n - 2);
            let f = pos - i as f64;
            ys[i] * (1.0 - f) + ys[i + 1] * f
        })
        .collect()
}

impl Curve {
    /// Mean advantage over grid points with `lo <= x <= hi`.
    pub fn mean_between(&self, lo: f64, hi: f64) -> f64 {
        let eps = 1e-9;
        let sel: Vec<f64> = self
            .x
            .iter()
            .zip(&self.advantage)
            .filter(|(x, _)| **x >= lo - eps && **x <= hi + eps)
            .map(|(_, a)| *a)
            .collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# lines={}\nx,advantage\n", self.lines);
        for (x, a) in self.x.iter().zip(&self.advantage) {
            let _ = writeln!(out, "{x:.2},{a:.6}");
        }
        out
    }
}

/// Mean per-token log-probability advantage of PoeLM (with descriptor)
/// over the baseline, against relative position in the line: 0 is the
/// first token, 1 the line-final token. Only lines with `min_tokens` to
/// `max_tokens` text tokens count; a block's first line is skipped because
/// its opening token has no baseline score.
pub fn rhyme_proximity_curve<T, P, B>(
    poelm: &P,
    baseline: &B,
    vocab: &Vocab,
    blocks: &[EvalBlock],
    min_tokens: usize,
    max_tokens: usize,
) -> Result<Curve, EvalError>
where
    T: Scalar,
    P: LanguageModel<T> + Sync + ?Sized,
    B: LanguageModel<T> + Sync + ?Sized,
{
    let xs = grid(CURVE_POINTS);
    let series: Vec<Vec<Vec<f64>>> = blocks
        .par_iter()
        .map(|b| {
            let toks = block_tokens(vocab, b);
            let wanted = toks.line_lengths.iter().skip(1).any(|&n| (min_tokens..=max_tokens).contains(&n));
            if !wanted {
                return Ok(Vec::new());
            }
            let base = text_logprobs(baseline, vocab, &toks.plain)?;
            let with = text_logprobs(poelm, vocab, &toks.structured)?;
            let mut out = Vec::new();
            let mut start = toks.line_lengths[0];
            for &n in &toks.line_lengths[1..] {
                if (min_tokens..=max_tokens).contains(&n) {
                    // Scores start at the second text token.
                    let range = start - 1..start - 1 + n;
                    let adv: Vec<f64> = with[range.clone()].iter().zip(&base[range]).map(|(a, b)| a - b).collect();
                    out.push(interpolate(&adv, &xs));
                }
                start += n;
            }
            Ok(out)
        })
        .collect::<Result<_, LmError>>()?;
    let lines: Vec<Vec<f64>> = series.into_iter().flatten().collect();
    if lines.is_empty() {
        return Err(EvalError::EmptyCurve {
            min: min_tokens,
            max: max_tokens,
        });
    }
    let mut advantage = vec![0.0; xs.len()];
    for l in &lines {
        for (a, v) in advantage.iter_mut().zip(l) {
            *a += v;
        }
    }
    for a in advantage.iter_mut() {
        *a /= lines.len() as f64;
    }
    Ok(Curve {
        x: xs,
        advantage,
        lines: lines.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use crate::testkit::fixture;

    #[test]
    fn poem_files_round_trip() {
        let text = "# a comment\n# scheme: 4A 4A\nla luna\nmi cuna\n\n# scheme: 3A 3A\nel sol\nla mar\n";
        let poems = parse_poem_file(text).unwrap();
        assert_eq!(poems.len(), 2);
        assert_eq!(poems[0].lines, vec!["la luna", "mi cuna"]);
        assert_eq!(poems[1].scheme.to_string(), "3A 3A");
        assert_eq!(parse_poem_file(&write_poem_file(&poems)).unwrap(), poems);
    }

    #[test]
    fn malformed_poem_files_name_the_line() {
        assert!(matches!(parse_poem_file("la luna\n"), Err(EvalError::PoemFile { line: 1, .. })));
        assert!(matches!(parse_poem_file("# scheme: 4A 4A\n\n"), Err(EvalError::PoemFile { line: 2, .. })));
        assert!(matches!(parse_poem_file("# scheme: 4?\nx\n"), Err(EvalError::PoemFile { line: 1, .. })));
    }

    #[test]
    fn grid_and_interpolation() {
        let g = grid(CURVE_POINTS);
        assert_eq!(g.len(), 101);
        assert_eq!((g[0], g[100]), (0.0, 1.0));
        let ys = [0.0, 2.0, 4.0];
        assert_eq!(interpolate(&ys, &[0.0, 0.25, 0.5, 1.0]), vec![0.0, 1.0, 2.0, 4.0]);
        assert_eq!(interpolate(&[3.0], &[0.0, 1.0]), vec![3.0, 3.0]);
    }

    #[test]
    fn filtering_rows_conserve_candidates() {
        let f = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let schemes: Vec<RhymeScheme> = vec!["6A 6B 6A 6B".parse().unwrap()];
        let prompts = synth::prompts(&mut rng, &schemes, &f.pool, 2);
        let opts = GenerationOptions {
            k: 6,
            max_new: 48,
            ..GenerationOptions::default()
        };
        let report = filtering_rate_report(&f.poelm, &f.baseline, &f.vocab, &prompts, &f.pool, &opts, Language::Spanish, 3).unwrap();
        for t in [&report.poelm, &report.baseline] {
            assert_eq!(t.total, 12);
            assert_eq!(t.correct + t.rejected(), t.total);
        }
        assert_eq!(report.baseline.line_count + report.baseline.repeated_word + report.baseline.bleu, 0);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.contains("\nbleu,") && csv.contains(",-,-"));
        let again = filtering_rate_report(&f.poelm, &f.baseline, &f.vocab, &prompts, &f.pool, &opts, Language::Spanish, 3).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn perplexity_views_score_the_same_tokens() {
        let f = fixture();
        let r = perplexity_report(&f.poelm, &f.baseline, &f.vocab, &f.blocks[..20], &f.blocks[20..]).unwrap();
        for row in [r.poetic, r.prose] {
            assert!(row.baseline.tokens > 0);
            assert_eq!(row.baseline.tokens, row.with_structure.tokens);
            assert_eq!(row.baseline.tokens, row.without_structure.tokens);
            assert!(row.with_structure.perplexity().is_finite());
        }
        assert!(matches!(
            perplexity_report(&f.poelm, &f.baseline, &f.vocab, &[], &f.blocks),
            Err(EvalError::EmptySet("poetic"))
        ));
    }

    #[test]
    fn curve_covers_the_grid() {
        let f = fixture();
        let c = rhyme_proximity_curve(&f.poelm, &f.baseline, &f.vocab, &f.blocks, 2, 12).unwrap();
        assert_eq!(c.x.len(), CURVE_POINTS);
        assert!(c.lines > 0);
        assert!(c.advantage.iter().all(|a| a.is_finite()));
        assert_eq!(c.to_csv().lines().count(), CURVE_POINTS + 2);
        assert!(matches!(
            rhyme_proximity_curve(&f.poelm, &f.baseline, &f.vocab, &f.blocks, 500, 600),
            Err(EvalError::EmptyCurve { .. })
        ));
    }
}
