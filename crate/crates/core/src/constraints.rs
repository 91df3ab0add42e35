//! The five candidate filters, applied in a fixed priority order:
//! line count, syllables per line, rhyme class per line, repeated end words
//! among rhyming lines, and pairwise line BLEU.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::descriptor::{Rhyme, StructureDescriptor};
use crate::phonology::{count_line_syllables, count_word_syllables, final_word, rhyme_class, Language};
use crate::tokenizer::TokenId;

/// Pairwise BLEU above this rejects a candidate.
pub const MAX_BLEU: f64 = 35.0;
/// Mean pairwise BLEU above this rejects a candidate.
pub const MEAN_BLEU: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineAnalysis {
    pub syllables: usize,
    /// Rhyme key, or `None` when the line has no rhyme class.
    pub rhyme: Option<String>,
    pub final_word: Option<String>,
}

impl LineAnalysis {
    pub fn of(line: &str, language: Language) -> Self {
        LineAnalysis {
            syllables: count_line_syllables(line, language),
            rhyme: rhyme_class(line, language).key().map(str::to_string),
            final_word: final_word(line),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    /// Position in generation order.
    pub index: usize,
    pub lines: Vec<String>,
    pub raw_tokens: Vec<TokenId>,
    pub analyses: Vec<LineAnalysis>,
}

impl Candidate {
    pub fn from_lines(index: usize, lines: Vec<String>, raw_tokens: Vec<TokenId>, language: Language) -> Self {
        let analyses = lines.iter().map(|l| LineAnalysis::of(l, language)).collect();
        Candidate {
            index,
            lines,
            raw_tokens,
            analyses,
        }
    }

    /// Text with lines separated by `sep`.
    pub fn text(&self, sep: &str) -> String {
        self.lines.join(sep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Check {
    LineCount,
    Syllables,
    Rhyme,
    RepeatedWord,
    Bleu,
}

impl Check {
    pub const ALL: [Check; 5] = [
        Check::LineCount,
        Check::Syllables,
        Check::Rhyme,
        Check::RepeatedWord,
        Check::Bleu,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Check::LineCount => "LINE_COUNT",
            Check::Syllables => "SYLLABLES",
            Check::Rhyme => "RHYME",
            Check::RepeatedWord => "REPEATED_WORD",
            Check::Bleu => "BLEU",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Why a candidate failed, with the observed and expected values. Line
/// indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rejection {
    LineCount { expected: usize, found: usize },
    Syllables { line: usize, expected: usize, found: usize },
    Rhyme { line: usize, expected: String, found: Option<String> },
    RepeatedWord { lines: (usize, usize), word: String },
    Bleu { max: f64, mean: f64 },
}

impl Rejection {
    pub fn check(&self) -> Check {
        match self {
            Rejection::LineCount { .. } => Check::LineCount,
            Rejection::Syllables { .. } => Check::Syllables,
            Rejection::Rhyme { .. } => Check::Rhyme,
            Rejection::RepeatedWord { .. } => Check::RepeatedWord,
            Rejection::Bleu { .. } => Check::Bleu,
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::LineCount { expected, found } => write!(f, "LINE_COUNT: {found} lines, expected {expected}"),
            Rejection::Syllables { line, expected, found } => {
                write!(f, "SYLLABLES: line {} has {found} syllables, expected {expected}", line + 1)
            }
            Rejection::Rhyme { line, expected, found } => write!(
                f,
                "RHYME: line {} ends in `{}`, expected `{expected}`",
                line + 1,
                found.as_deref().unwrap_or("no rhyme")
            ),
            Rejection::RepeatedWord { lines, word } => {
                write!(f, "REPEATED_WORD: lines {} and {} both end in `{word}`", lines.0 + 1, lines.1 + 1)
            }
            Rejection::Bleu { max, mean } => write!(f, "BLEU: max {max:.2}, mean {mean:.2}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Reject(Rejection),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    pub fn rejection(&self) -> Option<&Rejection> {
        match self {
            Verdict::Pass => None,
            Verdict::Reject(r) => Some(r),
        }
    }
}

/// Which of the optional checks run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckOptions {
    pub repeated_word: bool,
    pub bleu: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            repeated_word: true,
            bleu: true,
        }
    }
}

impl CheckOptions {
    pub const STRUCTURAL: CheckOptions = CheckOptions {
        repeated_word: false,
        bleu: false,
    };
    pub const WITHOUT_BLEU: CheckOptions = CheckOptions {
        repeated_word: true,
        bleu: false,
    };
}

pub fn check_candidate(cand: &Candidate, desc: &StructureDescriptor) -> Verdict {
    check_candidate_with(cand, desc, CheckOptions::default())
}

pub fn check_candidate_with(cand: &Candidate, desc: &StructureDescriptor, opts: CheckOptions) -> Verdict {
    match first_rejection(cand, desc, opts) {
        None => Verdict::Pass,
        Some(r) => Verdict::Reject(r),
    }
}

fn first_rejection(cand: &Candidate, desc: &StructureDescriptor, opts: CheckOptions) -> Option<Rejection> {
    if cand.lines.len() != desc.lines.len() {
        return Some(Rejection::LineCount {
            expected: desc.lines.len(),
            found: cand.lines.len(),
        });
    }
    if let Some(r) = structural_rejection(&cand.analyses, desc) {
        return Some(r);
    }
    if opts.repeated_word {
        if let Some(r) = repeated_word(&cand.analyses, desc) {
            return Some(r);
        }
    }
    if opts.bleu {
        let (max, mean) = bleu_stats(&cand.lines);
        if max > MAX_BLEU || mean > MEAN_BLEU {
            return Some(Rejection::Bleu { max, mean });
        }
    }
    None
}

/// Syllable and rhyme checks over already-analysed lines of the right count.
fn structural_rejection(analyses: &[LineAnalysis], desc: &StructureDescriptor) -> Option<Rejection> {
    for (i, (a, spec)) in analyses.iter().zip(&desc.lines).enumerate() {
        if a.syllables != spec.syllables {
            return Some(Rejection::Syllables {
                line: i,
                expected: spec.syllables,
                found: a.syllables,
            });
        }
    }
    for (i, (a, spec)) in analyses.iter().zip(&desc.lines).enumerate() {
        if let Rhyme::Class(key) = &spec.rhyme {
            if a.rhyme.as_ref() != Some(key) {
                return Some(Rejection::Rhyme {
                    line: i,
                    expected: key.clone(),
                    found: a.rhyme.clone(),
                });
            }
        }
    }
    None
}

fn repeated_word(analyses: &[LineAnalysis], desc: &StructureDescriptor) -> Option<Rejection> {
    let mut seen: HashMap<(&str, &str), usize> = HashMap::new();
    for (j, (a, spec)) in analyses.iter().zip(&desc.lines).enumerate() {
        let (Rhyme::Class(key), Some(word)) = (&spec.rhyme, &a.final_word) else {
            continue;
        };
        if let Some(&i) = seen.get(&(key.as_str(), word.as_str())) {
            return Some(Rejection::RepeatedWord {
                lines: (i, j),
                word: word.clone(),
            });
        }
        seen.insert((key, word), j);
    }
    None
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for g in tokens.windows(n) {
        *m.entry(g).or_default() += 1;
    }
    m
}

/// BLEU-4 of hypothesis `h` against reference `r`, in [0, 100].
fn directional_bleu(h: &[String], r: &[String]) -> f64 {
    if h.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let hc = ngram_counts(h, n);
        let rc = ngram_counts(r, n);
        let matches: usize = hc.iter().map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0))).sum();
        let total = (h.len() + 1).saturating_sub(n);
        let p = if n == 1 {
            if matches == 0 {
                return 0.0;
            }
            matches as f64 / total as f64
        } else {
            (matches as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += p.ln() / 4.0;
    }
    let (hl, rl) = (h.len() as f64, r.len() as f64);
    let bp = if hl > rl { 1.0 } else { (1.0 - rl / hl).exp() };
    100.0 * bp * log_sum.exp()
}

fn bleu_tokens(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_lowercase).collect()
}

/// Sentence BLEU-4 with uniform weights, add-one smoothing for n >= 2 and
/// a brevity penalty, symmetrised as the max of both directions. Lines are
/// lowercased and split on whitespace.
pub fn sentence_bleu(a: &str, b: &str) -> f64 {
    let (ta, tb) = (bleu_tokens(a), bleu_tokens(b));
    directional_bleu(&ta, &tb).max(directional_bleu(&tb, &ta))
}

/// Max and mean BLEU over unordered line pairs (both 0 with fewer than two
/// lines).
pub fn bleu_stats(lines: &[String]) -> (f64, f64) {
    let toks: Vec<Vec<String>> = lines.iter().map(|l| bleu_tokens(l)).collect();
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    let mut pairs = 0;
    for i in 0..toks.len() {
        for j in i + 1..toks.len() {
            let s = directional_bleu(&toks[i], &toks[j]).max(directional_bleu(&toks[j], &toks[i]));
            max = max.max(s);
            sum += s;
            pairs += 1;
        }
    }
    (max, if pairs == 0 { 0.0 } else { sum / pairs as f64 })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitFailure {
    pub line: usize,
    pub expected: usize,
    pub found: usize,
}

/// Cuts running text into lines with the given syllable counts, greedily at
/// word boundaries. Words left after the last line are dropped.
pub fn split_by_syllables(text: &str, targets: &[usize], language: Language) -> Result<Vec<String>, SplitFailure> {
    let mut words = text.split_whitespace();
    let mut lines = Vec::with_capacity(targets.len());
    for (i, &target) in targets.iter().enumerate() {
        let mut line: Vec<&str> = Vec::new();
        let mut count = 0;
        while count < target {
            let Some(w) = words.next() else {
                return Err(SplitFailure {
                    line: i,
                    expected: target,
                    found: count,
                });
            };
            count += count_word_syllables(w, language);
            line.push(w);
        }
        if count != target {
            return Err(SplitFailure {
                line: i,
                expected: target,
                found: count,
            });
        }
        lines.push(line.join(" "));
    }
    Ok(lines)
}

/// Filters text from a model without line breaks: the text is split by the
/// descriptor's syllable counts, a failed split is a syllable rejection, and
/// only the rhyme check runs afterwards.
pub fn check_unsegmented(text: &str, desc: &StructureDescriptor, language: Language) -> (Vec<String>, Verdict) {
    let targets: Vec<usize> = desc.lines.iter().map(|l| l.syllables).collect();
    match split_by_syllables(text, &targets, language) {
        Err(f) => (
            Vec::new(),
            Verdict::Reject(Rejection::Syllables {
                line: f.line,
                expected: f.expected,
                found: f.found,
            }),
        ),
        Ok(lines) => {
            let analyses: Vec<LineAnalysis> = lines.iter().map(|l| LineAnalysis::of(l, language)).collect();
            let verdict = match structural_rejection(&analyses, desc) {
                None => Verdict::Pass,
                Some(r) => Verdict::Reject(r),
            };
            (lines, verdict)
        }
    }
}

/// One line of a verdict JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub index: usize,
    pub text: String,
    pub lines: Vec<String>,
    pub analyses: Vec<LineAnalysis>,
    #[serde(flatten)]
    pub verdict: Verdict,
}

impl VerdictRecord {
    pub fn new(cand: &Candidate, verdict: Verdict) -> Self {
        VerdictRecord {
            index: cand.index,
            text: cand.text(" / "),
            lines: cand.lines.clone(),
            analyses: cand.analyses.clone(),
            verdict,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::LineSpec;

    fn cand(lines: &[&str]) -> Candidate {
        Candidate::from_lines(0, lines.iter().map(|s| s.to_string()).collect(), Vec::new(), Language::Spanish)
    }

    fn desc(specs: &[(usize, Option<&str>)]) -> StructureDescriptor {
        StructureDescriptor::new(
            specs
                .iter()
                .map(|(n, r)| LineSpec::new(*n, r.map_or(Rhyme::Unk, |k| Rhyme::Class(k.into()))))
                .collect(),
        )
    }

    #[test]
    fn bleu_golden_values() {
        assert!((sentence_bleu("a b c d e", "a b c d f") - 75.212062).abs() < 5e-5);
        assert!((sentence_bleu("el gato negro", "el perro blanco y grande") - 24.925979).abs() < 5e-5);
        assert_eq!(sentence_bleu("la casa azul", "La casa azul"), 100.0);
        assert_eq!(sentence_bleu("uno dos", "tres cuatro"), 0.0);
        assert_eq!(sentence_bleu("", "algo"), 0.0);
    }

    #[test]
    fn identical_lines_fail_bleu() {
        let c = cand(&["la casa de mi padre", "la casa de mi padre"]);
        let d = desc(&[(7, None), (7, None)]);
        assert!(matches!(check_candidate(&c, &d), Verdict::Reject(Rejection::Bleu { .. })));
        let c = cand(&["la casa de mi padre", "un perro come pan"]);
        let d = desc(&[(7, None), (6, None)]);
        assert_eq!(check_candidate(&c, &d), Verdict::Pass);
    }

    #[test]
    fn repeated_end_word_in_rhyming_lines() {
        let c = cand(&[
            "yo quiero luchar",
            "con toda la fuerza",
            "de mi corazón",
            "nunca luchar",
        ]);
        let d = desc(&[(5, Some("ar")), (6, None), (5, Some("on")), (4, Some("ar"))]);
        assert_eq!(
            check_candidate(&c, &d),
            Verdict::Reject(Rejection::RepeatedWord {
                lines: (0, 3),
                word: "luchar".into()
            })
        );
        let unrhymed = desc(&[(5, None), (6, None), (5, None), (4, None)]);
        assert_eq!(check_candidate_with(&c, &unrhymed, CheckOptions::WITHOUT_BLEU), Verdict::Pass);
    }

    #[test]
    fn priority_order() {
        let c = cand(&["uno dos", "tres"]);
        let d = desc(&[(9, Some("ar")), (9, Some("ar")), (9, None)]);
        assert_eq!(check_candidate(&c, &d).rejection().unwrap().check(), Check::LineCount);
        let d = desc(&[(9, Some("ar")), (9, Some("ar"))]);
        assert_eq!(check_candidate(&c, &d).rejection().unwrap().check(), Check::Syllables);
        let d = desc(&[(3, Some("ar")), (1, Some("ar"))]);
        assert_eq!(
            check_candidate(&c, &d),
            Verdict::Reject(Rejection::Rhyme {
                line: 0,
                expected: "ar".into(),
                found: Some("os".into())
            })
        );
    }

    #[test]
    fn unk_specs_are_unconstrained() {
        let c = cand(&["no debo luchar", "mi canción"]);
        let d = desc(&[(5, None), (3, None)]);
        assert_eq!(check_candidate(&c, &d), Verdict::Pass);
    }

    #[test]
    fn single_line_has_no_bleu_pairs() {
        assert_eq!(bleu_stats(&["a b".to_string()]), (0.0, 0.0));
    }

    #[test]
    fn greedy_split() {
        let es = Language::Spanish;
        assert_eq!(
            split_by_syllables("la casa blanca es grande y sobra", &[5, 3], es),
            Ok(vec!["la casa blanca".to_string(), "es grande".to_string()])
        );
        assert_eq!(
            split_by_syllables("la casa blanca", &[2, 3], es),
            Err(SplitFailure {
                line: 0,
                expected: 2,
                found: 3
            })
        );
        assert!(split_by_syllables("la casa", &[3, 3], es).is_err());
    }

    #[test]
    fn unsegmented_never_fails_line_count() {
        let d = desc(&[(3, None), (3, None), (3, None)]);
        let (_, v) = check_unsegmented("la casa", &d, Language::Spanish);
        assert_eq!(v.rejection().unwrap().check(), Check::Syllables);
        let (lines, v) = check_unsegmented("la casa mi sol de mar tu pan", &d, Language::Spanish);
        assert_eq!(v, Verdict::Pass);
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn verdict_record_serializes_flat() {
        let c = cand(&["no debo luchar"]);
        let rec = VerdictRecord::new(
            &c,
            Verdict::Reject(Rejection::Syllables {
                line: 0,
                expected: 4,
                found: 5,
            }),
        );
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains(r#""verdict":"REJECT""#));
        assert!(json.contains(r#""reason":"SYLLABLES""#));
        let back: VerdictRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
    }
}
