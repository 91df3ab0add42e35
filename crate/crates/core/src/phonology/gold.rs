//! Hand-verified syllabification and rhyme gold lists.
//!
//! Syllable lists: one `word<TAB>syl-syl-syl<TAB>stress_index` entry per line
//! (`-` or empty stress for Basque). Rhyme judgments: one
//! `line_a<TAB>line_b<TAB>yes|no` entry per line. Blank lines and lines
//! starting with `#` are ignored.

use super::{rhymes, syllabify, Language};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldEntry {
    pub word: String,
    pub syllables: Vec<String>,
    pub stress_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RhymeJudgment {
    pub a: String,
    pub b: String,
    pub rhymes: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("gold list line {line}: {message}")]
pub struct GoldParseError {
    pub line: usize,
    pub message: String,
}

fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn parse_gold_list(text: &str) -> Result<Vec<GoldEntry>, GoldParseError> {
    records(text)
        .map(|(line, l)| {
            let fields: Vec<&str> = l.split('\t').collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(GoldParseError {
                    line,
                    message: format!("expected 2 or 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let syllables: Vec<String> = fields[1].split('-').map(str::to_string).collect();
            if syllables.iter().any(String::is_empty) {
                return Err(GoldParseError {
                    line,
                    message: "empty syllable".into(),
                });
            }
            let stress_index = match fields.get(2).map(|s| s.trim()) {
                None | Some("") | Some("-") => None,
                Some(s) => Some(s.parse::<usize>().map_err(|e| GoldParseError {
                    line,
                    message: format!("bad stress index `{s}`: {e}"),
                })?),
            };
            Ok(GoldEntry {
                word: fields[0].to_string(),
                syllables,
                stress_index,
            })
        })
        .collect()
}

pub fn parse_rhyme_judgments(text: &str) -> Result<Vec<RhymeJudgment>, GoldParseError> {
    records(text)
        .map(|(line, l)| {
            let fields: Vec<&str> = l.split('\t').collect();
            if fields.len() != 3 {
                return Err(GoldParseError {
                    line,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let rhymes = match fields[2].trim() {
                "yes" => true,
                "no" => false,
                other => {
                    return Err(GoldParseError {
                        line,
                        message: format!("verdict must be `yes` or `no`, got `{other}`"),
                    })
                }
            };
            Ok(RhymeJudgment {
                a: fields[0].to_string(),
                b: fields[1].to_string(),
                rhymes,
            })
        })
        .collect()
}

/// A disagreement between the rule engine and a gold entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub item: String,
    pub expected: String,
    pub got: String,
}

/// Runs the syllabifier over every entry. Stress is only compared when the
/// gold entry carries one.
pub fn check_syllables(entries: &[GoldEntry], language: Language) -> Vec<Mismatch> {
    let mut out = Vec::new();
    for e in entries {
        let w = syllabify(&e.word, language);
        let stress_ok = e.stress_index.is_none() || e.stress_index == w.stress_index;
        if w.syllables != e.syllables || !stress_ok {
            out.push(Mismatch {
                item: e.word.clone(),
                expected: format!("{} ({:?})", e.syllables.join("-"), e.stress_index),
                got: format!("{} ({:?})", w.syllables.join("-"), w.stress_index),
            });
        }
    }
    out
}

pub fn check_rhymes(judgments: &[RhymeJudgment], language: Language) -> Vec<Mismatch> {
    judgments
        .iter()
        .filter_map(|j| {
            let got = rhymes(&j.a, &j.b, language);
            (got != j.rhymes).then(|| Mismatch {
                item: format!("{} / {}", j.a, j.b),
                expected: j.rhymes.to_string(),
                got: got.to_string(),
            })
        })
        .collect()
}
