//! Structure descriptors: per-line syllable counts and rhyme classes encoded
//! as control tokens, the augmented training stream, and inference-time
//! descriptors built from rhyme schemes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::phonology::{count_line_syllables, rhyme_class, Language, RhymeClass};
use crate::segmentation::{document_rng, segment_document, Block, Document};

pub const LEN_MAX: usize = 100;
pub const MASK_PROB: f64 = 0.15;

pub const PREF: &str = "<PREF>";
pub const PREF_END: &str = "</PREF>";
pub const SEP: &str = "<SEP>";
pub const BRK: &str = "<BRK>";
pub const CLS_UNK: &str = "<CLS_UNK>";

pub fn len_token(n: usize) -> String {
    format!("<LEN_{n}>")
}

pub fn cls_token(key: &str) -> String {
    format!("<CLS_{key}>")
}

/// Parses `<LEN_n>`.
pub fn parse_len_token(tok: &str) -> Option<usize> {
    tok.strip_prefix("<LEN_")?.strip_suffix('>')?.parse().ok()
}

/// Parses `<CLS_key>`; `<CLS_UNK>` yields [`Rhyme::Unk`].
pub fn parse_cls_token(tok: &str) -> Option<Rhyme> {
    if tok == CLS_UNK {
        return Some(Rhyme::Unk);
    }
    let key = tok.strip_prefix("<CLS_")?.strip_suffix('>')?;
    (!key.is_empty()).then(|| Rhyme::Class(key.to_string()))
}

/// True for every string the descriptor grammar can emit.
pub fn is_control_token(tok: &str) -> bool {
    matches!(tok, PREF | PREF_END | SEP | BRK) || parse_len_token(tok).is_some() || parse_cls_token(tok).is_some()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rhyme {
    Unk,
    Class(String),
}

impl Rhyme {
    pub fn key(&self) -> Option<&str> {
        match self {
            Rhyme::Unk => None,
            Rhyme::Class(k) => Some(k),
        }
    }

    pub fn token(&self) -> String {
        match self {
            Rhyme::Unk => CLS_UNK.to_string(),
            Rhyme::Class(k) => cls_token(k),
        }
    }
}

impl From<&RhymeClass> for Rhyme {
    fn from(c: &RhymeClass) -> Self {
        match c.key() {
            Some(k) => Rhyme::Class(k.to_string()),
            None => Rhyme::Unk,
        }
    }
}

impl fmt::Display for Rhyme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rhyme::Unk => f.write_str("UNK"),
            Rhyme::Class(k) => f.write_str(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineSpec {
    pub syllables: usize,
    pub rhyme: Rhyme,
}

impl LineSpec {
    pub fn new(syllables: usize, rhyme: Rhyme) -> Self {
        LineSpec { syllables, rhyme }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructureDescriptor {
    pub lines: Vec<LineSpec>,
    /// Indices of lines followed by a paragraph break.
    pub sep_after: BTreeSet<usize>,
}

impl StructureDescriptor {
    pub fn new(lines: Vec<LineSpec>) -> Self {
        StructureDescriptor {
            lines,
            sep_after: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Space-separated control-token form.
    pub fn to_control_string(&self) -> String {
        serialize_descriptor(self).join(" ")
    }
}

pub fn extract_descriptor(block: &Block, language: Language) -> StructureDescriptor {
    let lines = block
        .phrases
        .iter()
        .map(|p| {
            let syllables = count_line_syllables(&p.text, language);
            if syllables == 0 {
                LineSpec::new(1, Rhyme::Unk)
            } else {
                LineSpec::new(syllables, Rhyme::from(&rhyme_class(&p.text, language)))
            }
        })
        .collect();
    let sep_after = block
        .phrases
        .iter()
        .enumerate()
        .filter(|(_, p)| p.ends_paragraph)
        .map(|(i, _)| i)
        .collect();
    StructureDescriptor { lines, sep_after }
}

pub fn mask_rhymes<R: Rng + ?Sized>(desc: &StructureDescriptor, rng: &mut R, p: f64) -> StructureDescriptor {
    let mut out = desc.clone();
    for line in &mut out.lines {
        if rng.gen::<f64>() < p {
            line.rhyme = Rhyme::Unk;
        }
    }
    out
}

pub fn serialize_descriptor(desc: &StructureDescriptor) -> Vec<String> {
    let mut out = Vec::with_capacity(desc.lines.len() * 2 + 2);
    out.push(PREF.to_string());
    for (i, line) in desc.lines.iter().enumerate() {
        let n = if line.syllables > LEN_MAX {
            log::info!("clamping line length {} to {LEN_MAX}", line.syllables);
            LEN_MAX
        } else {
            line.syllables.max(1)
        };
        out.push(len_token(n));
        out.push(line.rhyme.token());
        if desc.sep_after.contains(&i) {
            out.push(SEP.to_string());
        }
    }
    out.push(PREF_END.to_string());
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DescriptorError {
    #[error("expected {PREF} at position 0")]
    MissingPref,
    #[error("missing CLS at position {0}")]
    MissingCls(usize),
    #[error("missing {PREF_END} at position {0}")]
    MissingEnd(usize),
    #[error("empty descriptor")]
    Empty,
    #[error("unknown token `{token}` at position {position}")]
    UnknownToken { token: String, position: usize },
    #[error("misplaced {SEP} at position {0}")]
    MisplacedSep(usize),
    #[error("length {value} out of range at position {position}")]
    BadLength { value: usize, position: usize },
    #[error("trailing tokens after {PREF_END} at position {0}")]
    Trailing(usize),
}

/// Parses a descriptor from its leading tokens and returns it together with
/// the number of tokens consumed.
pub fn parse_descriptor_prefix<S: AsRef<str>>(tokens: &[S]) -> Result<(StructureDescriptor, usize), DescriptorError> {
    let tok = |i: usize| tokens.get(i).map(|t| t.as_ref());
    if tok(0) != Some(PREF) {
        return Err(DescriptorError::MissingPref);
    }
    let mut desc = StructureDescriptor::default();
    let mut i = 1;
    loop {
        match tok(i) {
            None => return Err(DescriptorError::MissingEnd(i)),
            Some(PREF_END) => {
                if desc.lines.is_empty() {
                    return Err(DescriptorError::Empty);
                }
                return Ok((desc, i + 1));
            }
            Some(SEP) => {
                let last = desc.lines.len().checked_sub(1).ok_or(DescriptorError::MisplacedSep(i))?;
                if !desc.sep_after.insert(last) {
                    return Err(DescriptorError::MisplacedSep(i));
                }
                i += 1;
            }
            Some(t) => {
                let n = parse_len_token(t).ok_or_else(|| DescriptorError::UnknownToken {
                    token: t.to_string(),
                    position: i,
                })?;
                if n == 0 || n > LEN_MAX {
                    return Err(DescriptorError::BadLength { value: n, position: i });
                }
                let rhyme = match tok(i + 1) {
                    None | Some(PREF_END) | Some(SEP) => return Err(DescriptorError::MissingCls(i + 1)),
                    Some(c) => parse_cls_token(c).ok_or_else(|| DescriptorError::UnknownToken {
                        token: c.to_string(),
                        position: i + 1,
                    })?,
                };
                desc.lines.push(LineSpec::new(n, rhyme));
                i += 2;
            }
        }
    }
}

/// Parses a complete descriptor; tokens after `</PREF>` are an error.
pub fn parse_descriptor<S: AsRef<str>>(tokens: &[S]) -> Result<StructureDescriptor, DescriptorError> {
    let (desc, used) = parse_descriptor_prefix(tokens)?;
    if used != tokens.len() {
        return Err(DescriptorError::Trailing(used));
    }
    Ok(desc)
}

impl FromStr for StructureDescriptor {
    type Err = DescriptorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_descriptor(&s.split_whitespace().collect::<Vec<_>>())
    }
}

/// One `<count><letter>` item of a rhyme scheme; `letter` is `None` for `-`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeLine {
    pub syllables: usize,
    pub letter: Option<char>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RhymeScheme {
    pub lines: Vec<SchemeLine>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemeError {
    #[error("empty rhyme scheme")]
    Empty,
    #[error("invalid scheme item `{0}` (expected e.g. `11A` or `10-`)")]
    BadItem(String),
    #[error("syllable count in `{0}` must be between 1 and {LEN_MAX}")]
    BadCount(String),
    #[error("rhyme letter {0} is used only once")]
    LoneLetter(char),
}

impl RhymeScheme {
    /// Distinct rhyme letters in order of first appearance.
    pub fn letters(&self) -> Vec<char> {
        let mut seen = Vec::new();
        for l in self.lines.iter().filter_map(|l| l.letter) {
            if !seen.contains(&l) {
                seen.push(l);
            }
        }
        seen
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

impl FromStr for RhymeScheme {
    type Err = SchemeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut lines = Vec::new();
        for item in s.split_whitespace() {
            let split = item
                .find(|c: char| !c.is_ascii_digit())
                .ok_or_else(|| SchemeError::BadItem(item.to_string()))?;
            let (digits, rest) = item.split_at(split);
            let syllables: usize = digits.parse().map_err(|_| SchemeError::BadItem(item.to_string()))?;
            if syllables == 0 || syllables > LEN_MAX {
                return Err(SchemeError::BadCount(item.to_string()));
            }
            let mut chars = rest.chars();
            let letter = match (chars.next(), chars.next()) {
                (Some('-'), None) => None,
                (Some(c), None) if c.is_ascii_uppercase() => Some(c),
                _ => return Err(SchemeError::BadItem(item.to_string())),
            };
            lines.push(SchemeLine { syllables, letter });
        }
        if lines.is_empty() {
            return Err(SchemeError::Empty);
        }
        let scheme = RhymeScheme { lines };
        for letter in scheme.letters() {
            if scheme.lines.iter().filter(|l| l.letter == Some(letter)).count() < 2 {
                return Err(SchemeError::LoneLetter(letter));
            }
        }
        Ok(scheme)
    }
}

impl fmt::Display for RhymeScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self
            .lines
            .iter()
            .map(|l| format!("{}{}", l.syllables, l.letter.unwrap_or('-')))
            .collect();
        f.write_str(&items.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BindError {
    #[error("class pool has {available} usable classes but the scheme needs {needed}")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("first line has {measured} syllables but the scheme asks for {expected}")]
    FirstLineSyllables { measured: usize, expected: usize },
    #[error("first line has no rhyme class")]
    FirstLineNoRhyme,
}

/// Binds scheme letters to rhyme classes. Distinct letters get distinct
/// classes drawn from `pool` without replacement; `-` lines are unconstrained.
/// A given first line pins its letter to the line's own class. With `force`,
/// first-line problems are logged instead of returned.
pub fn build_descriptor_from_scheme<R: Rng + ?Sized>(
    scheme: &RhymeScheme,
    pool: &[String],
    rng: &mut R,
    first_line: Option<&str>,
    language: Language,
    force: bool,
) -> Result<StructureDescriptor, BindError> {
    let letters = scheme.letters();
    let first = scheme.lines.first().copied();
    let mut pinned: Option<(char, String)> = None;

    if let (Some(text), Some(first)) = (first_line, first) {
        let measured = count_line_syllables(text, language);
        if measured != first.syllables {
            let err = BindError::FirstLineSyllables {
                measured,
                expected: first.syllables,
            };
            if !force {
                return Err(err);
            }
            log::warn!("{err}");
        }
        if let Some(letter) = first.letter {
            match rhyme_class(text, language).key() {
                Some(k) => pinned = Some((letter, k.to_string())),
                None if force => log::warn!("{}", BindError::FirstLineNoRhyme),
                None => return Err(BindError::FirstLineNoRhyme),
            }
        }
    }

    let usable: Vec<&String> = pool
        .iter()
        .filter(|c| pinned.as_ref().is_none_or(|(_, k)| k != *c))
        .collect();
    let needed = letters.len() - usize::from(pinned.is_some());
    if usable.len() < needed {
        return Err(BindError::PoolTooSmall {
            needed,
            available: usable.len(),
        });
    }
    let mut drawn = index::sample(rng, usable.len(), needed).into_iter();
    let mut binding: HashMap<char, String> = HashMap::new();
    for letter in letters {
        match &pinned {
            Some((l, k)) if *l == letter => binding.insert(letter, k.clone()),
            _ => binding.insert(letter, usable[drawn.next().expect("enough draws")].clone()),
        };
    }

    Ok(StructureDescriptor::new(
        scheme
            .lines
            .iter()
            .map(|l| {
                let rhyme = l.letter.map_or(Rhyme::Unk, |c| Rhyme::Class(binding[&c].clone()));
                LineSpec::new(l.syllables, rhyme)
            })
            .collect(),
    ))
}

/// Rhyme-class frequency counts over a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassFrequencies {
    pub counts: BTreeMap<String, u64>,
}

impl ClassFrequencies {
    pub fn add(&mut self, key: &str, n: u64) {
        *self.counts.entry(key.to_string()).or_default() += n;
    }

    pub fn merge(&mut self, other: &ClassFrequencies) {
        for (k, n) in &other.counts {
            self.add(k, *n);
        }
    }

    /// Classes by descending count, ties broken alphabetically.
    pub fn ranked(&self) -> Vec<(String, u64)> {
        let mut v: Vec<(String, u64)> = self.counts.iter().map(|(k, n)| (k.clone(), *n)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    }

    pub fn top(&self, n: usize) -> Vec<String> {
        self.ranked().into_iter().take(n).map(|(k, _)| k).collect()
    }

    pub fn to_tsv(&self) -> String {
        self.ranked().iter().map(|(k, n)| format!("{k}\t{n}\n")).collect()
    }

    pub fn from_tsv(text: &str) -> Result<Self, String> {
        let mut out = ClassFrequencies::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (k, n) = line
                .split_once('\t')
                .ok_or_else(|| format!("line {}: expected `class<TAB>count`", i + 1))?;
            let n: u64 = n.trim().parse().map_err(|e| format!("line {}: {e}", i + 1))?;
            out.add(k, n);
        }
        Ok(out)
    }
}

/// A block of the augmented corpus: its (masked) descriptor and phrase texts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedBlock {
    pub doc_id: u64,
    pub descriptor: StructureDescriptor,
    pub phrases: Vec<String>,
}

impl AugmentedBlock {
    /// `<PREF> ... </PREF> phrase <BRK> phrase ...`
    pub fn augmented_line(&self) -> String {
        format!("{} {}", self.descriptor.to_control_string(), self.phrases.join(&format!(" {BRK} ")))
    }

    /// The same phrases without any control tokens.
    pub fn plain_line(&self) -> String {
        self.phrases.join(" ")
    }
}

#[derive(Debug, Clone, Default)]
pub struct AugmentedCorpus {
    pub blocks: Vec<AugmentedBlock>,
    /// Counts of unmasked rhyme classes over every phrase.
    pub class_freqs: ClassFrequencies,
}

impl AugmentedCorpus {
    /// One augmented block per line.
    pub fn augmented_text(&self) -> String {
        self.blocks.iter().map(|b| b.augmented_line() + "\n").collect()
    }

    /// One block per line with control tokens removed (baseline training text).
    pub fn plain_text(&self) -> String {
        self.blocks.iter().map(|b| b.plain_line() + "\n").collect()
    }
}

/// Segments every document, extracts and masks descriptors. Documents are
/// processed in parallel with per-document random streams; the output keeps
/// document order.
pub fn augment_corpus(docs: &[Document], language: Language, seed: u64, mask_p: f64) -> AugmentedCorpus {
    let per_doc: Vec<(Vec<AugmentedBlock>, ClassFrequencies)> = docs
        .par_iter()
        .map(|doc| {
            let mut rng = document_rng(seed, doc.id);
            let blocks = segment_document(&doc.text, &mut rng);
            let mut freqs = ClassFrequencies::default();
            let out = blocks
                .iter()
                .map(|block| {
                    let desc = extract_descriptor(block, language);
                    for key in desc.lines.iter().filter_map(|l| l.rhyme.key()) {
                        freqs.add(key, 1);
                    }
                    AugmentedBlock {
                        doc_id: doc.id,
                        descriptor: mask_rhymes(&desc, &mut rng, mask_p),
                        phrases: block.phrases.iter().map(|p| p.text.clone()).collect(),
                    }
                })
                .collect();
            (out, freqs)
        })
        .collect();

    let mut corpus = AugmentedCorpus::default();
    for (blocks, freqs) in per_doc {
        corpus.blocks.extend(blocks);
        corpus.class_freqs.merge(&freqs);
    }
    corpus
}

/// Removes control tokens from an augmented line, leaving the phrase text.
pub fn strip_control_tokens(line: &str) -> String {
    line.split_whitespace()
        .filter(|t| !is_control_token(t))
        .collect::<Vec<_>>()
        .join(" ")
}
