//! Phrase splitting, random phrase merging and block grouping.
//!
//! A phrase is the text between two delimiters (punctuation or a newline).
//! Neighbouring phrases are randomly merged so that verses may contain
//! punctuation, and the resulting phrases are cut into blocks of 3 to 10.
//! Every random choice comes from a per-document stream, so documents can be
//! processed in any order or in parallel.

use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DELIMITERS: &[char] = &[
    '_', '-', '?', '"', '!', ',', ':', '\u{2019}', '\u{2018}', '(', ')', '[', ']', '.', '{', '}',
    '`', ';', '»', '«', '>', '<', '\'', '\n',
];

pub const MERGE_ONE_PROB: f64 = 0.15;
pub const MERGE_TWO_PROB: f64 = 0.05;
pub const MIN_BLOCK: usize = 3;
pub const MAX_BLOCK: usize = 10;

pub fn is_delimiter(c: char) -> bool {
    DELIMITERS.contains(&c)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phrase {
    pub text: String,
    /// A line break followed this phrase in the source.
    pub ends_paragraph: bool,
    /// Source text between this phrase and the next one (delimiters and
    /// whitespace). Used to restore punctuation when phrases are merged.
    pub trailing: String,
}

impl Phrase {
    pub fn new(text: impl Into<String>) -> Self {
        Phrase {
            text: text.into(),
            ends_paragraph: false,
            trailing: ",".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub phrases: Vec<Phrase>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.phrases.iter().map(|p| p.text.as_str()).collect()
    }
}

/// Splits raw text into trimmed, non-empty phrases in source order.
pub fn split_phrases(text: &str) -> Vec<Phrase> {
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    let push = |from: usize, to: usize, spans: &mut Vec<(usize, usize)>| {
        let frag = &text[from..to];
        let trimmed = frag.trim();
        if !trimmed.is_empty() {
            let lead = frag.len() - frag.trim_start().len();
            spans.push((from + lead, from + lead + trimmed.len()));
        }
    };
    for (i, c) in text.char_indices() {
        if is_delimiter(c) {
            push(start, i, &mut spans);
            start = i + c.len_utf8();
        }
    }
    push(start, text.len(), &mut spans);

    spans
        .iter()
        .enumerate()
        .map(|(k, &(s, e))| {
            let gap_end = spans.get(k + 1).map_or(text.len(), |next| next.0);
            let trailing = &text[e..gap_end];
            Phrase {
                text: text[s..e].split_whitespace().collect::<Vec<_>>().join(" "),
                ends_paragraph: trailing.contains('\n'),
                trailing: trailing.to_string(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeDraw {
    Keep,
    WithNext,
    WithNextTwo,
}

/// Maps one uniform draw in [0, 1) to a merge decision.
pub fn merge_draw(u: f64) -> MergeDraw {
    if u < MERGE_TWO_PROB {
        MergeDraw::WithNextTwo
    } else if u < MERGE_TWO_PROB + MERGE_ONE_PROB {
        MergeDraw::WithNext
    } else {
        MergeDraw::Keep
    }
}

/// Text placed between two merged fragments: the original delimiters with
/// newlines and angle brackets removed, followed by one space.
fn joiner(trailing: &str) -> String {
    let cleaned: String = trailing
        .chars()
        .filter(|c| !matches!(c, '<' | '>'))
        .map(|c| if c.is_whitespace() { ' ' } else { c })
        .collect();
    let core = cleaned.split_whitespace().collect::<Vec<_>>().join(" ");
    if core.is_empty() {
        " ".to_string()
    } else {
        format!("{core} ")
    }
}

/// Merges phrases left to right with the given decision source. Merged
/// phrases are consumed, merges never cross a paragraph break, and a merge
/// that runs out of phrases merges as far as it can.
pub fn merge_phrases_with(phrases: Vec<Phrase>, mut draw: impl FnMut() -> MergeDraw) -> Vec<Phrase> {
    let mut out = Vec::with_capacity(phrases.len());
    let mut iter = phrases.into_iter().peekable();
    while let Some(mut current) = iter.next() {
        let want = match draw() {
            MergeDraw::Keep => 0,
            MergeDraw::WithNext => 1,
            MergeDraw::WithNextTwo => 2,
        };
        for _ in 0..want {
            if current.ends_paragraph {
                break;
            }
            let Some(next) = iter.next() else { break };
            current.text = format!("{}{}{}", current.text, joiner(&current.trailing), next.text);
            current.ends_paragraph = next.ends_paragraph;
            current.trailing = next.trailing;
        }
        out.push(current);
    }
    out
}

pub fn merge_phrases<R: Rng + ?Sized>(phrases: Vec<Phrase>, rng: &mut R) -> Vec<Phrase> {
    merge_phrases_with(phrases, || merge_draw(rng.gen::<f64>()))
}

/// Cuts phrases into consecutive blocks whose sizes come from `next_size`;
/// the trailing remainder forms a final, possibly shorter, block.
pub fn group_blocks_with(phrases: Vec<Phrase>, mut next_size: impl FnMut() -> usize) -> Vec<Block> {
    let mut blocks = Vec::new();
    let mut iter = phrases.into_iter().peekable();
    while iter.peek().is_some() {
        let n = next_size().max(1);
        blocks.push(Block {
            phrases: iter.by_ref().take(n).collect(),
        });
    }
    blocks
}

pub fn group_blocks<R: Rng + ?Sized>(phrases: Vec<Phrase>, rng: &mut R) -> Vec<Block> {
    group_blocks_with(phrases, || rng.gen_range(MIN_BLOCK..=MAX_BLOCK))
}

/// Random stream for one document, derived from the global seed and the
/// document id.
pub fn document_rng(seed: u64, doc_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(doc_id);
    rng
}

/// Split, merge and group one document.
pub fn segment_document<R: Rng + ?Sized>(text: &str, rng: &mut R) -> Vec<Block> {
    let merged = merge_phrases(split_phrases(text), rng);
    group_blocks(merged, rng)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: u64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusLayout {
    /// Every file in the directory is one document.
    #[default]
    FilePerDocument,
    /// Documents are separated by blank lines inside each file.
    BlankLineSeparated,
}

/// Splits a text into documents at blank lines.
pub fn split_blank_line_documents(text: &str) -> Vec<String> {
    let mut docs = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                docs.push(std::mem::take(&mut current));
            }
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if !current.is_empty() {
        docs.push(current);
    }
    docs
}

/// Loads documents from a file or a directory (files sorted by name).
/// Files that cannot be read as UTF-8 are skipped with a warning.
pub fn load_documents(path: &Path, layout: CorpusLayout) -> io::Result<Vec<Document>> {
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in fs::read_dir(path)? {
            let p = entry?.path();
            if p.is_file() {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }

    let mut docs = Vec::new();
    for file in files {
        let text = match fs::read_to_string(&file) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("skipping unreadable document {}: {e}", file.display());
                continue;
            }
        };
        match layout {
            CorpusLayout::FilePerDocument => docs.push(text),
            CorpusLayout::BlankLineSeparated => docs.extend(split_blank_line_documents(&text)),
        }
    }
    Ok(docs
        .into_iter()
        .enumerate()
        .map(|(i, text)| Document { id: i as u64, text })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(ps: &[Phrase]) -> Vec<&str> {
        ps.iter().map(|p| p.text.as_str()).collect()
    }

    #[test]
    fn split_examples() {
        assert_eq!(texts(&split_phrases("Hola, mundo.")), ["Hola", "mundo"]);
        assert!(split_phrases("").is_empty());
        assert_eq!(texts(&split_phrases("a,,b")), ["a", "b"]);
    }

    #[test]
    fn split_marks_paragraph_ends() {
        let ps = split_phrases("uno, dos.\ntres\n\ncuatro");
        assert_eq!(texts(&ps), ["uno", "dos", "tres", "cuatro"]);
        let ends: Vec<bool> = ps.iter().map(|p| p.ends_paragraph).collect();
        assert_eq!(ends, [false, true, true, false]);
        assert_eq!(ps[0].trailing, ", ");
    }

    #[test]
    fn split_handles_all_delimiters() {
        let src = "a_b-c?d\"e!f,g:h\u{2019}i\u{2018}j(k)l[m]n.o{p}q`r;s»t«u>v<w'x";
        let ps = split_phrases(src);
        assert_eq!(ps.len(), 24);
    }

    #[test]
    fn merge_identity_when_never_drawn() {
        let ps = split_phrases("a, b, c, d");
        let out = merge_phrases_with(ps.clone(), || MergeDraw::Keep);
        assert_eq!(out, ps);
    }

    #[test]
    fn partial_merge_at_end() {
        let ps = vec![Phrase::new("a"), Phrase::new("b")];
        let out = merge_phrases_with(ps, || MergeDraw::WithNextTwo);
        assert_eq!(texts(&out), ["a, b"]);
    }

    #[test]
    fn merge_restores_source_delimiters() {
        let ps = split_phrases("uno; dos: tres, cuatro");
        let mut draws = vec![MergeDraw::WithNext, MergeDraw::WithNext].into_iter();
        let out = merge_phrases_with(ps, || draws.next().unwrap_or(MergeDraw::Keep));
        assert_eq!(texts(&out), ["uno; dos", "tres, cuatro"]);
    }

    #[test]
    fn merge_does_not_cross_paragraphs() {
        let ps = split_phrases("uno\ndos, tres");
        let out = merge_phrases_with(ps, || MergeDraw::WithNextTwo);
        assert_eq!(texts(&out), ["uno", "dos, tres"]);
    }

    #[test]
    fn merge_joiner_drops_angle_brackets() {
        let ps = split_phrases("a <b");
        let out = merge_phrases_with(ps, || MergeDraw::WithNext);
        assert_eq!(texts(&out), ["a b"]);
    }

    #[test]
    fn block_examples() {
        let ps: Vec<Phrase> = (0..8).map(|i| Phrase::new(format!("p{i}"))).collect();
        let blocks = group_blocks_with(ps, || 8);
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].len(), 8);

        let ps: Vec<Phrase> = (0..4).map(|i| Phrase::new(format!("p{i}"))).collect();
        let blocks = group_blocks_with(ps, || 3);
        let sizes: Vec<usize> = blocks.iter().map(Block::len).collect();
        assert_eq!(sizes, [3, 1]);
    }

    #[test]
    fn blank_line_documents() {
        let docs = split_blank_line_documents("uno\ndos\n\n\ntres\n  \ncuatro");
        assert_eq!(docs, ["uno\ndos\n", "tres\n", "cuatro\n"]);
    }

    #[test]
    fn document_streams_are_independent_and_reproducible() {
        let a: u64 = document_rng(7, 1).gen();
        let b: u64 = document_rng(7, 1).gen();
        let c: u64 = document_rng(7, 2).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
