//! Byte-pair subword vocabulary with a reserved block of control tokens.
//!
//! Ids `0..control_len` hold `<PREF>`, `</PREF>`, `<SEP>`, `<BRK>`,
//! `<CLS_UNK>`, `<LEN_1>`..`<LEN_100>` and then the most frequent rhyme
//! classes. Subword pieces follow. Word-initial pieces carry the `▁` marker,
//! so decoding restores single spaces between words.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descriptor::{
    cls_token, is_control_token, len_token, parse_cls_token, parse_len_token, BRK, CLS_UNK, LEN_MAX, PREF, PREF_END,
    SEP,
};

pub const WORD_MARKER: char = '\u{2581}';
pub const UNKNOWN_PIECE: &str = "\u{FFFD}";
pub const FIXED_CONTROL: [&str; 5] = [PREF, PREF_END, SEP, BRK, CLS_UNK];
pub const DEFAULT_VOCAB_SIZE: usize = 8_000;
pub const DEFAULT_CONTROL_BUDGET: usize = 512;

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PieceKind {
    Control,
    Subword,
}

impl PieceKind {
    fn as_str(self) -> &'static str {
        match self {
            PieceKind::Control => "control",
            PieceKind::Subword => "subword",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("control budget {budget} is below the {min} fixed control tokens plus one class slot")]
    BudgetTooSmall { budget: usize, min: usize },
    #[error("unknown token id {0}")]
    UnknownId(TokenId),
    #[error("vocabulary file line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct Vocab {
    pieces: Vec<String>,
    kinds: Vec<PieceKind>,
    index: HashMap<String, TokenId>,
    control_len: usize,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.pieces == other.pieces && self.kinds == other.kinds
    }
}

impl Vocab {
    fn from_parts(pieces: Vec<String>, kinds: Vec<PieceKind>) -> Result<Self, VocabError> {
        let control_len = kinds.iter().take_while(|k| **k == PieceKind::Control).count();
        if kinds[control_len..].contains(&PieceKind::Control) {
            return Err(VocabError::Format {
                line: control_len + 1,
                message: "control tokens must form one block at the start".into(),
            });
        }
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if index.insert(p.clone(), i as TokenId).is_some() {
                return Err(VocabError::Format {
                    line: i + 1,
                    message: format!("duplicate piece `{p}`"),
                });
            }
        }
        for fixed in FIXED_CONTROL.iter().copied().map(String::from).chain((1..=LEN_MAX).map(len_token)) {
            if !index.contains_key(&fixed) {
                return Err(VocabError::Format {
                    line: 0,
                    message: format!("missing control token {fixed}"),
                });
            }
        }
        if !index.contains_key(UNKNOWN_PIECE) {
            return Err(VocabError::Format {
                line: 0,
                message: "missing unknown-character piece".into(),
            });
        }
        Ok(Vocab {
            pieces,
            kinds,
            index,
            control_len,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn control_range(&self) -> Range<TokenId> {
        0..self.control_len as TokenId
    }

    pub fn is_control(&self, id: TokenId) -> bool {
        (id as usize) < self.control_len
    }

    pub fn id(&self, piece: &str) -> Option<TokenId> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: TokenId) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn kind(&self, id: TokenId) -> Option<PieceKind> {
        self.kinds.get(id as usize).copied()
    }

    fn fixed(&self, tok: &str) -> TokenId {
        self.index[tok]
    }

    pub fn pref(&self) -> TokenId {
        self.fixed(PREF)
    }

    pub fn pref_end(&self) -> TokenId {
        self.fixed(PREF_END)
    }

    pub fn sep(&self) -> TokenId {
        self.fixed(SEP)
    }

    pub fn brk(&self) -> TokenId {
        self.fixed(BRK)
    }

    pub fn cls_unk(&self) -> TokenId {
        self.fixed(CLS_UNK)
    }

    /// Rhyme classes that own a control slot, in slot order.
    pub fn class_keys(&self) -> Vec<String> {
        self.pieces[..self.control_len]
            .iter()
            .filter_map(|p| parse_cls_token(p).and_then(|r| r.key().map(str::to_string)))
            .collect()
    }

    pub fn control_ids(&self) -> BTreeSet<TokenId> {
        self.control_range().collect()
    }

    /// Id for a control string, mapping unknown classes to `<CLS_UNK>` and
    /// over-long lengths to `<LEN_MAX>`.
    fn control_id(&self, tok: &str) -> Option<TokenId> {
        if let Some(id) = self.id(tok).filter(|&id| self.is_control(id)) {
            return Some(id);
        }
        if let Some(n) = parse_len_token(tok) {
            return self.id(&len_token(n.clamp(1, LEN_MAX)));
        }
        parse_cls_token(tok).map(|_| self.cls_unk())
    }

    fn encode_word(&self, word: &str, out: &mut Vec<TokenId>, unknown: &mut usize) {
        let unk = self.index[UNKNOWN_PIECE];
        let mut syms: Vec<(String, TokenId)> = std::iter::once(WORD_MARKER)
            .chain(word.chars())
            .map(|c| {
                let s = c.to_string();
                match self.index.get(&s) {
                    Some(&id) if !self.is_control(id) => (s, id),
                    _ => {
                        *unknown += 1;
                        (UNKNOWN_PIECE.to_string(), unk)
                    }
                }
            })
            .collect();
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    let cat = format!("{}{}", w[0].0, w[1].0);
                    self.index.get(&cat).map(|&id| (id, i, cat))
                })
                .filter(|(id, _, _)| !self.is_control(*id))
                .min_by_key(|(id, i, _)| (*id, *i));
            let Some((id, i, cat)) = best else { break };
            syms[i] = (cat, id);
            syms.remove(i + 1);
        }
        out.extend(syms.iter().map(|(_, id)| *id));
    }

    /// Encodes text. Control strings are matched atomically wherever they
    /// appear; everything else is split into whitespace-separated words.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut cache: HashMap<&str, Vec<TokenId>> = HashMap::new();
        let mut unknown = 0;
        for chunk in text.split_whitespace() {
            let mut rest = chunk;
            while !rest.is_empty() {
                let (word, after) = match find_control(rest) {
                    Some((start, end)) => {
                        let ctrl = &rest[start..end];
                        let id = self.control_id(ctrl);
                        (&rest[..start], id.map(|id| (id, &rest[end..])))
                    }
                    None => (rest, None),
                };
                if !word.is_empty() {
                    let ids = cache.entry(word).or_insert_with(|| {
                        let mut v = Vec::new();
                        self.encode_word(word, &mut v, &mut unknown);
                        v
                    });
                    out.extend_from_slice(ids);
                }
                match after {
                    Some((id, tail)) => {
                        out.push(id);
                        rest = tail;
                    }
                    None => break,
                }
            }
        }
        if unknown > 0 {
            log::warn!("{unknown} characters outside the vocabulary were encoded as {UNKNOWN_PIECE}");
        }
        out
    }

    /// Decodes ids to text. Words and control tokens are separated by single
    /// spaces.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, VocabError> {
        let mut words: Vec<String> = Vec::new();
        let mut open = false;
        for &id in ids {
            let piece = self.piece(id).ok_or(VocabError::UnknownId(id))?;
            if self.is_control(id) {
                words.push(piece.to_string());
                open = false;
            } else if let Some(rest) = piece.strip_prefix(WORD_MARKER) {
                words.push(rest.to_string());
                open = true;
            } else if open {
                words.last_mut().expect("open word").push_str(piece);
            } else {
                words.push(piece.to_string());
                open = true;
            }
        }
        Ok(words.join(" "))
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (i, (p, k)) in self.pieces.iter().zip(&self.kinds).enumerate() {
            let _ = writeln!(s, "{i}\t{p}\t{}", k.as_str());
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self, VocabError> {
        let mut pieces = Vec::new();
        let mut kinds = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let err = |message: String| VocabError::Format { line: n + 1, message };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", fields.len())));
            }
            let id: usize = fields[0].parse().map_err(|e| err(format!("bad id: {e}")))?;
            if id != pieces.len() {
                return Err(err(format!("ids must be consecutive from 0, found {id}")));
            }
            kinds.push(match fields[2] {
                "control" => PieceKind::Control,
                "subword" => PieceKind::Subword,
                other => return Err(err(format!("unknown kind `{other}`"))),
            });
            pieces.push(fields[1].to_string());
        }
        if pieces.is_empty() {
            return Err(VocabError::Format {
                line: 0,
                message: "empty vocabulary".into(),
            });
        }
        Vocab::from_parts(pieces, kinds)
    }

    /// SHA-256 of the vocabulary file content, hex encoded.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_tsv().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Byte range of the first control-shaped `<...>` substring.
fn find_control(s: &str) -> Option<(usize, usize)> {
    let mut from = 0;
    while let Some(off) = s[from..].find('<') {
        let start = from + off;
        if let Some(len) = s[start..].find('>') {
            let end = start + len + 1;
            if is_control_token(&s[start..end]) {
                return Some((start, end));
            }
        }
        from = start + 1;
    }
    None
}

/// Trains a vocabulary of at most `size` entries, `control_budget` of which
/// are reserved for control tokens. `classes` are rhyme-class keys ranked by
/// frequency; those that do not fit in the control block are dropped.
pub fn train_vocab(text: &str, size: usize, control_budget: usize, classes: &[String]) -> Result<Vocab, VocabError> {
    let min = FIXED_CONTROL.len() + LEN_MAX + 1;
    if control_budget < min {
        return Err(VocabError::BudgetTooSmall {
            budget: control_budget,
            min,
        });
    }
    let mut pieces: Vec<String> = FIXED_CONTROL.iter().map(|s| s.to_string()).collect();
    pieces.extend((1..=LEN_MAX).map(len_token));
    let slots = control_budget - pieces.len();
    pieces.extend(classes.iter().take(slots).map(|k| cls_token(k)));
    if classes.len() < slots {
        log::info!(
            "only {} rhyme classes for {slots} slots; control block shrinks to {}",
            classes.len(),
            pieces.len()
        );
    }
    let control_len = pieces.len();
    let subword_budget = size.saturating_sub(control_len);

    let mut word_counts: HashMap<&str, u64> = HashMap::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        loop {
            match find_control(rest) {
                Some((s, e)) => {
                    if s > 0 {
                        *word_counts.entry(&rest[..s]).or_default() += 1;
                    }
                    rest = &rest[e..];
                }
                None => {
                    if !rest.is_empty() {
                        *word_counts.entry(rest).or_default() += 1;
                    }
                    break;
                }
            }
        }
    }
    let mut words: Vec<(&str, u64)> = word_counts.into_iter().collect();
    words.sort_unstable();

    let alphabet: BTreeSet<char> = words
        .iter()
        .flat_map(|(w, _)| w.chars())
        .chain([WORD_MARKER])
        .chain(UNKNOWN_PIECE.chars())
        .collect();
    let mut sub: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    if sub.len() > subword_budget {
        log::warn!(
            "alphabet of {} characters exceeds the subword budget {subword_budget}; keeping all characters",
            sub.len()
        );
    }
    let merges = learn_merges(&words, &mut sub, subword_budget);
    if sub.len() < subword_budget {
        log::warn!(
            "corpus supports only {} subword pieces ({merges} merges), below the requested {subword_budget}",
            sub.len()
        );
    }

    let kinds = std::iter::repeat_n(PieceKind::Control, control_len)
        .chain(std::iter::repeat_n(PieceKind::Subword, sub.len()))
        .collect();
    pieces.extend(sub);
    Vocab::from_parts(pieces, kinds)
}

/// Greedy pair merging over the word-frequency table until `budget` pieces
/// exist or no pair occurs twice. Ties go to the pair of lowest piece ids.
fn learn_merges(words: &[(&str, u64)], pieces: &mut Vec<String>, budget: usize) -> usize {
    let mut index: HashMap<String, u32> = pieces.iter().enumerate().map(|(i, p)| (p.clone(), i as u32)).collect();
    let mut segs: Vec<Vec<u32>> = words
        .iter()
        .map(|(w, _)| {
            std::iter::once(WORD_MARKER)
                .chain(w.chars())
                .map(|c| index[&c.to_string()])
                .collect()
        })
        .collect();
    let freqs: Vec<i64> = words.iter().map(|(_, f)| *f as i64).collect();

    let mut counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut occurs: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, seg) in segs.iter().enumerate() {
        for p in seg.windows(2) {
            *counts.entry((p[0], p[1])).or_default() += freqs[wi];
            occurs.entry((p[0], p[1])).or_default().insert(wi);
        }
    }
    let mut heap: BinaryHeap<(i64, Reverse<(u32, u32)>)> = counts.iter().map(|(&p, &c)| (c, Reverse(p))).collect();

    let mut merges = 0;
    while pieces.len() < budget {
        let Some((count, Reverse(pair))) = heap.pop() else { break };
        if counts.get(&pair).copied() != Some(count) {
            continue;
        }
        if count < 2 {
            break;
        }
        let cat = format!("{}{}", pieces[pair.0 as usize], pieces[pair.1 as usize]);
        let new_id = match index.get(&cat) {
            Some(&id) => id,
            None => {
                let id = pieces.len() as u32;
                pieces.push(cat.clone());
                index.insert(cat, id);
                id
            }
        };
        merges += 1;

        let affected: Vec<usize> = {
            let mut v: Vec<usize> = occurs.remove(&pair).unwrap_or_default().into_iter().collect();
            v.sort_unstable();
            v
        };
        let mut touched: BTreeSet<(u32, u32)> = BTreeSet::new();
        for wi in affected {
            let f = freqs[wi];
            for p in segs[wi].windows(2) {
                let key = (p[0], p[1]);
                *counts.get_mut(&key).expect("counted pair") -= f;
                touched.insert(key);
            }
            let old = std::mem::take(&mut segs[wi]);
            let mut merged = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && (old[i], old[i + 1]) == pair {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(old[i]);
                    i += 1;
                }
            }
            for p in merged.windows(2) {
                let key = (p[0], p[1]);
                *counts.entry(key).or_default() += f;
                occurs.entry(key).or_default().insert(wi);
                touched.insert(key);
            }
            segs[wi] = merged;
        }
        counts.remove(&pair);
        for key in touched {
            if let Some(&c) = counts.get(&key) {
                if c > 0 {
                    heap.push((c, Reverse(key)));
                }
            }
        }
    }
    merges
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Vocab {
        let text = "la casa blanca la casa roja el perro come <BRK> la casa";
        train_vocab(text, 200, 110, &["asa".into(), "oja".into(), "ome".into()]).unwrap()
    }

    #[test]
    fn control_layout() {
        let v = train_vocab("hola", 1000, 512, &[]).unwrap();
        assert_eq!(v.control_range(), 0..105);
        assert_eq!(512 - FIXED_CONTROL.len() - LEN_MAX, 407);
        let classes: Vec<String> = (0..500).map(|i| format!("k{i}")).collect();
        let v = train_vocab("hola", 1000, 512, &classes).unwrap();
        assert_eq!(v.control_range(), 0..512);
        assert_eq!(v.class_keys().len(), 407);
        assert_eq!(v.class_keys()[0], "k0");
        assert!(matches!(
            train_vocab("x", 100, 105, &[]),
            Err(VocabError::BudgetTooSmall { .. })
        ));
    }

    #[test]
    fn control_strings_are_atomic() {
        let v = small();
        assert_eq!(v.encode("<BRK>"), [v.brk()]);
        assert_eq!(v.encode("casa<BRK>roja").iter().filter(|&&i| i == v.brk()).count(), 1);
        assert_eq!(v.encode("<CLS_zzz>"), [v.cls_unk()]);
        assert_eq!(v.encode("<CLS_asa>"), [v.id("<CLS_asa>").unwrap()]);
        assert_eq!(v.encode("<LEN_250>"), [v.id("<LEN_100>").unwrap()]);
        for id in v.control_range().end..v.len() as TokenId {
            assert!(!is_control_token(v.piece(id).unwrap()));
        }
    }

    #[test]
    fn round_trips() {
        let v = small();
        for t in ["la casa blanca", "<PREF> <LEN_3> <CLS_asa> </PREF> la casa <BRK> el perro", ""] {
            assert_eq!(v.decode(&v.encode(t)).unwrap(), t);
        }
        assert_eq!(v.decode(&v.encode("  la   casa\nroja ")).unwrap(), "la casa roja");
    }

    #[test]
    fn unknown_characters_and_ids() {
        let v = small();
        assert_eq!(v.decode(&v.encode("caséa")).unwrap(), "cas\u{FFFD}a");
        assert_eq!(v.decode(&[9999]), Err(VocabError::UnknownId(9999)));
    }

    #[test]
    fn repeated_word_becomes_one_piece() {
        let text = "murciélago ".repeat(50);
        let v = train_vocab(&text, 200, 106, &[]).unwrap();
        let ids = v.encode("murciélago");
        assert_eq!(ids.len(), 1);
        assert_eq!(v.piece(ids[0]), Some("\u{2581}murciélago"));
    }

    #[test]
    fn training_is_deterministic_and_file_round_trips() {
        let a = small();
        let b = small();
        assert_eq!(a.to_tsv(), b.to_tsv());
        let c = Vocab::from_tsv(&a.to_tsv()).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.content_hash(), c.content_hash());
        assert_eq!(a.content_hash().len(), 64);
    }

    #[test]
    fn size_is_respected() {
        let text = "uno dos tres cuatro cinco seis siete ocho nueve diez ".repeat(20);
        let v = train_vocab(&text, 140, 106, &[]).unwrap();
        assert!(v.len() <= 140);
        let bigger = train_vocab(&text, 10_000, 106, &[]).unwrap();
        assert!(bigger.len() < 10_000);
        for w in text.split_whitespace().take(10) {
            assert_eq!(bigger.encode(w).len(), 1);
        }
    }
}
