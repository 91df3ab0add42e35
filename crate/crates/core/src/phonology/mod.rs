//! Rule-based syllabification, stress and end-rhyme classes for Spanish and
//! Basque.
//!
//! Everything here is a pure function of its input. Words are NFC-normalized
//! before analysis; characters outside the language alphabet behave as
//! consonants when syllabifying and are dropped from rhyme keys.

pub mod gold;
mod syllable;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use syllable::{has_acute, plain_vowel, Seg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Language {
    #[serde(rename = "es")]
    Spanish,
    #[serde(rename = "eu")]
    Basque,
}

impl Language {
    pub fn code(self) -> &'static str {
        match self {
            Language::Spanish => "es",
            Language::Basque => "eu",
        }
    }

    fn in_alphabet(self, c: char) -> bool {
        match self {
            Language::Spanish => c.is_ascii_lowercase() || matches!(c, 'ñ' | 'ü'),
            Language::Basque => c.is_ascii_lowercase() || c == 'ñ',
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown language `{0}` (expected `es` or `eu`)")]
pub struct UnknownLanguage(pub String);

impl FromStr for Language {
    type Err = UnknownLanguage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "es" | "spanish" => Ok(Language::Spanish),
            "eu" | "basque" => Ok(Language::Basque),
            _ => Err(UnknownLanguage(s.to_string())),
        }
    }
}

/// A word split into orthographic syllables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SyllabifiedWord {
    pub surface: String,
    pub syllables: Vec<String>,
    /// Index of the stressed syllable. Only computed for Spanish.
    pub stress_index: Option<usize>,
}

impl SyllabifiedWord {
    pub fn len(&self) -> usize {
        self.syllables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.syllables.is_empty()
    }
}

/// Normalized end-sound of a phrase.
///
/// `NoRhyme` is produced for words without any vowel; it never rhymes with
/// anything, itself included (see [`RhymeClass::rhymes_with`]).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RhymeClass {
    Sound { language: Language, key: String },
    NoRhyme,
}

impl RhymeClass {
    pub fn key(&self) -> Option<&str> {
        match self {
            RhymeClass::Sound { key, .. } => Some(key),
            RhymeClass::NoRhyme => None,
        }
    }

    pub fn rhymes_with(&self, other: &RhymeClass) -> bool {
        match (self, other) {
            (
                RhymeClass::Sound { language: la, key: ka },
                RhymeClass::Sound { language: lb, key: kb },
            ) => la == lb && ka == kb,
            _ => false,
        }
    }
}

impl fmt::Display for RhymeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RhymeClass::Sound { key, .. } => f.write_str(key),
            RhymeClass::NoRhyme => f.write_str("NO_RHYME"),
        }
    }
}

/// Splits a single whitespace-free word into syllables.
pub fn syllabify(word: &str, language: Language) -> SyllabifiedWord {
    let surface: String = word.nfc().collect();
    let chars: Vec<char> = surface.chars().collect();
    let analysis = syllable::analyse(&chars, language);

    if analysis.nuclei.is_empty() {
        return SyllabifiedWord {
            syllables: vec![surface.clone()],
            stress_index: (language == Language::Spanish).then_some(0),
            surface,
        };
    }

    let mut syllables = Vec::with_capacity(analysis.starts.len());
    for (i, &start) in analysis.starts.iter().enumerate() {
        let end = analysis.starts.get(i + 1).copied().unwrap_or(chars.len());
        syllables.push(chars[start..end].iter().collect());
    }
    let stress_index = match language {
        Language::Spanish => Some(spanish_stress(&analysis)),
        Language::Basque => None,
    };
    SyllabifiedWord {
        surface,
        syllables,
        stress_index,
    }
}

fn spanish_stress(analysis: &syllable::Analysis) -> usize {
    let n = analysis.nuclei.len();
    if n == 1 {
        return 0;
    }
    // An explicit accent wins.
    if let Some(k) = analysis
        .nuclei
        .iter()
        .rposition(|&(s, e)| analysis.lowered[s..e].iter().any(|&c| has_acute(c)))
    {
        return k;
    }
    let last_letter = analysis.lowered.iter().rev().find(|c| c.is_alphabetic());
    match last_letter {
        Some('a' | 'e' | 'i' | 'o' | 'u' | 'n' | 's') => n - 2,
        _ => n - 1,
    }
}

/// Char index of the stressed vowel inside a nucleus.
fn stressed_vowel(analysis: &syllable::Analysis, nucleus: (usize, usize)) -> usize {
    let (s, e) = nucleus;
    let range = s..e;
    if let Some(i) = range.clone().find(|&i| has_acute(analysis.lowered[i])) {
        return i;
    }
    if let Some(i) = range.clone().find(|&i| analysis.segs[i] == Seg::Peak) {
        return i;
    }
    e - 1
}

/// Syllables contributed by one whitespace token: 0 for tokens without any
/// letter or digit, otherwise the syllable count (at least 1).
pub fn count_word_syllables(token: &str, language: Language) -> usize {
    if !token.chars().any(char::is_alphanumeric) {
        return 0;
    }
    syllabify(token, language).len()
}

/// Metrical length of a line without synalephas: the sum of per-word counts.
pub fn count_line_syllables(line: &str, language: Language) -> usize {
    line.split_whitespace()
        .map(|w| count_word_syllables(w, language))
        .sum()
}

/// Last whitespace token that carries a letter or digit, stripped of
/// surrounding punctuation and case-folded.
pub fn final_word(line: &str) -> Option<String> {
    line.split_whitespace()
        .rev()
        .find(|w| w.chars().any(char::is_alphanumeric))
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .nfc()
                .flat_map(char::to_lowercase)
                .collect()
        })
}

/// End-rhyme class of a phrase, taken from its final word.
pub fn rhyme_class(phrase: &str, language: Language) -> RhymeClass {
    match final_word(phrase) {
        Some(word) => word_rhyme_class(&word, language),
        None => RhymeClass::NoRhyme,
    }
}

fn word_rhyme_class(word: &str, language: Language) -> RhymeClass {
    let chars: Vec<char> = word.nfc().collect();
    let analysis = syllable::analyse(&chars, language);
    if analysis.nuclei.is_empty() {
        return RhymeClass::NoRhyme;
    }
    let from = match language {
        Language::Spanish => {
            let stressed = spanish_stress(&analysis);
            stressed_vowel(&analysis, analysis.nuclei[stressed])
        }
        Language::Basque => {
            let n = analysis.nuclei.len();
            analysis.nuclei[n.saturating_sub(2)].0
        }
    };
    let mut key = String::new();
    for i in from..chars.len() {
        let c = analysis.lowered[i];
        let c = if c == 'y' && analysis.segs[i] == Seg::Glide {
            'i'
        } else {
            match language {
                // Only the stressed vowel can carry an acute accent.
                Language::Spanish if i == from => plain_vowel(c),
                Language::Spanish => c,
                Language::Basque => plain_vowel(c),
            }
        };
        if language.in_alphabet(c) {
            key.push(c);
        }
    }
    if language == Language::Basque {
        key = canonicalize_basque(&key);
    }
    RhymeClass::Sound { language, key }
}

/// Replaces each consonant by the representative of its Basque rhyme group:
/// {p,t,k} → p, {n,m} → n, {s,z,x} → s, {b,d,g,r} → b. A doubled consonant
/// (rr, tt, ...) is one sound and collapses to a single representative.
pub fn canonicalize_basque(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    let mut prev: Option<char> = None;
    for c in key.chars() {
        let canon = match c {
            'p' | 't' | 'k' => 'p',
            'n' | 'm' => 'n',
            's' | 'z' | 'x' => 's',
            'b' | 'd' | 'g' | 'r' => 'b',
            other => other,
        };
        let is_consonant = !matches!(canon, 'a' | 'e' | 'i' | 'o' | 'u');
        if is_consonant && prev == Some(canon) {
            continue;
        }
        out.push(canon);
        prev = Some(canon);
    }
    out
}

/// Two lines rhyme when their classes agree and they end in different words.
pub fn rhymes(a: &str, b: &str, language: Language) -> bool {
    let (Some(wa), Some(wb)) = (final_word(a), final_word(b)) else {
        return false;
    };
    if wa == wb {
        return false;
    }
    word_rhyme_class(&wa, language).rhymes_with(&word_rhyme_class(&wb, language))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syl(word: &str, lang: Language) -> Vec<String> {
        syllabify(word, lang).syllables
    }

    fn key(phrase: &str, lang: Language) -> String {
        rhyme_class(phrase, lang).key().unwrap_or("").to_string()
    }

    #[test]
    fn spanish_examples() {
        let w = syllabify("empeña", Language::Spanish);
        assert_eq!(w.syllables, ["em", "pe", "ña"]);
        assert_eq!(w.stress_index, Some(1));

        let a = syllabify("a", Language::Spanish);
        assert_eq!(a.syllables, ["a"]);
        assert_eq!(a.stress_index, Some(0));
    }

    #[test]
    fn basque_example() {
        assert_eq!(syl("semea", Language::Basque), ["se", "me", "a"]);
        assert_eq!(syllabify("semea", Language::Basque).stress_index, None);
    }

    #[test]
    fn vowelless_tokens_fall_back_to_one_syllable() {
        let w = syllabify("2023", Language::Spanish);
        assert_eq!(w.syllables, ["2023"]);
        assert_eq!(w.stress_index, Some(0));
        assert_eq!(count_word_syllables("BBC", Language::Basque), 1);
        assert_eq!(rhyme_class("el 2023", Language::Spanish), RhymeClass::NoRhyme);
    }

    #[test]
    fn line_counts() {
        assert_eq!(count_line_syllables("", Language::Spanish), 0);
        assert_eq!(count_line_syllables("   ", Language::Spanish), 0);
        assert_eq!(count_line_syllables("mí se empeña", Language::Spanish), 5);
        assert_eq!(count_line_syllables("no debo luchar", Language::Spanish), 5);
        assert_eq!(count_line_syllables("un Yo para el que no debo luchar", Language::Spanish), 11);
        assert_eq!(count_line_syllables("hola , mundo", Language::Spanish), 4);
    }

    #[test]
    fn spanish_rhyme_keys() {
        assert_eq!(key("no debo luchar", Language::Spanish), "ar");
        assert_eq!(key("no debo acompañar", Language::Spanish), "ar");
        assert_eq!(key("me condena", Language::Spanish), "ena");
        assert_eq!(key("se empeña", Language::Spanish), "eña");
        assert_eq!(key("el corazón", Language::Spanish), "on");
        assert_eq!(key("hoy", Language::Spanish), "oi");
    }

    #[test]
    fn basque_rhyme_keys() {
        assert_eq!(key("semea", Language::Basque), "ea");
        assert_eq!(key("bestea", Language::Basque), "ea");
        assert_eq!(key("sepa", Language::Basque), key("seta", Language::Basque));
        assert_eq!(key("ederra", Language::Basque), "eba");
        assert_eq!(key("ederra", Language::Basque), key("sikiera", Language::Basque));
    }

    #[test]
    fn rhyme_predicate() {
        let es = Language::Spanish;
        assert!(!rhymes("luchar", "luchar", es));
        assert!(rhymes("luchar", "acompañar", es));
        assert!(!rhymes("luchar", "condena", es));
        assert!(!rhymes("el 2023", "el 1999", es));
        assert!(rhymes("semea", "bestea", Language::Basque));
    }

    #[test]
    fn no_rhyme_never_matches_itself() {
        assert!(!RhymeClass::NoRhyme.rhymes_with(&RhymeClass::NoRhyme));
    }

    #[test]
    fn final_word_skips_punctuation() {
        assert_eq!(final_word("Hola, «Mundo» —").as_deref(), Some("mundo"));
        assert_eq!(final_word("  ... "), None);
    }

    #[test]
    fn language_parsing() {
        assert_eq!("es".parse::<Language>().unwrap(), Language::Spanish);
        assert_eq!("EU".parse::<Language>().unwrap(), Language::Basque);
        assert!("fr".parse::<Language>().is_err());
    }
}
