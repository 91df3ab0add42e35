//! Orthographic syllabification engine shared by both languages.
//!
//! Nuclei are grown from vowel runs with at most one peak vowel each (a, e, o,
//! or an accented í/ú); unaccented i/u glide onto a neighbouring peak. The
//! consonants between two nuclei are split by onset maximization against the
//! language's table of legal onsets.

use super::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Seg {
    /// a, e, o (any accent) and accented í / ú.
    Peak,
    /// Unaccented i, u, ü, and y in vowel position.
    Glide,
    Cons,
}

pub(crate) fn lower(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

/// Strips the acute accent and diaeresis from a lowercase vowel.
pub(crate) fn plain_vowel(c: char) -> char {
    match c {
        'á' | 'à' | 'â' => 'a',
        'é' | 'è' | 'ê' => 'e',
        'í' | 'ì' | 'î' | 'ï' => 'i',
        'ó' | 'ò' | 'ô' => 'o',
        'ú' | 'ù' | 'û' | 'ü' => 'u',
        other => other,
    }
}

pub(crate) fn has_acute(c: char) -> bool {
    matches!(c, 'á' | 'é' | 'í' | 'ó' | 'ú')
}

fn vowel_kind(c: char) -> Option<Seg> {
    match c {
        'a' | 'e' | 'o' | 'á' | 'é' | 'ó' | 'à' | 'è' | 'ò' | 'â' | 'ê' | 'ô' => Some(Seg::Peak),
        'í' | 'ú' => Some(Seg::Peak),
        'i' | 'u' | 'ü' | 'ì' | 'ù' | 'î' | 'û' | 'ï' => Some(Seg::Glide),
        _ => None,
    }
}

/// Classifies every character of a lowercased word. `y` is a vowel unless a
/// vowel follows it.
pub(crate) fn classify(lowered: &[char]) -> Vec<Seg> {
    lowered
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if c == 'y' {
                let next_is_vowel = lowered.get(i + 1).is_some_and(|&n| vowel_kind(n).is_some());
                if next_is_vowel {
                    Seg::Cons
                } else {
                    Seg::Glide
                }
            } else {
                vowel_kind(c).unwrap_or(Seg::Cons)
            }
        })
        .collect()
}

/// Half-open char ranges of the vowel nuclei, in order.
///
/// Spanish allows rising and falling diphthongs; Basque only falling ones
/// (ai, ei, oi, au, eu) and ui, so any vowel before a peak is a hiatus.
pub(crate) fn nuclei(segs: &[Seg], language: Language) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < segs.len() {
        if segs[i] == Seg::Cons {
            i += 1;
            continue;
        }
        let mut start = i;
        let mut has_peak = segs[i] == Seg::Peak;
        i += 1;
        while i < segs.len() && segs[i] != Seg::Cons {
            if segs[i] == Seg::Peak {
                if has_peak || language == Language::Basque {
                    out.push((start, i));
                    start = i;
                }
                has_peak = true;
            }
            i += 1;
        }
        out.push((start, i));
    }
    out
}

const SPANISH_ONSETS: &[&str] = &[
    "pl", "pr", "bl", "br", "fl", "fr", "tl", "tr", "dr", "cl", "cr", "gl", "gr", "ch", "ll", "rr",
];

const BASQUE_ONSETS: &[&str] = &[
    "tr", "dr", "pr", "br", "kr", "gr", "fr", "pl", "bl", "kl", "gl", "fl", "rr", "ll",
];

fn is_basque_affricate(a: char, b: char) -> bool {
    a == 't' && matches!(b, 's' | 'x' | 'z')
}

/// Number of trailing characters of `cluster` that form the onset of the
/// next syllable.
fn onset_len(cluster: &[char], language: Language) -> usize {
    let n = cluster.len();
    if n == 0 {
        return 0;
    }
    match language {
        Language::Spanish => {
            if n >= 2 {
                let pair: String = cluster[n - 2..].iter().collect();
                if SPANISH_ONSETS.contains(&pair.as_str()) {
                    return 2;
                }
            }
            1
        }
        Language::Basque => {
            // ts / tx / tz are single consonant units.
            let mut units: Vec<(usize, usize)> = Vec::new();
            let mut i = 0;
            while i < n {
                if i + 1 < n && is_basque_affricate(cluster[i], cluster[i + 1]) {
                    units.push((i, i + 2));
                    i += 2;
                } else {
                    units.push((i, i + 1));
                    i += 1;
                }
            }
            let last = units[units.len() - 1];
            if units.len() >= 2 {
                let prev = units[units.len() - 2];
                if prev.1 - prev.0 == 1 && last.1 - last.0 == 1 {
                    let pair: String = [cluster[prev.0], cluster[last.0]].iter().collect();
                    if BASQUE_ONSETS.contains(&pair.as_str()) {
                        return 2;
                    }
                }
            }
            last.1 - last.0
        }
    }
}

/// Syllable boundaries as char offsets (first is always 0) plus the nuclei.
pub(crate) struct Analysis {
    pub starts: Vec<usize>,
    pub nuclei: Vec<(usize, usize)>,
    pub lowered: Vec<char>,
    pub segs: Vec<Seg>,
}

pub(crate) fn analyse(chars: &[char], language: Language) -> Analysis {
    let lowered: Vec<char> = chars.iter().map(|&c| lower(c)).collect();
    let segs = classify(&lowered);
    let nuclei = nuclei(&segs, language);
    let mut starts = vec![0];
    for w in nuclei.windows(2) {
        let (prev_end, next_start) = (w[0].1, w[1].0);
        let onset = onset_len(&lowered[prev_end..next_start], language);
        starts.push(next_start - onset);
    }
    Analysis {
        starts,
        nuclei,
        lowered,
        segs,
    }
}
