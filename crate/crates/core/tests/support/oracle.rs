//! Naive re-implementation of the candidate filters, sharing nothing with
//! the library except the phonology functions.

#![allow(clippy::needless_range_loop)]

use poelm::descriptor::{Rhyme, StructureDescriptor};
use poelm::phonology::{count_word_syllables, final_word, rhyme_class, Language};

#[derive(Debug, Clone, PartialEq)]
pub enum OracleVerdict {
    Pass,
    LineCount,
    Syllables(usize),
    Rhyme(usize),
    RepeatedWord(usize, usize),
    Bleu,
}

fn words(line: &str) -> Vec<String> {
    line.split_whitespace().map(|w| w.to_lowercase()).collect()
}

fn clipped_matches(h: &[String], r: &[String], n: usize) -> usize {
    let hg: Vec<&[String]> = h.windows(n).collect();
    let rg: Vec<&[String]> = r.windows(n).collect();
    let mut total = 0;
    let mut seen: Vec<&[String]> = Vec::new();
    for g in &hg {
        if seen.contains(g) {
            continue;
        }
        seen.push(g);
        let in_h = hg.iter().filter(|x| *x == g).count();
        let in_r = rg.iter().filter(|x| *x == g).count();
        total += in_h.min(in_r);
    }
    total
}

fn bleu_one_way(h: &[String], r: &[String]) -> f64 {
    if h.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let m = clipped_matches(h, r, n) as f64;
        let t = if h.len() >= n { h.len() - n + 1 } else { 0 } as f64;
        let p = if n == 1 { m / t } else { (m + 1.0) / (t + 1.0) };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln() / 4.0;
    }
    let bp = if h.len() > r.len() { 1.0 } else { (1.0 - r.len() as f64 / h.len() as f64).exp() };
    100.0 * bp * log_sum.exp()
}

pub fn oracle_bleu(a: &str, b: &str) -> f64 {
    let (x, y) = (words(a), words(b));
    bleu_one_way(&x, &y).max(bleu_one_way(&y, &x))
}

pub fn oracle_check(lines: &[String], desc: &StructureDescriptor, language: Language) -> OracleVerdict {
    if lines.len() != desc.lines.len() {
        return OracleVerdict::LineCount;
    }
    for i in 0..lines.len() {
        let n: usize = lines[i].split_whitespace().map(|w| count_word_syllables(w, language)).sum();
        if n != desc.lines[i].syllables {
            return OracleVerdict::Syllables(i);
        }
    }
    for i in 0..lines.len() {
        if let Rhyme::Class(want) = &desc.lines[i].rhyme {
            if rhyme_class(&lines[i], language).key() != Some(want.as_str()) {
                return OracleVerdict::Rhyme(i);
            }
        }
    }
    for j in 0..lines.len() {
        for i in 0..j {
            let (Rhyme::Class(a), Rhyme::Class(b)) = (&desc.lines[i].rhyme, &desc.lines[j].rhyme) else {
                continue;
            };
            if a == b && final_word(&lines[i]).is_some() && final_word(&lines[i]) == final_word(&lines[j]) {
                return OracleVerdict::RepeatedWord(i, j);
            }
        }
    }
    let mut scores = Vec::new();
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            scores.push(oracle_bleu(&lines[i], &lines[j]));
        }
    }
    let max = scores.iter().cloned().fold(0.0, f64::max);
    let mean = if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 };
    if max > 35.0 || mean > 20.0 {
        return OracleVerdict::Bleu;
    }
    OracleVerdict::Pass
}
