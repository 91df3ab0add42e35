#![allow(dead_code)]

pub mod oracle;

use oracle::OracleVerdict;
use poelm::constraints::{Rejection, Verdict};
use poelm::descriptor::{LineSpec, Rhyme, StructureDescriptor};
use poelm::phonology::{count_line_syllables, rhyme_class, Language};
use poelm::synth;
use rand::seq::SliceRandom;
use rand::Rng;

/// A random candidate and a descriptor that it matches, mismatches or
/// nearly matches, covering every rejection reason.
pub fn random_pair<R: Rng>(rng: &mut R) -> (Vec<String>, StructureDescriptor) {
    let n = rng.gen_range(1..=6);
    let mut lines: Vec<String> = (0..n).map(|_| synth::phrase(rng)).collect();
    if n > 1 && rng.gen_bool(0.2) {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        lines[j] = lines[i].clone();
    }
    if n > 1 && rng.gen_bool(0.15) {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        let last = lines[i].split_whitespace().last().unwrap_or("").to_string();
        lines[j] = format!("{} {}", synth::phrase(rng), last.to_uppercase());
    }
    if rng.gen_bool(0.05) {
        lines[0] = "...".to_string();
    }
    let mut specs: Vec<LineSpec> = lines
        .iter()
        .map(|l| {
            let rhyme = match rhyme_class(l, Language::Spanish).key() {
                Some(k) if !rng.gen_bool(0.2) => Rhyme::Class(k.to_string()),
                _ => Rhyme::Unk,
            };
            LineSpec::new(count_line_syllables(l, Language::Spanish), rhyme)
        })
        .collect();
    for spec in &mut specs {
        if rng.gen_bool(0.08) {
            spec.syllables = (spec.syllables as i64 + rng.gen_range(-2..=2)).max(1) as usize;
        }
        if rng.gen_bool(0.08) {
            spec.rhyme = Rhyme::Class(["ar", "er", "ir", "ado", "ente"].choose(rng).unwrap().to_string());
        }
    }
    if rng.gen_bool(0.08) {
        if rng.gen_bool(0.5) || specs.len() == 1 {
            specs.push(LineSpec::new(8, Rhyme::Unk));
        } else {
            specs.pop();
        }
    }
    (lines, StructureDescriptor::new(specs))
}

/// The library verdict in oracle terms.
pub fn as_oracle(v: &Verdict) -> OracleVerdict {
    match v {
        Verdict::Pass => OracleVerdict::Pass,
        Verdict::Reject(Rejection::LineCount { .. }) => OracleVerdict::LineCount,
        Verdict::Reject(Rejection::Syllables { line, .. }) => OracleVerdict::Syllables(*line),
        Verdict::Reject(Rejection::Rhyme { line, .. }) => OracleVerdict::Rhyme(*line),
        Verdict::Reject(Rejection::RepeatedWord { lines, .. }) => OracleVerdict::RepeatedWord(lines.0, lines.1),
        Verdict::Reject(Rejection::Bleu { .. }) => OracleVerdict::Bleu,
    }
}
