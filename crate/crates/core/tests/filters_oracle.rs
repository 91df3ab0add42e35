mod support;

use poelm::constraints::{check_candidate, sentence_bleu, Candidate};
use poelm::phonology::Language;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::as_oracle;
use support::oracle::{oracle_bleu, oracle_check, OracleVerdict};

#[test]
fn filters_agree_with_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut seen = std::collections::HashSet::new();
    for i in 0..1000 {
        let (lines, desc) = support::random_pair(&mut rng);
        let cand = Candidate::from_lines(i, lines.clone(), Vec::new(), Language::Spanish);
        let got = as_oracle(&check_candidate(&cand, &desc));
        let want = oracle_check(&lines, &desc, Language::Spanish);
        assert_eq!(got, want, "{lines:?} vs {}", desc.to_control_string());
        seen.insert(std::mem::discriminant(&want));
    }
    assert_eq!(seen.len(), 6, "every verdict kind is exercised");
}

#[test]
fn oracle_agrees_on_priority_examples() {
    let lines: Vec<String> = ["quiero luchar", "la noche", "la luna", "quiero luchar"].iter().map(|s| s.to_string()).collect();
    let desc: poelm::descriptor::StructureDescriptor =
        "<PREF> <LEN_4> <CLS_ar> <LEN_3> <CLS_oche> <LEN_3> <CLS_UNK> <LEN_4> <CLS_ar> </PREF>".parse().unwrap();
    let cand = Candidate::from_lines(0, lines.clone(), Vec::new(), Language::Spanish);
    assert_eq!(as_oracle(&check_candidate(&cand, &desc)), OracleVerdict::RepeatedWord(0, 3));
    assert_eq!(oracle_check(&lines, &desc, Language::Spanish), OracleVerdict::RepeatedWord(0, 3));

    let short = &lines[..2];
    let cand = Candidate::from_lines(0, short.to_vec(), Vec::new(), Language::Spanish);
    assert_eq!(as_oracle(&check_candidate(&cand, &desc)), OracleVerdict::LineCount);
    assert_eq!(oracle_check(short, &desc, Language::Spanish), OracleVerdict::LineCount);
}

proptest! {
    #[test]
    fn bleu_matches_oracle(a in proptest::collection::vec("[a-d]{1,2}", 0..9), b in proptest::collection::vec("[a-d]{1,2}", 0..9)) {
        let (a, b) = (a.join(" "), b.join(" "));
        let x = sentence_bleu(&a, &b);
        prop_assert!((x - oracle_bleu(&a, &b)).abs() < 1e-9);
        prop_assert!((0.0..=100.0 + 1e-9).contains(&x));
    }

    #[test]
    fn filters_are_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lines, desc) = support::random_pair(&mut rng);
        let cand = Candidate::from_lines(0, lines.clone(), Vec::new(), Language::Spanish);
        prop_assert_eq!(check_candidate(&cand, &desc), check_candidate(&cand, &desc));
        prop_assert_eq!(as_oracle(&check_candidate(&cand, &desc)), oracle_check(&lines, &desc, Language::Spanish));
    }
}
