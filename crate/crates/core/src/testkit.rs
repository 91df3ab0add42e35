//! Small trained models shared by unit tests.

use crate::descriptor::{augment_corpus, AugmentedBlock};
use crate::evalkit::EvalBlock;
use crate::lm::{train_lm, AnyModel, LmConfig, NGramConfig};
use crate::phonology::Language;
use crate::synth;
use crate::tokenizer::{train_vocab, TokenId, Vocab};

pub struct Fixture {
    pub vocab: Vocab,
    pub poelm: AnyModel<f64>,
    pub baseline: AnyModel<f64>,
    pub blocks: Vec<EvalBlock>,
    pub pool: Vec<String>,
}

/// Trigram models over a small synthetic corpus, with and without
/// descriptors.
pub fn fixture() -> Fixture {
    let docs = synth::prose_documents(11, 20_000, 0);
    let aug = augment_corpus(&docs, Language::Spanish, 11, 0.15);
    let keys: Vec<String> = aug.class_freqs.ranked().into_iter().map(|x| x.0).collect();
    let vocab = train_vocab(&aug.plain_text(), 500, 140, &keys).unwrap();
    let cfg = LmConfig::Ngram(NGramConfig { order: 3 });
    let seg = |f: &dyn Fn(&AugmentedBlock) -> String| -> Vec<Vec<TokenId>> {
        aug.blocks.iter().map(|b| vocab.encode(&f(b))).collect()
    };
    let poelm = train_lm::<f64>(&seg(&|b| b.augmented_line()), vocab.len(), &cfg).unwrap().model;
    let baseline = train_lm::<f64>(&seg(&|b| b.plain_line()), vocab.len(), &cfg).unwrap().model;
    let blocks = aug.blocks.iter().take(40).map(EvalBlock::from_augmented).collect();
    let pool = vocab.class_keys().into_iter().take(5).collect();
    Fixture {
        vocab,
        poelm,
        baseline,
        blocks,
        pool,
    }
}
