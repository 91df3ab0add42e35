//! Autoregressive language models over token ids: training, next-token
//! distributions, teacher-forced scoring, seeded sampling and checkpoints.
//!
//! Two backends share one interface: a small self-attention network and an
//! interpolated n-gram model.

mod linalg;
pub mod ngram;
pub mod transformer;

use std::collections::BTreeSet;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::path::Path;

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::tokenizer::TokenId;
pub use ngram::{NGram, NGramConfig, NGramState};
pub use transformer::{Transformer, TransformerConfig, TransformerState};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Floating-point type a model computes in.
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Display + Send + Sync + Serialize + DeserializeOwned + Sum + 'static
{
    const NAME: &'static str;

    /// Raw strided matrix product `c = alpha * a * b + beta * c`.
    ///
    /// # Safety
    /// Every pointer must be valid for the full strided extent of its
    /// matrix, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite conversion")
    }

    /// Replaces each `x` by `exp(x - shift)` and returns their sum.
    fn exp_shifted(xs: &mut [Self], shift: Self) -> Self {
        let mut sum = Self::zero();
        for x in xs.iter_mut() {
            *x = (*x - shift).exp();
            sum = sum + *x;
        }
        sum
    }

    fn tanh_in_place(xs: &mut [Self]) {
        for x in xs.iter_mut() {
            *x = x.tanh();
        }
    }
}

/// `exp` for `f32` by range reduction and a degree-6 polynomial, written
/// so that the loop vectorises. Relative error is within a few ulp.
#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    const ROUND: f32 = 12_582_912.0;
    let x = x.clamp(-87.0, 88.0);
    let n = (x * LOG2E + ROUND) - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.987_569_1e-4_f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 0.5;
    let y = p * r * r + r + 1.0;
    y * f32::from_bits(((n as i32 + 127) as u32) << 23)
}

fn sum_f32(xs: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let chunks = xs.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for i in 0..8 {
            acc[i] += c[i];
        }
    }
    acc.iter().sum::<f32>() + rest.iter().sum::<f32>()
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn exp_shifted(xs: &mut [f32], shift: f32) -> f32 {
        for x in xs.iter_mut() {
            *x = exp_f32(*x - shift);
        }
        sum_f32(xs)
    }

    fn tanh_in_place(xs: &mut [f32]) {
        for x in xs.iter_mut() {
            let e = exp_f32(2.0 * x.clamp(-10.0, 10.0));
            *x = 1.0 - 2.0 / (e + 1.0);
        }
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("training stream has {len} tokens but one window needs {needed}")]
    StreamTooShort { len: usize, needed: usize },
    #[error("need at least two tokens to score")]
    TooShort,
    #[error("token id {0} is outside the vocabulary")]
    OutOfVocab(TokenId),
    #[error("every position was excluded from scoring")]
    NothingScored,
    #[error("sampling prefix is empty")]
    EmptyPrefix,
    #[error("prefix of {len} tokens does not fit the context limit {limit}")]
    PrefixTooLong { len: usize, limit: usize },
    #[error("training diverged at step {0}")]
    Diverged(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Autoregressive next-token model.
pub trait LanguageModel<T: Scalar>: Sync {
    type State: Clone + Send;

    fn vocab_size(&self) -> usize;

    fn context_limit(&self) -> usize;

    fn start(&self) -> Self::State;

    /// Appends `token` and returns log-probabilities of the next token.
    fn feed(&self, state: &mut Self::State, token: TokenId) -> Vec<T>;

    /// Row `i` (of `vocab_size` entries) holds log p(. | tokens[..=i]).
    fn sequence_logprobs(&self, tokens: &[TokenId]) -> Vec<T> {
        let mut state = self.start();
        tokens.iter().flat_map(|&t| self.feed(&mut state, t)).collect()
    }
}

impl<T: Scalar> LanguageModel<T> for Transformer<T> {
    type State = TransformerState<T>;

    fn vocab_size(&self) -> usize {
        Transformer::vocab_size(self)
    }

    fn context_limit(&self) -> usize {
        self.config().context
    }

    fn start(&self) -> Self::State {
        Transformer::start(self)
    }

    fn feed(&self, state: &mut Self::State, token: TokenId) -> Vec<T> {
        Transformer::feed(self, state, token)
    }

    fn sequence_logprobs(&self, tokens: &[TokenId]) -> Vec<T> {
        if tokens.len() <= self.config().context {
            return Transformer::sequence_logprobs(self, tokens);
        }
        let mut state = self.start();
        tokens.iter().flat_map(|&t| self.feed(&mut state, t)).collect()
    }
}

impl<T: Scalar> LanguageModel<T> for NGram<T> {
    type State = NGramState;

    fn vocab_size(&self) -> usize {
        NGram::vocab_size(self)
    }

    fn context_limit(&self) -> usize {
        usize::MAX
    }

    fn start(&self) -> Self::State {
        NGram::start(self)
    }

    fn feed(&self, state: &mut Self::State, token: TokenId) -> Vec<T> {
        NGram::feed(self, state, token)
    }
}

/// Model configuration; the `backend` field selects the family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum LmConfig {
    Transformer(TransformerConfig),
    Ngram(NGramConfig),
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig::Transformer(TransformerConfig::default())
    }
}

/// Either backend behind one type.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel<T: Scalar> {
    Transformer(Transformer<T>),
    NGram(NGram<T>),
}

#[derive(Debug, Clone)]
pub enum AnyState<T> {
    Transformer(TransformerState<T>),
    NGram(NGramState),
}

impl<T: Scalar> LanguageModel<T> for AnyModel<T> {
    type State = AnyState<T>;

    fn vocab_size(&self) -> usize {
        match self {
            AnyModel::Transformer(m) => LanguageModel::vocab_size(m),
            AnyModel::NGram(m) => LanguageModel::vocab_size(m),
        }
    }

    fn context_limit(&self) -> usize {
        match self {
            AnyModel::Transformer(m) => LanguageModel::context_limit(m),
            AnyModel::NGram(m) => LanguageModel::context_limit(m),
        }
    }

    fn start(&self) -> Self::State {
        match self {
            AnyModel::Transformer(m) => AnyState::Transformer(m.start()),
            AnyModel::NGram(m) => AnyState::NGram(m.start()),
        }
    }

    fn feed(&self, state: &mut Self::State, token: TokenId) -> Vec<T> {
        match (self, state) {
            (AnyModel::Transformer(m), AnyState::Transformer(s)) => m.feed(s, token),
            (AnyModel::NGram(m), AnyState::NGram(s)) => m.feed(s, token),
            _ => panic!("state belongs to a different backend"),
        }
    }

    fn sequence_logprobs(&self, tokens: &[TokenId]) -> Vec<T> {
        match self {
            AnyModel::Transformer(m) => LanguageModel::sequence_logprobs(m, tokens),
            AnyModel::NGram(m) => LanguageModel::sequence_logprobs(m, tokens),
        }
    }
}

/// A trained model plus its per-step training loss (empty for n-grams).
#[derive(Debug, Clone)]
pub struct Trained<T: Scalar> {
    pub model: AnyModel<T>,
    pub losses: Vec<f64>,
}

/// Trains a model on a token stream given as consecutive segments (one per
/// corpus block). Control tokens are ordinary vocabulary entries here.
pub fn train_lm<T: Scalar>(segments: &[Vec<TokenId>], vocab_size: usize, config: &LmConfig) -> Result<Trained<T>, LmError> {
    match config {
        LmConfig::Transformer(cfg) => {
            let (model, losses) = transformer::train(segments, vocab_size, cfg)?;
            Ok(Trained {
                model: AnyModel::Transformer(model),
                losses,
            })
        }
        LmConfig::Ngram(cfg) => {
            let total: usize = segments.iter().map(Vec::len).sum();
            if total < cfg.order.max(2) {
                return Err(LmError::StreamTooShort {
                    len: total,
                    needed: cfg.order.max(2),
                });
            }
            Ok(Trained {
                model: AnyModel::NGram(NGram::train(segments, vocab_size, cfg.clone())?),
                losses: Vec::new(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: TokenId,
    pub logprob: f64,
    pub excluded: bool,
}

/// Teacher-forced scores of `tokens[1..]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihood {
    /// Sum of log-probabilities over included positions.
    pub total: f64,
    pub per_token: Vec<TokenScore>,
    pub included: usize,
}

impl LogLikelihood {
    pub fn mean(&self) -> f64 {
        self.total / self.included as f64
    }

    pub fn perplexity(&self) -> f64 {
        (-self.mean()).exp()
    }
}

/// Scores every token after the first given its prefix. `excluded(i, id)`
/// marks positions (index into `tokens`) that are recorded but left out of
/// the total.
pub fn score_tokens<T: Scalar, M: LanguageModel<T> + ?Sized>(
    model: &M,
    tokens: &[TokenId],
    excluded: impl Fn(usize, TokenId) -> bool,
) -> Result<LogLikelihood, LmError> {
    if tokens.len() < 2 {
        return Err(LmError::TooShort);
    }
    let v = model.vocab_size();
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= v) {
        return Err(LmError::OutOfVocab(bad));
    }
    let rows = model.sequence_logprobs(&tokens[..tokens.len() - 1]);
    let mut total = 0.0;
    let mut included = 0;
    let per_token = tokens[1..]
        .iter()
        .enumerate()
        .map(|(i, &tok)| {
            let logprob = rows[i * v + tok as usize].to_f64().unwrap_or(f64::NEG_INFINITY);
            let excluded = excluded(i + 1, tok);
            if !excluded {
                total += logprob;
                included += 1;
            }
            TokenScore {
                token: tok,
                logprob,
                excluded,
            }
        })
        .collect();
    if included == 0 {
        return Err(LmError::NothingScored);
    }
    Ok(LogLikelihood {
        total,
        per_token,
        included,
    })
}

pub fn log_likelihood<T: Scalar, M: LanguageModel<T> + ?Sized>(
    model: &M,
    tokens: &[TokenId],
    exclude: &BTreeSet<TokenId>,
) -> Result<LogLikelihood, LmError> {
    score_tokens(model, tokens, |_, id| exclude.contains(&id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleOptions {
    /// Zero means greedy decoding.
    pub temperature: f64,
    /// Zero keeps the whole vocabulary.
    pub top_k: usize,
    pub max_new: usize,
    pub stop: Vec<TokenId>,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            temperature: 1.0,
            top_k: 50,
            max_new: 256,
            stop: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampled {
    /// Generated tokens, without the prefix and without the stop token.
    pub tokens: Vec<TokenId>,
    pub stopped: bool,
}

/// Draws one token from a log-probability row.
pub fn draw_token<T: Scalar, R: Rng + ?Sized>(row: &[T], temperature: f64, top_k: usize, rng: &mut R) -> TokenId {
    let mut order: Vec<(f64, TokenId)> = row
        .iter()
        .enumerate()
        .map(|(i, v)| (v.to_f64().unwrap_or(f64::NEG_INFINITY), i as TokenId))
        .collect();
    let by_score = |a: &(f64, TokenId), b: &(f64, TokenId)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    let k = if top_k == 0 { order.len() } else { top_k.min(order.len()) };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, by_score);
        order.truncate(k);
    }
    order.sort_unstable_by(by_score);
    if temperature <= 0.0 {
        return order[0].1;
    }
    let max = order[0].0;
    let weights: Vec<f64> = order.iter().map(|(lp, _)| ((lp - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut r = rng.gen::<f64>() * total;
    for (w, (_, id)) in weights.iter().zip(&order) {
        if r < *w {
            return *id;
        }
        r -= w;
    }
    order[order.len() - 1].1
}

/// Ancestral sampling after `prefix` until a stop token, `max_new` tokens,
/// or the context limit.
pub fn sample<T: Scalar, M: LanguageModel<T> + ?Sized, R: Rng + ?Sized>(
    model: &M,
    prefix: &[TokenId],
    rng: &mut R,
    opts: &SampleOptions,
) -> Result<Sampled, LmError> {
    if prefix.is_empty() {
        return Err(LmError::EmptyPrefix);
    }
    let limit = model.context_limit();
    if prefix.len() >= limit {
        return Err(LmError::PrefixTooLong {
            len: prefix.len(),
            limit,
        });
    }
    if let Some(&bad) = prefix.iter().find(|&&t| t as usize >= model.vocab_size()) {
        return Err(LmError::OutOfVocab(bad));
    }
    let mut state = model.start();
    let mut row = Vec::new();
    for &t in prefix {
        row = model.feed(&mut state, t);
    }
    let mut out = Vec::new();
    let mut len = prefix.len();
    while out.len() < opts.max_new {
        let tok = draw_token(&row, opts.temperature, opts.top_k, rng);
        if opts.stop.contains(&tok) {
            return Ok(Sampled {
                tokens: out,
                stopped: true,
            });
        }
        out.push(tok);
        len += 1;
        if len >= limit {
            break;
        }
        row = model.feed(&mut state, tok);
    }
    Ok(Sampled {
        tokens: out,
        stopped: false,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
enum ModelData<T> {
    Transformer { config: TransformerConfig, params: Vec<T> },
    Ngram { config: NGramConfig, tables: ngram::NGramTables },
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile<T> {
    version: u32,
    scalar: String,
    vocab_size: usize,
    vocab_hash: String,
    #[serde(flatten)]
    model: ModelData<T>,
}

/// A model together with the hash of the vocabulary it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub model: AnyModel<T>,
    pub vocab_hash: String,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_json(&self) -> Result<String, LmError> {
        let (vocab_size, model) = match &self.model {
            AnyModel::Transformer(m) => (
                m.vocab_size(),
                ModelData::Transformer {
                    config: m.config().clone(),
                    params: m.params().to_vec(),
                },
            ),
            AnyModel::NGram(m) => (
                m.vocab_size(),
                ModelData::Ngram {
                    config: m.config().clone(),
                    tables: m.to_tables(),
                },
            ),
        };
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            scalar: T::NAME.to_string(),
            vocab_size,
            vocab_hash: self.vocab_hash.clone(),
            model,
        };
        serde_json::to_string(&file).map_err(|e| LmError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, LmError> {
        let file: CheckpointFile<T> = serde_json::from_str(text).map_err(|e| LmError::Checkpoint(e.to_string()))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(LmError::Checkpoint(format!("unsupported version {}", file.version)));
        }
        if file.scalar != T::NAME {
            return Err(LmError::Checkpoint(format!(
                "checkpoint stores {} parameters, expected {}",
                file.scalar,
                T::NAME
            )));
        }
        let model = match file.model {
            ModelData::Transformer { config, params } => {
                AnyModel::Transformer(Transformer::from_params(config, file.vocab_size, params)?)
            }
            ModelData::Ngram { config, tables } => AnyModel::NGram(NGram::from_tables(config, file.vocab_size, tables)?),
        };
        Ok(Checkpoint {
            model,
            vocab_hash: file.vocab_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LmError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Scalar type name a checkpoint file was written with.
pub fn checkpoint_scalar(text: &str) -> Result<String, LmError> {
    #[derive(Deserialize)]
    struct Head {
        scalar: String,
    }
    serde_json::from_str::<Head>(text)
        .map(|h| h.scalar)
        .map_err(|e| LmError::Checkpoint(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_cfg() -> TransformerConfig {
        TransformerConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 32,
            context: 12,
            batch_size: 4,
            steps: 60,
            learning_rate: 1e-2,
            warmup_steps: 5,
            log_every: 0,
            ..TransformerConfig::default()
        }
    }

    fn patterned(n: usize) -> Vec<Vec<TokenId>> {
        (0..n).map(|i| vec![1, 2 + (i % 3) as TokenId, 5, 6, 7, 0]).collect()
    }

    #[test]
    fn training_is_reproducible_and_learns() {
        let data = patterned(200);
        let held: Vec<TokenId> = patterned(3).concat();
        let cfg = LmConfig::Transformer(toy_cfg());
        let a = train_lm::<f32>(&data, 8, &cfg).unwrap();
        let b = train_lm::<f32>(&data, 8, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        let exclude = BTreeSet::new();
        let la = log_likelihood(&a.model, &held, &exclude).unwrap();
        let lb = log_likelihood(&b.model, &held, &exclude).unwrap();
        assert_eq!(la.total.to_bits(), lb.total.to_bits());
        let init = AnyModel::Transformer(Transformer::<f32>::new(toy_cfg(), 8).unwrap());
        let l0 = log_likelihood(&init, &held, &exclude).unwrap();
        assert!(la.perplexity() < l0.perplexity());
        assert!(a.losses.last().unwrap() < &a.losses[0]);
    }

    #[test]
    fn fast_f32_transcendentals_track_std() {
        let xs: Vec<f32> = (-8000..=8000).map(|i| i as f32 * 0.01).collect();
        let mut e = xs.clone();
        let sum = f32::exp_shifted(&mut e, 1.5);
        for (x, y) in xs.iter().zip(&e) {
            let want = (x - 1.5).exp();
            assert!(((y - want) / want).abs() < 4e-7, "exp({x})");
        }
        let want: f64 = xs.iter().map(|x| ((x - 1.5) as f64).exp()).sum();
        assert!((sum as f64 / want - 1.0).abs() < 1e-5);
        let mut t = xs.clone();
        f32::tanh_in_place(&mut t);
        for (x, y) in xs.iter().zip(&t) {
            assert!((y - x.tanh()).abs() < 1e-6, "tanh({x})");
        }
    }

    #[test]
    fn too_short_stream_is_rejected() {
        let err = train_lm::<f32>(&[vec![1, 2, 3]], 8, &LmConfig::Transformer(toy_cfg()));
        assert!(matches!(err, Err(LmError::StreamTooShort { .. })));
    }

    #[test]
    fn scoring_contract() {
        let m = AnyModel::Transformer(Transformer::<f64>::new(toy_cfg(), 8).unwrap());
        let toks = [1, 2, 3, 4, 5];
        let ll = log_likelihood(&m, &toks, &BTreeSet::new()).unwrap();
        let sum: f64 = ll.per_token.iter().map(|s| s.logprob).sum();
        assert!((ll.total - sum).abs() < 1e-12);
        assert_eq!(ll.per_token.len(), 4);
        let all: BTreeSet<TokenId> = (0..8).collect();
        assert!(matches!(log_likelihood(&m, &toks, &all), Err(LmError::NothingScored)));
        assert!(matches!(log_likelihood(&m, &[1], &BTreeSet::new()), Err(LmError::TooShort)));
        assert!(matches!(log_likelihood(&m, &[1, 99], &BTreeSet::new()), Err(LmError::OutOfVocab(99))));
    }

    #[test]
    fn near_uniform_model_has_vocab_sized_perplexity() {
        let cfg = TransformerConfig {
            init_std: 1e-3,
            context: 64,
            ..toy_cfg()
        };
        let m = Transformer::<f64>::new(cfg, 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let toks: Vec<TokenId> = (0..64).map(|_| rng.gen_range(0..40)).collect();
        let ppl = log_likelihood(&m, &toks, &BTreeSet::new()).unwrap().perplexity();
        assert!((ppl / 40.0 - 1.0).abs() < 0.05, "perplexity {ppl}");
    }

    #[test]
    fn sampling_is_seeded_and_greedy_at_zero_temperature() {
        let data = patterned(200);
        let m = train_lm::<f32>(&data, 8, &LmConfig::Transformer(toy_cfg())).unwrap().model;
        let opts = SampleOptions {
            max_new: 8,
            ..SampleOptions::default()
        };
        let a = sample(&m, &[1], &mut ChaCha8Rng::seed_from_u64(3), &opts).unwrap();
        let b = sample(&m, &[1], &mut ChaCha8Rng::seed_from_u64(3), &opts).unwrap();
        assert_eq!(a, b);

        let greedy = SampleOptions {
            temperature: 0.0,
            max_new: 6,
            ..SampleOptions::default()
        };
        let g = sample(&m, &[1], &mut ChaCha8Rng::seed_from_u64(0), &greedy).unwrap();
        let mut state = m.start();
        let mut row = m.feed(&mut state, 1);
        for &t in &g.tokens {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .unwrap()
                .0;
            assert_eq!(t as usize, argmax);
            row = m.feed(&mut state, t);
        }
        let cold = SampleOptions {
            temperature: 1e-4,
            max_new: 6,
            ..SampleOptions::default()
        };
        let c = sample(&m, &[1], &mut ChaCha8Rng::seed_from_u64(9), &cold).unwrap();
        assert_eq!(c.tokens, g.tokens);
    }

    #[test]
    fn sampling_stops_and_respects_limits() {
        let m = AnyModel::NGram(NGram::<f64>::train(&patterned(50), 8, NGramConfig { order: 3 }).unwrap());
        let opts = SampleOptions {
            stop: vec![0],
            max_new: 100,
            temperature: 0.0,
            ..SampleOptions::default()
        };
        let s = sample(&m, &[1, 2], &mut ChaCha8Rng::seed_from_u64(0), &opts).unwrap();
        assert!(s.stopped);
        assert_eq!(s.tokens, [5, 6, 7]);
        let t = AnyModel::Transformer(Transformer::<f32>::new(toy_cfg(), 8).unwrap());
        assert!(matches!(
            sample(&t, &[1; 12], &mut ChaCha8Rng::seed_from_u64(0), &SampleOptions::default()),
            Err(LmError::PrefixTooLong { .. })
        ));
        assert!(matches!(sample(&t, &[], &mut ChaCha8Rng::seed_from_u64(0), &opts), Err(LmError::EmptyPrefix)));
    }

    #[test]
    fn distributions_normalize() {
        let t = AnyModel::Transformer(Transformer::<f32>::new(TransformerConfig { init_std: 0.5, ..toy_cfg() }, 8).unwrap());
        let n = AnyModel::NGram(NGram::<f64>::train(&patterned(20), 8, NGramConfig::default()).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let ctx: Vec<TokenId> = (0..rng.gen_range(1..12)).map(|_| rng.gen_range(0..8)).collect();
            let rows = t.sequence_logprobs(&ctx);
            let last = &rows[rows.len() - 8..];
            let total: f64 = last.iter().map(|v| (*v as f64).exp()).sum();
            assert!((total - 1.0).abs() <= 1e-6, "sum {total}");
            let rows = n.sequence_logprobs(&ctx);
            let total: f64 = rows[rows.len() - 8..].iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn checkpoints_round_trip_bitwise() {
        let m = train_lm::<f32>(&patterned(50), 8, &LmConfig::Transformer(toy_cfg())).unwrap().model;
        let ck = Checkpoint {
            model: m,
            vocab_hash: "abc".into(),
        };
        let back = Checkpoint::<f32>::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert!(Checkpoint::<f64>::from_json(&ck.to_json().unwrap()).is_err());

        let n = AnyModel::NGram(NGram::<f64>::train(&patterned(5), 8, NGramConfig::default()).unwrap());
        let ck = Checkpoint {
            model: n,
            vocab_hash: String::new(),
        };
        assert_eq!(Checkpoint::<f64>::from_json(&ck.to_json().unwrap()).unwrap(), ck);
    }

    #[test]
    fn config_parses_from_toml_shape() {
        let cfg: LmConfig = serde_json::from_str(r#"{"backend":"ngram","order":3}"#).unwrap();
        assert_eq!(cfg, LmConfig::Ngram(NGramConfig { order: 3 }));
        let cfg: LmConfig = serde_json::from_str(r#"{"backend":"transformer","d_model":32}"#).unwrap();
        match cfg {
            LmConfig::Transformer(t) => assert_eq!(t.d_model, 32),
            _ => panic!(),
        }
    }
}
