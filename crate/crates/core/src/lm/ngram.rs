//! Interpolated Witten-Bell n-gram model.

use std::collections::{BTreeMap, HashMap};
use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

use super::{LmError, Scalar};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NGramConfig {
    pub order: usize,
}

impl Default for NGramConfig {
    fn default() -> Self {
        NGramConfig { order: 4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Followers {
    total: u64,
    next: BTreeMap<TokenId, u64>,
}

/// One context and its `(next, count)` pairs.
pub type ContextCounts = (Vec<TokenId>, Vec<(TokenId, u64)>);

/// Count tables in a serializable shape: per order, sorted
/// `(context, [(next, count)])` entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NGramTables {
    pub tables: Vec<Vec<ContextCounts>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGram<T> {
    cfg: NGramConfig,
    vocab_size: usize,
    tables: Vec<HashMap<Vec<TokenId>, Followers>>,
    _scalar: PhantomData<T>,
}

#[derive(Debug, Clone, Default)]
pub struct NGramState {
    history: Vec<TokenId>,
}

impl<T: Scalar> NGram<T> {
    pub fn train(segments: &[Vec<TokenId>], vocab_size: usize, cfg: NGramConfig) -> Result<Self, LmError> {
        if cfg.order == 0 {
            return Err(LmError::Config("n-gram order must be positive".into()));
        }
        let stream: Vec<TokenId> = segments.iter().flatten().copied().collect();
        if let Some(&bad) = stream.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(LmError::OutOfVocab(bad));
        }
        let mut tables: Vec<HashMap<Vec<TokenId>, Followers>> = vec![HashMap::new(); cfg.order];
        for i in 0..stream.len() {
            for (k, table) in tables.iter_mut().enumerate() {
                if k > i {
                    break;
                }
                let f = table.entry(stream[i - k..i].to_vec()).or_default();
                f.total += 1;
                *f.next.entry(stream[i]).or_default() += 1;
            }
        }
        Ok(NGram {
            cfg,
            vocab_size,
            tables,
            _scalar: PhantomData,
        })
    }

    pub fn config(&self) -> &NGramConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn to_tables(&self) -> NGramTables {
        NGramTables {
            tables: self
                .tables
                .iter()
                .map(|t| {
                    let mut v: Vec<ContextCounts> = t
                        .iter()
                        .map(|(ctx, f)| (ctx.clone(), f.next.iter().map(|(a, b)| (*a, *b)).collect()))
                        .collect();
                    v.sort();
                    v
                })
                .collect(),
        }
    }

    pub fn from_tables(cfg: NGramConfig, vocab_size: usize, data: NGramTables) -> Result<Self, LmError> {
        if data.tables.len() != cfg.order {
            return Err(LmError::Checkpoint(format!(
                "expected {} count tables, found {}",
                cfg.order,
                data.tables.len()
            )));
        }
        let tables = data
            .tables
            .into_iter()
            .map(|t| {
                t.into_iter()
                    .map(|(ctx, next)| {
                        let next: BTreeMap<TokenId, u64> = next.into_iter().collect();
                        let total = next.values().sum();
                        (ctx, Followers { total, next })
                    })
                    .collect()
            })
            .collect();
        Ok(NGram {
            cfg,
            vocab_size,
            tables,
            _scalar: PhantomData,
        })
    }

    /// Next-token probabilities after `history` (only the last `order - 1`
    /// tokens matter).
    pub fn distribution(&self, history: &[TokenId]) -> Vec<f64> {
        let mut p = vec![1.0 / self.vocab_size as f64; self.vocab_size];
        for k in 0..self.cfg.order.min(history.len() + 1) {
            let ctx = &history[history.len() - k..];
            let Some(f) = self.tables[k].get(ctx) else { break };
            let distinct = f.next.len() as f64;
            let denom = f.total as f64 + distinct;
            let back = distinct / denom;
            for v in p.iter_mut() {
                *v *= back;
            }
            for (&w, &c) in &f.next {
                p[w as usize] += c as f64 / denom;
            }
        }
        p
    }

    pub fn start(&self) -> NGramState {
        NGramState::default()
    }

    pub fn feed(&self, state: &mut NGramState, token: TokenId) -> Vec<T> {
        state.history.push(token);
        let keep = self.cfg.order.saturating_sub(1);
        if state.history.len() > keep {
            state.history.drain(..state.history.len() - keep);
        }
        self.distribution(&state.history).into_iter().map(|p| T::of(p.ln())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distributions_normalize_and_follow_counts() {
        let seg = vec![vec![0, 1, 2, 0, 1, 2, 0, 1, 3]];
        let m: NGram<f64> = NGram::train(&seg, 5, NGramConfig { order: 3 }).unwrap();
        let p = m.distribution(&[0, 1]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[2] > p[3] && p[3] > p[4]);
        assert!(p[4] > 0.0);
    }

    #[test]
    fn untrained_contexts_fall_back_to_uniform() {
        let m: NGram<f64> = NGram::train(&[], 7, NGramConfig::default()).unwrap();
        assert!(m.distribution(&[1, 2, 3]).iter().all(|&p| (p - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn tables_round_trip() {
        let seg = vec![vec![0, 1, 2, 2, 1, 0]];
        let m: NGram<f32> = NGram::train(&seg, 3, NGramConfig { order: 2 }).unwrap();
        let back = NGram::from_tables(NGramConfig { order: 2 }, 3, m.to_tables()).unwrap();
        assert_eq!(m, back);
    }
}
