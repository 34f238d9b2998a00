//! Order-n token-level Markov baseline. Transition rows carry add-one
//! smoothing over the emittable vocabulary; the start and pad markers are
//! never emitted, so their probability is pinned to zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GeneratorError;
use crate::smiles::{FramedSequence, Vocabulary};

pub const DEFAULT_MARKOV_ORDER: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "MarkovTable", into = "MarkovTable")]
pub struct MarkovModel {
    order: usize,
    vocab_size: usize,
    block_size: usize,
    start_id: u32,
    pad_id: u32,
    rows: BTreeMap<Vec<u32>, Vec<f64>>,
}

/// Serialized form: JSON objects cannot key on id tuples, so rows are
/// stored as explicit (context, probabilities) pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MarkovTable {
    order: usize,
    vocab_size: usize,
    block_size: usize,
    start_id: u32,
    pad_id: u32,
    entries: Vec<(Vec<u32>, Vec<f64>)>,
}

impl From<MarkovTable> for MarkovModel {
    fn from(t: MarkovTable) -> Self {
        MarkovModel {
            order: t.order,
            vocab_size: t.vocab_size,
            block_size: t.block_size,
            start_id: t.start_id,
            pad_id: t.pad_id,
            rows: t.entries.into_iter().collect(),
        }
    }
}

impl From<MarkovModel> for MarkovTable {
    fn from(m: MarkovModel) -> Self {
        MarkovTable {
            order: m.order,
            vocab_size: m.vocab_size,
            block_size: m.block_size,
            start_id: m.start_id,
            pad_id: m.pad_id,
            entries: m.rows.into_iter().collect(),
        }
    }
}

fn padded_context(prefix: &[u32], order: usize, start_id: u32) -> Vec<u32> {
    let mut ctx = vec![start_id; order];
    let take = prefix.len().min(order);
    ctx[order - take..].copy_from_slice(&prefix[prefix.len() - take..]);
    ctx
}

impl MarkovModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn context_count(&self) -> usize {
        self.rows.len()
    }

    fn uniform_row(&self) -> Vec<f64> {
        let emittable = (self.vocab_size - 2) as f64;
        (0..self.vocab_size as u32)
            .map(|id| {
                if id == self.start_id || id == self.pad_id {
                    0.0
                } else {
                    1.0 / emittable
                }
            })
            .collect()
    }

    /// Next-token distribution after `prefix` (a start-led id sequence).
    /// Unseen contexts fall back to uniform over the emittable tokens.
    pub(crate) fn next_distribution(&self, prefix: &[u32]) -> Vec<f64> {
        let ctx = padded_context(prefix, self.order, self.start_id);
        match self.rows.get(&ctx) {
            Some(row) => row.clone(),
            None => self.uniform_row(),
        }
    }

    /// The stored transition row for an explicit context, for inspection;
    /// the context is left-padded or truncated to the model order.
    pub fn transition_row(&self, context: &[u32]) -> Vec<f64> {
        let mut prefix = vec![self.start_id];
        prefix.extend_from_slice(context);
        self.next_distribution(&prefix)
    }

    /// Fine-tuning step for a count model: every context present in
    /// `update` moves `weight` of the way toward the update's row, contexts
    /// only the update knows are adopted as-is, and contexts the update
    /// never saw keep their current row.
    pub fn absorb(&mut self, update: &MarkovModel, weight: f64) -> Result<(), GeneratorError> {
        if !(weight.is_finite() && (0.0..=1.0).contains(&weight)) {
            return Err(GeneratorError::InvalidConfig("blend weight must lie in [0, 1]"));
        }
        if update.order != self.order
            || update.vocab_size != self.vocab_size
            || update.start_id != self.start_id
            || update.pad_id != self.pad_id
        {
            return Err(GeneratorError::InvalidConfig("blended models must share order and vocabulary"));
        }
        for (ctx, new_row) in &update.rows {
            match self.rows.get_mut(ctx) {
                Some(row) => {
                    for (old, new) in row.iter_mut().zip(new_row) {
                        *old = (1.0 - weight) * *old + weight * new;
                    }
                }
                None => {
                    self.rows.insert(ctx.clone(), new_row.clone());
                }
            }
        }
        self.block_size = self.block_size.max(update.block_size);
        Ok(())
    }
}

/// Counts order-n transitions over framed sequences (trimmed at the end
/// marker) and normalizes with add-one smoothing.
pub fn fit_markov(
    corpus: &[FramedSequence],
    order: usize,
    vocab: &Vocabulary,
) -> Result<MarkovModel, GeneratorError> {
    if order == 0 {
        return Err(GeneratorError::InvalidConfig("markov order must be at least 1"));
    }
    if corpus.is_empty() {
        return Err(GeneratorError::EmptyCorpus);
    }
    let start = vocab.start_id();
    let end = vocab.end_id();
    let pad = vocab.pad_id();
    let mut counts: BTreeMap<Vec<u32>, BTreeMap<u32, u64>> = BTreeMap::new();
    let mut max_len = 0usize;
    for framed in corpus {
        let ids = framed.ids();
        max_len = max_len.max(ids.len());
        let stop = ids
            .iter()
            .position(|&id| id == end)
            .map(|p| p + 1)
            .unwrap_or(ids.len());
        let eff = &ids[..stop];
        for t in 1..eff.len() {
            let ctx = padded_context(&eff[..t], order, start);
            *counts.entry(ctx).or_default().entry(eff[t]).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(GeneratorError::EmptyCorpus);
    }
    let vocab_size = vocab.len();
    let emittable = (vocab_size - 2) as f64;
    let rows = counts
        .into_iter()
        .map(|(ctx, by_token)| {
            let total: u64 = by_token.values().sum();
            let denom = total as f64 + emittable;
            let row: Vec<f64> = (0..vocab_size as u32)
                .map(|id| {
                    if id == start || id == pad {
                        0.0
                    } else {
                        let c = by_token.get(&id).copied().unwrap_or(0);
                        (c as f64 + 1.0) / denom
                    }
                })
                .collect();
            (ctx, row)
        })
        .collect();
    Ok(MarkovModel {
        order,
        vocab_size,
        block_size: max_len.saturating_sub(2),
        start_id: start,
        pad_id: pad,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::{build_vocabulary, frame, tokenize};

    fn fit_on(strings: &[&str], order: usize) -> (MarkovModel, Vocabulary) {
        let (vocab, _) = build_vocabulary(strings.iter(), 1).unwrap();
        let block = strings
            .iter()
            .map(|s| tokenize(s, &vocab).unwrap().len())
            .max()
            .unwrap();
        let frames: Vec<FramedSequence> = strings
            .iter()
            .map(|s| frame(&tokenize(s, &vocab).unwrap(), block, &vocab).unwrap())
            .collect();
        (fit_markov(&frames, order, &vocab).unwrap(), vocab)
    }

    #[test]
    fn transition_rows_sum_to_one() {
        let (model, _) = fit_on(&["CCO", "CC(C)O", "CCN"], 2);
        assert!(model.context_count() > 0);
        for prefix_ctx in [vec![], vec![3u32], vec![3, 3]] {
            let row = model.transition_row(&prefix_ctx);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row sums to {sum}");
        }
    }

    #[test]
    fn every_stored_row_is_a_distribution() {
        let (model, _) = fit_on(&["CC(C)O", "CCCC", "COC"], 3);
        for row in model.rows.values() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn start_and_pad_are_never_emitted() {
        let (model, vocab) = fit_on(&["CCO", "CCN"], 1);
        for row in model.rows.values() {
            assert_eq!(row[vocab.start_id() as usize], 0.0);
            assert_eq!(row[vocab.pad_id() as usize], 0.0);
        }
        let fallback = model.transition_row(&[vocab.end_id(), vocab.end_id()]);
        assert_eq!(fallback[vocab.start_id() as usize], 0.0);
        assert_eq!(fallback[vocab.pad_id() as usize], 0.0);
        assert!((fallback.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_carbon_dominates_its_row() {
        let (model, vocab) = fit_on(&["CC"], 1);
        let c = vocab.id("C").unwrap();
        let row = model.transition_row(&[c]);
        for (id, &p) in row.iter().enumerate() {
            assert!(row[c as usize] >= p, "P(C|C) beaten by id {id}");
        }
        let (model, vocab) = fit_on(&["CCC"], 1);
        let c = vocab.id("C").unwrap();
        let row = model.transition_row(&[c]);
        for (id, &p) in row.iter().enumerate() {
            if id != c as usize {
                assert!(row[c as usize] > p, "P(C|C) not strict over id {id}");
            }
        }
    }

    #[test]
    fn order_zero_and_empty_corpus_are_rejected() {
        let (vocab, _) = build_vocabulary(["CC"].iter(), 1).unwrap();
        let frames = vec![frame(&tokenize("CC", &vocab).unwrap(), 2, &vocab).unwrap()];
        assert!(matches!(
            fit_markov(&frames, 0, &vocab),
            Err(GeneratorError::InvalidConfig(_))
        ));
        assert!(matches!(
            fit_markov(&[], 1, &vocab),
            Err(GeneratorError::EmptyCorpus)
        ));
    }

    #[test]
    fn serde_round_trip_preserves_the_table() {
        let (model, _) = fit_on(&["CC(C)O", "CCN"], 2);
        let json = serde_json::to_string(&model).unwrap();
        let back: MarkovModel = serde_json::from_str(&json).unwrap();
        assert_eq!(model, back);
    }
}
