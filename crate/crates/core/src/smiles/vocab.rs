//! Token vocabulary, longest-match tokenization, and model input framing.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const START_TOKEN: &str = "!";
pub const END_TOKEN: &str = "~";
pub const PAD_TOKEN: &str = "<";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VocabError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("token {0:?} is not in the vocabulary")]
    ContainsPrunedToken(String),
    #[error("token sequence of length {len} exceeds the block size {block_size}")]
    TooLong { len: usize, block_size: usize },
    #[error("token id {0} is out of range")]
    UnknownTokenId(u32),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
}

/// Ordered token list with dense ids. The start, end, and pad tokens always
/// occupy ids 0, 1, and 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = VocabError;

    fn try_from(tokens: Vec<String>) -> Result<Self, VocabError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(VocabError::InvalidVocabulary(format!(
                    "duplicate token {t:?}"
                )));
            }
        }
        for (slot, reserved) in [(0, START_TOKEN), (1, END_TOKEN), (2, PAD_TOKEN)] {
            if tokens.get(slot).map(String::as_str) != Some(reserved) {
                return Err(VocabError::InvalidVocabulary(format!(
                    "reserved token {reserved:?} missing from slot {slot}"
                )));
            }
        }
        Ok(Vocabulary { tokens, index })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(vocab: Vocabulary) -> Vec<String> {
        vocab.tokens
    }
}

impl Vocabulary {
    pub fn start_id(&self) -> u32 {
        0
    }

    pub fn end_id(&self) -> u32 {
        1
    }

    pub fn pad_id(&self) -> u32 {
        2
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }
}

/// Split a SMILES string into surface tokens. Multi-character tokens are
/// bracket atoms, the two-letter halogens Cl and Br, and %NN ring closures;
/// everything else is a single character. An unclosed bracket swallows the
/// rest of the string, which then fails vocabulary lookup downstream.
pub fn segment(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let j = match bytes[i] {
            b'[' => match bytes[i..].iter().position(|&b| b == b']') {
                Some(off) => i + off + 1,
                None => bytes.len(),
            },
            b'%' if i + 2 < bytes.len()
                && bytes[i + 1].is_ascii_digit()
                && bytes[i + 2].is_ascii_digit() =>
            {
                i + 3
            }
            b'C' if bytes.get(i + 1) == Some(&b'l') => i + 2,
            b'B' if bytes.get(i + 1) == Some(&b'r') => i + 2,
            _ => {
                let ch = text[i..].chars().next().unwrap();
                i + ch.len_utf8()
            }
        };
        out.push(&text[i..j]);
        i = j;
    }
    out
}

/// Count token frequencies over a corpus and keep tokens seen at least
/// `min_count` times. Pruned tokens are returned alongside the vocabulary.
pub fn build_vocabulary<I, S>(
    corpus: I,
    min_count: usize,
) -> Result<(Vocabulary, BTreeSet<String>), VocabError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut any = false;
    for line in corpus {
        any = true;
        for token in segment(line.as_ref()) {
            *counts.entry(token.to_string()).or_insert(0) += 1;
        }
    }
    if !any {
        return Err(VocabError::EmptyCorpus);
    }
    let mut tokens: Vec<String> = vec![
        START_TOKEN.to_string(),
        END_TOKEN.to_string(),
        PAD_TOKEN.to_string(),
    ];
    let mut pruned = BTreeSet::new();
    for (token, count) in counts {
        if count >= min_count {
            tokens.push(token);
        } else {
            pruned.insert(token);
        }
    }
    Ok((
        Vocabulary::try_from(tokens).expect("constructed vocabulary is well formed"),
        pruned,
    ))
}

/// Map a SMILES string to token ids, longest match first. Any segment
/// missing from the vocabulary (pruned or never seen) is an error.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<Vec<u32>, VocabError> {
    segment(text)
        .into_iter()
        .map(|t| {
            if t == START_TOKEN || t == END_TOKEN || t == PAD_TOKEN {
                return Err(VocabError::ContainsPrunedToken(t.to_string()));
            }
            vocab
                .id(t)
                .ok_or_else(|| VocabError::ContainsPrunedToken(t.to_string()))
        })
        .collect()
}

pub fn detokenize(ids: &[u32], vocab: &Vocabulary) -> Result<String, VocabError> {
    let mut out = String::new();
    for &id in ids {
        out.push_str(vocab.token(id).ok_or(VocabError::UnknownTokenId(id))?);
    }
    Ok(out)
}

/// A fixed-length model input: start token, body, end token, then padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramedSequence {
    ids: Vec<u32>,
}

impl FramedSequence {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The token ids between the start and end markers.
    pub fn body(&self, vocab: &Vocabulary) -> &[u32] {
        let end = self
            .ids
            .iter()
            .position(|&id| id == vocab.end_id())
            .unwrap_or(self.ids.len());
        &self.ids[1..end]
    }
}

/// Wrap a token sequence as [start] + tokens + [end] + padding, with total
/// length block_size + 2.
pub fn frame(
    tokens: &[u32],
    block_size: usize,
    vocab: &Vocabulary,
) -> Result<FramedSequence, VocabError> {
    if tokens.len() > block_size {
        return Err(VocabError::TooLong {
            len: tokens.len(),
            block_size,
        });
    }
    debug_assert!(tokens
        .iter()
        .all(|&id| id != vocab.start_id() && id != vocab.end_id() && id != vocab.pad_id()));
    let mut ids = Vec::with_capacity(block_size + 2);
    ids.push(vocab.start_id());
    ids.extend_from_slice(tokens);
    ids.push(vocab.end_id());
    ids.resize(block_size + 2, vocab.pad_id());
    Ok(FramedSequence { ids })
}
