use std::collections::BTreeMap;

use super::DataError;

pub const PAD_ID: u32 = 0;
pub const SOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
/// First id handed to a corpus word.
pub const FIRST_WORD_ID: u32 = 4;

const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Lowercased whitespace tokens.
pub fn tokenize(sentence: &str) -> Vec<String> {
    sentence.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a known word; `None` for words that map to `<unk>`.
    pub fn get(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Word ids of a sentence followed by the end token.
    pub fn encode(&self, sentence: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = tokenize(sentence).iter().map(|t| self.id(t)).collect();
        ids.push(EOS_ID);
        ids
    }
}

/// Words seen at least `min_count` times get their own id, ordered by
/// descending frequency and then lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Vocabulary, DataError> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for line in corpus {
        for tok in tokenize(line.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count.max(1) && !RESERVED.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens: Vec<String> = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t))
        .collect();
    let ids = tokens
        .iter()
        .enumerate()
        .skip(FIRST_WORD_ID as usize)
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    Ok(Vocabulary { tokens, ids })
}
