//! Text normalisation, vocabularies, fixed-length sequences and the TF-IDF
//! baseline.

mod tfidf;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use tfidf::{tfidf_logreg_baseline, LogRegOptions, TfidfVectorizer};

pub const PAD_ID: usize = 0;
pub const OOV_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<oov>";

/// Lowercases and splits on every non-alphanumeric character.
pub fn preprocess_text(raw: &str) -> Vec<String> {
    raw.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Token to id map with `0` reserved for padding and `1` for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    /// Number of ids including the two reserved ones.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn to_json(&self) -> Result<String> {
        let map: BTreeMap<&str, usize> = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        Ok(serde_json::to_string_pretty(&map)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let map: BTreeMap<String, usize> = serde_json::from_str(json)?;
        let mut tokens = vec![None; map.len()];
        for (token, id) in map {
            let slot = tokens
                .get_mut(id)
                .ok_or_else(|| Error::Data(format!("vocab id {id} is not contiguous")))?;
            if slot.replace(token).is_some() {
                return Err(Error::Data(format!("vocab id {id} assigned twice")));
            }
        }
        let tokens: Vec<String> = tokens.into_iter().map(Option::unwrap).collect();
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[OOV_ID] != OOV_TOKEN {
            return Err(Error::Data("vocab lacks the reserved padding/oov ids".into()));
        }
        Ok(Vocab::from_tokens(tokens))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Vocab::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Keeps tokens seen at least `min_count` times, most frequent first with
/// lexicographic tie-breaks. `max_size` caps the number of non-reserved ids.
pub fn build_vocab(corpus: &[Vec<String>], min_count: usize, max_size: Option<usize>) -> Result<Vocab> {
    if min_count < 1 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    if corpus.is_empty() {
        return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        for t in doc {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(t, n)| n >= min_count && t != PAD_TOKEN && t != OOV_TOKEN)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    if let Some(max) = max_size {
        ranked.truncate(max);
    }
    let tokens = [PAD_TOKEN, OOV_TOKEN]
        .into_iter()
        .chain(ranked.into_iter().map(|(t, _)| t))
        .map(str::to_string)
        .collect();
    Ok(Vocab::from_tokens(tokens))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    /// Exactly `max_len` ids, right-padded with [`PAD_ID`].
    pub ids: Vec<usize>,
    pub true_length: usize,
}

/// Maps tokens to ids, keeping the first `max_len` and right-padding the rest.
pub fn encode_sequence(tokens: &[String], vocab: &Vocab, max_len: usize) -> Result<TokenSequence> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let true_length = tokens.len().min(max_len);
    let mut ids: Vec<usize> = tokens[..true_length].iter().map(|t| vocab.id(t)).collect();
    ids.resize(max_len, PAD_ID);
    Ok(TokenSequence { ids, true_length })
}

/// Tokens of the unpadded prefix; unknown ids come back as [`OOV_TOKEN`].
pub fn decode_sequence(seq: &TokenSequence, vocab: &Vocab) -> Vec<String> {
    seq.ids[..seq.true_length]
        .iter()
        .map(|&id| vocab.token(id).unwrap_or(OOV_TOKEN).to_string())
        .collect()
}
