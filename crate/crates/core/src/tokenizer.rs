//! Test/demo tokenizers. The engine itself only ever sees token ids; these
//! map text to ids for the CLI: a fixed byte-level tokenizer (vocab 256) and
//! a whitespace word tokenizer whose vocabulary is built from the corpus.

use std::collections::HashMap;
use std::path::Path;

use crate::token::TokenId;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub enum Tokenizer {
    /// One token per byte; vocab size 256.
    Bytes,
    /// Whitespace-separated words over a corpus-derived vocabulary.
    Words(WordVocab),
}

impl Tokenizer {
    pub fn vocab_size(&self) -> u32 {
        match self {
            Tokenizer::Bytes => 256,
            Tokenizer::Words(vocab) => vocab.len() as u32,
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        match self {
            Tokenizer::Bytes => Ok(text.bytes().map(TokenId::from).collect()),
            Tokenizer::Words(vocab) => text
                .split_whitespace()
                .map(|word| vocab.id_of(word))
                .collect(),
        }
    }

    pub fn decode(&self, tokens: &[TokenId]) -> String {
        match self {
            Tokenizer::Bytes => {
                let bytes: Vec<u8> = tokens.iter().map(|&t| t.min(0xff) as u8).collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
            Tokenizer::Words(vocab) => tokens
                .iter()
                .map(|&t| vocab.word_of(t))
                .collect::<Vec<_>>()
                .join(" "),
        }
    }
}

/// Sorted word list with id lookup. Word ids are assigned in lexicographic
/// order, so the vocabulary built from a given corpus is deterministic.
#[derive(Debug, Clone, Default)]
pub struct WordVocab {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl WordVocab {
    /// Collect the sorted set of whitespace-separated words across `texts`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<String> = texts
            .into_iter()
            .flat_map(str::split_whitespace)
            .map(str::to_owned)
            .collect();
        words.sort();
        words.dedup();
        Self::from_words(words)
    }

    fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        WordVocab { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id_of(&self, word: &str) -> Result<TokenId> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| Error::UnknownWord(word.to_owned()))
    }

    pub fn word_of(&self, id: TokenId) -> &str {
        self.words.get(id as usize).map_or("<unk>", String::as_str)
    }

    /// Sidecar file: one word per line, id = line index.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.words.iter().map(|w| w.len() + 1).sum());
        for word in &self.words {
            out.push_str(word);
            out.push('\n');
        }
        Ok(std::fs::write(path, out)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let words: Vec<String> = text.lines().map(str::to_owned).collect();
        Ok(Self::from_words(words))
    }
}

/// Conventional sidecar path for a datastore's word vocabulary:
/// `<datastore>.vocab`. Its presence is what marks a word-tokenized store.
pub fn vocab_sidecar_path(datastore_path: &Path) -> std::path::PathBuf {
    let mut name = datastore_path.as_os_str().to_owned();
    name.push(".vocab");
    std::path::PathBuf::from(name)
}
