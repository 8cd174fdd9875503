//! Token ids and the concatenated document corpus.

use crate::{Error, Result};

/// A vocabulary token id. Valid corpus tokens are `< vocab_size`.
pub type TokenId = u32;

/// Reserved document separator. Never a valid vocabulary token; compares
/// greater than every real token, which keeps suffix ordering simple.
pub const SENTINEL: TokenId = u32::MAX;

/// Documents concatenated into one token sequence, each document followed by
/// a [`SENTINEL`]. An empty corpus (no documents) has no tokens at all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    tokens: Vec<TokenId>,
    doc_count: usize,
    vocab_size: u32,
}

/// Concatenate `documents` into a [`Corpus`], separating and terminating each
/// document with [`SENTINEL`].
pub fn ingest<D>(documents: &[D], vocab_size: u32) -> Result<Corpus>
where
    D: AsRef<[TokenId]>,
{
    let total: usize = documents.iter().map(|d| d.as_ref().len() + 1).sum();
    let mut tokens = Vec::with_capacity(total);
    for (index, doc) in documents.iter().enumerate() {
        let doc = doc.as_ref();
        if doc.is_empty() {
            return Err(Error::EmptyDocument(index));
        }
        for &token in doc {
            if token >= vocab_size {
                return Err(Error::TokenOutOfRange { token, vocab_size });
            }
            tokens.push(token);
        }
        tokens.push(SENTINEL);
    }
    Ok(Corpus {
        tokens,
        doc_count: documents.len(),
        vocab_size,
    })
}

impl Corpus {
    /// Rebuild a corpus from an already-concatenated token sequence, checking
    /// the sentinel structure (used when loading datastore files).
    pub fn from_tokens(tokens: Vec<TokenId>, vocab_size: u32) -> Result<Self> {
        let mut doc_count = 0usize;
        let mut prev_sentinel = true; // start of the first document
        for &token in &tokens {
            if token == SENTINEL {
                if prev_sentinel {
                    return Err(Error::EmptyDocument(doc_count));
                }
                doc_count += 1;
                prev_sentinel = true;
            } else {
                if token >= vocab_size {
                    return Err(Error::TokenOutOfRange { token, vocab_size });
                }
                prev_sentinel = false;
            }
        }
        if !tokens.is_empty() && *tokens.last().unwrap() != SENTINEL {
            return Err(Error::InvalidFormat(
                "corpus does not end with a sentinel".into(),
            ));
        }
        Ok(Corpus {
            tokens,
            doc_count,
            vocab_size,
        })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    /// Iterate over the documents (sentinel-free slices).
    pub fn documents(&self) -> impl Iterator<Item = &[TokenId]> {
        self.tokens
            .split(|&t| t == SENTINEL)
            .filter(|d| !d.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ingest_concatenates_with_sentinels() {
        let corpus = ingest(&[vec![5, 6], vec![5, 7]], 10).unwrap();
        assert_eq!(corpus.tokens(), &[5, 6, SENTINEL, 5, 7, SENTINEL]);
        assert_eq!(corpus.doc_count(), 2);
        assert_eq!(corpus.vocab_size(), 10);
    }

    #[test]
    fn ingest_empty_input_is_a_valid_empty_corpus() {
        let corpus = ingest::<Vec<TokenId>>(&[], 10).unwrap();
        assert!(corpus.is_empty());
        assert_eq!(corpus.doc_count(), 0);
    }

    #[test]
    fn ingest_rejects_out_of_range_token() {
        let err = ingest(&[vec![5, 10]], 10).unwrap_err();
        assert!(matches!(
            err,
            Error::TokenOutOfRange {
                token: 10,
                vocab_size: 10
            }
        ));
    }

    #[test]
    fn ingest_rejects_empty_document() {
        let err = ingest(&[vec![1], vec![]], 10).unwrap_err();
        assert!(matches!(err, Error::EmptyDocument(1)));
    }

    #[test]
    fn from_tokens_round_trips_and_validates() {
        let corpus = ingest(&[vec![1, 2], vec![3]], 4).unwrap();
        let rebuilt = Corpus::from_tokens(corpus.tokens().to_vec(), 4).unwrap();
        assert_eq!(rebuilt, corpus);

        let err = Corpus::from_tokens(vec![1, 2], 4).unwrap_err();
        assert!(matches!(err, Error::InvalidFormat(_)));
        let err = Corpus::from_tokens(vec![SENTINEL], 4).unwrap_err();
        assert!(matches!(err, Error::EmptyDocument(0)));
    }

    #[test]
    fn documents_splits_back() {
        let corpus = ingest(&[vec![1, 2], vec![3]], 4).unwrap();
        let docs: Vec<&[TokenId]> = corpus.documents().collect();
        assert_eq!(docs, vec![&[1, 2][..], &[3][..]]);
    }
}
