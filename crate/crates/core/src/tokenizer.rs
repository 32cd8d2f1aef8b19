//! Regex-level SMILES tokenization, vocabulary construction and id framing.
//!
//! Token rules: a bracket atom `[...]` is one token, `Cl` and `Br` are one
//! token each, `%NN` ring closures are one token, and every other character
//! is its own token. Joining the tokens always gives back the input.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const BOS: u32 = 3;
pub const EOS: u32 = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[MASK]", "[BOS]", "[EOS]"];
pub const NUM_SPECIAL: u32 = SPECIAL_TOKENS.len() as u32;

/// Default maximum framed sequence length.
pub const DEFAULT_MAX_LEN: usize = 202;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TokenizeError {
    #[error("empty SMILES")]
    Empty,
    #[error("'[' at byte {0} has no closing ']'")]
    UnmatchedBracket(usize),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("sequence needs {needed} slots but the maximum is {max}")]
    TooLong { needed: usize, max: usize },
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub source: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Length once framed by [BOS] and [EOS].
    pub fn framed_len(&self) -> usize {
        self.tokens.len() + 2
    }
}

pub fn tokenize(smiles: &str) -> Result<TokenSequence, TokenizeError> {
    if smiles.is_empty() {
        return Err(TokenizeError::Empty);
    }
    let bytes = smiles.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let len = match bytes[i] {
            b'[' => match bytes[i..].iter().position(|&b| b == b']') {
                Some(close) => close + 1,
                None => return Err(TokenizeError::UnmatchedBracket(i)),
            },
            b'C' if bytes.get(i + 1) == Some(&b'l') => 2,
            b'B' if bytes.get(i + 1) == Some(&b'r') => 2,
            b'%' if bytes
                .get(i + 1..i + 3)
                .is_some_and(|d| d.iter().all(u8::is_ascii_digit)) =>
            {
                3
            }
            _ => smiles[i..].chars().next().map_or(1, char::len_utf8),
        };
        tokens.push(smiles[i..i + len].to_string());
        i += len;
    }
    Ok(TokenSequence {
        tokens,
        source: smiles.to_string(),
    })
}

/// Bijective token/id table; ids 0..5 are the special tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Builds from an id-ordered token list, which must start with the
    /// special tokens and contain no duplicates.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary, TokenizeError> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens.iter().zip(SPECIAL_TOKENS).any(|(t, s)| t != s)
        {
            return Err(TokenizeError::InvalidVocabulary(
                "special tokens must occupy ids 0-4".to_string(),
            ));
        }
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(TokenizeError::InvalidVocabulary(alloc::format!(
                    "duplicate token {t}"
                )));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        id < NUM_SPECIAL
    }
}

/// Specials followed by corpus tokens in first-seen order.
pub fn build_vocab<I, S>(corpus: I) -> Result<Vocabulary, TokenizeError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut seen: BTreeMap<String, ()> = tokens.iter().map(|t| (t.clone(), ())).collect();
    let mut lines = 0usize;
    for smiles in corpus {
        lines += 1;
        for t in tokenize(smiles.as_ref())?.tokens {
            if seen.insert(t.clone(), ()).is_none() {
                tokens.push(t);
            }
        }
    }
    if lines == 0 {
        return Err(TokenizeError::EmptyCorpus);
    }
    Vocabulary::from_tokens(tokens)
}

/// `[BOS] ids [EOS]` padded with [PAD] to exactly `max_len`.
pub fn encode(
    ts: &TokenSequence,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<u32>, TokenizeError> {
    let needed = ts.framed_len();
    if needed > max_len {
        return Err(TokenizeError::TooLong {
            needed,
            max: max_len,
        });
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOS);
    ids.extend(ts.tokens.iter().map(|t| vocab.id_of(t).unwrap_or(UNK)));
    ids.push(EOS);
    ids.resize(max_len, PAD);
    Ok(ids)
}

/// Drops special ids and concatenates the remaining tokens.
pub fn decode(ids: &[u32], vocab: &Vocabulary) -> Result<String, TokenizeError> {
    let mut out = String::new();
    for &id in ids {
        let tok = vocab.token_of(id).ok_or(TokenizeError::UnknownId(id))?;
        if !Vocabulary::is_special(id) {
            out.push_str(tok);
        }
    }
    Ok(out)
}
