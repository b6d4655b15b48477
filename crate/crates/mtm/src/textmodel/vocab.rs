//! Vocabulary with reserved ids and lowercase-whitespace tokenization.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::TextModelError;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const MASK_ID: u32 = 2;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const MASK_TOKEN: &str = "<mask>";

/// Token-to-id mapping with the three reserved ids at 0, 1, 2 and ids
/// contiguous from there.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    tokens: Vec<String>,
}

/// Lowercase the text, strip punctuation (every non-alphanumeric character
/// becomes a separator), and split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

impl Vocab {
    /// Build a vocabulary from raw texts. Tokens seen at least `min_count`
    /// times get ids in descending frequency order, ties broken
    /// lexicographically; everything else falls back to UNK at encode time.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Self, TextModelError> {
        if corpus.is_empty() {
            return Err(TextModelError::EmptyCorpus);
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for tok in tokenize(text.as_ref()) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));

        let mut tokens = vec![PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned(), MASK_TOKEN.to_owned()];
        tokens.extend(kept.into_iter().map(|(t, _)| t));
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { token_to_id, tokens }
    }

    /// Number of ids, reserved ones included.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Id of `token`, falling back to UNK.
    pub fn id_of(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Serialize as one `token<TAB>id` line per id, reserved ids included.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, tok) in self.tokens.iter().enumerate() {
            writeln!(out, "{tok}\t{i}").expect("string write");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), TextModelError> {
        std::fs::write(path, self.to_text()).map_err(|source| TextModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TextModelError> {
        let raw = std::fs::read_to_string(path).map_err(|source| TextModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&raw, &path.display().to_string())
    }

    /// Parse the `token<TAB>id` format, validating id contiguity and the
    /// reserved entries.
    pub fn parse(raw: &str, origin: &str) -> Result<Self, TextModelError> {
        let mut tokens = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            let bad = |reason: &str| TextModelError::VocabFile {
                path: origin.to_owned(),
                line: lineno + 1,
                reason: reason.to_owned(),
            };
            let (tok, id_str) = line.split_once('\t').ok_or_else(|| bad("missing TAB"))?;
            let id: u32 = id_str.parse().map_err(|_| bad("id is not an integer"))?;
            if id as usize != tokens.len() {
                return Err(bad(&format!("id {id} out of order, expected {}", tokens.len())));
            }
            tokens.push(tok.to_owned());
        }
        if tokens.len() < 3
            || tokens[0] != PAD_TOKEN
            || tokens[1] != UNK_TOKEN
            || tokens[2] != MASK_TOKEN
        {
            return Err(TextModelError::VocabFile {
                path: origin.to_owned(),
                line: 0,
                reason: "reserved tokens <pad>/<unk>/<mask> missing at ids 0..2".into(),
            });
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// One encoded text: ids padded to a fixed length, plus the pre-padding
/// length (after truncation).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub len: usize,
}

impl TokenSeq {
    /// The non-PAD prefix.
    pub fn active(&self) -> &[u32] {
        &self.ids[..self.len]
    }
}

/// Tokenize, map to ids (UNK fallback), truncate to `max_len`, pad with PAD.
/// An empty text yields an all-PAD sequence of length 0.
pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> Result<TokenSeq, TextModelError> {
    if max_len == 0 {
        return Err(TextModelError::ZeroMaxLen);
    }
    let mut ids: Vec<u32> = tokenize(text).iter().map(|t| vocab.id_of(t)).collect();
    ids.truncate(max_len);
    let len = ids.len();
    ids.resize(max_len, PAD_ID);
    Ok(TokenSeq { ids, len })
}
