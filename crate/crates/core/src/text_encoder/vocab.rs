use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
/// Distinct marker pairs available per sentence.
pub const MAX_MARKERS: usize = 16;

pub fn open_marker(i: usize) -> String {
    format!("[E{i}]")
}

pub fn close_marker(i: usize) -> String {
    format!("[/E{i}]")
}

/// Token ↔ id map. Ids are dense; the reserved tokens always come first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    kinds: Vec<TokenKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Word,
    Open,
    Close,
}

fn reserved_tokens() -> Vec<String> {
    let mut v: Vec<String> = [BOS, EOS, PAD, UNK].iter().map(|s| s.to_string()).collect();
    v.extend((1..=MAX_MARKERS).map(open_marker));
    v.extend((1..=MAX_MARKERS).map(close_marker));
    v
}

impl Vocabulary {
    /// Reserved tokens followed by the distinct `words` in sorted order.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens = reserved_tokens();
        let reserved: BTreeSet<String> = tokens.iter().cloned().collect();
        let extra: BTreeSet<&str> = words
            .into_iter()
            .filter(|w| !reserved.contains(*w))
            .collect();
        tokens.extend(extra.into_iter().map(String::from));
        Self::from_tokens(tokens).expect("built vocabulary is well-formed")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token `{t}`")));
            }
        }
        for r in reserved_tokens() {
            if !index.contains_key(&r) {
                return Err(Error::InvalidArgument(format!("vocabulary lacks reserved token `{r}`")));
            }
        }
        let mut kinds = vec![TokenKind::Word; tokens.len()];
        for i in 1..=MAX_MARKERS {
            kinds[index[&open_marker(i)]] = TokenKind::Open;
            kinds[index[&close_marker(i)]] = TokenKind::Close;
        }
        Ok(Vocabulary { tokens, index, kinds })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or of `<unk>` when absent.
    pub fn id(&self, token: &str) -> usize {
        self.index
            .get(token)
            .copied()
            .unwrap_or_else(|| self.index[UNK])
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn kind(&self, id: usize) -> TokenKind {
        self.kinds.get(id).copied().unwrap_or(TokenKind::Word)
    }

    /// Position ids for a marked sequence: words count up from 0, an open
    /// marker shares the id of the word after it and a close marker the id
    /// of the word before it.
    pub fn position_ids(&self, ids: &[usize]) -> Vec<usize> {
        let mut next = 0usize;
        ids.iter()
            .map(|&id| match self.kind(id) {
                TokenKind::Word => {
                    next += 1;
                    next - 1
                }
                TokenKind::Open => next,
                TokenKind::Close => next.saturating_sub(1),
            })
            .collect()
    }

    pub fn pad_id(&self) -> usize {
        self.index[PAD]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the id.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(String::from).collect())
    }
}
