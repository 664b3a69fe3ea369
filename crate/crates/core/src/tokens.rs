//! Token sequences, vocabularies and skip-token handling.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Id ↔ surface-string table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    pieces: Vec<String>,
    index: BTreeMap<String, Vec<TokenId>>,
}

impl From<Vec<String>> for Vocab {
    fn from(pieces: Vec<String>) -> Self {
        Vocab::new(pieces)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.pieces
    }
}

impl Vocab {
    pub fn new(pieces: Vec<String>) -> Self {
        let mut index: BTreeMap<String, Vec<TokenId>> = BTreeMap::new();
        for (i, p) in pieces.iter().enumerate() {
            index.entry(p.clone()).or_default().push(i as TokenId);
        }
        Vocab { pieces, index }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: TokenId) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    /// All ids whose surface string equals `piece`.
    pub fn lookup(&self, piece: &str) -> &[TokenId] {
        self.index.get(piece).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn id(&self, piece: &str) -> Option<TokenId> {
        self.lookup(piece).first().copied()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    /// Builds a sequence from ids, validating them against this vocabulary.
    pub fn sequence(&self, ids: &[TokenId]) -> Result<TokenSequence> {
        let pieces = ids
            .iter()
            .map(|&t| {
                self.piece(t)
                    .map(str::to_owned)
                    .ok_or_else(|| Error::invalid(format!("token id {t} outside vocabulary of {}", self.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        TokenSequence::new(ids.to_vec(), pieces)
    }
}

/// Tokenized text with a per-token skip flag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<TokenId>,
    pieces: Vec<String>,
    skip_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>, pieces: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("token sequence must be non-empty"));
        }
        if tokens.len() != pieces.len() {
            return Err(Error::invalid(format!(
                "tokens ({}) and pieces ({}) differ in length",
                tokens.len(),
                pieces.len()
            )));
        }
        let skip_mask = vec![false; tokens.len()];
        Ok(TokenSequence {
            tokens,
            pieces,
            skip_mask,
        })
    }

    pub fn with_mask(tokens: Vec<TokenId>, pieces: Vec<String>, skip_mask: Vec<bool>) -> Result<Self> {
        let mut s = Self::new(tokens, pieces)?;
        if skip_mask.len() != s.tokens.len() {
            return Err(Error::invalid("skip mask length differs from token count"));
        }
        s.skip_mask = skip_mask;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn skip_mask(&self) -> &[bool] {
        &self.skip_mask
    }

    /// Indices of positions that are not skipped.
    pub fn unmasked(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.skip_mask[i]).collect()
    }
}

/// Literal skip strings resolved against one vocabulary.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipTokenSet {
    pub literals: BTreeSet<String>,
    pub ids: BTreeSet<TokenId>,
    pub unresolved: BTreeSet<String>,
}

impl SkipTokenSet {
    pub fn contains(&self, id: TokenId) -> bool {
        self.ids.contains(&id)
    }
}

/// Structure tokens excluded from attribution for LLaMA-3 chat prompts.
pub const LLAMA3_SKIP_LITERALS: [&str; 6] = [
    "<|start_header_id|>",
    "<|end_header_id|>",
    "<|eot_id|>",
    "<|begin_of_text|>",
    "Ċ",
    "Ġ->",
];

pub fn resolve_skip_set<S: AsRef<str>>(literals: &[S], vocab: &Vocab) -> Result<SkipTokenSet> {
    if vocab.is_empty() {
        return Err(Error::invalid("vocabulary is empty"));
    }
    let mut set = SkipTokenSet::default();
    for lit in literals {
        let lit = lit.as_ref();
        set.literals.insert(lit.to_owned());
        let ids = vocab.lookup(lit);
        if ids.is_empty() {
            set.unresolved.insert(lit.to_owned());
        } else {
            set.ids.extend(ids.iter().copied());
        }
    }
    Ok(set)
}

pub fn apply_skip_mask(seq: &TokenSequence, skips: &SkipTokenSet) -> TokenSequence {
    let mut out = seq.clone();
    out.skip_mask = seq.tokens.iter().map(|t| skips.contains(*t)).collect();
    out
}

/// Parses a skip-list file: one literal per line, `#` starts a comment,
/// blank lines ignored. Surrounding whitespace is trimmed.
pub fn parse_skip_literals(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| match line.find('#') {
            Some(i) => &line[..i],
            None => line,
        })
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn load_skip_literals(path: &Path) -> Result<Vec<String>> {
    Ok(parse_skip_literals(&std::fs::read_to_string(path)?))
}
