use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;

/// Dense token/id bijection. Ids 0..4 are PAD, UNK, BOS and EOS, whatever
/// their surface strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Line `i` of `tokens` gets id `i`. The first four are the specials.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 4 {
            return Err(Error::Config(format!("a vocabulary needs the 4 special tokens, got {} tokens", tokens.len())));
        }
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {:?}", t)));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    /// `specials` followed by `tokens`.
    pub fn with_specials(specials: [&str; 4], tokens: impl IntoIterator<Item = impl Into<String>>) -> Result<Self> {
        let all = specials.iter().map(|s| s.to_string()).chain(tokens.into_iter().map(Into::into)).collect();
        Self::new(all)
    }

    /// Parses the one-token-per-line file format.
    pub fn from_text(text: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        Self::new(body.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l).to_string()).collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        id < 4
    }
}
