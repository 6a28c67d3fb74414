use alloc::string::String;
use alloc::vec::Vec;

use super::vocab::{Vocabulary, UNK};
use crate::Result;

/// Words longer than this many characters become a single UNK.
pub const MAX_WORD_CHARS: usize = 100;

const CONTINUATION: &str = "##";

/// Greedy longest-match-first WordPiece tokenization.
pub fn tokenize_wordpiece(v: &Vocabulary, text: &str) -> Vec<u32> {
    let mut out = Vec::new();
    let mut piece = String::new();
    for word in text.split_whitespace() {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(UNK);
            continue;
        }
        let mark = out.len();
        let mut start = 0;
        while start < chars.len() {
            let mut found = None;
            let mut end = chars.len();
            while end > start {
                let lo = chars[start].0;
                let hi = if end == chars.len() { word.len() } else { chars[end].0 };
                piece.clear();
                if start > 0 {
                    piece.push_str(CONTINUATION);
                }
                piece.push_str(&word[lo..hi]);
                if let Some(id) = v.id(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.truncate(mark);
                    out.push(UNK);
                    break;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPiece {
    vocab: Vocabulary,
}

impl WordPiece {
    pub const SPECIALS: [&'static str; 4] = ["[PAD]", "[UNK]", "[BOS]", "[EOS]"];

    pub fn new(vocab: Vocabulary) -> Self {
        WordPiece { vocab }
    }

    /// Builds a vocabulary with the `[PAD] [UNK] [BOS] [EOS]` specials first.
    pub fn from_pieces(pieces: impl IntoIterator<Item = impl Into<String>>) -> Result<Self> {
        Ok(Self::new(Vocabulary::with_specials(Self::SPECIALS, pieces)?))
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize_wordpiece(&self.vocab, text)
    }

    /// Joins pieces, gluing `##` continuations onto the previous word.
    /// Special ids other than UNK are skipped.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if Vocabulary::is_special(id) && id != UNK {
                continue;
            }
            let Some(tok) = self.vocab.token(id) else { continue };
            match tok.strip_prefix(CONTINUATION) {
                Some(rest) if !out.is_empty() => out.push_str(rest),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(tok);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn wp() -> WordPiece {
        WordPiece::from_pieces(["un", "##aff", "##able", "##a", "aff"]).unwrap()
    }

    #[test]
    fn unaffable() {
        let w = wp();
        let v = w.vocab();
        let ids = w.encode("unaffable");
        assert_eq!(ids, vec![v.id("un").unwrap(), v.id("##aff").unwrap(), v.id("##able").unwrap()]);
        assert_eq!(w.decode(&ids), "unaffable");
    }

    #[test]
    fn unknown_and_empty() {
        let w = wp();
        assert_eq!(w.encode("zebra"), vec![UNK]);
        assert_eq!(w.encode("unzz aff"), vec![UNK, w.vocab().id("aff").unwrap()]);
        assert!(w.encode("").is_empty());
        assert!(w.encode("  \n\t ").is_empty());
    }

    #[test]
    fn overlong_word() {
        let mut pieces = vec![String::from("a")];
        pieces.push("##a".into());
        let w = WordPiece::from_pieces(pieces).unwrap();
        let long: String = core::iter::repeat('a').take(MAX_WORD_CHARS + 1).collect();
        assert_eq!(w.encode(&long), vec![UNK]);
        let ok: String = core::iter::repeat('a').take(MAX_WORD_CHARS).collect();
        assert_eq!(w.encode(&ok).len(), MAX_WORD_CHARS);
    }
}
