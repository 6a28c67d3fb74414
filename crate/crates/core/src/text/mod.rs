//! Tokenizers and static-length sequence packing.

mod bpe;
mod pack;
mod vocab;
mod wordpiece;

pub use bpe::{bytes_to_unicode, train_bpe, train_bpe_with, unicode_to_bytes, BpeModel};
pub use pack::{pack, PackedBatch};
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};
pub use wordpiece::{tokenize_wordpiece, WordPiece, MAX_WORD_CHARS};

use alloc::string::String;
use alloc::vec::Vec;

/// Either tokenizer family, as attached to a text task.
#[derive(Debug, Clone, PartialEq)]
pub enum Tokenizer {
    Bpe(BpeModel),
    WordPiece(WordPiece),
}

impl Tokenizer {
    pub fn encode(&self, text: &str) -> Vec<u32> {
        match self {
            Tokenizer::Bpe(m) => m.encode(text),
            Tokenizer::WordPiece(w) => w.encode(text),
        }
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        match self {
            Tokenizer::Bpe(m) => m.decode(ids),
            Tokenizer::WordPiece(w) => w.decode(ids),
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        match self {
            Tokenizer::Bpe(m) => m.vocab(),
            Tokenizer::WordPiece(w) => w.vocab(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab().len()
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Tokenizer::Bpe(_) => "bpe",
            Tokenizer::WordPiece(_) => "wordpiece",
        }
    }
}
