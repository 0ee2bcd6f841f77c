//! Fixed, versioned token vocabulary.
//!
//! Layout (version 1):
//!
//! | range          | contents                                   |
//! |----------------|--------------------------------------------|
//! | `0..2`         | `<s>` (context start), `<obs>` (observation marker) |
//! | `2..8`         | tool names of the bundled tasks            |
//! | `8..264`       | integer literals `0..=255`                 |
//! | `264..264+W`   | the observation word list                  |
//! | last 64        | hash buckets for out-of-vocabulary words   |
//!
//! Token ids never move within a version, so recorded trajectories and policy
//! snapshots stay valid.

use std::collections::HashMap;
use std::sync::OnceLock;

pub type TokenId = u32;

pub const VOCAB_VERSION: u32 = 1;

pub const BOS: TokenId = 0;
pub const OBS: TokenId = 1;

const SPECIALS: [&str; 2] = ["<s>", "<obs>"];

pub const TOOL_NAMES: [&str; 6] = ["answer", "commit", "get", "put", "query", "take_action"];

pub const MAX_INT_LITERAL: i64 = 255;

pub const WORDS: [&str; 48] = [
    "guess", "number", "higher", "lower", "equal", "correct", "wrong", "invalid", "call",
    "unknown", "tool", "argument", "ready", "stored", "slot", "holds", "need", "all", "slots",
    "match", "committed", "score", "start", "moved", "blocked", "picked", "dropped", "nothing",
    "free", "holding", "north", "south", "east", "west", "level", "pickup", "drop", "success",
    "object", "target", "grid", "store", "task", "turn", "limit", "session", "error", "ok",
];

pub const BUCKETS: u32 = 64;

/// Hashes a word to one of the reserved bucket slots (FNV-1a, stable across
/// platforms and releases).
pub fn bucket_of(word: &str) -> u32 {
    (fnv1a(word.as_bytes()) % BUCKETS as u64) as u32
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, TokenId>,
    tool_base: TokenId,
    int_base: TokenId,
    word_base: TokenId,
    bucket_base: TokenId,
}

impl Vocabulary {
    /// The process-wide version-1 vocabulary.
    pub fn standard() -> &'static Vocabulary {
        static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
        VOCAB.get_or_init(Vocabulary::build)
    }

    fn build() -> Self {
        let mut names: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let tool_base = names.len() as TokenId;
        names.extend(TOOL_NAMES.iter().map(|s| s.to_string()));
        let int_base = names.len() as TokenId;
        names.extend((0..=MAX_INT_LITERAL).map(|i| i.to_string()));
        let word_base = names.len() as TokenId;
        names.extend(WORDS.iter().map(|s| s.to_string()));
        let bucket_base = names.len() as TokenId;
        names.extend((0..BUCKETS).map(|b| format!("<oov:{b}>")));
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as TokenId))
            .collect();
        Vocabulary {
            names,
            index,
            tool_base,
            int_base,
            word_base,
            bucket_base,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn version(&self) -> u32 {
        VOCAB_VERSION
    }

    pub fn tool(&self, name: &str) -> Option<TokenId> {
        TOOL_NAMES
            .iter()
            .position(|t| *t == name)
            .map(|i| self.tool_base + i as TokenId)
    }

    pub fn tool_name(&self, token: TokenId) -> Option<&str> {
        if (self.tool_base..self.int_base).contains(&token) {
            Some(TOOL_NAMES[(token - self.tool_base) as usize])
        } else {
            None
        }
    }

    pub fn int(&self, value: i64) -> Option<TokenId> {
        (0..=MAX_INT_LITERAL)
            .contains(&value)
            .then(|| self.int_base + value as TokenId)
    }

    pub fn int_value(&self, token: TokenId) -> Option<i64> {
        if (self.int_base..self.word_base).contains(&token) {
            Some((token - self.int_base) as i64)
        } else {
            None
        }
    }

    pub fn word(&self, word: &str) -> Option<TokenId> {
        WORDS
            .iter()
            .position(|w| *w == word)
            .map(|i| self.word_base + i as TokenId)
    }

    pub fn word_text(&self, token: TokenId) -> Option<&str> {
        if (self.word_base..self.bucket_base).contains(&token) {
            Some(WORDS[(token - self.word_base) as usize])
        } else {
            None
        }
    }

    /// Token for one whitespace-delimited piece of observation text.
    pub fn token_for(&self, piece: &str) -> TokenId {
        if let Some(&t) = self.index.get(piece) {
            // Bucket display names are not real input; keep them hashed.
            if t < self.bucket_base {
                return t;
            }
        }
        self.bucket_base + bucket_of(piece)
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace().map(|w| self.token_for(w)).collect()
    }

    pub fn name(&self, token: TokenId) -> Option<&str> {
        self.names.get(token as usize).map(String::as_str)
    }

    /// Human-readable rendering of a token sequence.
    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|t| self.name(*t).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_stable() {
        let v = Vocabulary::standard();
        assert_eq!(v.len(), 2 + 6 + 256 + WORDS.len() + 64);
        assert_eq!(v.name(BOS), Some("<s>"));
        assert_eq!(v.name(OBS), Some("<obs>"));
        assert_eq!(v.tool("answer"), Some(2));
        assert_eq!(v.int(0), Some(8));
        assert_eq!(v.int(255), Some(263));
        assert_eq!(v.int(256), None);
        assert_eq!(v.int(-1), None);
        assert_eq!(v.word("guess"), Some(264));
    }

    #[test]
    fn words_are_unique() {
        let mut w = WORDS.to_vec();
        w.sort();
        w.dedup();
        assert_eq!(w.len(), WORDS.len());
    }

    #[test]
    fn tokenize_known_and_unknown() {
        let v = Vocabulary::standard();
        let toks = v.tokenize("higher 12 query zebra");
        assert_eq!(toks[0], v.word("higher").unwrap());
        assert_eq!(toks[1], v.int(12).unwrap());
        assert_eq!(toks[2], v.tool("query").unwrap());
        assert!(toks[3] >= v.len() as u32 - BUCKETS);
        // deterministic
        assert_eq!(v.tokenize("zebra"), v.tokenize("zebra"));
        // bucket display names never map onto themselves
        assert!(v.token_for("<oov:3>") >= v.len() as u32 - BUCKETS);
    }

    #[test]
    fn round_trip_accessors() {
        let v = Vocabulary::standard();
        for name in TOOL_NAMES {
            assert_eq!(v.tool_name(v.tool(name).unwrap()), Some(name));
        }
        for i in 0..=MAX_INT_LITERAL {
            assert_eq!(v.int_value(v.int(i).unwrap()), Some(i));
        }
        for w in WORDS {
            assert_eq!(v.word_text(v.word(w).unwrap()), Some(w));
        }
    }
}
