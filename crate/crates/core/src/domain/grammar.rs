//! Which tokens a policy may emit at each position of an action.
//!
//! `Constrained` decoding restricts the first token to the task's tool names
//! and each following token to the domain of the corresponding argument, so
//! every emitted action is a well-formed call. `Free` decoding lets every
//! position range over the whole vocabulary; the first token then decides the
//! action length (1 + arity for a tool of the task, 1 otherwise).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tool::{domain_tokens, TaskSpec};
use super::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    #[default]
    Constrained,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Next<'a> {
    Allowed(&'a [TokenId]),
    /// The action is complete.
    Done,
    /// The action hit `max_action_tokens` before completing.
    Truncated,
}

#[derive(Debug, Clone)]
pub struct ActionGrammar {
    decoding: Decoding,
    tools: Vec<TokenId>,
    arg_tokens: HashMap<TokenId, Vec<Vec<TokenId>>>,
    everything: Vec<TokenId>,
    max_tokens: usize,
}

impl ActionGrammar {
    pub fn new(spec: &TaskSpec, decoding: Decoding, vocab: &Vocabulary) -> Self {
        let mut tools = Vec::new();
        let mut arg_tokens = HashMap::new();
        for schema in &spec.tool_schemas {
            if let Some(t) = vocab.tool(&schema.name) {
                tools.push(t);
                arg_tokens.insert(
                    t,
                    schema
                        .args
                        .iter()
                        .map(|f| domain_tokens(&f.domain, vocab))
                        .collect(),
                );
            }
        }
        tools.sort_unstable();
        ActionGrammar {
            decoding,
            tools,
            arg_tokens,
            everything: (0..vocab.len() as TokenId).collect(),
            max_tokens: spec.max_action_tokens,
        }
    }

    pub fn decoding(&self) -> Decoding {
        self.decoding
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn arity(&self, head: TokenId) -> Option<usize> {
        self.arg_tokens.get(&head).map(Vec::len)
    }

    pub fn next(&self, prefix: &[TokenId]) -> Next<'_> {
        let Some(&head) = prefix.first() else {
            return Next::Allowed(match self.decoding {
                Decoding::Constrained => &self.tools,
                Decoding::Free => &self.everything,
            });
        };
        let len = match self.arity(head) {
            Some(a) => 1 + a,
            None => 1,
        };
        if prefix.len() >= len {
            return Next::Done;
        }
        if prefix.len() >= self.max_tokens {
            return Next::Truncated;
        }
        match self.decoding {
            Decoding::Free => Next::Allowed(&self.everything),
            Decoding::Constrained => Next::Allowed(&self.arg_tokens[&head][prefix.len() - 1]),
        }
    }

    /// Allowed set for position `k` of a completed action, as used when
    /// re-scoring recorded tokens.
    pub fn allowed_at(&self, tokens: &[TokenId], k: usize) -> &[TokenId] {
        match self.next(&tokens[..k]) {
            Next::Allowed(a) => a,
            // Recorded tokens past the grammar's end (or a truncation point)
            // can only come from a mismatched grammar; score them over the
            // full vocabulary.
            Next::Done | Next::Truncated => &self.everything,
        }
    }
}
