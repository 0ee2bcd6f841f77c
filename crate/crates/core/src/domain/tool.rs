//! Function-call action space: tool schemas, calls, and their token encoding.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::vocab::{TokenId, Vocabulary};

/// Finite value domain of one tool argument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgDomain {
    /// Inclusive integer range.
    IntRange { lo: i64, hi: i64 },
    Enum(Vec<String>),
}

impl ArgDomain {
    pub fn contains(&self, value: &ArgValue) -> bool {
        match (self, value) {
            (ArgDomain::IntRange { lo, hi }, ArgValue::Int(v)) => lo <= v && v <= hi,
            (ArgDomain::Enum(options), ArgValue::Str(s)) => options.iter().any(|o| o == s),
            _ => false,
        }
    }

    /// Every value of the domain, in canonical order.
    pub fn values(&self) -> Vec<ArgValue> {
        match self {
            ArgDomain::IntRange { lo, hi } => (*lo..=*hi).map(ArgValue::Int).collect(),
            ArgDomain::Enum(options) => options.iter().cloned().map(ArgValue::Str).collect(),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            ArgDomain::IntRange { lo, hi } => (hi - lo + 1).max(0) as usize,
            ArgDomain::Enum(options) => options.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgField {
    pub name: String,
    pub domain: ArgDomain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub args: Vec<ArgField>,
}

impl ToolSchema {
    pub fn new(name: impl Into<String>) -> Self {
        ToolSchema {
            name: name.into(),
            args: Vec::new(),
        }
    }

    pub fn int_arg(mut self, name: impl Into<String>, lo: i64, hi: i64) -> Self {
        self.args.push(ArgField {
            name: name.into(),
            domain: ArgDomain::IntRange { lo, hi },
        });
        self
    }

    pub fn enum_arg(mut self, name: impl Into<String>, options: &[&str]) -> Self {
        self.args.push(ArgField {
            name: name.into(),
            domain: ArgDomain::Enum(options.iter().map(|s| s.to_string()).collect()),
        });
        self
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    /// Checks that `call` names this tool and supplies exactly its arguments.
    pub fn check(&self, call: &ToolCall) -> Result<(), ActionError> {
        if call.name != self.name {
            return Err(ActionError::UnknownTool(call.name.clone()));
        }
        for field in &self.args {
            match call.args.get(&field.name) {
                None => return Err(ActionError::MissingArg(field.name.clone())),
                Some(v) if !field.domain.contains(v) => {
                    return Err(ActionError::ArgOutOfDomain {
                        arg: field.name.clone(),
                        value: v.to_string(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = call
            .args
            .keys()
            .find(|k| !self.args.iter().any(|f| &f.name == *k))
        {
            return Err(ActionError::UnexpectedArg(extra.clone()));
        }
        Ok(())
    }

    /// All calls this schema admits, in lexicographic argument order.
    pub fn enumerate_calls(&self) -> Vec<ToolCall> {
        let mut calls = vec![ToolCall::new(&self.name)];
        for field in &self.args {
            let values = field.domain.values();
            calls = calls
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.args.insert(field.name.clone(), v.clone());
                        c
                    })
                })
                .collect();
        }
        calls
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArgValue {
    Int(i64),
    Str(String),
}

impl fmt::Display for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgValue::Int(v) => write!(f, "{v}"),
            ArgValue::Str(s) => f.write_str(s),
        }
    }
}

/// A concrete function call. On the wire `args` is a JSON object keyed by
/// argument name; token order comes from the schema, not from the map.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub args: BTreeMap<String, ArgValue>,
}

impl ToolCall {
    pub fn new(name: impl Into<String>) -> Self {
        ToolCall {
            name: name.into(),
            args: BTreeMap::new(),
        }
    }

    pub fn arg(mut self, name: impl Into<String>, value: impl Into<ArgValue>) -> Self {
        self.args.insert(name.into(), value.into());
        self
    }

    pub fn int(&self, name: &str) -> Option<i64> {
        match self.args.get(name) {
            Some(ArgValue::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn str(&self, name: &str) -> Option<&str> {
        match self.args.get(name) {
            Some(ArgValue::Str(s)) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for ToolCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, (k, v)) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str(")")
    }
}

impl From<i64> for ArgValue {
    fn from(v: i64) -> Self {
        ArgValue::Int(v)
    }
}

impl From<&str> for ArgValue {
    fn from(v: &str) -> Self {
        ArgValue::Str(v.to_string())
    }
}

/// Static description of one agentic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub tool_schemas: Vec<ToolSchema>,
    pub max_turns: usize,
    pub max_action_tokens: usize,
}

impl TaskSpec {
    pub fn new(task_id: impl Into<String>, tool_schemas: Vec<ToolSchema>, max_turns: usize) -> Self {
        let max_action_tokens = tool_schemas.iter().map(|s| 1 + s.arity()).max().unwrap_or(1);
        TaskSpec {
            task_id: task_id.into(),
            tool_schemas,
            max_turns,
            max_action_tokens,
        }
    }

    pub fn schema(&self, name: &str) -> Option<&ToolSchema> {
        self.tool_schemas.iter().find(|s| s.name == name)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_turns < 1 {
            return Err("max_turns must be at least 1".into());
        }
        if self.max_action_tokens < 1 {
            return Err("max_action_tokens must be at least 1".into());
        }
        let mut names: Vec<&str> = self.tool_schemas.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(format!("duplicate tool name in task {}", self.task_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("unknown tool name {0:?}")]
    UnknownTool(String),
    #[error("argument {arg} value {value} outside its domain")]
    ArgOutOfDomain { arg: String, value: String },
    #[error("missing argument {0:?}")]
    MissingArg(String),
    #[error("unexpected argument {0:?}")]
    UnexpectedArg(String),
    #[error("token {0} cannot start a tool call")]
    NotAToolToken(TokenId),
    #[error("token {token} is not a value of argument {arg}")]
    BadArgToken { arg: String, token: TokenId },
    #[error("expected {expected} tokens, got {got}")]
    Length { expected: usize, got: usize },
}

/// Encodes a call as one tool-name token followed by one token per argument,
/// in schema order.
pub fn serialize_action(
    call: &ToolCall,
    schema: &ToolSchema,
    vocab: &Vocabulary,
) -> Result<Vec<TokenId>, ActionError> {
    schema.check(call)?;
    let head = vocab
        .tool(&schema.name)
        .ok_or_else(|| ActionError::UnknownTool(schema.name.clone()))?;
    let mut tokens = Vec::with_capacity(1 + schema.arity());
    tokens.push(head);
    for field in &schema.args {
        let value = &call.args[&field.name];
        tokens.push(value_token(value, vocab).ok_or_else(|| ActionError::ArgOutOfDomain {
            arg: field.name.clone(),
            value: value.to_string(),
        })?);
    }
    Ok(tokens)
}

pub(crate) fn value_token(value: &ArgValue, vocab: &Vocabulary) -> Option<TokenId> {
    match value {
        ArgValue::Int(v) => vocab.int(*v),
        ArgValue::Str(s) => vocab.word(s),
    }
}

/// Tokens that encode every value of `domain` (in domain order).
pub fn domain_tokens(domain: &ArgDomain, vocab: &Vocabulary) -> Vec<TokenId> {
    domain
        .values()
        .iter()
        .filter_map(|v| value_token(v, vocab))
        .collect()
}

/// Inverse of [`serialize_action`] over the schemas of one task.
pub fn decode_action(
    tokens: &[TokenId],
    schemas: &[ToolSchema],
    vocab: &Vocabulary,
) -> Result<ToolCall, ActionError> {
    let (&head, rest) = tokens.split_first().ok_or(ActionError::Length {
        expected: 1,
        got: 0,
    })?;
    let name = vocab.tool_name(head).ok_or(ActionError::NotAToolToken(head))?;
    let schema = schemas
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| ActionError::UnknownTool(name.to_string()))?;
    if rest.len() != schema.arity() {
        return Err(ActionError::Length {
            expected: 1 + schema.arity(),
            got: tokens.len(),
        });
    }
    let mut call = ToolCall::new(name);
    for (field, &tok) in schema.args.iter().zip(rest) {
        let value = match &field.domain {
            ArgDomain::IntRange { .. } => vocab.int_value(tok).map(ArgValue::Int),
            ArgDomain::Enum(_) => vocab.word_text(tok).map(ArgValue::from),
        }
        .filter(|v| field.domain.contains(v))
        .ok_or_else(|| ActionError::BadArgToken {
            arg: field.name.clone(),
            token: tok,
        })?;
        call.args.insert(field.name.clone(), value);
    }
    Ok(call)
}
