//! Lexing of Python-style source text into token bags.
//!
//! Identifiers, keywords, numeric and string literals, and operators are
//! kept. Comments, whitespace, and the pure delimiters `( ) [ ] { } : , ;`
//! are dropped, so two fragments that differ only in layout or comments
//! produce the same bag.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Bumped whenever lexing rules change; part of every cache fingerprint.
pub const TOKENIZER_VERSION: u32 = 1;

/// Multiset of tokens with frequencies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, u32>", into = "BTreeMap<String, u32>")]
pub struct TokenBag {
    entries: BTreeMap<Arc<str>, u32>,
    total: u64,
}

impl TokenBag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, token: impl AsRef<str>) {
        self.add(token, 1);
    }

    pub fn add(&mut self, token: impl AsRef<str>, count: u32) {
        if count == 0 {
            return;
        }
        let token = token.as_ref();
        match self.entries.get_mut(token) {
            Some(n) => *n += count,
            None => {
                self.entries.insert(Arc::from(token), count);
            }
        }
        self.total += u64::from(count);
    }

    /// Build from `(token, count)` pairs with distinct tokens. Token strings
    /// are shared, not copied.
    pub(crate) fn from_distinct_counts(pairs: impl IntoIterator<Item = (Arc<str>, u32)>) -> Self {
        let entries: BTreeMap<Arc<str>, u32> = pairs.into_iter().filter(|(_, n)| *n > 0).collect();
        let total = entries.values().map(|&n| u64::from(n)).sum();
        Self { entries, total }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn get(&self, token: &str) -> u32 {
        self.entries.get(token).copied().unwrap_or(0)
    }

    /// Entries in lexicographic token order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.entries.iter().map(|(k, v)| (&**k, *v))
    }

    /// True when every token of `self` occurs in `other` at least as often.
    pub fn is_sub_multiset_of(&self, other: &TokenBag) -> bool {
        self.iter().all(|(tok, freq)| other.get(tok) >= freq)
    }
}

impl From<BTreeMap<String, u32>> for TokenBag {
    fn from(entries: BTreeMap<String, u32>) -> Self {
        let mut bag = TokenBag::new();
        for (tok, freq) in entries {
            bag.add(tok, freq);
        }
        bag
    }
}

impl From<TokenBag> for BTreeMap<String, u32> {
    fn from(bag: TokenBag) -> Self {
        bag.entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

impl<S: AsRef<str>> FromIterator<S> for TokenBag {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut bag = TokenBag::new();
        for tok in iter {
            bag.insert(tok);
        }
        bag
    }
}

/// Tokenize `text` into a bag. Never fails; malformed input is lexed on a
/// best-effort basis.
pub fn tokenize(text: &str) -> TokenBag {
    lex(text).tokens.into_iter().map(|t| t.text).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Token {
    pub text: String,
    pub line: usize,
    pub end_line: usize,
    /// Indentation width when this token opens a logical line.
    pub line_start_indent: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LexProblem {
    UnterminatedString { line: usize },
    UnbalancedBrackets,
}

#[derive(Debug, Default)]
pub(crate) struct Lexed {
    pub tokens: Vec<Token>,
    pub problem: Option<LexProblem>,
}

const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", "==", "!=", "<=", ">=", "<<", ">>",
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=", "+", "-", "*", "/", "%", "@", "&", "|",
    "^", "~", "<", ">", "=", ".", "!",
];

const STRING_PREFIXES: &[&str] = &[
    "rb", "br", "fr", "rf", "r", "b", "u", "f",
];

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    depth: usize,
    at_line_start: bool,
    indent: usize,
    line_indent: Option<usize>,
    out: Lexed,
}

impl<'a> Lexer<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self, len: usize) {
        let consumed = &self.src[self.pos..self.pos + len];
        self.line += consumed.matches('\n').count();
        self.pos += len;
    }

    fn push(&mut self, text: &str, line: usize) {
        let indent = self.line_indent.take();
        self.out.tokens.push(Token {
            text: text.to_string(),
            line,
            end_line: self.line,
            line_start_indent: indent,
        });
    }

    /// Called before consuming any significant character.
    fn begin_significant(&mut self) {
        if self.at_line_start {
            self.at_line_start = false;
            self.line_indent = Some(self.indent);
        }
    }

    fn run(mut self) -> Lexed {
        while let Some(c) = self.peek() {
            match c {
                '\n' => {
                    self.bump(1);
                    if self.depth == 0 {
                        self.at_line_start = true;
                        self.line_indent = None;
                        self.indent = 0;
                    }
                }
                ' ' | '\t' | '\r' | '\x0c' => {
                    if self.at_line_start {
                        self.indent += if c == '\t' { 8 - self.indent % 8 } else { 1 };
                    }
                    self.bump(1);
                }
                '\\' if self.rest()[1..].starts_with('\n') || self.rest()[1..].starts_with("\r\n") => {
                    let len = if self.rest()[1..].starts_with('\n') { 2 } else { 3 };
                    self.bump(len);
                }
                '#' => {
                    let end = self.rest().find('\n').unwrap_or(self.rest().len());
                    self.bump(end);
                }
                '(' | '[' | '{' => {
                    self.begin_significant();
                    self.depth += 1;
                    self.bump(1);
                }
                ')' | ']' | '}' => {
                    self.begin_significant();
                    self.depth = self.depth.saturating_sub(1);
                    self.bump(1);
                }
                ':' | ',' | ';' if !self.rest().starts_with(":=") => {
                    self.begin_significant();
                    self.bump(1);
                }
                '"' | '\'' => {
                    self.begin_significant();
                    self.string(0);
                }
                c if c.is_ascii_digit()
                    || (c == '.' && self.rest()[1..].starts_with(|d: char| d.is_ascii_digit())) =>
                {
                    self.begin_significant();
                    self.number();
                }
                c if is_ident_start(c) => {
                    self.begin_significant();
                    if let Some(plen) = self.string_prefix_len() {
                        self.string(plen);
                    } else {
                        self.ident();
                    }
                }
                _ => {
                    self.begin_significant();
                    self.operator();
                }
            }
        }
        if self.depth > 0 && self.out.problem.is_none() {
            self.out.problem = Some(LexProblem::UnbalancedBrackets);
        }
        self.out
    }

    fn string_prefix_len(&self) -> Option<usize> {
        let rest = self.rest();
        STRING_PREFIXES.iter().find_map(|p| {
            let head = rest.get(..p.len())?;
            let next = rest[p.len()..].chars().next()?;
            (head.eq_ignore_ascii_case(p) && (next == '"' || next == '\'')).then_some(p.len())
        })
    }

    fn string(&mut self, prefix_len: usize) {
        let start = self.pos;
        let line = self.line;
        let body = &self.rest()[prefix_len..];
        let quote = body.chars().next().expect("caller checked quote");
        let triple: String = std::iter::repeat_n(quote, 3).collect();
        let (open_len, is_triple) = if body.starts_with(&triple) { (3, true) } else { (1, false) };
        let bytes = body.as_bytes();
        let mut i = open_len;
        let mut closed = None;
        while i < bytes.len() {
            let b = bytes[i];
            if b == b'\\' {
                i += 2;
                continue;
            }
            if is_triple {
                if body[i..].starts_with(&triple) {
                    closed = Some(i + 3);
                    break;
                }
            } else if b == quote as u8 {
                closed = Some(i + 1);
                break;
            } else if b == b'\n' {
                break;
            }
            i += 1;
        }
        let len = match closed {
            Some(end) => prefix_len + end,
            None => {
                if self.out.problem.is_none() {
                    self.out.problem = Some(LexProblem::UnterminatedString { line });
                }
                let stop = if is_triple {
                    body.len()
                } else {
                    body.find('\n').unwrap_or(body.len())
                };
                prefix_len + stop
            }
        };
        self.bump(len);
        let text = &self.src[start..start + len];
        self.push(text, line);
    }

    fn number(&mut self) {
        let rest = self.rest();
        let mut end = 0;
        let mut prev = '\0';
        for (i, c) in rest.char_indices() {
            let ok = c.is_ascii_alphanumeric()
                || c == '_'
                || c == '.'
                || ((c == '+' || c == '-') && (prev == 'e' || prev == 'E') && !rest.starts_with("0x"));
            if !ok {
                break;
            }
            end = i + c.len_utf8();
            prev = c;
        }
        let line = self.line;
        let text = &rest[..end];
        self.bump(end);
        self.push(text, line);
    }

    fn ident(&mut self) {
        let rest = self.rest();
        let end = rest
            .char_indices()
            .find(|(_, c)| !is_ident_continue(*c))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        let line = self.line;
        self.bump(end);
        self.push(&rest[..end], line);
    }

    fn operator(&mut self) {
        let rest = self.rest();
        let len = OPERATORS
            .iter()
            .find(|op| rest.starts_with(**op))
            .map(|op| op.len())
            .unwrap_or_else(|| rest.chars().next().map_or(1, char::len_utf8));
        let line = self.line;
        self.bump(len);
        self.push(&rest[..len], line);
    }
}

pub(crate) fn lex(text: &str) -> Lexed {
    Lexer {
        src: text,
        pos: 0,
        line: 1,
        depth: 0,
        at_line_start: true,
        indent: 0,
        line_indent: None,
        out: Lexed::default(),
    }
    .run()
}
