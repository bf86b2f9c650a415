//! Tokenizer and recursive-descent parser for the TPTP-like surface syntax.
//!
//! Accepted grammar (precedence `~` > `&` > `|` > `=>`, `<=>`; binary
//! connectives associate to the right; quantifier bodies extend as far right
//! as possible):
//!
//! ```text
//! formula  := or ( ("=>" | "<=>") formula )?
//! or       := and ( "|" or )?
//! and      := unary ( "&" and )?
//! unary    := "~" unary | ("!" | "?") "[" VAR ("," VAR)* "]" ":" formula
//!           | "(" formula ")" | NAME ( "(" term ("," term)* ")" )?
//! term     := VAR | NAME ( "(" term ("," term)* ")" )?
//! ```

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::fol::{Expr, Formula, SignatureTable, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Name,
    Var,
    LParen,
    RParen,
    LBrack,
    RBrack,
    Comma,
    Colon,
    And,
    Or,
    Not,
    Implies,
    Iff,
    Forall,
    Exists,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
    /// Byte offset of the first character.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at offset {position}: expected {expected}")]
pub struct ParseError {
    pub position: usize,
    pub expected: String,
}

impl ParseError {
    fn new(position: usize, expected: impl Into<String>) -> Self {
        ParseError { position, expected: expected.into() }
    }
}

pub fn tokenize(s: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let ident = |c: u8| c.is_ascii_alphanumeric() || c == b'_';
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = match c {
            b'(' => TokenKind::LParen,
            b')' => TokenKind::RParen,
            b'[' => TokenKind::LBrack,
            b']' => TokenKind::RBrack,
            b',' => TokenKind::Comma,
            b':' => TokenKind::Colon,
            b'&' => TokenKind::And,
            b'|' => TokenKind::Or,
            b'~' => TokenKind::Not,
            b'!' => TokenKind::Forall,
            b'?' => TokenKind::Exists,
            b'=' if bytes.get(i + 1) == Some(&b'>') => {
                i += 1;
                TokenKind::Implies
            }
            b'<' if bytes.get(i + 1) == Some(&b'=') && bytes.get(i + 2) == Some(&b'>') => {
                i += 2;
                TokenKind::Iff
            }
            c if c.is_ascii_uppercase() => {
                while i + 1 < bytes.len() && ident(bytes[i + 1]) {
                    i += 1;
                }
                TokenKind::Var
            }
            c if c.is_ascii_lowercase() || c.is_ascii_digit() => {
                while i + 1 < bytes.len() && ident(bytes[i + 1]) {
                    i += 1;
                }
                TokenKind::Name
            }
            _ => return Err(ParseError::new(start, "a legal character")),
        };
        i += 1;
        out.push(Token { kind, lexeme: s[start..i].to_string(), position: start });
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn new(tokens: &'a [Token], input_len: usize) -> Self {
        Parser { tokens, pos: 0, end: input_len }
    }

    fn peek(&self) -> Option<TokenKind> {
        self.tokens.get(self.pos).map(|t| t.kind)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.position)
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<&'a Token, ParseError> {
        match self.tokens.get(self.pos) {
            Some(t) if t.kind == kind => {
                self.pos += 1;
                Ok(t)
            }
            _ => Err(ParseError::new(self.offset(), what)),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.pos == self.tokens.len() {
            Ok(())
        } else {
            Err(ParseError::new(self.offset(), "end of input"))
        }
    }

    fn formula(&mut self) -> Result<Formula, ParseError> {
        let left = self.disjunction()?;
        match self.peek() {
            Some(TokenKind::Implies) => {
                self.pos += 1;
                Ok(Formula::implies(left, self.formula()?))
            }
            Some(TokenKind::Iff) => {
                self.pos += 1;
                Ok(Formula::iff(left, self.formula()?))
            }
            _ => Ok(left),
        }
    }

    fn disjunction(&mut self) -> Result<Formula, ParseError> {
        let left = self.conjunction()?;
        if self.peek() == Some(TokenKind::Or) {
            self.pos += 1;
            return Ok(Formula::or(left, self.disjunction()?));
        }
        Ok(left)
    }

    fn conjunction(&mut self) -> Result<Formula, ParseError> {
        let left = self.unary()?;
        if self.peek() == Some(TokenKind::And) {
            self.pos += 1;
            return Ok(Formula::and(left, self.conjunction()?));
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        match self.peek() {
            Some(TokenKind::Not) => {
                self.pos += 1;
                Ok(Formula::not(self.unary()?))
            }
            Some(q @ (TokenKind::Forall | TokenKind::Exists)) => {
                self.pos += 1;
                self.expect(TokenKind::LBrack, "'['")?;
                let mut vars = vec![self.expect(TokenKind::Var, "a variable")?.lexeme.clone()];
                while self.peek() == Some(TokenKind::Comma) {
                    self.pos += 1;
                    vars.push(self.expect(TokenKind::Var, "a variable")?.lexeme.clone());
                }
                self.expect(TokenKind::RBrack, "']'")?;
                self.expect(TokenKind::Colon, "':'")?;
                let body = self.formula()?;
                Ok(vars.into_iter().rev().fold(body, |acc, v| {
                    if q == TokenKind::Forall {
                        Formula::forall(v, acc)
                    } else {
                        Formula::exists(v, acc)
                    }
                }))
            }
            Some(TokenKind::LParen) => {
                self.pos += 1;
                let f = self.formula()?;
                self.expect(TokenKind::RParen, "')'")?;
                Ok(f)
            }
            Some(TokenKind::Name) => {
                let name = self.tokens[self.pos].lexeme.clone();
                self.pos += 1;
                Ok(Formula::Atom(name, self.arguments()?))
            }
            _ => Err(ParseError::new(self.offset(), "a formula")),
        }
    }

    fn arguments(&mut self) -> Result<Vec<Term>, ParseError> {
        let mut args = Vec::new();
        if self.peek() == Some(TokenKind::LParen) {
            self.pos += 1;
            args.push(self.term()?);
            while self.peek() == Some(TokenKind::Comma) {
                self.pos += 1;
                args.push(self.term()?);
            }
            self.expect(TokenKind::RParen, "')' or ','")?;
        }
        Ok(args)
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        match self.peek() {
            Some(TokenKind::Var) => {
                let v = self.tokens[self.pos].lexeme.clone();
                self.pos += 1;
                Ok(Term::Variable(v))
            }
            Some(TokenKind::Name) => {
                let name = self.tokens[self.pos].lexeme.clone();
                self.pos += 1;
                Ok(Term::app(name, self.arguments()?))
            }
            _ => Err(ParseError::new(self.offset(), "a term")),
        }
    }
}

pub fn parse_formula(s: &str) -> Result<Formula, ParseError> {
    let tokens = tokenize(s)?;
    let mut p = Parser::new(&tokens, s.len());
    let f = p.formula()?;
    p.finish()?;
    Ok(f)
}

pub fn parse_term(s: &str) -> Result<Term, ParseError> {
    let tokens = tokenize(s)?;
    let mut p = Parser::new(&tokens, s.len());
    let t = p.term()?;
    p.finish()?;
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StringClass {
    Term,
    Formula,
    Neither,
}

impl fmt::Display for StringClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StringClass::Term => "term",
            StringClass::Formula => "formula",
            StringClass::Neither => "neither",
        })
    }
}

/// Decides whether `s` is a term, a formula, or neither. Strings that parse
/// both ways (`p(X)`) are formulas only when the root symbol is a known
/// predicate of that arity.
pub fn classify_string(s: &str, signature: &SignatureTable) -> StringClass {
    if let Ok(t) = parse_term(s) {
        let (name, arity) = t.head();
        if t.is_variable() || !signature.is_predicate(name, arity) {
            return StringClass::Term;
        }
    }
    match parse_formula(s) {
        Ok(_) => StringClass::Formula,
        Err(_) => StringClass::Neither,
    }
}

/// Parses `s` into a term or formula, using the signature to settle strings
/// that are valid both ways.
pub fn parse_expr(s: &str, signature: &SignatureTable) -> Result<Expr, ParseError> {
    match classify_string(s, signature) {
        StringClass::Term => parse_term(s).map(Expr::Term),
        _ => parse_formula(s).map(Expr::Formula),
    }
}

/// Extracts the formula text of a corpus line: skips blanks and `%`
/// comments, unwraps `fof(name, role, F).` to `F`.
pub fn corpus_line(line: &str) -> Option<&str> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('%') {
        return None;
    }
    Some(unwrap_fof(line).unwrap_or(line))
}

fn unwrap_fof(line: &str) -> Option<&str> {
    let inner = line.strip_prefix("fof(")?.strip_suffix('.')?.trim_end().strip_suffix(')')?;
    let mut depth = 0i32;
    let mut commas = Vec::new();
    for (i, c) in inner.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ',' if depth == 0 => commas.push(i),
            _ => {}
        }
    }
    let start = *commas.get(1)? + 1;
    let end = commas.get(2).copied().unwrap_or(inner.len());
    Some(inner[start..end].trim())
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
}

/// Reads a corpus file (one formula per line) and parses every entry.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Formula>, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    parse_corpus(&text)
}

pub fn parse_corpus(text: &str) -> Result<Vec<Formula>, CorpusError> {
    text.lines()
        .enumerate()
        .filter_map(|(i, l)| corpus_line(l).map(|f| (i + 1, f)))
        .map(|(line, f)| parse_formula(f).map_err(|source| CorpusError::Parse { line, source }))
        .collect()
}
