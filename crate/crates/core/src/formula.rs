//! Model formulas such as `y ~ x + s(z) + s(w)`.
//!
//! `s(name)` introduces a smooth (network) term, a bare `name` a linear term.
//! Identifiers consist of ASCII letters, digits, `_` and `.`, and must not
//! start with a digit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Smooth,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub kind: TermKind,
}

impl Term {
    pub fn smooth(name: impl Into<String>) -> Self {
        Term {
            name: name.into(),
            kind: TermKind::Smooth,
        }
    }

    pub fn linear(name: impl Into<String>) -> Self {
        Term {
            name: name.into(),
            kind: TermKind::Linear,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TermKind::Smooth => write!(f, "s({})", self.name),
            TermKind::Linear => f.write_str(&self.name),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Formula {
    response: String,
    terms: Vec<Term>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum FormulaErrorKind {
    #[error("empty formula")]
    Empty,
    #[error("missing `~`")]
    MissingTilde,
    #[error("missing response before `~`")]
    MissingResponse,
    #[error("empty term")]
    EmptyTerm,
    #[error("duplicate term `{0}`")]
    DuplicateTerm(String),
    #[error("response `{0}` also appears as a term")]
    ResponseAsTerm(String),
    #[error("unclosed `(`")]
    UnclosedParen,
    #[error("empty argument in `s()`")]
    EmptyArgument,
    #[error("illegal identifier `{0}`")]
    IllegalIdentifier(String),
    #[error("illegal character `{0}`")]
    IllegalCharacter(char),
    #[error("unexpected `{0}`")]
    Unexpected(String),
}

/// A parse failure with the 0-based character offset where it was detected.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{kind} at position {position}")]
pub struct FormulaError {
    pub kind: FormulaErrorKind,
    pub position: usize,
}

fn err<T>(kind: FormulaErrorKind, position: usize) -> Result<T, FormulaError> {
    Err(FormulaError { kind, position })
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Tilde,
    Plus,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => s.clone(),
            Tok::Tilde => "~".into(),
            Tok::Plus => "+".into(),
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

pub fn is_valid_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if !c.is_ascii_digit() && is_ident_char(c) => chars.all(is_ident_char),
        _ => false,
    }
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, FormulaError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let tok = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '~' => Tok::Tilde,
            '+' => Tok::Plus,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            c if is_ident_char(c) => {
                let start = i;
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                let ident: String = chars[start..i].iter().collect();
                if !is_valid_identifier(&ident) {
                    return err(FormulaErrorKind::IllegalIdentifier(ident), start);
                }
                out.push((Tok::Ident(ident), start));
                continue;
            }
            other => return err(FormulaErrorKind::IllegalCharacter(other), i),
        };
        out.push((tok, i));
        i += 1;
    }
    out.push((Tok::End, chars.len()));
    Ok(out)
}

pub fn parse_formula(src: &str) -> Result<Formula, FormulaError> {
    let toks = tokenize(src)?;
    if toks.len() == 1 {
        return err(FormulaErrorKind::Empty, 0);
    }
    let Some(tilde) = toks.iter().position(|(t, _)| *t == Tok::Tilde) else {
        return err(FormulaErrorKind::MissingTilde, src.chars().count());
    };

    let response = match &toks[..tilde] {
        [] => return err(FormulaErrorKind::MissingResponse, toks[tilde].1),
        [(Tok::Ident(name), _)] => name.clone(),
        [(Tok::Ident(_), _), (t, pos), ..] | [(t, pos), ..] => {
            return err(FormulaErrorKind::Unexpected(t.describe()), *pos)
        }
    };

    let mut terms: Vec<Term> = Vec::new();
    let mut i = tilde + 1;
    loop {
        let (tok, pos) = &toks[i];
        let (term, next) = match tok {
            Tok::Ident(name) if name == "s" && toks[i + 1].0 == Tok::LParen => {
                let open = toks[i + 1].1;
                match (&toks[i + 2], toks.get(i + 3)) {
                    ((Tok::RParen, p), _) => return err(FormulaErrorKind::EmptyArgument, *p),
                    ((Tok::Ident(arg), _), Some((Tok::RParen, _))) => (Term::smooth(arg.clone()), i + 4),
                    ((Tok::End, _), _) | ((Tok::Ident(_), _), Some((Tok::End, _)) | None) => {
                        return err(FormulaErrorKind::UnclosedParen, open)
                    }
                    ((Tok::Ident(_), _), Some((t, p))) | ((t, p), _) => {
                        return err(FormulaErrorKind::Unexpected(t.describe()), *p)
                    }
                }
            }
            Tok::Ident(name) => (Term::linear(name.clone()), i + 1),
            Tok::Plus | Tok::End => return err(FormulaErrorKind::EmptyTerm, *pos),
            t => return err(FormulaErrorKind::Unexpected(t.describe()), *pos),
        };
        if term.name == response {
            return err(FormulaErrorKind::ResponseAsTerm(term.name), *pos);
        }
        if terms.iter().any(|t| t.name == term.name) {
            return err(FormulaErrorKind::DuplicateTerm(term.name), *pos);
        }
        terms.push(term);
        match &toks[next] {
            (Tok::End, _) => break,
            (Tok::Plus, _) => i = next + 1,
            (t, p) => return err(FormulaErrorKind::Unexpected(t.describe()), *p),
        }
    }
    Ok(Formula { response, terms })
}

impl Formula {
    /// Builds a formula from parts, enforcing the same rules as the parser.
    pub fn new(response: impl Into<String>, terms: Vec<Term>) -> Result<Self, FormulaError> {
        let formula = Formula {
            response: response.into(),
            terms,
        };
        let reparsed = parse_formula(&formula.to_string())?;
        if reparsed != formula {
            // Names that tokenize differently than they were given.
            return err(FormulaErrorKind::IllegalIdentifier(formula.to_string()), 0);
        }
        Ok(formula)
    }

    pub fn response(&self) -> &str {
        &self.response
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn term_names(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|t| t.name.as_str())
    }

    pub fn term_index(&self, name: &str) -> Option<usize> {
        self.terms.iter().position(|t| t.name == name)
    }
}

/// Canonical text form, e.g. `y ~ x2 + s(w)`.
pub fn format_formula(f: &Formula) -> String {
    f.to_string()
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ~ ", self.response)?;
        for (i, term) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            write!(f, "{term}")?;
        }
        Ok(())
    }
}

impl FromStr for Formula {
    type Err = FormulaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_formula(s)
    }
}

impl TryFrom<String> for Formula {
    type Error = FormulaError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        parse_formula(&s)
    }
}

impl From<Formula> for String {
    fn from(f: Formula) -> String {
        f.to_string()
    }
}
