//! Theorem statements: parsing, extraction from free-form text, canonical
//! form and content digests.
//!
//! Everything here is a pure function over borrowed text. Offsets are byte
//! offsets into UTF-8 input.

mod canonical;
mod extract;
mod scan;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use canonical::{normalize_statement, CanonicalStatement, Digest, DigestParseError};
pub use extract::{
    extract_declarations, extract_lemma_statements, proof_body_for, regex_matches, Declaration,
    RegexMatch, PUBLISHED_PATTERN,
};

pub(crate) use scan::is_ident_char;

/// Byte range into the text a statement was extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// How statements are pulled out of a reasoner response.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMode {
    /// The published `theorem (.*?):= by sorry` pattern, dot matching newlines.
    Regex,
    /// Delimiter-aware scan that only accepts `:= by sorry` bodies.
    #[default]
    Balanced,
}

impl fmt::Display for ExtractionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtractionMode::Regex => "regex",
            ExtractionMode::Balanced => "balanced",
        })
    }
}

impl std::str::FromStr for ExtractionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "regex" => Ok(ExtractionMode::Regex),
            "balanced" => Ok(ExtractionMode::Balanced),
            other => Err(format!("unknown extraction mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("expected `theorem` at byte {offset}")]
    ExpectedKeyword { offset: usize },
    #[error("expected a theorem name at byte {offset}")]
    MissingName { offset: usize },
    #[error("mismatched closing delimiter at byte {offset}")]
    Unbalanced { offset: usize },
    #[error("delimiter opened at byte {offset} is never closed")]
    Unclosed { offset: usize },
    #[error("no top-level goal colon before byte {offset}")]
    MissingGoalColon { offset: usize },
    #[error("declaration is not terminated by `:=` before byte {offset}")]
    MissingAssign { offset: usize },
    #[error("unexpected proof body at byte {offset}")]
    UnexpectedBody { offset: usize },
    #[error("unterminated comment starting at byte {offset}")]
    UnterminatedComment { offset: usize },
    #[error("unterminated string literal starting at byte {offset}")]
    UnterminatedString { offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match *self {
            ParseError::ExpectedKeyword { offset }
            | ParseError::MissingName { offset }
            | ParseError::Unbalanced { offset }
            | ParseError::Unclosed { offset }
            | ParseError::MissingGoalColon { offset }
            | ParseError::MissingAssign { offset }
            | ParseError::UnexpectedBody { offset }
            | ParseError::UnterminatedComment { offset }
            | ParseError::UnterminatedString { offset } => offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid identifier `{0}`")]
pub struct InvalidIdentifier(pub String);

/// A parsed `theorem` declaration header.
///
/// `binders` is the verbatim text between the name and the goal colon and
/// `goal` the verbatim text after it, so that
/// `raw == "theorem" + gap + name + binders + ":" + goal` where `gap` is the
/// original whitespace after the keyword.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TheoremStatement {
    name: String,
    binders: String,
    goal: String,
    raw: String,
    span: Span,
}

impl TheoremStatement {
    pub(crate) fn from_header(src: &str, header: &scan::Header, span_end: usize) -> Self {
        TheoremStatement {
            name: src[header.name.0..header.name.1].to_string(),
            binders: src[header.name.1..header.colon].to_string(),
            goal: src[header.colon + 1..header.goal_end].to_string(),
            raw: src[header.start..header.goal_end].to_string(),
            span: Span::new(header.start, span_end),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn binders(&self) -> &str {
        &self.binders
    }

    pub fn goal(&self) -> &str {
        &self.goal
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    /// Byte range in the originating text. For statements built by
    /// [`parse_theorem_declaration`] or [`rename_theorem`] the originating
    /// text is `raw` itself.
    pub fn span(&self) -> Span {
        self.span
    }

    /// `raw` followed by `:= <body>`, ready to hand to a checker.
    pub fn with_body(&self, body: &str) -> String {
        format!("{} := {}", self.raw.trim_end(), body.trim())
    }

    pub fn canonical(&self) -> CanonicalStatement {
        normalize_statement(self)
    }
}

impl fmt::Display for TheoremStatement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// Splits a declaration header into name, binders and goal.
///
/// `raw` must start with `theorem` and must not contain a top-level `:=`.
pub fn parse_theorem_declaration(raw: &str) -> Result<TheoremStatement, ParseError> {
    let header = scan::scan_header(raw, 0)?;
    if let Some(offset) = header.assign {
        return Err(ParseError::UnexpectedBody { offset });
    }
    Ok(TheoremStatement::from_header(raw, &header, raw.len()))
}

pub fn is_valid_identifier(name: &str) -> bool {
    !name.is_empty() && name.chars().all(scan::is_name_char)
}

/// Returns a copy of `stmt` named `new_name`; `raw` is regenerated.
pub fn rename_theorem(
    stmt: &TheoremStatement,
    new_name: &str,
) -> Result<TheoremStatement, InvalidIdentifier> {
    if !is_valid_identifier(new_name) {
        return Err(InvalidIdentifier(new_name.to_string()));
    }
    let raw = format!(
        "{} {}{}:{}",
        scan::KEYWORD,
        new_name,
        stmt.binders,
        stmt.goal
    );
    Ok(TheoremStatement {
        name: new_name.to_string(),
        binders: stmt.binders.clone(),
        goal: stmt.goal.clone(),
        span: Span::new(0, raw.len()),
        raw,
    })
}

/// True when `text` mentions `sorry`, `sorryAx` or `admit` as a standalone
/// identifier or as a component of a dotted name.
pub fn mentions_sorry(text: &str) -> bool {
    text.split(|c: char| !is_ident_char(c))
        .any(|tok| matches!(tok, "sorry" | "sorryAx" | "admit"))
}
