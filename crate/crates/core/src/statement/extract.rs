use std::sync::OnceLock;

use regex::Regex;

use super::scan::{body_end, command_at, scan_header, skip_trivia, word_at, KEYWORD};
use super::{parse_theorem_declaration, ExtractionMode, Span, TheoremStatement};

/// The lemma extraction pattern as published, character for character.
pub const PUBLISHED_PATTERN: &str = "theorem (.*?):= by sorry";

fn published_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // `s` lets `.` cross line breaks; declarations span lines.
    RE.get_or_init(|| Regex::new(&format!("(?s){PUBLISHED_PATTERN}")).expect("valid pattern"))
}

/// One match of the published pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegexMatch {
    /// Whole match, `theorem ` through `:= by sorry`.
    pub span: Span,
    /// The capture group.
    pub capture: Span,
}

/// All non-overlapping, leftmost, non-greedy matches of the published pattern.
pub fn regex_matches(source: &str) -> Vec<RegexMatch> {
    published_regex()
        .captures_iter(source)
        .map(|caps| {
            let whole = caps.get(0).expect("group 0");
            let cap = caps.get(1).expect("group 1");
            RegexMatch {
                span: Span::new(whole.start(), whole.end()),
                capture: Span::new(cap.start(), cap.end()),
            }
        })
        .collect()
}

/// A declaration found by the balanced scanner, with whatever proof body
/// followed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Declaration {
    pub statement: TheoremStatement,
    /// Proof text starting at `by` (or the first token after `:=`).
    pub body: String,
}

impl Declaration {
    pub fn is_sorry_stub(&self) -> bool {
        let mut words = self.body.split_whitespace();
        words.next() == Some("by") && words.next() == Some("sorry") && words.next().is_none()
    }
}

fn keyword_positions(source: &str) -> impl Iterator<Item = usize> + '_ {
    source.match_indices(KEYWORD).filter_map(move |(pos, _)| {
        let followed_by_space = source[pos + KEYWORD.len()..]
            .chars()
            .next()
            .is_some_and(char::is_whitespace);
        (followed_by_space && word_at(source, pos, KEYWORD)).then_some(pos)
    })
}

fn log_lemma_keywords(source: &str) {
    let count = source
        .match_indices("lemma")
        .filter(|(pos, _)| {
            word_at(source, *pos, "lemma")
                && source[pos + 5..]
                    .chars()
                    .next()
                    .is_some_and(char::is_whitespace)
        })
        .count();
    if count > 0 {
        tracing::debug!(
            count,
            "ignoring `lemma` declarations; only `theorem` is extracted"
        );
    }
}

/// Balanced scan. With `sorry_only`, keeps only declarations whose body is
/// exactly `by sorry` and ends their span at `sorry`.
fn balanced(source: &str, sorry_only: bool) -> Vec<Declaration> {
    let mut out = Vec::new();
    let mut cursor = 0;
    for pos in keyword_positions(source) {
        if pos < cursor {
            continue;
        }
        let Ok(header) = scan_header(source, pos) else {
            continue;
        };
        let Some(assign) = header.assign else {
            continue;
        };
        let body_start = skip_trivia(source, assign + 2);
        let starts_with_by = word_at(source, body_start, "by");
        let end = if sorry_only {
            if !starts_with_by {
                cursor = assign + 2;
                continue;
            }
            let sorry_at = skip_trivia(source, body_start + 2);
            if !word_at(source, sorry_at, "sorry") || !stub_ends(source, sorry_at + 5, pos) {
                cursor = assign + 2;
                continue;
            }
            sorry_at + 5
        } else {
            body_end(source, pos, body_start)
        };
        out.push(Declaration {
            statement: TheoremStatement::from_header(source, &header, end),
            body: source[body_start..end].to_string(),
        });
        cursor = end;
    }
    out
}

/// After `by sorry`, the tactic block must not continue: the rest of the
/// line is blank or a comment, and the next non-blank line does not extend
/// the block.
fn stub_ends(source: &str, after: usize, decl_start: usize) -> bool {
    let line_end = source[after..]
        .find('\n')
        .map_or(source.len(), |i| after + i);
    let tail = source[after..line_end].trim();
    if !tail.is_empty() && command_at(tail, 0) {
        return true;
    }
    if !(tail.is_empty() || tail.starts_with("--")) {
        return false;
    }
    let column = |pos: usize| pos - source[..pos].rfind('\n').map_or(0, |i| i + 1);
    let sorry_col = column(after - 5);
    let sorry_opens_line = source[after - 5 - sorry_col..after - 5].trim().is_empty();
    let decl_col = column(decl_start);
    let Some(next) = source[line_end..]
        .lines()
        .find(|l| !l.trim().is_empty() && !l.trim_start().starts_with("--"))
    else {
        return true;
    };
    let indent = next.len() - next.trim_start().len();
    let continues = next.trim_start().starts_with("<;>")
        || (sorry_opens_line && indent >= sorry_col && indent > decl_col);
    !continues
}

/// Extracts candidate lemma statements from a reasoner response.
///
/// REGEX mode runs the published pattern and keeps the captures that parse
/// as declarations. BALANCED mode keeps every well-formed declaration whose
/// proof is exactly `by sorry`. Results are ordered by span start and never
/// overlap.
pub fn extract_lemma_statements(source: &str, mode: ExtractionMode) -> Vec<TheoremStatement> {
    log_lemma_keywords(source);
    match mode {
        ExtractionMode::Regex => regex_matches(source)
            .into_iter()
            .filter_map(|m| {
                let raw = &source[m.span.start..m.capture.end];
                match parse_theorem_declaration(raw) {
                    Ok(stmt) => Some(rebase(stmt, m.span)),
                    Err(err) => {
                        tracing::debug!(start = m.span.start, %err, "regex capture does not parse");
                        None
                    }
                }
            })
            .collect(),
        ExtractionMode::Balanced => balanced(source, true)
            .into_iter()
            .map(|d| d.statement)
            .collect(),
    }
}

fn rebase(stmt: TheoremStatement, span: Span) -> TheoremStatement {
    TheoremStatement { span, ..stmt }
}

/// Every well-formed `theorem` declaration in `source` together with its
/// proof body, whatever that body is. Used to ingest complete Lean files and
/// to read proofs out of prover output.
pub fn extract_declarations(source: &str) -> Vec<Declaration> {
    balanced(source, false)
}

/// Finds the proof body a model produced for `name`. Accepts a fenced or bare
/// declaration of `name`, or a bare `by ...` block.
pub fn proof_body_for(response: &str, name: &str) -> Option<String> {
    let text = last_code_block(response).unwrap_or(response);
    if let Some(decl) = extract_declarations(text)
        .into_iter()
        .rev()
        .find(|d| d.statement.name() == name)
    {
        return (!decl.body.trim().is_empty()).then(|| decl.body.trim().to_string());
    }
    let trimmed = text.trim();
    (word_at(trimmed, 0, "by") || trimmed.starts_with("by\n")).then(|| trimmed.to_string())
}

fn last_code_block(text: &str) -> Option<&str> {
    let close = text.rfind("```")?;
    let open = text[..close].rfind("```")?;
    let inner = &text[open + 3..close];
    // drop the info string on the opening fence
    let inner = match inner.find('\n') {
        Some(i) if !inner[..i].contains(char::is_whitespace) => &inner[i + 1..],
        _ => inner,
    };
    Some(inner)
}
