//! Delimiter-aware scanning of Lean declaration headers.
//!
//! The scanner does not tokenize Lean. It tracks bracket nesting, skips
//! comments and string literals, and finds the two positions that matter for
//! a `theorem` header: the first top-level `:` (the goal colon) and the first
//! top-level `:=` (the start of the proof body).

use super::ParseError;

pub(crate) const KEYWORD: &str = "theorem";

/// Keywords that start a new top-level command when they open a line.
const COMMAND_KEYWORDS: &[&str] = &[
    "theorem",
    "lemma",
    "def",
    "example",
    "instance",
    "abbrev",
    "structure",
    "inductive",
    "class",
    "namespace",
    "section",
    "end",
    "open",
    "import",
    "set_option",
    "variable",
    "noncomputable",
    "private",
    "protected",
    "#eval",
    "#check",
];

pub(crate) fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\''
}

/// Characters allowed in a declaration name. Dotted names are accepted.
pub(crate) fn is_name_char(c: char) -> bool {
    is_ident_char(c) || matches!(c, '.' | '!' | '?' | '«' | '»')
}

fn closer_for(open: char) -> Option<char> {
    match open {
        '(' => Some(')'),
        '[' => Some(']'),
        '{' => Some('}'),
        '⟨' => Some('⟩'),
        '⦃' => Some('⦄'),
        _ => None,
    }
}

fn is_closer(c: char) -> bool {
    matches!(c, ')' | ']' | '}' | '⟩' | '⦄')
}

/// Byte ranges of a scanned `theorem` header, relative to the scanned text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Header {
    pub start: usize,
    pub name: (usize, usize),
    pub colon: usize,
    /// End of the goal text: the position of the top-level `:=`, or the end
    /// of the input when there is none.
    pub goal_end: usize,
    pub assign: Option<usize>,
}

/// Returns true when `pos` begins a standalone occurrence of `word`.
pub(crate) fn word_at(src: &str, pos: usize, word: &str) -> bool {
    if !src[pos..].starts_with(word) {
        return false;
    }
    let before_ok = src[..pos]
        .chars()
        .next_back()
        .is_none_or(|c| !is_ident_char(c) && c != '.');
    let after_ok = src[pos + word.len()..]
        .chars()
        .next()
        .is_none_or(|c| !is_ident_char(c));
    before_ok && after_ok
}

/// Length of the line comment or (nested) block comment starting at `pos`,
/// if any.
pub(crate) fn comment_len(src: &str, pos: usize) -> Result<Option<usize>, ParseError> {
    let rest = &src[pos..];
    if rest.starts_with("--") {
        let len = rest.find('\n').unwrap_or(rest.len());
        return Ok(Some(len));
    }
    if rest.starts_with("/-") {
        let mut depth = 0usize;
        let mut i = 0;
        let bytes = rest.as_bytes();
        while i + 1 < bytes.len() {
            if bytes[i] == b'/' && bytes[i + 1] == b'-' {
                depth += 1;
                i += 2;
            } else if bytes[i] == b'-' && bytes[i + 1] == b'/' {
                depth -= 1;
                i += 2;
                if depth == 0 {
                    return Ok(Some(i));
                }
            } else {
                i += 1;
            }
        }
        return Err(ParseError::UnterminatedComment { offset: pos });
    }
    Ok(None)
}

fn string_len(src: &str, pos: usize) -> Result<usize, ParseError> {
    let mut escaped = false;
    for (i, c) in src[pos + 1..].char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' => escaped = true,
            '"' => return Ok(i + 2),
            _ => {}
        }
    }
    Err(ParseError::UnterminatedString { offset: pos })
}

/// True when `pos` is the first non-blank character of its line and a
/// top-level command keyword starts there.
fn command_starts_line(src: &str, pos: usize) -> bool {
    let line_start = src[..pos].rfind('\n').map_or(0, |i| i + 1);
    src[line_start..pos].chars().all(|c| c == ' ' || c == '\t') && command_at(src, pos)
}

/// A command keyword begins at `pos`.
pub(crate) fn command_at(src: &str, pos: usize) -> bool {
    COMMAND_KEYWORDS.iter().any(|kw| {
        if kw.starts_with('#') {
            src[pos..].starts_with(kw)
        } else {
            word_at(src, pos, kw)
        }
    })
}

/// Scans a `theorem` header beginning at `start`.
pub(crate) fn scan_header(src: &str, start: usize) -> Result<Header, ParseError> {
    if !src[start..].starts_with(KEYWORD) {
        return Err(ParseError::ExpectedKeyword { offset: start });
    }
    let mut pos = start + KEYWORD.len();
    let ws = src[pos..]
        .char_indices()
        .find(|(_, c)| !c.is_whitespace())
        .map_or(src.len() - pos, |(i, _)| i);
    pos += ws;
    let name_len = src[pos..]
        .char_indices()
        .find(|(_, c)| !is_name_char(*c))
        .map_or(src.len() - pos, |(i, _)| i);
    if name_len == 0 || ws == 0 {
        return Err(ParseError::MissingName { offset: pos });
    }
    let name = (pos, pos + name_len);
    pos += name_len;

    let mut stack: Vec<(char, usize)> = Vec::new();
    let mut colon = None;
    while pos < src.len() {
        if let Some(len) = comment_len(src, pos)? {
            pos += len;
            continue;
        }
        let c = src[pos..].chars().next().expect("in bounds");
        if src[pos..].starts_with("```") {
            return Err(ParseError::MissingAssign { offset: pos });
        }
        match c {
            '"' => {
                pos += string_len(src, pos)?;
                continue;
            }
            _ if closer_for(c).is_some() => stack.push((c, pos)),
            _ if is_closer(c) => match stack.pop() {
                Some((open, _)) if closer_for(open) == Some(c) => {}
                _ => return Err(ParseError::Unbalanced { offset: pos }),
            },
            ':' if stack.is_empty() => {
                if src[pos + 1..].starts_with('=') {
                    let colon = colon.ok_or(ParseError::MissingGoalColon { offset: pos })?;
                    return Ok(Header {
                        start,
                        name,
                        colon,
                        goal_end: pos,
                        assign: Some(pos),
                    });
                }
                if colon.is_none() {
                    colon = Some(pos);
                }
            }
            _ if stack.is_empty()
                && is_ident_char(c)
                && src[..pos].ends_with(['\n', ' ', '\t'])
                && command_starts_line(src, pos) =>
            {
                return Err(ParseError::MissingAssign { offset: pos });
            }
            _ => {}
        }
        pos += c.len_utf8();
    }
    if let Some(&(_, offset)) = stack.last() {
        return Err(ParseError::Unclosed { offset });
    }
    let colon = colon.ok_or(ParseError::MissingGoalColon { offset: src.len() })?;
    Ok(Header {
        start,
        name,
        colon,
        goal_end: src.len(),
        assign: None,
    })
}

/// Skips whitespace and comments starting at `pos`.
pub(crate) fn skip_trivia(src: &str, mut pos: usize) -> usize {
    loop {
        let ws = src[pos..]
            .char_indices()
            .find(|(_, c)| !c.is_whitespace())
            .map_or(src.len() - pos, |(i, _)| i);
        pos += ws;
        match comment_len(src, pos) {
            Ok(Some(len)) => pos += len,
            _ => return pos,
        }
    }
}

/// End of a proof body that starts at `from` inside a declaration whose
/// keyword sits at `decl_start`. The body runs until a line indented no
/// deeper than the declaration that opens a new command, a doc comment,
/// an attribute or a code fence.
pub(crate) fn body_end(src: &str, decl_start: usize, from: usize) -> usize {
    let decl_line = src[..decl_start].rfind('\n').map_or(0, |i| i + 1);
    let decl_indent = decl_start - decl_line;
    let mut line_start = match src[from..].find('\n') {
        Some(i) => from + i + 1,
        None => return src.len(),
    };
    while line_start < src.len() {
        let line_end = src[line_start..]
            .find('\n')
            .map_or(src.len(), |i| line_start + i);
        let line = &src[line_start..line_end];
        let indent = line.len() - line.trim_start_matches([' ', '\t']).len();
        let text = &line[indent..];
        let opens_command = !text.is_empty()
            && indent <= decl_indent
            && (command_starts_line(src, line_start + indent)
                || text.starts_with("/--")
                || text.starts_with("@[")
                || text.starts_with("```"));
        if opens_command || text.starts_with("```") {
            break;
        }
        line_start = line_end + 1;
    }
    let end = line_start.min(src.len());
    from + src[from..end].trim_end().len()
}

/// Replaces Lean comments with a single space; string literals are kept.
pub(crate) fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    while pos < text.len() {
        match comment_len(text, pos) {
            Ok(Some(len)) => {
                out.push(' ');
                pos += len;
                continue;
            }
            Ok(None) => {}
            // unterminated block comment: drop the remainder
            Err(_) => break,
        }
        let c = text[pos..].chars().next().expect("in bounds");
        if c == '"' {
            if let Ok(len) = string_len(text, pos) {
                out.push_str(&text[pos..pos + len]);
                pos += len;
                continue;
            }
        }
        out.push(c);
        pos += c.len_utf8();
    }
    out
}
