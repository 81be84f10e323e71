use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use super::scan::{strip_comments, KEYWORD};
use super::TheoremStatement;

/// SHA-256 of a name-blind canonical statement.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest([u8; 32]);

impl Digest {
    pub fn of(text: &str) -> Self {
        Digest(Sha256::digest(text.as_bytes()).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First 12 hex characters, for tables and logs.
    pub fn short(&self) -> String {
        self.to_hex()[..12].to_string()
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid digest `{0}`: expected 64 lowercase hex characters")]
pub struct DigestParseError(pub String);

impl FromStr for Digest {
    type Err = DigestParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 64 || s.chars().any(|c| c.is_ascii_uppercase()) {
            return Err(DigestParseError(s.to_string()));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| DigestParseError(s.to_string()))?;
        Ok(Digest(out))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Whitespace-collapsed statement text and its name-blind digest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CanonicalStatement {
    pub text: String,
    pub digest: Digest,
}

impl CanonicalStatement {
    /// Recomputes the digest for canonical `text` produced by this module.
    pub fn digest_of_text(text: &str) -> Option<Digest> {
        let stmt = super::parse_theorem_declaration(text).ok()?;
        Some(normalize_statement(&stmt).digest)
    }
}

fn collapse(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn render(name: &str, binders: &str, goal: &str) -> String {
    collapse(&format!(
        "{KEYWORD} {name} {} : {}",
        strip_comments(binders),
        strip_comments(goal)
    ))
}

/// Canonical form: `theorem <name> <binders> : <goal>` with comments removed
/// and whitespace runs collapsed. The digest is taken with the name replaced
/// by `_`, so renamed copies of a statement share it.
pub fn normalize_statement(stmt: &TheoremStatement) -> CanonicalStatement {
    let text = render(stmt.name(), stmt.binders(), stmt.goal());
    let digest = Digest::of(&render("_", stmt.binders(), stmt.goal()));
    CanonicalStatement { text, digest }
}
