//! Tokenization and value normalization.
//!
//! Tokens are maximal runs of alphanumeric characters, lowercased. A small
//! set of connector characters stays inside a token when it sits between two
//! alphanumerics: `'` and `-` between any alphanumerics ("doesn't",
//! "guest-house"), `:` and `.` between digits ("15:30", "3.5"). Every other
//! non-space character becomes a token of its own.

use std::ops::Range;

/// Canonical state value for "the user does not care".
pub const DONTCARE: &str = "dontcare";

/// A token together with the byte range it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpannedToken {
    pub text: String,
    pub span: Range<usize>,
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spanned(text).into_iter().map(|t| t.text).collect()
}

pub fn tokenize_spanned(text: &str) -> Vec<SpannedToken> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |i: usize| -> usize {
        chars
            .get(i + 1)
            .map(|&(b, _)| b)
            .unwrap_or(text.len())
    };

    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if !c.is_alphanumeric() {
            tokens.push(SpannedToken {
                text: c.to_lowercase().collect(),
                span: start..end_of(i),
            });
            i += 1;
            continue;
        }

        let mut j = i + 1;
        while j < chars.len() {
            let c = chars[j].1;
            if c.is_alphanumeric() {
                j += 1;
                continue;
            }
            let prev = chars[j - 1].1;
            let next = chars.get(j + 1).map(|&(_, n)| n);
            let joins = match (c, next) {
                ('\'' | '-', Some(n)) => prev.is_alphanumeric() && n.is_alphanumeric(),
                (':' | '.', Some(n)) => prev.is_ascii_digit() && n.is_ascii_digit(),
                _ => false,
            };
            if joins {
                j += 2;
            } else {
                break;
            }
        }
        let end = end_of(j - 1);
        tokens.push(SpannedToken {
            text: text[start..end].to_lowercase(),
            span: start..end,
        });
        i = j;
    }
    tokens
}

/// Joins tokens with single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

/// Normal form of a state value: tokenized, rejoined with single spaces, and
/// with every "don't care" surface variant mapped to [`DONTCARE`].
pub fn normalize_value(value: &str) -> String {
    let joined = detokenize(&tokenize(value));
    match joined.as_str() {
        "dontcare" | "dont care" | "don't care" | "do n't care" | "dont-care" => DONTCARE.to_string(),
        _ => joined,
    }
}
