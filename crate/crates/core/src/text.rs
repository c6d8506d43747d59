//! Text normalization shared by retrieval, evidence matching and scoring.
//!
//! Every component that compares strings goes through [`tokenize`], so a query
//! term, an entity mention and an evidence sentence agree on what a token is.

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Lowercase, compatibility-decompose, fold diacritics to ASCII and split on
/// anything that is not alphanumeric.
///
/// Letters without a canonical decomposition (`ł`, `ø`, `ß`) are transliterated,
/// so `"Żuławski"` and `"Zulawski"` produce the same token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut folded = String::with_capacity(text.len());
    for c in text.nfkd() {
        if is_combining_mark(c) {
            continue;
        }
        if c.is_ascii() {
            folded.push(c);
        } else if c.is_alphanumeric() {
            match deunicode::deunicode_char(c) {
                Some(ascii) => folded.push_str(ascii),
                None => folded.push(c),
            }
        } else {
            folded.push(' ');
        }
    }
    folded
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Canonical single-string form: tokens joined by one space.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// True when `needle` occurs as a contiguous token run inside `haystack`.
pub fn contains_tokens(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}
