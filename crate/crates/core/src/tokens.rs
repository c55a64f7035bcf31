//! Deterministic token proxy used for every length cap.
//!
//! A token is a maximal run of non-whitespace characters, except that each of
//! the characters `{ } [ ] ( ) , : "` is always a token of its own.

use std::ops::Range;

const STANDALONE: &[char] = &['{', '}', '[', ']', '(', ')', ',', ':', '"'];

fn is_standalone(c: char) -> bool {
    STANDALONE.contains(&c)
}

/// Byte spans of every token in `text`, in order.
pub fn token_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push(s..i);
            }
        } else if is_standalone(c) {
            if let Some(s) = start.take() {
                spans.push(s..i);
            }
            spans.push(i..i + c.len_utf8());
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push(s..text.len());
    }
    spans
}

pub fn count_tokens(text: &str) -> usize {
    token_spans(text).len()
}

/// Keeps the first `cap` tokens of `text`, preserving the original spacing
/// between them. Returns the kept prefix and whether anything was dropped.
pub fn truncate_right(text: &str, cap: usize) -> (&str, bool) {
    let spans = token_spans(text);
    if spans.len() <= cap {
        return (text, false);
    }
    if cap == 0 {
        return ("", true);
    }
    let end = spans[cap - 1].end;
    (&text[..end], true)
}

/// Keeps the last `cap` tokens of `text`.
pub fn truncate_left(text: &str, cap: usize) -> (&str, bool) {
    let spans = token_spans(text);
    if spans.len() <= cap {
        return (text, false);
    }
    if cap == 0 {
        return ("", true);
    }
    let start = spans[spans.len() - cap].start;
    (&text[start..], true)
}
