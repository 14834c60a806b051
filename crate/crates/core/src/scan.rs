//! Low-level LaTeX scanning helpers shared by the pipeline stages.
//!
//! Everything here works on byte offsets. All structurally relevant
//! characters (`\`, `{`, `}`, `%`, `$`, `&`) are ASCII, so byte positions
//! located at them are always valid char boundaries; multi-byte content in
//! between is carried through opaquely.

/// Environment names whose content is protected from comment stripping,
/// macro expansion, and block parsing.
pub(crate) const VERBATIM_ENVS: &[&str] = &[
    "verbatim",
    "verbatim*",
    "Verbatim",
    "lstlisting",
    "minted",
    "alltt",
];

/// True when the byte at `idx` is preceded by an odd number of backslashes.
pub(crate) fn is_escaped(bytes: &[u8], idx: usize) -> bool {
    let mut n = 0;
    let mut i = idx;
    while i > 0 && bytes[i - 1] == b'\\' {
        n += 1;
        i -= 1;
    }
    n % 2 == 1
}

/// Given `text[open..]` starting with `{`, returns the byte index just past
/// the matching `}`. Escaped braces do not change depth. Returns `None` when
/// the group never closes.
pub(crate) fn group_end(text: &str, open: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    debug_assert_eq!(bytes[open], b'{');
    let mut depth = 0usize;
    let mut i = open;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if !is_escaped(bytes, i) => depth += 1,
            b'}' if !is_escaped(bytes, i) => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

/// Content of the brace group starting at `open`, with the index just past it.
pub(crate) fn group_content(text: &str, open: usize) -> Option<(&str, usize)> {
    let end = group_end(text, open)?;
    Some((&text[open + 1..end - 1], end))
}

/// Skips ASCII whitespace starting at `i`.
pub(crate) fn skip_ws(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && bytes[i].is_ascii_whitespace() {
        i += 1;
    }
    i
}

/// Parses `\name` at `start` (which must point at the backslash). Returns the
/// command name and the byte index just past it. Single-character control
/// symbols (`\%`, `\\`, ...) yield a one-character name.
pub(crate) fn command_at(text: &str, start: usize) -> Option<(&str, usize)> {
    let bytes = text.as_bytes();
    if bytes.get(start) != Some(&b'\\') {
        return None;
    }
    let mut i = start + 1;
    while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
        i += 1;
    }
    if i == start + 1 {
        // control symbol
        if i < bytes.len() && bytes[i].is_ascii() {
            return Some((&text[start + 1..i + 1], i + 1));
        }
        return None;
    }
    Some((&text[start + 1..i], i))
}

/// Matches `\begin{name}` at `start`, returning (name, index past `}`).
pub(crate) fn begin_at(text: &str, start: usize) -> Option<(&str, usize)> {
    let bytes = text.as_bytes();
    let (cmd, mut i) = command_at(text, start)?;
    if cmd != "begin" {
        return None;
    }
    i = skip_ws(bytes, i);
    if bytes.get(i) != Some(&b'{') {
        return None;
    }
    let (name, end) = group_content(text, i)?;
    Some((name, end))
}

/// Matches `\end{name}` at `start`, returning (name, index past `}`).
pub(crate) fn end_at(text: &str, start: usize) -> Option<(&str, usize)> {
    let bytes = text.as_bytes();
    let (cmd, mut i) = command_at(text, start)?;
    if cmd != "end" {
        return None;
    }
    i = skip_ws(bytes, i);
    if bytes.get(i) != Some(&b'{') {
        return None;
    }
    let (name, end) = group_content(text, i)?;
    Some((name, end))
}

pub(crate) fn is_verbatim_env(name: &str) -> bool {
    VERBATIM_ENVS.contains(&name)
}

/// Byte spans of verbatim-family environments, markers included. Unclosed
/// environments extend to the end of the text.
pub(crate) fn verbatim_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' && !is_escaped(bytes, i) {
            if let Some((name, after)) = begin_at(text, i) {
                if is_verbatim_env(name) {
                    let close = format!("\\end{{{name}}}");
                    let end = match text[after..].find(&close) {
                        Some(rel) => after + rel + close.len(),
                        None => bytes.len(),
                    };
                    spans.push((i, end));
                    i = end;
                    continue;
                }
            }
        }
        i += 1;
    }
    spans
}

/// True when `idx` falls inside any of the (sorted, disjoint) spans.
pub(crate) fn in_spans(spans: &[(usize, usize)], idx: usize) -> bool {
    spans.iter().any(|&(s, e)| idx >= s && idx < e)
}

/// Collapses all whitespace runs to single spaces and trims the ends.
pub(crate) fn collapse_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escape_counting() {
        let b = br"a\%".as_slice();
        assert!(is_escaped(b, 2));
        let b = br"a\\%".as_slice();
        assert!(!is_escaped(b, 3));
    }

    #[test]
    fn balanced_groups() {
        let t = "{a{b}c}d";
        assert_eq!(group_end(t, 0), Some(7));
        assert_eq!(group_content(t, 0), Some(("a{b}c", 7)));
        assert_eq!(group_end("{open", 0), None);
    }

    #[test]
    fn begin_end_markers() {
        assert_eq!(begin_at("\\begin{figure}x", 0), Some(("figure", 14)));
        assert_eq!(end_at("\\end{figure}", 0), Some(("figure", 12)));
        assert_eq!(begin_at("\\begins{x}", 0), None);
    }

    #[test]
    fn verbatim_span_detection() {
        let t = "a \\begin{verbatim}\\begin{x}\\end{verbatim} b";
        let spans = verbatim_spans(t);
        assert_eq!(spans.len(), 1);
        assert_eq!(&t[spans[0].0..spans[0].1], "\\begin{verbatim}\\begin{x}\\end{verbatim}");
    }

    #[test]
    fn unclosed_verbatim_runs_to_end() {
        let t = "x \\begin{lstlisting} code";
        let spans = verbatim_spans(t);
        assert_eq!(spans, vec![(2, t.len())]);
    }
}
