//! Segmentation of normalized LaTeX source: environment blocks, the section
//! tree, sentences, and citation markers.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scan;
use crate::Warning;

/// Version tag of the sentence splitter, covering the abbreviation list and
/// the split rule. Bump whenever either changes: derived datasets are only
/// reproducible for a fixed splitter.
pub const SENTENCE_SPLITTER_VERSION: &str = "1";

/// Tokens that never end a sentence even when followed by whitespace and an
/// uppercase letter or digit. Matched case-insensitively at word boundaries;
/// each entry includes its final period.
pub const ABBREVIATIONS: &[&str] = &[
    "al.", "e.g.", "i.e.", "etc.", "cf.", "vs.", "viz.", "resp.", "approx.", "w.r.t.", "i.i.d.",
    "fig.", "figs.", "eq.", "eqs.", "tab.", "sec.", "secs.", "alg.", "no.", "nos.", "vol.",
    "pp.", "dr.", "mr.", "ms.", "prof.", "st.",
];

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("unbalanced environment {name:?} at byte {offset}")]
    UnbalancedEnvironment { name: String, offset: usize },
}

/// One `\begin{...}...\end{...}` block with nesting resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvironmentBlock {
    /// Literal string between the braces of the opening marker.
    pub env_name: String,
    /// Text between the markers, children included.
    pub body: String,
    pub children: Vec<EnvironmentBlock>,
    /// Byte range in the scanned source, markers included.
    pub source_range: (usize, usize),
    pub label: Option<String>,
    pub caption: Option<String>,
}

/// A node of the section tree. The root is the implicit preamble node
/// (level 0, empty title); `\section` is level 1, `\subsection` 2,
/// `\subsubsection` 3. Child levels are strictly greater than the parent's.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionNode {
    pub title: String,
    pub level: usize,
    pub paragraphs: Vec<Paragraph>,
    pub children: Vec<SectionNode>,
}

/// A paragraph as an ordered sentence list, with per-sentence object
/// references and citation marks (indices into `sentences`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Paragraph {
    pub sentences: Vec<String>,
    pub object_refs: Vec<(usize, String)>,
    pub cite_marks: Vec<(usize, String)>,
}

// ---------------------------------------------------------------------------
// Environment block extraction
// ---------------------------------------------------------------------------

struct Frame {
    name: String,
    start: usize,
    body_start: usize,
    children: Vec<EnvironmentBlock>,
}

/// Extracts all top-level environment blocks with nesting resolved. Verbatim
/// environments are opaque: their content is never parsed for nested
/// markers. Text outside blocks is untouched.
pub fn extract_blocks(source: &str) -> Result<Vec<EnvironmentBlock>, ParseError> {
    let bytes = source.as_bytes();
    let mut top: Vec<EnvironmentBlock> = Vec::new();
    let mut stack: Vec<Frame> = Vec::new();
    let mut i = 0usize;

    fn attach(stack: &mut [Frame], top: &mut Vec<EnvironmentBlock>, block: EnvironmentBlock) {
        match stack.last_mut() {
            Some(frame) => frame.children.push(block),
            None => top.push(block),
        }
    }

    while i < bytes.len() {
        if bytes[i] != b'\\' || scan::is_escaped(bytes, i) {
            i += 1;
            continue;
        }
        if let Some((name, after)) = scan::begin_at(source, i) {
            if scan::is_verbatim_env(name) {
                let close = format!("\\end{{{name}}}");
                let Some(rel) = source[after..].find(&close) else {
                    return Err(ParseError::UnbalancedEnvironment {
                        name: name.to_string(),
                        offset: i,
                    });
                };
                let body_end = after + rel;
                let block = EnvironmentBlock {
                    env_name: name.to_string(),
                    body: source[after..body_end].to_string(),
                    children: Vec::new(),
                    source_range: (i, body_end + close.len()),
                    label: None,
                    caption: None,
                };
                attach(&mut stack, &mut top, block);
                i = body_end + close.len();
                continue;
            }
            stack.push(Frame {
                name: name.to_string(),
                start: i,
                body_start: after,
                children: Vec::new(),
            });
            i = after;
            continue;
        }
        if let Some((name, after)) = scan::end_at(source, i) {
            let Some(frame) = stack.pop() else {
                return Err(ParseError::UnbalancedEnvironment {
                    name: name.to_string(),
                    offset: i,
                });
            };
            if frame.name != name {
                return Err(ParseError::UnbalancedEnvironment {
                    name: frame.name,
                    offset: frame.start,
                });
            }
            let body = &source[frame.body_start..i];
            let child_ranges: Vec<(usize, usize)> = frame
                .children
                .iter()
                .map(|c| {
                    (
                        c.source_range.0 - frame.body_start,
                        c.source_range.1 - frame.body_start,
                    )
                })
                .collect();
            let (label, caption) = label_and_caption(body, &child_ranges);
            let block = EnvironmentBlock {
                env_name: frame.name,
                body: body.to_string(),
                children: frame.children,
                source_range: (frame.start, after),
                label,
                caption,
            };
            attach(&mut stack, &mut top, block);
            i = after;
            continue;
        }
        i += 1;
    }

    if let Some(frame) = stack.pop() {
        return Err(ParseError::UnbalancedEnvironment {
            name: frame.name,
            offset: frame.start,
        });
    }
    Ok(top)
}

/// Finds `\label{...}` and `\caption{...}` in the block's direct text, i.e.
/// outside the child block ranges (so a subfigure's caption stays its own).
fn label_and_caption(
    body: &str,
    child_ranges: &[(usize, usize)],
) -> (Option<String>, Option<String>) {
    let bytes = body.as_bytes();
    let mut label = None;
    let mut caption = None;
    let mut i = 0usize;
    while i < bytes.len() {
        if scan::in_spans(child_ranges, i) {
            i += 1;
            continue;
        }
        if bytes[i] == b'\\' && !scan::is_escaped(bytes, i) {
            if let Some((cmd, after)) = scan::command_at(body, i) {
                if cmd == "label" || cmd == "caption" {
                    let mut j = scan::skip_ws(bytes, after);
                    // \caption[short]{long}
                    if cmd == "caption" && bytes.get(j) == Some(&b'[') {
                        while j < bytes.len() && bytes[j] != b']' {
                            j += 1;
                        }
                        j = scan::skip_ws(bytes, (j + 1).min(bytes.len()));
                    }
                    if bytes.get(j) == Some(&b'{') {
                        if let Some((content, end)) = scan::group_content(body, j) {
                            let value = scan::collapse_ws(content);
                            if cmd == "label" && label.is_none() {
                                label = Some(value);
                            } else if cmd == "caption" && caption.is_none() {
                                caption = Some(value);
                            }
                            i = end;
                            continue;
                        }
                    }
                }
            }
        }
        i += 1;
    }
    (label, caption)
}

// ---------------------------------------------------------------------------
// Section tree
// ---------------------------------------------------------------------------

/// Raw section outline: titles plus unprocessed paragraph text segments.
/// Document assembly runs its own paragraph processing over this.
#[derive(Debug, Clone)]
pub struct OutlineNode {
    pub title: String,
    pub level: usize,
    pub paragraph_texts: Vec<String>,
    pub children: Vec<OutlineNode>,
}

static RE_SECTION_CMD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\\(section|subsection|subsubsection)\*?\s*[\[{]").unwrap());

/// Builds the raw outline from sectioning commands in document order. Text
/// before the first command becomes the implicit level-0 preamble node (the
/// returned root). A `\subsection` met before any `\section` attaches where
/// it stands, keeping its own level.
pub fn parse_outline(source: &str) -> OutlineNode {
    let mut root = OutlineNode {
        title: String::new(),
        level: 0,
        paragraph_texts: Vec::new(),
        children: Vec::new(),
    };
    let mut stack: Vec<OutlineNode> = Vec::new();
    let mut cursor = 0usize;

    fn flush_text(
        stack: &mut [OutlineNode],
        root: &mut OutlineNode,
        text: &str,
    ) {
        let target = match stack.last_mut() {
            Some(node) => node,
            None => root,
        };
        target.paragraph_texts.extend(split_paragraph_texts(text));
    }

    fn pop_into(stack: &mut Vec<OutlineNode>, root: &mut OutlineNode) {
        if let Some(done) = stack.pop() {
            match stack.last_mut() {
                Some(parent) => parent.children.push(done),
                None => root.children.push(done),
            }
        }
    }

    for m in RE_SECTION_CMD.find_iter(source) {
        let start = m.start();
        if scan::is_escaped(source.as_bytes(), start) {
            continue;
        }
        if start < cursor {
            continue; // command inside a previously consumed title
        }
        flush_text(&mut stack, &mut root, &source[cursor..start]);

        let level = if source[start + 1..].starts_with("subsubsection") {
            3
        } else if source[start + 1..].starts_with("subsection") {
            2
        } else {
            1
        };
        let bytes = source.as_bytes();
        let mut j = m.end() - 1;
        if bytes[j] == b'[' {
            while j < bytes.len() && bytes[j] != b']' {
                j += 1;
            }
            j = scan::skip_ws(bytes, (j + 1).min(bytes.len()));
        }
        let (title, after) = match scan::group_content(source, j) {
            Some((t, end)) => (scan::collapse_ws(t), end),
            None => (String::new(), m.end()),
        };
        cursor = after;

        while stack.last().is_some_and(|top| top.level >= level) {
            pop_into(&mut stack, &mut root);
        }
        stack.push(OutlineNode {
            title,
            level,
            paragraph_texts: Vec::new(),
            children: Vec::new(),
        });
    }
    flush_text(&mut stack, &mut root, &source[cursor..]);
    while !stack.is_empty() {
        pop_into(&mut stack, &mut root);
    }
    root
}

/// Paragraph boundaries are blank lines or `\par`.
pub fn split_paragraph_texts(text: &str) -> Vec<String> {
    static RE_PARA_BREAK: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"\n[ \t]*\n|\\par\b").unwrap());
    RE_PARA_BREAK
        .split(text)
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect()
}

/// Builds the section tree with sentence-split paragraphs. Object references
/// and citation marks stay empty here; document assembly fills them after
/// equation and citation normalization.
pub fn parse_sections(source: &str) -> SectionNode {
    fn convert(node: OutlineNode) -> SectionNode {
        SectionNode {
            title: node.title,
            level: node.level,
            paragraphs: node
                .paragraph_texts
                .iter()
                .map(|t| Paragraph {
                    sentences: split_sentences(t),
                    object_refs: Vec::new(),
                    cite_marks: Vec::new(),
                })
                .filter(|p| !p.sentences.is_empty())
                .collect(),
            children: node.children.into_iter().map(convert).collect(),
        }
    }
    convert(parse_outline(source))
}

// ---------------------------------------------------------------------------
// Sentence splitting
// ---------------------------------------------------------------------------

/// Byte spans that splitting must not cut: `$...$` inline math and
/// `<equation>...</equation>` display math.
fn protected_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        if bytes[i] == b'$' && !scan::is_escaped(bytes, i) {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j] != b'$' || scan::is_escaped(bytes, j)) {
                j += 1;
            }
            if j < bytes.len() {
                spans.push((i, j + 1));
                i = j + 1;
                continue;
            }
            i += 1;
            continue;
        }
        if bytes[i] == b'<' && text[i..].starts_with("<equation>") {
            let end = match text[i..].find("</equation>") {
                Some(rel) => i + rel + "</equation>".len(),
                None => bytes.len(),
            };
            spans.push((i, end));
            i = end;
            continue;
        }
        i += 1;
    }
    spans
}

fn is_abbreviation_at(text: &str, punct_idx: usize) -> bool {
    for abbr in ABBREVIATIONS {
        let len = abbr.len();
        if punct_idx + 1 < len {
            continue;
        }
        let start = punct_idx + 1 - len;
        if !text.is_char_boundary(start) {
            continue;
        }
        if text[start..punct_idx + 1].eq_ignore_ascii_case(abbr) {
            let boundary_ok = start == 0
                || text[..start]
                    .chars()
                    .next_back()
                    .is_some_and(|c| !c.is_alphanumeric());
            if boundary_ok {
                return true;
            }
        }
    }
    false
}

/// Rule-based sentence splitting: a split happens at `.`/`!`/`?` followed by
/// whitespace and an uppercase letter or digit, unless the terminator sits
/// inside math or ends a known abbreviation (see [`ABBREVIATIONS`]).
///
/// Lossless: joining the sentences with single spaces and collapsing
/// whitespace reproduces the whitespace-collapsed input.
pub fn split_sentences(paragraph_text: &str) -> Vec<String> {
    split_sentence_spans(paragraph_text)
        .into_iter()
        .map(|(s, e)| paragraph_text[s..e].to_string())
        .collect()
}

/// Like [`split_sentences`] but returning byte spans into the input.
pub fn split_sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let protected = protected_spans(text);
    let mut spans = Vec::new();
    let mut start = scan::skip_ws(bytes, 0);
    let mut i = start;

    while i < bytes.len() {
        if scan::in_spans(&protected, i) {
            i += 1;
            continue;
        }
        if matches!(bytes[i], b'.' | b'!' | b'?') {
            let after = i + 1;
            let next_non_ws = scan::skip_ws(bytes, after);
            let has_ws = next_non_ws > after;
            let starts_new = text[next_non_ws..]
                .chars()
                .next()
                .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit());
            if has_ws && starts_new && !(bytes[i] == b'.' && is_abbreviation_at(text, i)) {
                spans.push((start, after));
                start = next_non_ws;
                i = next_non_ws;
                continue;
            }
        }
        i += 1;
    }
    let mut end = bytes.len();
    while end > start && bytes[end - 1].is_ascii_whitespace() {
        end -= 1;
    }
    if end > start {
        spans.push((start, end));
    }
    spans
}

// ---------------------------------------------------------------------------
// Citations
// ---------------------------------------------------------------------------

/// Commands whose braced argument is a comma-separated bibliography key list.
pub(crate) const CITE_COMMANDS: &[&str] = &[
    "cite", "citep", "citet", "citealp", "citealt", "citeauthor", "citeyear", "citeyearpar",
    "citenum", "shortcite", "parencite", "textcite", "autocite", "footcite",
];

/// Replaces every `\cite`-family command with the literal token `<cite>` and
/// returns one `(offset, key)` record per key in document order. Offsets
/// point at the `<cite>` token in the *returned* text. A malformed command
/// (unclosed brace) is left in place, skipped, and reported as a warning.
pub fn extract_citations(text: &str) -> (String, Vec<(usize, String)>, Vec<Warning>) {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut i = 0usize;
    let mut copy_from = 0usize;

    while i < bytes.len() {
        if bytes[i] != b'\\' || scan::is_escaped(bytes, i) {
            i += 1;
            continue;
        }
        let Some((name, after)) = scan::command_at(text, i) else {
            i += 1;
            continue;
        };
        if !CITE_COMMANDS.contains(&name) {
            i = after;
            continue;
        }
        let mut j = after;
        if bytes.get(j) == Some(&b'*') {
            j += 1;
        }
        // up to two optional [..] arguments (\citep[see][p. 3]{key})
        for _ in 0..2 {
            let k = scan::skip_ws(bytes, j);
            if bytes.get(k) == Some(&b'[') {
                let mut m = k + 1;
                while m < bytes.len() && bytes[m] != b']' {
                    m += 1;
                }
                if m >= bytes.len() {
                    break;
                }
                j = m + 1;
            }
        }
        let k = scan::skip_ws(bytes, j);
        if bytes.get(k) != Some(&b'{') {
            warnings.push(Warning::new(
                "parse",
                format!("malformed \\{name} at byte {i}: missing key group"),
            ));
            i = after;
            continue;
        }
        let Some((keys, end)) = scan::group_content(text, k) else {
            warnings.push(Warning::new(
                "parse",
                format!("malformed \\{name} at byte {i}: unclosed brace"),
            ));
            i = after;
            continue;
        };
        out.push_str(&text[copy_from..i]);
        let token_offset = out.len();
        out.push_str("<cite>");
        for key in keys.split(',') {
            let key = key.trim();
            if !key.is_empty() {
                records.push((token_offset, key.to_string()));
            }
        }
        copy_from = end;
        i = end;
    }
    out.push_str(&text[copy_from..]);
    (out, records, warnings)
}

// ---------------------------------------------------------------------------
// Object references
// ---------------------------------------------------------------------------

/// Reference commands that point at object labels.
pub(crate) const REF_COMMANDS: &[&str] = &["ref", "autoref", "cref", "Cref", "eqref"];

/// Labels referenced by `\ref`-family commands within one sentence.
pub fn extract_ref_labels(sentence: &str) -> Vec<String> {
    let bytes = sentence.as_bytes();
    let mut labels = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        if bytes[i] == b'\\' && !scan::is_escaped(bytes, i) {
            if let Some((name, after)) = scan::command_at(sentence, i) {
                if REF_COMMANDS.contains(&name) {
                    let j = scan::skip_ws(bytes, after);
                    if bytes.get(j) == Some(&b'{') {
                        if let Some((content, end)) = scan::group_content(sentence, j) {
                            for label in content.split(',') {
                                let label = label.trim();
                                if !label.is_empty() {
                                    labels.push(label.to_string());
                                }
                            }
                            i = end;
                            continue;
                        }
                    }
                }
                i = after;
                continue;
            }
        }
        i += 1;
    }
    labels
}

/// Kind word of a numbered in-text mention ("Table 2", "Fig. 3").
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MentionWord {
    Table,
    Figure,
    Algorithm,
    Theorem,
    Lemma,
}

static RE_MENTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(Table|Figure|Fig\.|Algorithm|Theorem|Lemma)[\s~]+(\d+)").unwrap()
});

/// Numbered object mentions in one sentence, as (word, 1-based number).
pub fn extract_numbered_mentions(sentence: &str) -> Vec<(MentionWord, usize)> {
    RE_MENTION
        .captures_iter(sentence)
        .filter_map(|c| {
            let word = match &c[1] {
                "Table" => MentionWord::Table,
                "Figure" | "Fig." => MentionWord::Figure,
                "Algorithm" => MentionWord::Algorithm,
                "Theorem" => MentionWord::Theorem,
                "Lemma" => MentionWord::Lemma,
                _ => return None,
            };
            c[2].parse::<usize>().ok().map(|n| (word, n))
        })
        .collect()
}

/// Removes `\ref`-family commands from a sentence, collapsing the leftover
/// whitespace ("Table \ref{t} shows" becomes "Table shows").
pub fn strip_ref_commands(sentence: &str) -> String {
    let bytes = sentence.as_bytes();
    let mut out = String::with_capacity(sentence.len());
    let mut i = 0usize;
    let mut copy_from = 0usize;
    while i < bytes.len() {
        if bytes[i] == b'\\' && !scan::is_escaped(bytes, i) {
            if let Some((name, after)) = scan::command_at(sentence, i) {
                if REF_COMMANDS.contains(&name) {
                    let j = scan::skip_ws(bytes, after);
                    if bytes.get(j) == Some(&b'{') {
                        if let Some((_, end)) = scan::group_content(sentence, j) {
                            out.push_str(&sentence[copy_from..i]);
                            copy_from = end;
                            i = end;
                            continue;
                        }
                    }
                }
                i = after;
                continue;
            }
        }
        i += 1;
    }
    out.push_str(&sentence[copy_from..]);
    scan::collapse_ws(&out)
}
