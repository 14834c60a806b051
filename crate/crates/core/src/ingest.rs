//! Source ingestion: locate the entry file of a LaTeX bundle, strip comments,
//! merge `\input`/`\include` files, and expand user-defined macros into a
//! single normalized source string.
//!
//! All operations are pure functions of their inputs; a bundle can be
//! processed per worker with no shared state.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::scan;
use crate::Warning;

/// Maximum number of whole-text expansion passes. Each pass rewrites every
/// macro occurrence once, so the bound equals the maximum nesting depth a
/// call site may reach before the input is considered cyclic.
pub const MAX_EXPANSION_DEPTH: usize = 100;

static RE_BEGIN_DOCUMENT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\\begin\s*\{document\}").unwrap());
static RE_DOCUMENTCLASS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\\documentclass").unwrap());

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("no file in the bundle contains \\begin{{document}}")]
    NoEntry,
    #[error("multiple candidate entry files after tie-break: {0:?}")]
    AmbiguousEntry(Vec<String>),
    #[error("entry path not set; run find_entry first")]
    EntryNotSet,
    #[error("include cycle through {0:?}")]
    IncludeCycle(String),
    #[error("macro expansion exceeded depth {MAX_EXPANSION_DEPTH} (macro \\{0})")]
    ExpansionDepthExceeded(String),
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The raw files of one paper, keyed by path relative to the paper root.
#[derive(Debug, Clone)]
pub struct SourceBundle {
    pub paper_id: String,
    pub files: BTreeMap<String, String>,
    /// Set by [`find_entry`]; always a key of `files` once set.
    pub entry_path: Option<String>,
}

impl SourceBundle {
    pub fn new(paper_id: impl Into<String>) -> Self {
        SourceBundle {
            paper_id: paper_id.into(),
            files: BTreeMap::new(),
            entry_path: None,
        }
    }

    pub fn insert(mut self, path: &str, text: &str) -> Self {
        self.files.insert(path.to_string(), text.to_string());
        self
    }

    /// Loads every `.tex`/`.bbl`/`.bib` file under `dir` (plus an optional
    /// `metadata.json`), decoding as UTF-8 with a Latin-1 fallback.
    pub fn from_dir(paper_id: &str, dir: &Path) -> Result<Self, IngestError> {
        let mut bundle = SourceBundle::new(paper_id);
        for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
            let entry = entry.map_err(|e| {
                IngestError::InvalidBundle(format!("walking {}: {e}", dir.display()))
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let path = entry.path();
            let keep = match path.extension().and_then(|e| e.to_str()) {
                Some("tex") | Some("bbl") | Some("bib") => true,
                _ => path.file_name().is_some_and(|n| n == "metadata.json"),
            };
            if !keep {
                continue;
            }
            let rel = path
                .strip_prefix(dir)
                .unwrap_or(path)
                .to_string_lossy()
                .replace('\\', "/");
            let bytes = std::fs::read(path)?;
            bundle.files.insert(rel, decode_text(bytes));
        }
        if bundle.files.is_empty() {
            return Err(IngestError::InvalidBundle(format!(
                "no source files under {}",
                dir.display()
            )));
        }
        Ok(bundle)
    }

    /// Treats a single `.tex` file as a one-file bundle.
    pub fn from_file(paper_id: &str, path: &Path) -> Result<Self, IngestError> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "main.tex".to_string());
        let bytes = std::fs::read(path)?;
        let mut bundle = SourceBundle::new(paper_id);
        bundle.files.insert(name.clone(), decode_text(bytes));
        bundle.entry_path = Some(name);
        Ok(bundle)
    }
}

/// UTF-8 with Latin-1 fallback on decode error.
fn decode_text(bytes: Vec<u8>) -> String {
    match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => e.into_bytes().iter().map(|&b| b as char).collect(),
    }
}

/// A user macro definition collected from the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroDef {
    pub arity: usize,
    /// Default value for `#1` when the definition carried a second optional
    /// bracket group (`\newcommand{\x}[2][dflt]{...}`).
    pub default: Option<String>,
    pub body: String,
}

/// Maps a byte range of the normalized output back to a source file range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceSpan {
    pub out_start: usize,
    pub out_end: usize,
    pub file: String,
    pub src_start: usize,
    pub src_end: usize,
}

/// Comment-free, include-merged, macro-expanded LaTeX plus the collected
/// macro table and output-to-source provenance.
#[derive(Debug, Clone)]
pub struct NormalizedSource {
    pub text: String,
    pub macro_table: BTreeMap<String, MacroDef>,
    pub provenance: Vec<ProvenanceSpan>,
}

// ---------------------------------------------------------------------------
// Comment stripping
// ---------------------------------------------------------------------------

/// Removes each unescaped `%` through end-of-line, keeping the line break.
/// `\%` and the content of verbatim-family environments are untouched.
/// Idempotent by construction: nothing outside verbatim survives that could
/// start a comment on a second pass.
pub fn strip_comments(text: &str) -> String {
    let (out, _) = strip_comments_chunks(text);
    out
}

/// Like [`strip_comments`], also returning the kept chunks as
/// `(out_start, src_start, len)` triples for provenance composition.
fn strip_comments_chunks(text: &str) -> (String, Vec<(usize, usize, usize)>) {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut chunks: Vec<(usize, usize, usize)> = Vec::new();
    let mut run_start = 0usize;
    let mut i = 0usize;

    let flush = |out: &mut String, chunks: &mut Vec<(usize, usize, usize)>, from: usize, to: usize| {
        if to > from {
            chunks.push((out.len(), from, to - from));
            out.push_str(&text[from..to]);
        }
    };

    while i < bytes.len() {
        if bytes[i] == b'\\' && !scan::is_escaped(bytes, i) {
            if let Some((name, after)) = scan::begin_at(text, i) {
                if scan::is_verbatim_env(name) {
                    let close = format!("\\end{{{name}}}");
                    let end = match text[after..].find(&close) {
                        Some(rel) => after + rel + close.len(),
                        None => bytes.len(),
                    };
                    i = end;
                    continue;
                }
            }
            // Skip the escaped character so "\%" never triggers the branch below.
            i += 1;
            if i < bytes.len() {
                i += text[i..].chars().next().map_or(1, char::len_utf8);
            }
            continue;
        }
        if bytes[i] == b'%' {
            flush(&mut out, &mut chunks, run_start, i);
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            run_start = i;
            continue;
        }
        i += 1;
    }
    flush(&mut out, &mut chunks, run_start, bytes.len());
    (out, chunks)
}

// ---------------------------------------------------------------------------
// Entry detection
// ---------------------------------------------------------------------------

/// Finds the file holding `\begin{document}`. Ties are broken in favour of
/// the single candidate that also declares a document class; a remaining tie
/// is an error. Sets `bundle.entry_path` on success.
pub fn find_entry(bundle: &mut SourceBundle) -> Result<String, IngestError> {
    let candidates: Vec<&String> = bundle
        .files
        .iter()
        .filter(|(_, text)| RE_BEGIN_DOCUMENT.is_match(&strip_comments(text)))
        .map(|(path, _)| path)
        .collect();
    let chosen = match candidates.len() {
        0 => return Err(IngestError::NoEntry),
        1 => candidates[0].clone(),
        _ => {
            let with_class: Vec<&&String> = candidates
                .iter()
                .filter(|path| RE_DOCUMENTCLASS.is_match(&strip_comments(&bundle.files[**path])))
                .collect();
            if with_class.len() == 1 {
                (*with_class[0]).clone()
            } else {
                return Err(IngestError::AmbiguousEntry(
                    candidates.into_iter().cloned().collect(),
                ));
            }
        }
    };
    bundle.entry_path = Some(chosen.clone());
    Ok(chosen)
}

// ---------------------------------------------------------------------------
// Include resolution
// ---------------------------------------------------------------------------

/// Result of splicing the include graph into one string.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub text: String,
    pub provenance: Vec<ProvenanceSpan>,
    pub warnings: Vec<Warning>,
}

/// Splices `\input`/`\include` targets recursively, starting from the entry
/// file. Missing targets become empty strings with a warning; a file that
/// transitively includes itself is an error.
pub fn resolve_inputs(bundle: &SourceBundle) -> Result<Resolved, IngestError> {
    let entry = bundle.entry_path.as_ref().ok_or(IngestError::EntryNotSet)?;
    splice(&bundle.files, entry)
}

/// Looks up an include target, trying the name as written and with `.tex`.
fn lookup_include<'a>(files: &'a BTreeMap<String, String>, target: &str) -> Option<&'a str> {
    let clean = target.trim().trim_start_matches("./");
    if let Some(k) = files.get_key_value(clean) {
        return Some(k.0);
    }
    let with_ext = format!("{clean}.tex");
    files.get_key_value(&with_ext).map(|k| k.0.as_str())
}

fn splice(files: &BTreeMap<String, String>, entry: &str) -> Result<Resolved, IngestError> {
    let mut out = String::new();
    let mut provenance = Vec::new();
    let mut warnings = Vec::new();
    let mut stack = vec![entry.to_string()];
    splice_file(files, entry, &mut stack, &mut out, &mut provenance, &mut warnings)?;
    Ok(Resolved {
        text: out,
        provenance,
        warnings,
    })
}

fn splice_file(
    files: &BTreeMap<String, String>,
    path: &str,
    stack: &mut Vec<String>,
    out: &mut String,
    provenance: &mut Vec<ProvenanceSpan>,
    warnings: &mut Vec<Warning>,
) -> Result<(), IngestError> {
    let text = files
        .get(path)
        .ok_or_else(|| IngestError::InvalidBundle(format!("missing file {path:?}")))?;
    let bytes = text.as_bytes();
    let verbatim = scan::verbatim_spans(text);
    let mut copy_from = 0usize;
    let mut i = 0usize;

    let emit = |out: &mut String, provenance: &mut Vec<ProvenanceSpan>, from: usize, to: usize| {
        if to > from {
            provenance.push(ProvenanceSpan {
                out_start: out.len(),
                out_end: out.len() + (to - from),
                file: path.to_string(),
                src_start: from,
                src_end: to,
            });
            out.push_str(&text[from..to]);
        }
    };

    while i < bytes.len() {
        if bytes[i] == b'\\' && !scan::is_escaped(bytes, i) && !scan::in_spans(&verbatim, i) {
            if let Some((cmd, after)) = scan::command_at(text, i) {
                if cmd == "input" || cmd == "include" {
                    let j = scan::skip_ws(bytes, after);
                    if bytes.get(j) == Some(&b'{') {
                        if let Some((target, end)) = scan::group_content(text, j) {
                            emit(out, provenance, copy_from, i);
                            match lookup_include(files, target) {
                                Some(resolved) => {
                                    if stack.iter().any(|p| p == resolved) {
                                        return Err(IngestError::IncludeCycle(
                                            resolved.to_string(),
                                        ));
                                    }
                                    stack.push(resolved.to_string());
                                    splice_file(files, resolved, stack, out, provenance, warnings)?;
                                    stack.pop();
                                }
                                None => warnings.push(Warning::new(
                                    "ingest",
                                    format!("missing include target {target:?} in {path:?}"),
                                )),
                            }
                            copy_from = end;
                            i = end;
                            continue;
                        }
                    }
                }
            }
        }
        i += 1;
    }
    emit(out, provenance, copy_from, bytes.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// Macro expansion
// ---------------------------------------------------------------------------

/// Collects `\newcommand`/`\renewcommand`/`\providecommand`/`\def`
/// definitions, removes them from the text, and substitutes every use until
/// a fixed point, bounded by [`MAX_EXPANSION_DEPTH`] passes. Definitions and
/// uses inside verbatim environments are ignored. `\def` with a delimited
/// parameter pattern is left verbatim with a warning.
///
/// A space after a macro use is kept as written (TeX would swallow it); the
/// pipeline feeds prose, not a typesetter.
pub fn expand_macros(text: &str) -> Result<(NormalizedSource, Vec<Warning>), IngestError> {
    let mut provenance = vec![ProvenanceSpan {
        out_start: 0,
        out_end: text.len(),
        file: "<input>".to_string(),
        src_start: 0,
        src_end: text.len(),
    }];
    let (out, table, warnings) = expand_macros_tracked(text.to_string(), &mut provenance)?;
    Ok((
        NormalizedSource {
            text: out,
            macro_table: table,
            provenance,
        },
        warnings,
    ))
}

type ExpandedText = (String, BTreeMap<String, MacroDef>, Vec<Warning>);

pub(crate) fn expand_macros_tracked(
    text: String,
    provenance: &mut Vec<ProvenanceSpan>,
) -> Result<ExpandedText, IngestError> {
    let mut warnings = Vec::new();
    let (mut text, table) = collect_definitions(text, provenance, &mut warnings);

    if !table.is_empty() {
        let mut missing_args_reported = false;
        for _pass in 0..MAX_EXPANSION_DEPTH {
            let (next, substitutions) =
                expansion_pass(&text, &table, provenance, &mut warnings, &mut missing_args_reported);
            text = next;
            if substitutions == 0 {
                break;
            }
        }
        if let Some(name) = first_expandable(&text, &table) {
            return Err(IngestError::ExpansionDepthExceeded(name));
        }
    }
    let trimmed = trim_tracked(text, provenance);
    Ok((trimmed, table, warnings))
}

/// One whole-text pass: every currently present macro use is rewritten once,
/// left to right, without re-scanning the inserted bodies. Nested uses are
/// picked up by the next pass, so the pass count equals expansion depth.
fn expansion_pass(
    text: &str,
    table: &BTreeMap<String, MacroDef>,
    provenance: &mut Vec<ProvenanceSpan>,
    warnings: &mut Vec<Warning>,
    missing_args_reported: &mut bool,
) -> (String, usize) {
    let verbatim = scan::verbatim_spans(text);
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut edits: Vec<(usize, usize, usize)> = Vec::new(); // (start, old_len, new_len)
    let mut copy_from = 0usize;
    let mut i = 0usize;
    let mut substitutions = 0usize;

    while i < bytes.len() {
        if bytes[i] == b'\\' && !scan::is_escaped(bytes, i) && !scan::in_spans(&verbatim, i) {
            if let Some((name, after)) = scan::command_at(text, i) {
                if let Some(def) = table.get(name) {
                    match parse_arguments(text, after, def) {
                        Some((args, end)) => {
                            let replacement = substitute_body(&def.body, &args);
                            out.push_str(&text[copy_from..i]);
                            edits.push((i, end - i, replacement.len()));
                            out.push_str(&replacement);
                            copy_from = end;
                            i = end;
                            substitutions += 1;
                            continue;
                        }
                        None => {
                            if !*missing_args_reported {
                                warnings.push(Warning::new(
                                    "ingest",
                                    format!("macro \\{name} used without its {} argument(s); left verbatim", def.arity),
                                ));
                                *missing_args_reported = true;
                            }
                        }
                    }
                }
            }
        }
        i += 1;
    }
    out.push_str(&text[copy_from..]);
    apply_edits(provenance, &edits);
    (out, substitutions)
}

/// First macro-table name still present as an expandable command.
fn first_expandable(text: &str, table: &BTreeMap<String, MacroDef>) -> Option<String> {
    let verbatim = scan::verbatim_spans(text);
    let bytes = text.as_bytes();
    let mut i = 0usize;
    while i < bytes.len() {
        if bytes[i] == b'\\' && !scan::is_escaped(bytes, i) && !scan::in_spans(&verbatim, i) {
            if let Some((name, after)) = scan::command_at(text, i) {
                if let Some(def) = table.get(name) {
                    if parse_arguments(text, after, def).is_some() {
                        return Some(name.to_string());
                    }
                }
            }
        }
        i += 1;
    }
    None
}

/// Parses the arguments of a macro use starting just past the command name.
/// Accepts the optional bracket argument when the definition has a default,
/// then `arity` (or `arity - 1`) mandatory arguments, each a brace group, a
/// control sequence, or a single character.
fn parse_arguments(text: &str, after_name: usize, def: &MacroDef) -> Option<(Vec<String>, usize)> {
    let bytes = text.as_bytes();
    let mut args = Vec::with_capacity(def.arity);
    let mut i = after_name;
    let mut remaining = def.arity;

    if let Some(default) = &def.default {
        let j = scan::skip_ws(bytes, i);
        if bytes.get(j) == Some(&b'[') {
            let (value, end) = optional_group(text, j)?;
            args.push(value.to_string());
            i = end;
        } else {
            args.push(default.clone());
        }
        remaining = remaining.saturating_sub(1);
    }

    for _ in 0..remaining {
        let j = scan::skip_ws(bytes, i);
        match bytes.get(j) {
            Some(&b'{') => {
                let (content, end) = scan::group_content(text, j)?;
                args.push(content.to_string());
                i = end;
            }
            Some(&b'\\') => {
                let (name, end) = scan::command_at(text, j)?;
                args.push(format!("\\{name}"));
                i = end;
            }
            Some(_) => {
                let ch = text[j..].chars().next()?;
                args.push(ch.to_string());
                i = j + ch.len_utf8();
            }
            None => return None,
        }
    }
    Some((args, i))
}

/// `[...]` content with brace-aware scanning; `]` inside braces is literal.
fn optional_group(text: &str, open: usize) -> Option<(&str, usize)> {
    let bytes = text.as_bytes();
    debug_assert_eq!(bytes[open], b'[');
    let mut depth = 0usize;
    let mut i = open + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if !scan::is_escaped(bytes, i) => depth += 1,
            b'}' if !scan::is_escaped(bytes, i) => depth = depth.saturating_sub(1),
            b']' if depth == 0 => return Some((&text[open + 1..i], i + 1)),
            _ => {}
        }
        i += 1;
    }
    None
}

/// Replaces `#k` with the k-th argument and `##` with a literal `#`.
fn substitute_body(body: &str, args: &[String]) -> String {
    let bytes = body.as_bytes();
    let mut out = String::with_capacity(body.len());
    let mut i = 0usize;
    while i < bytes.len() {
        if bytes[i] == b'#' && i + 1 < bytes.len() {
            let next = bytes[i + 1];
            if next == b'#' {
                out.push('#');
                i += 2;
                continue;
            }
            if next.is_ascii_digit() && next != b'0' {
                let k = (next - b'0') as usize;
                if let Some(arg) = args.get(k - 1) {
                    out.push_str(arg);
                    i += 2;
                    continue;
                }
            }
        }
        let ch = body[i..].chars().next().unwrap();
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}

/// Scans for definitions outside verbatim, registers them, and removes their
/// spans from the text.
fn collect_definitions(
    text: String,
    provenance: &mut Vec<ProvenanceSpan>,
    warnings: &mut Vec<Warning>,
) -> (String, BTreeMap<String, MacroDef>) {
    let verbatim = scan::verbatim_spans(&text);
    let bytes = text.as_bytes();
    let mut table: BTreeMap<String, MacroDef> = BTreeMap::new();
    let mut removals: Vec<(usize, usize)> = Vec::new();
    let mut i = 0usize;

    while i < bytes.len() {
        if bytes[i] != b'\\' || scan::is_escaped(bytes, i) || scan::in_spans(&verbatim, i) {
            i += 1;
            continue;
        }
        let Some((cmd, after)) = scan::command_at(&text, i) else {
            i += 1;
            continue;
        };
        match cmd {
            "newcommand" | "renewcommand" | "providecommand" => {
                match parse_newcommand(&text, after) {
                    Some((name, def, end)) => {
                        if cmd != "providecommand" || !table.contains_key(&name) {
                            table.insert(name, def);
                        }
                        removals.push((i, end));
                        i = end;
                        continue;
                    }
                    None => {
                        warnings.push(Warning::new(
                            "ingest",
                            format!("malformed \\{cmd} at byte {i}; left verbatim"),
                        ));
                    }
                }
            }
            "def" => match parse_def(&text, after) {
                Ok(Some((name, def, end))) => {
                    table.insert(name, def);
                    removals.push((i, end));
                    i = end;
                    continue;
                }
                Ok(None) => {
                    warnings.push(Warning::new(
                        "ingest",
                        format!("malformed \\def at byte {i}; left verbatim"),
                    ));
                }
                Err(name) => {
                    warnings.push(Warning::new(
                        "ingest",
                        format!("\\def\\{name} uses a delimited parameter pattern; unsupported, left verbatim"),
                    ));
                }
            },
            _ => {}
        }
        i += 1;
    }

    let mut out = text;
    for &(start, end) in removals.iter().rev() {
        out.replace_range(start..end, "");
    }
    // Edits applied front-to-back for provenance bookkeeping.
    apply_edits(
        provenance,
        &removals.iter().map(|&(s, e)| (s, e - s, 0)).collect::<Vec<_>>(),
    );
    (out, table)
}

/// `\newcommand{\name}[n][default]{body}` (braces around the name optional).
fn parse_newcommand(text: &str, after_cmd: usize) -> Option<(String, MacroDef, usize)> {
    let bytes = text.as_bytes();
    let mut i = scan::skip_ws(bytes, after_cmd);
    if bytes.get(i) == Some(&b'*') {
        i = scan::skip_ws(bytes, i + 1);
    }
    let name = match bytes.get(i)? {
        b'{' => {
            let (inner, end) = scan::group_content(text, i)?;
            let inner = inner.trim();
            let (name, rest) = scan::command_at(inner, 0)?;
            if rest != inner.len() {
                return None;
            }
            i = end;
            name.to_string()
        }
        b'\\' => {
            let (name, end) = scan::command_at(text, i)?;
            i = end;
            name.to_string()
        }
        _ => return None,
    };
    let mut arity = 0usize;
    let mut default = None;
    let j = scan::skip_ws(bytes, i);
    if bytes.get(j) == Some(&b'[') {
        let (n, end) = optional_group(text, j)?;
        arity = n.trim().parse().ok()?;
        i = end;
        let j = scan::skip_ws(bytes, i);
        if bytes.get(j) == Some(&b'[') {
            let (value, end) = optional_group(text, j)?;
            default = Some(value.to_string());
            i = end;
        }
    }
    let j = scan::skip_ws(bytes, i);
    if bytes.get(j) != Some(&b'{') {
        return None;
    }
    let (body, end) = scan::group_content(text, j)?;
    Some((
        name,
        MacroDef {
            arity,
            default,
            body: body.to_string(),
        },
        end,
    ))
}

/// `\def\name#1#2{body}`. Returns `Err(name)` for delimited parameter
/// patterns (anything between the name and `{` other than `#1#2...#n`).
#[allow(clippy::type_complexity)]
fn parse_def(text: &str, after_cmd: usize) -> Result<Option<(String, MacroDef, usize)>, String> {
    let bytes = text.as_bytes();
    let i = scan::skip_ws(bytes, after_cmd);
    if bytes.get(i) != Some(&b'\\') {
        return Ok(None);
    }
    let Some((name, mut i)) = scan::command_at(text, i) else {
        return Ok(None);
    };
    let param_start = i;
    let mut arity = 0usize;
    loop {
        match bytes.get(i) {
            Some(&b'{') => break,
            Some(&b'#') => {
                let next = bytes.get(i + 1).copied();
                if next == Some(b'0' + (arity as u8) + 1) {
                    arity += 1;
                    i += 2;
                } else {
                    return Err(name.to_string());
                }
            }
            Some(_) | None => {
                if text[param_start..i].trim().is_empty() && bytes.get(i).is_some_and(|b| b.is_ascii_whitespace()) {
                    i += 1;
                } else {
                    return Err(name.to_string());
                }
            }
        }
        if arity > 9 {
            return Err(name.to_string());
        }
    }
    let Some((body, end)) = scan::group_content(text, i) else {
        return Ok(None);
    };
    Ok(Some((
        name.to_string(),
        MacroDef {
            arity,
            default: None,
            body: body.to_string(),
        },
        end,
    )))
}

// ---------------------------------------------------------------------------
// Provenance editing
// ---------------------------------------------------------------------------

/// Applies text edits `(start, old_len, new_len)` — given in ascending start
/// order against the *pre-edit* coordinates — to the provenance spans.
/// Replaced ranges are re-attributed to the file owning the edit start.
fn apply_edits(spans: &mut Vec<ProvenanceSpan>, edits: &[(usize, usize, usize)]) {
    let mut shift = 0isize;
    for &(start, old_len, new_len) in edits {
        let start = (start as isize + shift) as usize;
        edit_spans(spans, start, old_len, new_len);
        shift += new_len as isize - old_len as isize;
    }
}

fn edit_spans(spans: &mut Vec<ProvenanceSpan>, start: usize, old_len: usize, new_len: usize) {
    let end = start + old_len;
    let delta = new_len as isize - old_len as isize;
    let mut result: Vec<ProvenanceSpan> = Vec::with_capacity(spans.len() + 1);
    let mut attribution: Option<(String, usize)> = None;

    for span in spans.drain(..) {
        if span.out_end <= start {
            result.push(span);
        } else if span.out_start >= end {
            let mut s = span;
            s.out_start = (s.out_start as isize + delta) as usize;
            s.out_end = (s.out_end as isize + delta) as usize;
            result.push(s);
        } else {
            if attribution.is_none() {
                let offset = start.saturating_sub(span.out_start);
                attribution = Some((span.file.clone(), span.src_start + offset));
            }
            // Head fragment before the edit.
            if span.out_start < start {
                let keep = start - span.out_start;
                result.push(ProvenanceSpan {
                    out_start: span.out_start,
                    out_end: start,
                    file: span.file.clone(),
                    src_start: span.src_start,
                    src_end: span.src_start + keep,
                });
            }
            // Tail fragment after the edit.
            if span.out_end > end {
                let cut = end - span.out_start;
                result.push(ProvenanceSpan {
                    out_start: (end as isize + delta) as usize,
                    out_end: (span.out_end as isize + delta) as usize,
                    file: span.file.clone(),
                    src_start: span.src_start + cut,
                    src_end: span.src_end,
                });
            }
        }
    }
    if new_len > 0 {
        let (file, src) = attribution.unwrap_or_else(|| ("<edit>".to_string(), 0));
        let insert = ProvenanceSpan {
            out_start: start,
            out_end: start + new_len,
            file,
            src_start: src,
            src_end: src,
        };
        let pos = result
            .iter()
            .position(|s| s.out_start >= insert.out_end)
            .unwrap_or(result.len());
        result.insert(pos, insert);
    }
    *spans = result;
}

/// Trims surrounding whitespace, keeping provenance aligned.
fn trim_tracked(text: String, provenance: &mut Vec<ProvenanceSpan>) -> String {
    let trimmed_start = text.len() - text.trim_start().len();
    let trimmed = text.trim().to_string();
    if trimmed_start > 0 {
        apply_edits(provenance, &[(0, trimmed_start, 0)]);
    }
    let tail = text.len() - trimmed_start - trimmed.len();
    if tail > 0 {
        apply_edits(provenance, &[(trimmed.len(), tail, 0)]);
    }
    trimmed
}

// ---------------------------------------------------------------------------
// Full normalization
// ---------------------------------------------------------------------------

/// Runs the whole ingest stage: entry detection (unless already set),
/// per-file comment stripping, include merging, macro expansion. Provenance
/// source ranges refer to the raw (pre-strip) file contents.
pub fn normalize(bundle: &mut SourceBundle) -> Result<(NormalizedSource, Vec<Warning>), IngestError> {
    if bundle.entry_path.is_none() {
        find_entry(bundle)?;
    }
    let entry = bundle.entry_path.clone().expect("entry set above");

    // Strip comments per file, remembering kept chunks in raw coordinates.
    let mut stripped = BTreeMap::new();
    let mut chunk_maps: BTreeMap<String, Vec<(usize, usize, usize)>> = BTreeMap::new();
    for (path, raw) in &bundle.files {
        let (text, chunks) = strip_comments_chunks(raw);
        stripped.insert(path.clone(), text);
        chunk_maps.insert(path.clone(), chunks);
    }

    let spliced = splice(&stripped, &entry)?;
    let mut warnings = spliced.warnings;

    // Compose splice provenance (into stripped files) with strip chunks
    // (stripped -> raw) so spans point at raw file offsets.
    let mut provenance = Vec::new();
    for span in &spliced.provenance {
        let chunks = &chunk_maps[&span.file];
        remap_span(span, chunks, &mut provenance);
    }

    let (text, macro_table, mut expand_warnings) =
        expand_macros_tracked(spliced.text, &mut provenance)?;
    warnings.append(&mut expand_warnings);

    Ok((
        NormalizedSource {
            text,
            macro_table,
            provenance,
        },
        warnings,
    ))
}

/// Splits one stripped-coordinate span into raw-coordinate spans.
fn remap_span(
    span: &ProvenanceSpan,
    chunks: &[(usize, usize, usize)],
    out: &mut Vec<ProvenanceSpan>,
) {
    for &(chunk_out, chunk_src, len) in chunks {
        let lo = span.src_start.max(chunk_out);
        let hi = span.src_end.min(chunk_out + len);
        if lo >= hi {
            continue;
        }
        out.push(ProvenanceSpan {
            out_start: span.out_start + (lo - span.src_start),
            out_end: span.out_start + (hi - span.src_start),
            file: span.file.clone(),
            src_start: chunk_src + (lo - chunk_out),
            src_end: chunk_src + (hi - chunk_out),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(files: &[(&str, &str)]) -> SourceBundle {
        let mut b = SourceBundle::new("test");
        for (path, text) in files {
            b.files.insert(path.to_string(), text.to_string());
        }
        b
    }

    #[test]
    fn find_entry_single_candidate() {
        let mut b = bundle(&[(
            "main.tex",
            "\\documentclass{article}\\begin{document}x\\end{document}",
        )]);
        assert_eq!(find_entry(&mut b).unwrap(), "main.tex");
        assert_eq!(b.entry_path.as_deref(), Some("main.tex"));
    }

    #[test]
    fn find_entry_prefers_document_begin() {
        let mut b = bundle(&[
            ("a.tex", "\\section{..}"),
            ("b.tex", "\\documentclass{x}\\begin{document}..\\end{document}"),
        ]);
        assert_eq!(find_entry(&mut b).unwrap(), "b.tex");
    }

    #[test]
    fn find_entry_tie_breaks_on_documentclass() {
        let mut b = bundle(&[
            ("standalone.tex", "\\begin{document}fig\\end{document}"),
            ("main.tex", "\\documentclass{article}\\begin{document}x\\end{document}"),
        ]);
        assert_eq!(find_entry(&mut b).unwrap(), "main.tex");
    }

    #[test]
    fn find_entry_ambiguous_after_tie() {
        let mut b = bundle(&[
            ("a.tex", "\\documentclass{x}\\begin{document}1\\end{document}"),
            ("b.tex", "\\documentclass{y}\\begin{document}2\\end{document}"),
        ]);
        assert!(matches!(find_entry(&mut b), Err(IngestError::AmbiguousEntry(_))));
    }

    #[test]
    fn find_entry_no_candidate() {
        let mut b = bundle(&[("a.tex", "\\section{x}")]);
        assert!(matches!(find_entry(&mut b), Err(IngestError::NoEntry)));
    }

    #[test]
    fn find_entry_ignores_commented_marker() {
        let mut b = bundle(&[
            ("notes.tex", "% \\begin{document}\n"),
            ("main.tex", "\\begin{document}x\\end{document}"),
        ]);
        assert_eq!(find_entry(&mut b).unwrap(), "main.tex");
    }

    #[test]
    fn strip_plain_comment_keeps_newline() {
        assert_eq!(strip_comments("a % note\nb"), "a \nb");
    }

    #[test]
    fn strip_keeps_escaped_percent() {
        assert_eq!(
            strip_comments("gain of 50\\% overall"),
            "gain of 50\\% overall"
        );
    }

    #[test]
    fn strip_protects_verbatim() {
        let t = "\\begin{verbatim}x % y\\end{verbatim}";
        assert_eq!(strip_comments(t), t);
    }

    #[test]
    fn strip_double_backslash_percent_is_comment() {
        assert_eq!(strip_comments("a \\\\% gone\nb"), "a \\\\\nb");
    }

    #[test]
    fn resolve_inputs_splices() {
        let mut b = bundle(&[
            ("main.tex", "A \\input{b}"),
            ("b.tex", "B"),
        ]);
        b.entry_path = Some("main.tex".to_string());
        let r = resolve_inputs(&b).unwrap();
        assert_eq!(r.text, "A B");
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn resolve_inputs_missing_file_warns() {
        let mut b = bundle(&[("main.tex", "A \\input{missing}")]);
        b.entry_path = Some("main.tex".to_string());
        let r = resolve_inputs(&b).unwrap();
        assert_eq!(r.text, "A ");
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn resolve_inputs_detects_cycle() {
        let mut b = bundle(&[
            ("a.tex", "\\input{b}"),
            ("b.tex", "\\input{a}"),
        ]);
        b.entry_path = Some("a.tex".to_string());
        assert!(matches!(resolve_inputs(&b), Err(IngestError::IncludeCycle(_))));
    }

    #[test]
    fn resolve_inputs_preserves_non_include_text() {
        let mut b = bundle(&[
            ("main.tex", "head \\input{sub/inner} tail"),
            ("sub/inner.tex", "MIDDLE"),
        ]);
        b.entry_path = Some("main.tex".to_string());
        let r = resolve_inputs(&b).unwrap();
        assert_eq!(r.text, "head MIDDLE tail");
        // provenance covers the output and round-trips to the sources
        for span in &r.provenance {
            let src = &b.files[&span.file][span.src_start..span.src_end];
            assert_eq!(&r.text[span.out_start..span.out_end], src);
        }
    }

    #[test]
    fn expand_simple_macro() {
        let (n, _) = expand_macros("\\newcommand{\\ours}{SciX} We use \\ours.").unwrap();
        assert_eq!(n.text, "We use SciX.");
        assert_eq!(n.macro_table["ours"].body, "SciX");
    }

    #[test]
    fn expand_macro_with_arguments() {
        let (n, _) = expand_macros("\\newcommand{\\pair}[2]{(#1,#2)} \\pair{a}{b}").unwrap();
        assert_eq!(n.text, "(a,b)");
    }

    #[test]
    fn expand_recursive_macro_errors() {
        let err = expand_macros("\\newcommand{\\x}{\\x} \\x").unwrap_err();
        assert!(matches!(err, IngestError::ExpansionDepthExceeded(name) if name == "x"));
    }

    #[test]
    fn expand_mutually_recursive_errors() {
        let err =
            expand_macros("\\newcommand{\\a}{\\b}\\newcommand{\\b}{\\a} \\a").unwrap_err();
        assert!(matches!(err, IngestError::ExpansionDepthExceeded(_)));
    }

    #[test]
    fn expand_nested_macros() {
        let (n, _) =
            expand_macros("\\newcommand{\\inner}{core}\\newcommand{\\outer}{[\\inner]} \\outer")
                .unwrap();
        assert_eq!(n.text, "[core]");
    }

    #[test]
    fn expand_def_form() {
        let (n, _) = expand_macros("\\def\\greet#1{hi #1} \\greet{there}").unwrap();
        assert_eq!(n.text, "hi there");
    }

    #[test]
    fn expand_def_with_delimited_pattern_left_verbatim() {
        let src = "\\def\\a#1,#2{x} body";
        let (n, w) = expand_macros(src).unwrap();
        assert_eq!(n.text, src.trim());
        assert!(w.iter().any(|w| w.message.contains("delimited")));
        assert!(n.macro_table.is_empty());
    }

    #[test]
    fn expand_optional_default_argument() {
        let (n, _) =
            expand_macros("\\newcommand{\\opt}[2][D]{<#1|#2>} \\opt{x} \\opt[y]{z}").unwrap();
        assert_eq!(n.text, "<D|x> <y|z>");
    }

    #[test]
    fn expand_ignores_verbatim() {
        let (n, _) = expand_macros(
            "\\newcommand{\\ours}{SciX}\\begin{verbatim}\\ours\\end{verbatim} \\ours",
        )
        .unwrap();
        assert_eq!(n.text, "\\begin{verbatim}\\ours\\end{verbatim} SciX");
    }

    #[test]
    fn expand_respects_name_boundaries() {
        let (n, _) = expand_macros("\\newcommand{\\ours}{X} \\oursly \\ours!").unwrap();
        assert_eq!(n.text, "\\oursly X!");
    }

    #[test]
    fn expand_is_fixed_point() {
        let (n, _) = expand_macros("\\newcommand{\\pair}[2]{(#1,#2)} \\pair{a}{\\pair{b}{c}}")
            .unwrap();
        let (again, _) = expand_macros(&n.text).unwrap();
        assert_eq!(again.text, n.text);
    }

    #[test]
    fn strip_is_idempotent_on_tricky_input() {
        for t in [
            "a % b\nc % d",
            "\\% kept % gone\nnext",
            "\\begin{verbatim}\n% raw\n\\end{verbatim} % out\n",
            "%%% \n%",
        ] {
            let once = strip_comments(t);
            assert_eq!(strip_comments(&once), once, "input: {t:?}");
        }
    }

    #[test]
    fn normalize_full_pipeline() {
        let mut b = bundle(&[
            (
                "main.tex",
                "\\documentclass{article}\n\\newcommand{\\mm}{MODEL}\n% top comment\n\\begin{document}\nIntro \\mm{} text \\input{body}\n\\end{document}\n",
            ),
            ("body.tex", "Body of \\mm. % trailing\n"),
        ]);
        let (n, warnings) = normalize(&mut b).unwrap();
        assert!(n.text.contains("Intro MODEL{} text Body of MODEL."));
        assert!(warnings.is_empty());
        // provenance is ordered, disjoint, and covers the whole output
        let mut cursor = 0;
        for span in &n.provenance {
            assert_eq!(span.out_start, cursor, "gap or overlap at {span:?}");
            assert!(span.out_end >= span.out_start);
            cursor = span.out_end;
        }
        assert_eq!(cursor, n.text.len());
    }

    #[test]
    fn latin1_fallback() {
        let bytes = vec![b'c', b'a', b'f', 0xE9];
        assert_eq!(decode_text(bytes), "café");
    }
}
