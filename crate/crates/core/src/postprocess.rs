//! Turns classified objects into machine-readable payloads: linearized
//! tables, normalized equation and emphasis tokens, extracted figure paths.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parse::EnvironmentBlock;
use crate::scan;
use crate::Warning;

/// The reserved output tokens. Occurrences of these literals inside source
/// cells are escaped by doubling the angle brackets (`<row>` -> `<<row>>`).
pub const RESERVED_TOKENS: &[&str] = &[
    "<table>",
    "<row>",
    "<cell>",
    "<equation>",
    "</equation>",
    "<bold>",
    "</bold>",
    "<italic>",
    "</italic>",
    "<cite>",
];

#[derive(Debug, Error)]
pub enum PostprocessError {
    #[error("table has no rows")]
    EmptyTable,
    #[error("bad linear table string: {0}")]
    BadLinear(String),
}

/// A rectangular(ish) cell grid plus its token-serialized form.
///
/// Grid cells are whitespace-collapsed. `linear` follows the grammar
/// `"<table>" (" <row>" (" <cell> " cell-text)+)+` with single ASCII spaces,
/// so [`parse_linear`] reproduces `grid` exactly for cells free of reserved
/// tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearTable {
    pub grid: Vec<Vec<String>>,
    pub linear: String,
    pub equal_columns: bool,
    pub n_rows: usize,
    pub n_cols: usize,
}

pub fn escape_reserved(text: &str) -> String {
    let mut out = text.to_string();
    for token in RESERVED_TOKENS {
        if out.contains(token) {
            out = out.replace(token, &format!("<{token}>"));
        }
    }
    out
}

pub fn unescape_reserved(text: &str) -> String {
    let mut out = text.to_string();
    for token in RESERVED_TOKENS {
        let doubled = format!("<{token}>");
        if out.contains(&doubled) {
            out = out.replace(&doubled, token);
        }
    }
    out
}

static RE_RULES: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\\hline|\\cline\{[^}]*\}|\\(?:top|mid|bottom)rule(?:\[[^\]]*\])?|\\cmidrule(?:\([^)]*\))?(?:\[[^\]]*\])?\{[^}]*\}|\\hhline\{[^}]*\}|\\specialrule\{[^}]*\}\{[^}]*\}\{[^}]*\}|\\noalign\{[^}]*\}",
    )
    .unwrap()
});

/// Environments taking `{width}{spec}` instead of `{spec}`.
const TWO_ARG_TABULARS: &[&str] = &["tabularx", "tabulary"];

/// Drops the leading position (`[t]`) and column-spec group(s) from a
/// tabular-like environment body, leaving only row content.
pub fn strip_column_spec(env_name: &str, body: &str) -> String {
    let bytes = body.as_bytes();
    let mut i = scan::skip_ws(bytes, 0);
    if bytes.get(i) == Some(&b'[') {
        while i < bytes.len() && bytes[i] != b']' {
            i += 1;
        }
        i = scan::skip_ws(bytes, (i + 1).min(bytes.len()));
    }
    let groups = if TWO_ARG_TABULARS.contains(&crate::classify::normalize_env_name(env_name).as_str())
    {
        2
    } else {
        1
    };
    for _ in 0..groups {
        if bytes.get(i) == Some(&b'{') {
            if let Some(end) = scan::group_end(body, i) {
                i = scan::skip_ws(bytes, end);
                continue;
            }
        }
        break;
    }
    body[i..].to_string()
}

/// Splits a tabular body into a cell grid and its linear token form.
/// Rows split on `\\` (plus an optional `[..]` spacing argument), cells on
/// unescaped `&`; horizontal rules are dropped; `\multicolumn{k}{f}{x}`
/// expands to `x` followed by `k-1` empty cells; `\multirow` keeps only its
/// content. Everything happens at brace/environment depth zero, so nested
/// environments stay inside their parent cell (flagged with a warning).
pub fn linearize_table(tabular_body: &str) -> Result<LinearTable, PostprocessError> {
    linearize_table_full(tabular_body).map(|(t, _)| t)
}

pub fn linearize_table_full(
    tabular_body: &str,
) -> Result<(LinearTable, Vec<Warning>), PostprocessError> {
    let mut warnings = Vec::new();
    let cleaned = RE_RULES.replace_all(tabular_body, " ");
    let rows_raw = split_rows(&cleaned);

    let mut grid: Vec<Vec<String>> = Vec::new();
    for row_text in rows_raw {
        if row_text.trim().is_empty() {
            continue;
        }
        let mut cells = Vec::new();
        for cell_raw in split_cells(&row_text) {
            expand_cell(&cell_raw, &mut cells, &mut warnings);
        }
        if cells.iter().all(String::is_empty) && cells.len() <= 1 {
            continue;
        }
        grid.push(cells);
    }
    if grid.is_empty() {
        return Err(PostprocessError::EmptyTable);
    }

    let n_rows = grid.len();
    let n_cols = grid.iter().map(Vec::len).max().unwrap_or(0);
    let equal_columns = grid.iter().all(|r| r.len() == n_cols);
    let linear = to_linear(&grid);
    Ok((
        LinearTable {
            grid,
            linear,
            equal_columns,
            n_rows,
            n_cols,
        },
        warnings,
    ))
}

/// Serializes a grid under the token grammar.
pub fn to_linear(grid: &[Vec<String>]) -> String {
    let mut s = String::from("<table>");
    for row in grid {
        s.push_str(" <row>");
        for cell in row {
            s.push_str(" <cell> ");
            s.push_str(&escape_reserved(cell));
        }
    }
    s
}

/// Parses a linear token string back into a grid, undoing the escaping.
pub fn parse_linear(linear: &str) -> Result<Vec<Vec<String>>, PostprocessError> {
    let rest = linear
        .strip_prefix("<table>")
        .ok_or_else(|| PostprocessError::BadLinear("missing <table> prefix".into()))?;
    let mut grid = Vec::new();
    let mut cursor = rest;
    while !cursor.is_empty() {
        let Some(after_row) = cursor.strip_prefix(" <row>") else {
            return Err(PostprocessError::BadLinear(format!(
                "expected \" <row>\" at {cursor:?}"
            )));
        };
        cursor = after_row;
        let mut row = Vec::new();
        while let Some(after_cell) = cursor.strip_prefix(" <cell> ") {
            let next_row = after_cell.find(" <row>");
            let next_cell = after_cell.find(" <cell> ");
            let end = [next_row, next_cell]
                .into_iter()
                .flatten()
                .min()
                .unwrap_or(after_cell.len());
            row.push(unescape_reserved(&after_cell[..end]));
            cursor = &after_cell[end..];
        }
        if row.is_empty() {
            return Err(PostprocessError::BadLinear("row with no cells".into()));
        }
        grid.push(row);
    }
    if grid.is_empty() {
        return Err(PostprocessError::BadLinear("no rows".into()));
    }
    Ok(grid)
}

/// Scans at brace/env depth zero, splitting on `\\` row separators and
/// dropping an optional `*` or `[..]` after each.
fn split_rows(body: &str) -> Vec<String> {
    let bytes = body.as_bytes();
    let mut rows = Vec::new();
    let mut depth = 0usize;
    let mut env_depth = 0usize;
    let mut start = 0usize;
    let mut i = 0usize;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if !scan::is_escaped(bytes, i) => {
                depth += 1;
                i += 1;
            }
            b'}' if !scan::is_escaped(bytes, i) => {
                depth = depth.saturating_sub(1);
                i += 1;
            }
            b'\\' if !scan::is_escaped(bytes, i) => {
                if let Some((name, after)) = scan::command_at(body, i) {
                    if depth == 0 {
                        if name == "begin" {
                            env_depth += 1;
                        } else if name == "end" {
                            env_depth = env_depth.saturating_sub(1);
                        }
                    }
                    if name == "\\" && depth == 0 && env_depth == 0 {
                        rows.push(body[start..i].to_string());
                        let mut j = after;
                        if bytes.get(j) == Some(&b'*') {
                            j += 1;
                        }
                        if bytes.get(j) == Some(&b'[') {
                            while j < bytes.len() && bytes[j] != b']' {
                                j += 1;
                            }
                            j = (j + 1).min(bytes.len());
                        }
                        start = j;
                        i = j;
                        continue;
                    }
                    i = after;
                    continue;
                }
                i += 1;
            }
            _ => i += 1,
        }
    }
    rows.push(body[start..].to_string());
    rows
}

/// Splits one row on unescaped `&` at brace/env depth zero.
fn split_cells(row: &str) -> Vec<String> {
    let bytes = row.as_bytes();
    let mut cells = Vec::new();
    let mut depth = 0usize;
    let mut env_depth = 0usize;
    let mut start = 0usize;
    let mut i = 0usize;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if !scan::is_escaped(bytes, i) => depth += 1,
            b'}' if !scan::is_escaped(bytes, i) => depth = depth.saturating_sub(1),
            b'\\' if !scan::is_escaped(bytes, i) => {
                if let Some((name, after)) = scan::command_at(row, i) {
                    if depth == 0 {
                        if name == "begin" {
                            env_depth += 1;
                        } else if name == "end" {
                            env_depth = env_depth.saturating_sub(1);
                        }
                    }
                    i = after;
                    continue;
                }
            }
            b'&' if depth == 0 && env_depth == 0 && !scan::is_escaped(bytes, i) => {
                cells.push(row[start..i].to_string());
                start = i + 1;
            }
            _ => {}
        }
        i += 1;
    }
    cells.push(row[start..].to_string());
    cells
}

/// Normalizes one raw cell into the grid, expanding `\multicolumn` and
/// unwrapping `\multirow`.
fn expand_cell(cell_raw: &str, cells: &mut Vec<String>, warnings: &mut Vec<Warning>) {
    let trimmed = cell_raw.trim();
    if trimmed.contains("\\begin{tabular") {
        warnings.push(Warning::new(
            "postprocess",
            "nested tabular flattened into parent cell",
        ));
    }
    if let Some(rest) = trimmed.strip_prefix("\\multicolumn") {
        if let Some((span, fmt_start)) = scan::group_content(rest, scan::skip_ws(rest.as_bytes(), 0))
        {
            if let Some(k) = span.trim().parse::<usize>().ok().filter(|k| *k >= 1) {
                let fmt_open = scan::skip_ws(rest.as_bytes(), fmt_start);
                if let Some((_, content_start)) = scan::group_content(rest, fmt_open) {
                    let content_open = scan::skip_ws(rest.as_bytes(), content_start);
                    if let Some((content, _)) = scan::group_content(rest, content_open) {
                        cells.push(clean_cell(content));
                        for _ in 1..k {
                            cells.push(String::new());
                        }
                        return;
                    }
                }
            }
        }
    }
    if let Some(rest) = trimmed.strip_prefix("\\multirow") {
        let bytes = rest.as_bytes();
        let mut i = scan::skip_ws(bytes, 0);
        let mut seen = 0;
        let mut content = None;
        while let Some((group, end)) = scan::group_content(rest, i) {
            seen += 1;
            if seen == 3 {
                content = Some(group);
                break;
            }
            i = scan::skip_ws(bytes, end);
            if bytes.get(i) != Some(&b'{') {
                break;
            }
        }
        if let Some(content) = content {
            cells.push(clean_cell(content));
            return;
        }
    }
    cells.push(clean_cell(trimmed));
}

fn clean_cell(cell: &str) -> String {
    scan::collapse_ws(&cell.replace("\\&", "&"))
}

// ---------------------------------------------------------------------------
// Equations
// ---------------------------------------------------------------------------

/// Display-math environments rewritten to `<equation> ... </equation>`.
const DISPLAY_ENVS: &[&str] = &[
    "equation",
    "align",
    "gather",
    "multline",
    "eqnarray",
    "displaymath",
    "alignat",
    "flalign",
    "IEEEeqnarray",
];

fn is_display_env(name: &str) -> bool {
    DISPLAY_ENVS.contains(&name.trim_end_matches('*'))
}

/// Rewrites math spans: `\(...\)` becomes `$...$`; display math (`equation`
/// and friends, `\[...\]`, `$$...$$`) becomes `<equation> body </equation>`
/// with the body's LaTeX kept verbatim (trimmed). Inline `$...$` stays.
/// Characters outside math spans are never touched; an unbalanced delimiter
/// leaves its span as written and produces a warning.
pub fn normalize_equations(text: &str) -> (String, Vec<Warning>) {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut warnings = Vec::new();
    let mut i = 0usize;

    while i < bytes.len() {
        if bytes[i] == b'$' && !scan::is_escaped(bytes, i) {
            if bytes.get(i + 1) == Some(&b'$') {
                match text[i + 2..].find("$$") {
                    Some(rel) => {
                        let body = &text[i + 2..i + 2 + rel];
                        out.push_str("<equation> ");
                        out.push_str(body.trim());
                        out.push_str(" </equation>");
                        i = i + 2 + rel + 2;
                        continue;
                    }
                    None => {
                        warnings.push(Warning::new("postprocess", "unbalanced $$ display math"));
                        out.push_str(&text[i..]);
                        break;
                    }
                }
            }
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j] != b'$' || scan::is_escaped(bytes, j)) {
                j += 1;
            }
            if j >= bytes.len() {
                warnings.push(Warning::new("postprocess", "unbalanced $ inline math"));
                out.push_str(&text[i..]);
                break;
            }
            out.push_str(&text[i..j + 1]);
            i = j + 1;
            continue;
        }
        if bytes[i] == b'\\' && !scan::is_escaped(bytes, i) {
            if text[i..].starts_with("\\(") {
                match text[i + 2..].find("\\)") {
                    Some(rel) => {
                        out.push('$');
                        out.push_str(&text[i + 2..i + 2 + rel]);
                        out.push('$');
                        i = i + 2 + rel + 2;
                        continue;
                    }
                    None => {
                        warnings.push(Warning::new("postprocess", "unbalanced \\( inline math"));
                        out.push_str(&text[i..]);
                        break;
                    }
                }
            }
            if text[i..].starts_with("\\[") {
                match text[i + 2..].find("\\]") {
                    Some(rel) => {
                        let body = &text[i + 2..i + 2 + rel];
                        out.push_str("<equation> ");
                        out.push_str(body.trim());
                        out.push_str(" </equation>");
                        i = i + 2 + rel + 2;
                        continue;
                    }
                    None => {
                        warnings.push(Warning::new("postprocess", "unbalanced \\[ display math"));
                        out.push_str(&text[i..]);
                        break;
                    }
                }
            }
            if let Some((name, after)) = scan::begin_at(text, i) {
                if name == "math" {
                    let close = format!("\\end{{{name}}}");
                    if let Some(rel) = text[after..].find(&close) {
                        out.push('$');
                        out.push_str(text[after..after + rel].trim());
                        out.push('$');
                        i = after + rel + close.len();
                        continue;
                    }
                }
                if is_display_env(name) {
                    let close = format!("\\end{{{name}}}");
                    match text[after..].find(&close) {
                        Some(rel) => {
                            let body = &text[after..after + rel];
                            out.push_str("<equation> ");
                            out.push_str(body.trim());
                            out.push_str(" </equation>");
                            i = after + rel + close.len();
                            continue;
                        }
                        None => {
                            warnings.push(Warning::new(
                                "postprocess",
                                format!("unbalanced {name} environment"),
                            ));
                        }
                    }
                }
            }
        }
        let ch = text[i..].chars().next().unwrap();
        out.push(ch);
        i += ch.len_utf8();
    }
    (out, warnings)
}

// ---------------------------------------------------------------------------
// Emphasis
// ---------------------------------------------------------------------------

/// Marks emphasized spans: `\textbf{x}` becomes `<bold> x </bold>`,
/// `\textit{x}`/`\emph{x}` become `<italic> x </italic>`. Nesting is
/// preserved inside-out; the emphasized content itself is kept unchanged.
pub fn mark_emphasis(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut i = 0usize;
    while i < bytes.len() {
        if bytes[i] == b'\\' && !scan::is_escaped(bytes, i) {
            if let Some((name, after)) = scan::command_at(text, i) {
                let tag = match name {
                    "textbf" => Some("bold"),
                    "textit" | "emph" => Some("italic"),
                    _ => None,
                };
                if let Some(tag) = tag {
                    let j = scan::skip_ws(bytes, after);
                    if bytes.get(j) == Some(&b'{') {
                        if let Some((inner, end)) = scan::group_content(text, j) {
                            out.push_str(&format!("<{tag}> "));
                            out.push_str(&mark_emphasis(inner));
                            out.push_str(&format!(" </{tag}>"));
                            i = end;
                            continue;
                        }
                    }
                }
                out.push_str(&text[i..after]);
                i = after;
                continue;
            }
        }
        let ch = text[i..].chars().next().unwrap();
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}

// ---------------------------------------------------------------------------
// Figures
// ---------------------------------------------------------------------------

/// Image paths and caption of one figure block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FigurePayload {
    pub image_paths: Vec<String>,
    pub caption: Option<String>,
}

static RE_INCLUDEGRAPHICS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\\includegraphics\*?(?:\[[^\]]*\])?\{([^}]*)\}").unwrap());

/// Rewrites figure paths through an optional conversion hook (an external
/// transcoder producing, say, PNG files). Disabled by default: nothing in
/// the pipeline calls this unless a converter is wired in, and paths stay
/// exactly as written in the source. A converter returning `None` leaves
/// that path alone.
pub fn convert_figure_paths(
    payload: &mut FigurePayload,
    converter: &dyn Fn(&str) -> Option<String>,
) {
    for path in &mut payload.image_paths {
        if let Some(converted) = converter(path) {
            *path = converted;
        }
    }
}

/// Collects every image-include argument inside the block (subfigures
/// included, since children stay in the body text), plus the caption. Paths
/// are kept as written; a figure drawn inline (TikZ) yields an empty list.
pub fn extract_figure_paths(figure_block: &EnvironmentBlock) -> FigurePayload {
    let image_paths = RE_INCLUDEGRAPHICS
        .captures_iter(&figure_block.body)
        .map(|c| c[1].trim().to_string())
        .collect();
    FigurePayload {
        image_paths,
        caption: figure_block.caption.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::extract_blocks;

    #[test]
    fn linearize_two_by_two() {
        let t = linearize_table("a & b \\\\ c & d").unwrap();
        assert_eq!(t.grid, vec![vec!["a", "b"], vec!["c", "d"]]);
        assert!(t.equal_columns);
        assert_eq!((t.n_rows, t.n_cols), (2, 2));
        assert_eq!(
            t.linear,
            "<table> <row> <cell> a <cell> b <row> <cell> c <cell> d"
        );
    }

    #[test]
    fn linearize_ragged_rows() {
        let t = linearize_table("a & b \\\\ c").unwrap();
        assert!(!t.equal_columns);
        assert_eq!(t.n_cols, 2);
    }

    #[test]
    fn linearize_multicolumn() {
        let t = linearize_table("\\multicolumn{2}{c}{x} \\\\ a & b").unwrap();
        assert_eq!(t.grid[0], vec!["x", ""]);
        assert!(t.equal_columns);
    }

    #[test]
    fn linearize_multirow_keeps_content() {
        let t = linearize_table("\\multirow{2}{*}{tall} & b \\\\ c & d").unwrap();
        assert_eq!(t.grid[0], vec!["tall", "b"]);
    }

    #[test]
    fn linearize_drops_rules_and_trailing_row() {
        let t = linearize_table("\\toprule a & b \\\\ \\hline c & d \\\\ \\bottomrule").unwrap();
        assert_eq!(t.n_rows, 2);
        assert_eq!(t.grid[1], vec!["c", "d"]);
    }

    #[test]
    fn linearize_empty_is_error() {
        assert!(matches!(
            linearize_table(" \\hline "),
            Err(PostprocessError::EmptyTable)
        ));
    }

    #[test]
    fn linearize_escaped_ampersand() {
        let t = linearize_table("AT\\&T & b").unwrap();
        assert_eq!(t.grid[0], vec!["AT&T", "b"]);
    }

    #[test]
    fn linearize_row_spacing_arg() {
        let t = linearize_table("a & b \\\\[3pt] c & d").unwrap();
        assert_eq!(t.n_rows, 2);
        assert_eq!(t.grid[1], vec!["c", "d"]);
    }

    #[test]
    fn round_trip_identity() {
        let grids = vec![
            vec![vec!["a".to_string(), "b".to_string()], vec!["c".to_string(), "d".to_string()]],
            vec![vec!["x".to_string(), String::new()]],
            vec![vec!["one two".to_string()], vec!["three".to_string(), "4 5".to_string()]],
        ];
        for grid in grids {
            let linear = to_linear(&grid);
            assert_eq!(parse_linear(&linear).unwrap(), grid, "linear {linear:?}");
        }
    }

    #[test]
    fn round_trip_with_escaping() {
        let grid = vec![vec!["contains <cell> token".to_string(), "plain".to_string()]];
        let linear = to_linear(&grid);
        assert_eq!(parse_linear(&linear).unwrap(), grid);
    }

    #[test]
    fn escape_then_unescape_is_identity() {
        for s in ["<table>", "a <row> b", "<<cell>>", "no tokens", "<equation> x </equation>"] {
            assert_eq!(unescape_reserved(&escape_reserved(s)), s);
        }
    }

    #[test]
    fn column_spec_stripping() {
        assert_eq!(strip_column_spec("tabular", "{lcc} a & b"), "a & b");
        assert_eq!(strip_column_spec("tabular", "[t]{lcc} a"), "a");
        assert_eq!(
            strip_column_spec("tabularx", "{\\textwidth}{lX} a"),
            "a"
        );
        assert_eq!(strip_column_spec("tabular", "no spec"), "no spec");
    }

    #[test]
    fn equations_inline_untouched() {
        let (out, w) = normalize_equations("take $x+y$ here");
        assert_eq!(out, "take $x+y$ here");
        assert!(w.is_empty());
    }

    #[test]
    fn equations_display_env() {
        let (out, _) = normalize_equations("\\begin{equation}E=mc^2\\end{equation}");
        assert_eq!(out, "<equation> E=mc^2 </equation>");
    }

    #[test]
    fn equations_bracket_display() {
        let (out, _) = normalize_equations("\\[ a \\]");
        assert_eq!(out, "<equation> a </equation>");
    }

    #[test]
    fn equations_paren_inline() {
        let (out, _) = normalize_equations("use \\(a+b\\) inline");
        assert_eq!(out, "use $a+b$ inline");
    }

    #[test]
    fn equations_double_dollar() {
        let (out, _) = normalize_equations("$$ x^2 $$");
        assert_eq!(out, "<equation> x^2 </equation>");
    }

    #[test]
    fn equations_starred_align() {
        let (out, _) = normalize_equations("\\begin{align*}a &= b\\end{align*}");
        assert_eq!(out, "<equation> a &= b </equation>");
    }

    #[test]
    fn equations_unbalanced_left_alone() {
        let (out, w) = normalize_equations("broken $x here");
        assert_eq!(out, "broken $x here");
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn equations_do_not_touch_outside() {
        let input = "pre $a$ mid \\begin{equation}q\\end{equation} post";
        let (out, _) = normalize_equations(input);
        assert!(out.starts_with("pre $a$ mid "));
        assert!(out.ends_with(" post"));
    }

    #[test]
    fn emphasis_bold() {
        assert_eq!(mark_emphasis("\\textbf{key}"), "<bold> key </bold>");
    }

    #[test]
    fn emphasis_nested() {
        assert_eq!(
            mark_emphasis("\\emph{\\textbf{a}}"),
            "<italic> <bold> a </bold> </italic>"
        );
    }

    #[test]
    fn emphasis_plain_identity() {
        assert_eq!(mark_emphasis("plain"), "plain");
    }

    #[test]
    fn emphasis_preserves_content_text() {
        let input = "x \\textbf{bold words} y \\textit{it} z";
        let out = mark_emphasis(input);
        for token in ["bold words", "it", "x ", " y ", " z"] {
            assert!(out.contains(token), "missing {token:?} in {out:?}");
        }
    }

    #[test]
    fn figure_paths_single() {
        let blocks = extract_blocks(
            "\\begin{figure}\\includegraphics[width=5cm]{img/a.png}\\caption{A}\\end{figure}",
        )
        .unwrap();
        let payload = extract_figure_paths(&blocks[0]);
        assert_eq!(payload.image_paths, vec!["img/a.png"]);
        assert_eq!(payload.caption.as_deref(), Some("A"));
    }

    #[test]
    fn figure_paths_subfigures_in_order() {
        let blocks = extract_blocks(
            "\\begin{figure}\\begin{subfigure}\\includegraphics{a.pdf}\\end{subfigure}\\begin{subfigure}\\includegraphics{b.pdf}\\end{subfigure}\\end{figure}",
        )
        .unwrap();
        let payload = extract_figure_paths(&blocks[0]);
        assert_eq!(payload.image_paths, vec!["a.pdf", "b.pdf"]);
    }

    #[test]
    fn figure_conversion_hook() {
        let mut payload = FigurePayload {
            image_paths: vec!["a.eps".into(), "b.png".into()],
            caption: None,
        };
        convert_figure_paths(&mut payload, &|p| {
            p.strip_suffix(".eps").map(|stem| format!("{stem}.png"))
        });
        assert_eq!(payload.image_paths, vec!["a.png", "b.png"]);
    }

    #[test]
    fn figure_paths_tikz_only_empty() {
        let blocks =
            extract_blocks("\\begin{figure}\\begin{tikzpicture}x\\end{tikzpicture}\\end{figure}")
                .unwrap();
        let payload = extract_figure_paths(&blocks[0]);
        assert!(payload.image_paths.is_empty());
    }
}
