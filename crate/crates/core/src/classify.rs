//! Assigns each environment block one of the seven object classes
//! (table, figure, equation, algorithm, theorem, verbatim, text) or `other`.
//!
//! Classification is a deterministic alias-table lookup on the normalized
//! environment name, with content heuristics for unknown names. An external
//! tagger can be plugged in front of the table; it is consulted first and
//! the table is the fallback.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Warning;

/// Version tag of the built-in alias table. Bump on any entry change.
pub const BUILTIN_ALIAS_VERSION: &str = "builtin-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Table,
    Figure,
    Equation,
    Algorithm,
    Theorem,
    Verbatim,
    Text,
    Other,
}

impl ObjectKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectKind::Table => "table",
            ObjectKind::Figure => "figure",
            ObjectKind::Equation => "equation",
            ObjectKind::Algorithm => "algorithm",
            ObjectKind::Theorem => "theorem",
            ObjectKind::Verbatim => "verbatim",
            ObjectKind::Text => "text",
            ObjectKind::Other => "other",
        }
    }

    pub fn from_name(name: &str) -> Option<ObjectKind> {
        Some(match name {
            "table" => ObjectKind::Table,
            "figure" => ObjectKind::Figure,
            "equation" => ObjectKind::Equation,
            "algorithm" => ObjectKind::Algorithm,
            "theorem" => ObjectKind::Theorem,
            "verbatim" => ObjectKind::Verbatim,
            "text" => ObjectKind::Text,
            "other" => ObjectKind::Other,
            _ => return None,
        })
    }

    /// The seven content-bearing kinds, in display order.
    pub const CONTENT_KINDS: [ObjectKind; 7] = [
        ObjectKind::Table,
        ObjectKind::Figure,
        ObjectKind::Equation,
        ObjectKind::Algorithm,
        ObjectKind::Theorem,
        ObjectKind::Verbatim,
        ObjectKind::Text,
    ];
}

impl std::fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("alias file {path}: line {line}: {message}")]
    BadAliasLine {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercases and strips trailing `*` and digits, so `figure*`, `Verbatim`
/// and `subfigure2` all hit their base entries.
pub fn normalize_env_name(name: &str) -> String {
    let mut n = name.trim().to_lowercase();
    while n.ends_with('*') || n.ends_with(|c: char| c.is_ascii_digit()) {
        n.pop();
    }
    n
}

/// Maps normalized environment-name patterns to object kinds.
#[derive(Debug, Clone)]
pub struct AliasTable {
    entries: BTreeMap<String, ObjectKind>,
    pub version: String,
}

impl AliasTable {
    /// The built-in table covering the common LaTeX environment families.
    pub fn builtin() -> AliasTable {
        use ObjectKind::*;
        const ENTRIES: &[(&str, ObjectKind)] = &[
            // tables
            ("table", Table),
            ("tabular", Table),
            ("tabularx", Table),
            ("tabulary", Table),
            ("tabu", Table),
            ("longtable", Table),
            ("supertabular", Table),
            ("sidewaystable", Table),
            ("deluxetable", Table),
            ("wraptable", Table),
            // figures
            ("figure", Figure),
            ("subfigure", Figure),
            ("wrapfigure", Figure),
            ("sidewaysfigure", Figure),
            ("floatingfigure", Figure),
            ("tikzpicture", Figure),
            ("picture", Figure),
            ("overpic", Figure),
            // equations
            ("equation", Equation),
            ("align", Equation),
            ("gather", Equation),
            ("multline", Equation),
            ("eqnarray", Equation),
            ("alignat", Equation),
            ("flalign", Equation),
            ("displaymath", Equation),
            ("math", Equation),
            ("subequations", Equation),
            ("split", Equation),
            ("ieeeeqnarray", Equation),
            // algorithms
            ("algorithm", Algorithm),
            ("algorithmic", Algorithm),
            ("algo", Algorithm),
            ("algorithm2e", Algorithm),
            ("algorithmicx", Algorithm),
            ("pseudocode", Algorithm),
            // theorem family
            ("theorem", Theorem),
            ("lemma", Theorem),
            ("proof", Theorem),
            ("corollary", Theorem),
            ("proposition", Theorem),
            ("definition", Theorem),
            ("remark", Theorem),
            ("claim", Theorem),
            ("conjecture", Theorem),
            ("example", Theorem),
            ("assumption", Theorem),
            ("fact", Theorem),
            ("observation", Theorem),
            ("property", Theorem),
            ("axiom", Theorem),
            // verbatim family
            ("verbatim", Verbatim),
            ("lstlisting", Verbatim),
            ("minted", Verbatim),
            ("alltt", Verbatim),
            ("listing", Verbatim),
            ("bverbatim", Verbatim),
            // prose-level containers
            ("quote", Text),
            ("quotation", Text),
            ("itemize", Text),
            ("enumerate", Text),
            ("description", Text),
            ("center", Text),
            ("flushleft", Text),
            ("flushright", Text),
            ("compactitem", Text),
            ("compactenum", Text),
            ("inparaenum", Text),
            ("abstract", Text),
            // structural leftovers
            ("minipage", Other),
            ("document", Other),
            ("thebibliography", Other),
            ("titlepage", Other),
            ("frame", Other),
        ];
        AliasTable {
            entries: ENTRIES.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            version: BUILTIN_ALIAS_VERSION.to_string(),
        }
    }

    /// Loads `pattern kind` pairs from a plain-text file. Blank lines and
    /// `#` comments are skipped; a `version <tag>` line sets the table
    /// version. Conflicting duplicate patterns are an error.
    pub fn from_file(path: &Path) -> Result<AliasTable, ClassifyError> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = BTreeMap::new();
        let mut version = format!("file:{}", path.display());
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let first = parts.next().unwrap_or_default();
            let second = parts.next();
            if first == "version" {
                if let Some(tag) = second {
                    version = tag.to_string();
                }
                continue;
            }
            let bad = |message: String| ClassifyError::BadAliasLine {
                path: path.display().to_string(),
                line: idx + 1,
                message,
            };
            let kind_name = second.ok_or_else(|| bad("expected `pattern kind`".into()))?;
            let kind = ObjectKind::from_name(kind_name)
                .ok_or_else(|| bad(format!("unknown kind {kind_name:?}")))?;
            let pattern = normalize_env_name(first);
            if let Some(existing) = entries.get(&pattern) {
                if *existing != kind {
                    return Err(bad(format!(
                        "pattern {pattern:?} already mapped to {existing}"
                    )));
                }
            }
            entries.insert(pattern, kind);
        }
        Ok(AliasTable { entries, version })
    }

    pub fn lookup(&self, env_name: &str) -> Option<ObjectKind> {
        self.entries.get(&normalize_env_name(env_name)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Alias lookup with content-heuristic fallback. Total: every name maps
    /// to some kind, `Other` in the worst case.
    pub fn classify(&self, env_name: &str, body: &str) -> ObjectKind {
        if let Some(kind) = self.lookup(env_name) {
            return kind;
        }
        if body.contains("\\begin{tabular") {
            ObjectKind::Table
        } else if body.contains("\\includegraphics") {
            ObjectKind::Figure
        } else {
            ObjectKind::Other
        }
    }
}

impl Default for AliasTable {
    fn default() -> Self {
        AliasTable::builtin()
    }
}

/// Classifies with the built-in alias table.
pub fn classify_env(env_name: &str, body: &str) -> ObjectKind {
    AliasTable::builtin().classify(env_name, body)
}

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("tagger unavailable: {0}")]
    Unavailable(String),
}

/// An external classifier consulted before the alias table. Implementations
/// may decline (return `None`) on inputs they do not cover.
pub trait ExternalTagger {
    fn classify(&mut self, env_name: &str, body: &str) -> Result<Option<ObjectKind>, TaggerError>;
}

/// Delegates to the tagger; a decline or error falls back to the alias
/// table, the error additionally producing a warning.
pub fn classify_with_plugin(
    env_name: &str,
    body: &str,
    tagger: &mut dyn ExternalTagger,
    table: &AliasTable,
) -> (ObjectKind, Option<Warning>) {
    match tagger.classify(env_name, body) {
        Ok(Some(kind)) => (kind, None),
        Ok(None) => (table.classify(env_name, body), None),
        Err(e) => (
            table.classify(env_name, body),
            Some(Warning::new(
                "classify",
                format!("tagger failed on {env_name:?}: {e}; used alias table"),
            )),
        ),
    }
}

#[derive(Serialize)]
struct TaggerRequest<'a> {
    name: &'a str,
    body: &'a str,
}

#[derive(Deserialize)]
struct TaggerResponse {
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    decline: bool,
}

/// Speaks the line-oriented JSON protocol with a persistent subprocess:
/// one `{"name":..., "body":...}` object per request line, one
/// `{"kind":...}` or `{"decline":true}` object per response line.
pub struct SubprocessTagger {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl SubprocessTagger {
    pub fn spawn(program: &str, args: &[&str]) -> Result<SubprocessTagger, TaggerError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| TaggerError::Unavailable(format!("spawn {program}: {e}")))?;
        let stdin = child
            .stdin
            .take()
            .ok_or_else(|| TaggerError::Unavailable("no stdin".into()))?;
        let stdout = child
            .stdout
            .take()
            .map(BufReader::new)
            .ok_or_else(|| TaggerError::Unavailable("no stdout".into()))?;
        Ok(SubprocessTagger {
            child,
            stdin,
            stdout,
        })
    }
}

impl ExternalTagger for SubprocessTagger {
    fn classify(&mut self, env_name: &str, body: &str) -> Result<Option<ObjectKind>, TaggerError> {
        let request = serde_json::to_string(&TaggerRequest {
            name: env_name,
            body,
        })
        .map_err(|e| TaggerError::Unavailable(e.to_string()))?;
        writeln!(self.stdin, "{request}")
            .map_err(|e| TaggerError::Unavailable(format!("write: {e}")))?;
        self.stdin
            .flush()
            .map_err(|e| TaggerError::Unavailable(format!("flush: {e}")))?;
        let mut line = String::new();
        let n = self
            .stdout
            .read_line(&mut line)
            .map_err(|e| TaggerError::Unavailable(format!("read: {e}")))?;
        if n == 0 {
            return Err(TaggerError::Unavailable("tagger closed its stdout".into()));
        }
        let response: TaggerResponse = serde_json::from_str(line.trim())
            .map_err(|e| TaggerError::Unavailable(format!("bad response {line:?}: {e}")))?;
        if response.decline {
            return Ok(None);
        }
        match response.kind {
            Some(name) => Ok(ObjectKind::from_name(&name)),
            None => Ok(None),
        }
    }
}

impl Drop for SubprocessTagger {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
