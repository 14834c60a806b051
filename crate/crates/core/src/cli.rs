//! Batch driver behind the `texstruct` binary: each subcommand is a function
//! taking a [`RunConfig`] and returning a process exit code. Per-paper
//! failures never abort a batch; they land in a JSON-lines error log and
//! flip the exit code to 1. Configuration problems exit with 2.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::bibres::{self, LinkedId, MetadataRecord};
use crate::classify::{AliasTable, ObjectKind};
use crate::corpus::{self, FilterDecision, PaperDocument};
use crate::ingest::SourceBundle;
use crate::postprocess;
use crate::taskgen::{self, ContextSize, FigureLabels, SelectorMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PAPER_ERRORS: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Which baseline selector fills the `context` field of derived samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    /// The closest `n` sentences (`--context`).
    All,
    /// 10 sentences drawn uniformly from the full context.
    Rand,
    /// The 11th to 20th sentences before the target.
    Dist,
}

impl std::str::FromStr for Selector {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Selector::All),
            "rand" => Ok(Selector::Rand),
            "dist" => Ok(Selector::Dist),
            other => Err(format!("unknown selector {other:?}")),
        }
    }
}

/// One run's full configuration; every subcommand reads the subset it needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input_root: PathBuf,
    pub output_root: PathBuf,
    pub db_path: Option<PathBuf>,
    pub threshold: f64,
    pub context: ContextSize,
    pub selector: Selector,
    pub seed: u64,
    pub workers: usize,
    pub alias_table_path: Option<PathBuf>,
    pub figure_label_path: Option<PathBuf>,
    /// Object kinds for `derive`; empty means all four task kinds.
    pub kinds: Vec<ObjectKind>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input_root: PathBuf::new(),
            output_root: PathBuf::new(),
            db_path: None,
            threshold: bibres::DEFAULT_TITLE_THRESHOLD,
            context: ContextSize::Sentences(20),
            selector: Selector::All,
            seed: 0,
            workers: 1,
            alias_table_path: None,
            figure_label_path: None,
            kinds: Vec::new(),
        }
    }
}

#[derive(Serialize)]
struct ErrorRecord {
    paper_id: String,
    stage: String,
    message: String,
}

#[derive(Serialize)]
struct WarningRecord {
    paper_id: String,
    stage: String,
    message: String,
}

#[derive(Serialize)]
struct RejectRecord {
    paper_id: String,
    reason: String,
}

#[derive(Serialize)]
struct DeriveRejectRecord {
    object_id: String,
    reason: String,
}

fn config_error(message: &str) -> i32 {
    eprintln!("error: {message}");
    EXIT_CONFIG
}

fn write_jsonl(path: &Path, lines: &[String]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    for line in lines {
        writeln!(file, "{line}")?;
    }
    Ok(())
}

fn read_corpus(path: &Path) -> Result<Vec<PaperDocument>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut docs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc = corpus::parse_record(line)
            .map_err(|e| format!("{}: line {}: {e}", path.display(), idx + 1))?;
        docs.push(doc);
    }
    Ok(docs)
}

/// The linked corpus when available, otherwise the plain parse output.
fn corpus_input_path(out: &Path) -> PathBuf {
    let linked = out.join("corpus.linked.jsonl");
    if linked.exists() {
        linked
    } else {
        out.join("corpus.jsonl")
    }
}

fn load_aliases(config: &RunConfig) -> Result<AliasTable, String> {
    match &config.alias_table_path {
        Some(path) => AliasTable::from_file(path).map_err(|e| e.to_string()),
        None => Ok(AliasTable::builtin()),
    }
}

/// Paper directories (one bundle per subdirectory) plus bare `.tex` files,
/// sorted by paper id.
fn discover_papers(root: &Path) -> Result<Vec<(String, PathBuf, bool)>, String> {
    let mut papers = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| format!("{}: {e}", root.display()))?;
    for entry in entries {
        let entry = entry.map_err(|e| e.to_string())?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if path.is_dir() {
            papers.push((name, path, true));
        } else if path.extension().is_some_and(|e| e == "tex") {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or(name);
            papers.push((stem, path, false));
        }
    }
    papers.sort_by(|a, b| a.0.cmp(&b.0));
    if papers.is_empty() {
        return Err(format!("no paper directories or .tex files under {}", root.display()));
    }
    Ok(papers)
}

// ---------------------------------------------------------------------------
// parse
// ---------------------------------------------------------------------------

/// ingest -> parse -> classify -> postprocess for every paper under the
/// input root. Writes `corpus.jsonl` (kept papers, sorted by id),
/// `rejects.jsonl`, `errors.jsonl`, and `warnings.jsonl`.
pub fn cmd_parse(config: &RunConfig) -> i32 {
    let papers = match discover_papers(&config.input_root) {
        Ok(p) => p,
        Err(e) => return config_error(&e),
    };
    let aliases = match load_aliases(config) {
        Ok(a) => a,
        Err(e) => return config_error(&e),
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
    {
        Ok(p) => p,
        Err(e) => return config_error(&format!("worker pool: {e}")),
    };

    type PaperOutcome = (String, Result<(PaperDocument, Vec<crate::Warning>), (String, String)>);
    let results: Vec<PaperOutcome> = pool.install(|| {
        papers
            .par_iter()
            .map(|(paper_id, path, is_dir)| {
                let bundle = if *is_dir {
                    SourceBundle::from_dir(paper_id, path)
                } else {
                    SourceBundle::from_file(paper_id, path)
                };
                let outcome = match bundle {
                    Ok(mut bundle) => corpus::assemble(&mut bundle, &aliases, None)
                        .map_err(|e| (stage_of(&e), e.to_string())),
                    Err(e) => Err(("ingest".to_string(), e.to_string())),
                };
                (paper_id.clone(), outcome)
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut errors = Vec::new();
    let mut warning_lines = Vec::new();
    for (paper_id, outcome) in results {
        match outcome {
            Ok((doc, warnings)) => {
                for w in warnings {
                    warning_lines.push(
                        serde_json::to_string(&WarningRecord {
                            paper_id: paper_id.clone(),
                            stage: w.stage,
                            message: w.message,
                        })
                        .expect("warning record"),
                    );
                }
                match corpus::filter_paper(&doc) {
                    FilterDecision::Keep => match corpus::emit(&doc) {
                        Ok(line) => records.push(line),
                        Err(e) => errors.push(ErrorRecord {
                            paper_id,
                            stage: "emit".into(),
                            message: e.to_string(),
                        }),
                    },
                    FilterDecision::Reject(reason) => rejects.push(
                        serde_json::to_string(&RejectRecord {
                            paper_id,
                            reason: reason.as_str().to_string(),
                        })
                        .expect("reject record"),
                    ),
                }
            }
            Err((stage, message)) => errors.push(ErrorRecord {
                paper_id,
                stage,
                message,
            }),
        }
    }

    let error_lines: Vec<String> = errors
        .iter()
        .map(|e| serde_json::to_string(e).expect("error record"))
        .collect();
    let out = &config.output_root;
    let written = write_jsonl(&out.join("corpus.jsonl"), &records)
        .and_then(|_| write_jsonl(&out.join("rejects.jsonl"), &rejects))
        .and_then(|_| write_jsonl(&out.join("errors.jsonl"), &error_lines))
        .and_then(|_| write_jsonl(&out.join("warnings.jsonl"), &warning_lines));
    if let Err(e) = written {
        return config_error(&format!("writing outputs: {e}"));
    }
    println!(
        "{}",
        serde_json::json!({
            "papers": records.len() + rejects.len() + errors.len(),
            "kept": records.len(),
            "rejected": rejects.len(),
            "errors": errors.len(),
        })
    );
    if errors.is_empty() {
        EXIT_OK
    } else {
        EXIT_PAPER_ERRORS
    }
}

fn stage_of(error: &corpus::CorpusError) -> String {
    match error {
        corpus::CorpusError::Ingest(_) => "ingest".into(),
        corpus::CorpusError::Parse(_) => "parse".into(),
        _ => "corpus".into(),
    }
}

// ---------------------------------------------------------------------------
// link
// ---------------------------------------------------------------------------

/// Fills the links of every corpus record against the metadata database and
/// prints the two link rates.
pub fn cmd_link(config: &RunConfig) -> i32 {
    let Some(db_path) = &config.db_path else {
        return config_error("link requires --db");
    };
    if !(0.0..1.0).contains(&config.threshold) || config.threshold <= 0.0 {
        return config_error("--threshold must lie in (0,1)");
    }
    let db: Vec<MetadataRecord> = match bibres::load_metadata_db(db_path) {
        Ok(db) => db,
        Err(e) => return config_error(&e.to_string()),
    };
    let corpus_path = config.output_root.join("corpus.jsonl");
    let mut docs = match read_corpus(&corpus_path) {
        Ok(d) => d,
        Err(e) => return config_error(&e),
    };
    for doc in &mut docs {
        doc.links = doc
            .bib
            .iter()
            .map(|entry| bibres::resolve(entry, &db, config.threshold))
            .collect();
    }
    let lines: Result<Vec<String>, corpus::CorpusError> = docs.iter().map(corpus::emit).collect();
    let lines = match lines {
        Ok(lines) => lines,
        Err(e) => return config_error(&e.to_string()),
    };
    if let Err(e) = write_jsonl(&config.output_root.join("corpus.linked.jsonl"), &lines) {
        return config_error(&format!("writing linked corpus: {e}"));
    }
    match corpus::compute_stats(&docs) {
        Ok(stats) => println!(
            "{}",
            serde_json::json!({
                "citation_to_bib_pct": stats.citation_to_bib_pct,
                "bib_to_fulltext_pct": stats.bib_to_fulltext_pct,
            })
        ),
        Err(e) => return config_error(&e.to_string()),
    }
    EXIT_OK
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

/// Prints corpus statistics as JSON (also saved to `stats.json`), folding in
/// the reject log written by `parse`.
pub fn cmd_stats(config: &RunConfig) -> i32 {
    let input = corpus_input_path(&config.output_root);
    let docs = match read_corpus(&input) {
        Ok(d) => d,
        Err(e) => return config_error(&e),
    };
    let mut stats = match corpus::compute_stats(&docs) {
        Ok(s) => s,
        Err(e) => return config_error(&e.to_string()),
    };
    let rejects_path = config.output_root.join("rejects.jsonl");
    if let Ok(text) = fs::read_to_string(&rejects_path) {
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            if let Ok(value) = serde_json::from_str::<serde_json::Value>(line) {
                if let Some(reason) = value.get("reason").and_then(|r| r.as_str()) {
                    *stats.rejects_by_reason.entry(reason.to_string()).or_default() += 1;
                }
            }
        }
    }
    let rendered = serde_json::to_string_pretty(&stats).expect("stats json");
    if let Err(e) = fs::write(config.output_root.join("stats.json"), &rendered) {
        return config_error(&format!("writing stats.json: {e}"));
    }
    println!("{rendered}");
    EXIT_OK
}

// ---------------------------------------------------------------------------
// derive
// ---------------------------------------------------------------------------

/// Derives the task datasets from the (preferably linked) corpus:
/// `desc.<kind>.jsonl` per selected kind and `para.jsonl`, plus a reject log
/// with filter reasons.
pub fn cmd_derive(config: &RunConfig) -> i32 {
    let input = corpus_input_path(&config.output_root);
    let docs = match read_corpus(&input) {
        Ok(d) => d,
        Err(e) => return config_error(&e),
    };
    let figure_labels = match &config.figure_label_path {
        Some(path) => match FigureLabels::load(path) {
            Ok(l) => l,
            Err(e) => return config_error(&e.to_string()),
        },
        None => FigureLabels::empty(),
    };
    let kinds: Vec<ObjectKind> = if config.kinds.is_empty() {
        taskgen::DESCRIPTION_KINDS.to_vec()
    } else {
        config.kinds.clone()
    };

    let mut desc_lines: BTreeMap<ObjectKind, Vec<String>> =
        kinds.iter().map(|k| (*k, Vec::new())).collect();
    let mut reject_lines = Vec::new();
    let mut para_lines = Vec::new();
    let cited_docs: BTreeMap<String, &PaperDocument> =
        docs.iter().map(|d| (d.paper_id.clone(), d)).collect();

    for doc in &docs {
        let (samples, rejects, _warnings) =
            taskgen::derive_description_samples(doc, config.context, &figure_labels);
        for (object_id, reason) in rejects {
            reject_lines.push(
                serde_json::to_string(&DeriveRejectRecord {
                    object_id,
                    reason: reason.as_str().to_string(),
                })
                .expect("derive reject record"),
            );
        }
        for sample in samples {
            if !kinds.contains(&sample.kind) {
                continue;
            }
            let mode = match config.selector {
                Selector::All => None,
                Selector::Rand => Some(SelectorMode::Rand {
                    k: 10,
                    seed: config.seed,
                }),
                Selector::Dist => Some(SelectorMode::Dist { a: 11, b: 20 }),
            };
            let context = match mode {
                None => sample.context_window.clone(),
                Some(mode) => {
                    match taskgen::baseline_select(&sample.context_all, sample.target_span.0, mode)
                    {
                        Ok(selection) => selection,
                        Err(_) => {
                            reject_lines.push(
                                serde_json::to_string(&DeriveRejectRecord {
                                    object_id: sample.object_id.clone(),
                                    reason: "context_too_small".to_string(),
                                })
                                .expect("derive reject record"),
                            );
                            continue;
                        }
                    }
                }
            };
            let record = sample.to_record(context);
            desc_lines
                .get_mut(&sample.kind)
                .expect("selected kind")
                .push(serde_json::to_string(&record).expect("desc record"));
        }
        for sample in taskgen::derive_paragraph_samples(doc, &cited_docs) {
            para_lines.push(serde_json::to_string(&sample).expect("para record"));
        }
    }

    let out = &config.output_root;
    for (kind, lines) in &desc_lines {
        if let Err(e) = write_jsonl(&out.join(format!("desc.{kind}.jsonl")), lines) {
            return config_error(&format!("writing desc output: {e}"));
        }
    }
    if let Err(e) = write_jsonl(&out.join("para.jsonl"), &para_lines)
        .and_then(|_| write_jsonl(&out.join("derive.rejects.jsonl"), &reject_lines))
    {
        return config_error(&format!("writing derive outputs: {e}"));
    }
    let counts: BTreeMap<String, usize> = desc_lines
        .iter()
        .map(|(k, v)| (k.to_string(), v.len()))
        .collect();
    println!(
        "{}",
        serde_json::json!({
            "desc": counts,
            "para": para_lines.len(),
            "rejected": reject_lines.len(),
        })
    );
    EXIT_OK
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

struct Violation {
    file: String,
    line: usize,
    message: String,
}

/// Checks every output file in the output root against its schema and the
/// record-level invariants. Exit 0 iff everything holds; the first
/// violations are printed with file, line, and the broken invariant.
pub fn cmd_validate(config: &RunConfig) -> i32 {
    let out = &config.output_root;
    if !out.exists() {
        return config_error(&format!("output root {} does not exist", out.display()));
    }
    let mut violations = Vec::new();

    for name in ["corpus.jsonl", "corpus.linked.jsonl"] {
        let path = out.join(name);
        if path.exists() {
            validate_corpus_file(&path, &mut violations);
        }
    }
    if let Ok(entries) = fs::read_dir(out) {
        let mut names: Vec<String> = entries
            .flatten()
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for name in names {
            let path = out.join(&name);
            if name.starts_with("desc.") && name.ends_with(".jsonl") {
                validate_desc_file(&path, &mut violations);
            } else if name == "para.jsonl" {
                validate_para_file(&path, &mut violations);
            }
        }
    }

    if violations.is_empty() {
        println!("{}", serde_json::json!({"valid": true}));
        EXIT_OK
    } else {
        for v in violations.iter().take(20) {
            println!(
                "{}",
                serde_json::json!({
                    "valid": false,
                    "file": v.file,
                    "line": v.line,
                    "violation": v.message,
                })
            );
        }
        EXIT_PAPER_ERRORS
    }
}

fn for_each_line(path: &Path, violations: &mut Vec<Violation>, mut f: impl FnMut(usize, &str) -> Vec<String>) {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            violations.push(Violation {
                file: path.display().to_string(),
                line: 0,
                message: format!("unreadable: {e}"),
            });
            return;
        }
    };
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        for message in f(idx + 1, line) {
            violations.push(Violation {
                file: path.display().to_string(),
                line: idx + 1,
                message,
            });
        }
    }
}

fn validate_corpus_file(path: &Path, violations: &mut Vec<Violation>) {
    for_each_line(path, violations, |_, line| {
        let doc: PaperDocument = match serde_json::from_str(line) {
            Ok(d) => d,
            Err(e) => return vec![format!("schema: {e}")],
        };
        let mut messages = Vec::new();
        if doc.paper_id.is_empty() {
            messages.push("paper_id is empty".into());
        }
        if doc.word_count != doc.count_words() {
            messages.push(format!(
                "word_count {} does not match body recount {}",
                doc.word_count,
                doc.count_words()
            ));
        }
        let labels: std::collections::BTreeSet<&str> = doc
            .objects
            .iter()
            .filter_map(|o| o.label.as_deref())
            .collect();
        for paragraph in doc.paragraphs() {
            for sentence in &paragraph.sentences {
                if sentence.trim().is_empty() {
                    messages.push("empty sentence".into());
                }
            }
            for (idx, label) in &paragraph.object_refs {
                if *idx >= paragraph.sentences.len() {
                    messages.push(format!("object_ref index {idx} out of range"));
                }
                if !labels.contains(label.as_str()) {
                    messages.push(format!("dangling object_ref to {label:?}"));
                }
            }
            for (idx, _) in &paragraph.cite_marks {
                if *idx >= paragraph.sentences.len() {
                    messages.push(format!("cite_mark index {idx} out of range"));
                }
            }
        }
        for (n, object) in doc.objects.iter().enumerate() {
            let content_ok = match (&object.kind, &object.payload) {
                (ObjectKind::Table, corpus::Payload::Table(t)) => {
                    if object.has_content {
                        !t.grid.is_empty()
                            && t.linear == postprocess::to_linear(&t.grid)
                            && postprocess::parse_linear(&t.linear)
                                .map(|g| g == t.grid)
                                .unwrap_or(false)
                    } else {
                        true
                    }
                }
                (ObjectKind::Table, _) => false,
                (ObjectKind::Figure, corpus::Payload::Figure(f)) => {
                    object.has_content == !f.image_paths.is_empty()
                }
                (ObjectKind::Figure, _) => false,
                (_, corpus::Payload::Text(t)) => object.has_content == !t.trim().is_empty(),
                (_, _) => false,
            };
            if !content_ok {
                messages.push(format!("object {n}: payload inconsistent with kind/has_content"));
            }
        }
        for link in &doc.links {
            match (&link.linked_id, link.distance) {
                (LinkedId::Unlinked, Some(_)) => {
                    messages.push(format!("link {:?}: -1 with a distance", link.entry_key));
                }
                (LinkedId::Id(_), None) => {
                    messages.push(format!("link {:?}: id without a distance", link.entry_key));
                }
                _ => {}
            }
        }
        messages
    });
}

fn validate_desc_file(path: &Path, violations: &mut Vec<Violation>) {
    for_each_line(path, violations, |_, line| {
        let record: taskgen::DescRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return vec![format!("schema: {e}")],
        };
        let mut messages = Vec::new();
        let (i, j) = record.span;
        if i > j {
            messages.push(format!("span ({i},{j}) is inverted"));
        }
        let words = record.target.split_whitespace().count();
        if words < taskgen::MIN_TARGET_WORDS {
            messages.push(format!("target has {words} words (< {})", taskgen::MIN_TARGET_WORDS));
        }
        match record.kind {
            ObjectKind::Algorithm | ObjectKind::Theorem => {
                if let serde_json::Value::String(x) = &record.x {
                    let tokens = x.split_whitespace().count();
                    if !(taskgen::OBJECT_TOKENS_MIN..=taskgen::OBJECT_TOKENS_MAX).contains(&tokens)
                    {
                        messages.push(format!("object payload has {tokens} tokens"));
                    }
                } else {
                    messages.push("x must be a string".into());
                }
            }
            ObjectKind::Table => match &record.x {
                serde_json::Value::String(x) => match postprocess::parse_linear(x) {
                    Ok(grid) => {
                        let cols = grid.first().map(Vec::len).unwrap_or(0);
                        if grid.iter().any(|r| r.len() != cols) {
                            messages.push("table rows have unequal column counts".into());
                        }
                    }
                    Err(e) => messages.push(format!("bad linear table: {e}")),
                },
                _ => messages.push("x must be a string".into()),
            },
            ObjectKind::Figure => {
                if !record.x.is_array() {
                    messages.push("x must be an array of image paths".into());
                }
            }
            _ => messages.push(format!("kind {} cannot yield description samples", record.kind)),
        }
        messages
    });
}

fn validate_para_file(path: &Path, violations: &mut Vec<Violation>) {
    for_each_line(path, violations, |_, line| {
        let sample: taskgen::ParagraphSample = match serde_json::from_str(line) {
            Ok(s) => s,
            Err(e) => return vec![format!("schema: {e}")],
        };
        let mut messages = Vec::new();
        let tokens = sample.target.split_whitespace().count();
        if !(taskgen::INTRO_TOKENS_MIN..=taskgen::INTRO_TOKENS_MAX).contains(&tokens) {
            messages.push(format!("target has {tokens} tokens"));
        }
        if !(0.0..=1.0).contains(&sample.coverage) {
            messages.push(format!("coverage {} outside [0,1]", sample.coverage));
        }
        let mut per_cited: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for passage in &sample.passages {
            per_cited
                .entry(passage.cited_id.as_str())
                .or_default()
                .push(passage.text.split_whitespace().count());
        }
        for (cited, lens) in per_cited {
            if lens.iter().any(|&l| l > taskgen::PASSAGE_WORDS) {
                messages.push(format!("passage of {cited} exceeds {} words", taskgen::PASSAGE_WORDS));
            }
            if lens.len() > 1 {
                if let Some(bad) = lens[..lens.len() - 1].iter().find(|&&l| l != taskgen::PASSAGE_WORDS) {
                    messages.push(format!(
                        "non-final passage of {cited} has {bad} words (expected {})",
                        taskgen::PASSAGE_WORDS
                    ));
                }
            }
        }
        messages
    });
}
