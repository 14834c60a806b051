//! Dataset derivation: description-generation samples (object content plus
//! preceding body-text context) and paragraph-generation samples (abstract
//! plus 300-word passages from cited papers), with the baseline context
//! selectors and the split filters.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::ObjectKind;
use crate::corpus::{PaperDocument, PaperObject, Payload};
use crate::Warning;

/// Minimum word count of a description target.
pub const MIN_TARGET_WORDS: usize = 30;
/// Inclusive token bounds on algorithm/theorem payloads.
pub const OBJECT_TOKENS_MIN: usize = 200;
pub const OBJECT_TOKENS_MAX: usize = 500;
/// Inclusive token bounds on a paragraph-generation target.
pub const INTRO_TOKENS_MIN: usize = 200;
pub const INTRO_TOKENS_MAX: usize = 1000;
/// Passage length for cited-paper chunking.
pub const PASSAGE_WORDS: usize = 300;

/// Object kinds that yield description samples.
pub const DESCRIPTION_KINDS: [ObjectKind; 4] = [
    ObjectKind::Table,
    ObjectKind::Figure,
    ObjectKind::Algorithm,
    ObjectKind::Theorem,
];

#[derive(Debug, Error)]
pub enum TaskgenError {
    #[error("random selector asked for {k} of {available} context sentences")]
    ContextTooSmall { k: usize, available: usize },
    #[error("figure label file {path}: line {line}: {message}")]
    BadLabelFile {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Context length: the closest `n` sentences, or everything before the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextSize {
    Sentences(usize),
    All,
}

impl FromStr for ContextSize {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "all" => Ok(ContextSize::All),
            n => n
                .parse::<usize>()
                .map(ContextSize::Sentences)
                .map_err(|_| format!("context must be a number or \"inf\", got {s:?}")),
        }
    }
}

/// Baseline context selectors. `Rand` draws `k` distinct indices uniformly
/// without replacement; `Dist { a, b }` takes the a-th through b-th
/// sentences before the target (truncating at the document start).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorMode {
    All,
    Rand { k: usize, seed: u64 },
    Dist { a: usize, b: usize },
}

// ---------------------------------------------------------------------------
// Pinned randomness
// ---------------------------------------------------------------------------
//
// Reproducibility across runs and platforms pins the whole chain: ChaCha20
// seeded with the u64 seed, bounded draws by rejection sampling on
// `next_u64`, k-subsets by partial Fisher-Yates, full splits by a
// descending-index Fisher-Yates shuffle.

fn next_below(rng: &mut ChaCha20Rng, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    // reject the low remainder zone so every residue is equally likely
    let threshold = (u64::MAX - bound + 1) % bound;
    loop {
        let v = rng.next_u64();
        if v >= threshold {
            return v % bound;
        }
    }
}

/// `k` distinct indices from `0..n`, ascending.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + next_below(&mut rng, (n - i) as u64) as usize;
        pool.swap(i, j);
    }
    let mut picked: Vec<usize> = pool[..k].to_vec();
    picked.sort_unstable();
    picked
}

/// Deterministic full shuffle (descending Fisher-Yates).
pub fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = next_below(&mut rng, (i + 1) as u64) as usize;
        items.swap(i, j);
    }
}

/// Seeded uniform split into train/valid/test subsets. Counts are capped by
/// what is available, in that order.
pub fn split_dataset<T>(
    mut items: Vec<T>,
    train: usize,
    valid: usize,
    test: usize,
    seed: u64,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    shuffle(&mut items, seed);
    let take = |items: &mut Vec<T>, n: usize| -> Vec<T> {
        let n = n.min(items.len());
        items.drain(..n).collect()
    };
    let train = take(&mut items, train);
    let valid = take(&mut items, valid);
    let test = take(&mut items, test);
    (train, valid, test)
}

// ---------------------------------------------------------------------------
// Flattened body
// ---------------------------------------------------------------------------

/// The body sentences of one document flattened in order, with paragraph
/// bounds and per-sentence object references. Sentence indices are global
/// over the whole body, so context windows may cross section boundaries.
#[derive(Debug, Clone, Default)]
pub struct FlatBody {
    pub sentences: Vec<String>,
    /// Per paragraph: inclusive (first, last) global sentence index.
    pub paragraph_bounds: Vec<(usize, usize)>,
    /// Per sentence: labels of the objects it refers to.
    pub refs: Vec<Vec<String>>,
}

impl FlatBody {
    pub fn from_doc(doc: &PaperDocument) -> FlatBody {
        let mut flat = FlatBody::default();
        for paragraph in doc.paragraphs() {
            if paragraph.sentences.is_empty() {
                continue;
            }
            let start = flat.sentences.len();
            for (local, sentence) in paragraph.sentences.iter().enumerate() {
                flat.sentences.push(sentence.clone());
                let labels = paragraph
                    .object_refs
                    .iter()
                    .filter(|(idx, _)| *idx == local)
                    .map(|(_, label)| label.clone())
                    .collect();
                flat.refs.push(labels);
            }
            flat.paragraph_bounds
                .push((start, flat.sentences.len() - 1));
        }
        flat
    }

    fn paragraph_of(&self, sentence: usize) -> Option<(usize, usize)> {
        self.paragraph_bounds
            .iter()
            .copied()
            .find(|&(s, e)| sentence >= s && sentence <= e)
    }
}

// ---------------------------------------------------------------------------
// Target location
// ---------------------------------------------------------------------------

/// Finds the description span of an object: `i` is the first sentence that
/// refers to it, `j` extends to the end of that paragraph or stops just
/// before the first later sentence that refers exclusively to *other*
/// objects. Unlabeled or never-referenced objects have no target. Captions
/// are not body sentences and can never be targets.
pub fn locate_description_target(
    doc: &PaperDocument,
    object: &PaperObject,
) -> Option<(usize, usize)> {
    locate_in_flat(&FlatBody::from_doc(doc), object).map(|(span, _)| span)
}

/// Span plus a dual-reference flag (some sentence inside the span referred
/// to both the target and another object).
pub fn locate_in_flat(flat: &FlatBody, object: &PaperObject) -> Option<((usize, usize), bool)> {
    let label = object.label.as_ref()?;
    let i = (0..flat.sentences.len()).find(|&s| flat.refs[s].iter().any(|l| l == label))?;
    let (_, para_end) = flat.paragraph_of(i)?;
    let mut j = para_end;
    let mut dual = flat.refs[i].iter().any(|l| l != label);
    for k in i + 1..=para_end {
        let refs = &flat.refs[k];
        if refs.is_empty() {
            continue;
        }
        if refs.iter().all(|l| l != label) {
            j = k - 1;
            break;
        }
        if refs.iter().any(|l| l != label) {
            dual = true;
        }
    }
    Some(((i, j), dual))
}

/// Sentences `max(0, i - n) .. i - 1`, the whole prefix for
/// [`ContextSize::All`].
pub fn build_context(flat: &FlatBody, i: usize, n: ContextSize) -> Vec<String> {
    let start = match n {
        ContextSize::All => 0,
        ContextSize::Sentences(n) => i.saturating_sub(n),
    };
    flat.sentences[start..i].to_vec()
}

/// Applies a baseline selector over the full context `c_{0,i-1}`.
pub fn baseline_select(
    context_all: &[String],
    i: usize,
    mode: SelectorMode,
) -> Result<Vec<String>, TaskgenError> {
    match mode {
        SelectorMode::All => Ok(context_all.to_vec()),
        SelectorMode::Rand { k, seed } => {
            if k > context_all.len() {
                return Err(TaskgenError::ContextTooSmall {
                    k,
                    available: context_all.len(),
                });
            }
            Ok(sample_indices(context_all.len(), k, seed)
                .into_iter()
                .map(|idx| context_all[idx].clone())
                .collect())
        }
        SelectorMode::Dist { a, b } => {
            debug_assert!(a <= b && a >= 1);
            if i < a {
                return Ok(Vec::new());
            }
            let lo = i.saturating_sub(b);
            let hi = (i - a).min(context_all.len().saturating_sub(1));
            Ok(context_all[lo..=hi].to_vec())
        }
    }
}

// ---------------------------------------------------------------------------
// Description samples
// ---------------------------------------------------------------------------

/// One derived description-generation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptionSample {
    pub object_id: String,
    pub paper_id: String,
    pub object_label: Option<String>,
    pub kind: ObjectKind,
    pub x: Payload,
    pub target: String,
    pub target_span: (usize, usize),
    pub context_all: Vec<String>,
    pub context_window: Vec<String>,
}

/// Wire form of a description sample: `context` carries whichever selection
/// the run used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescRecord {
    pub object_id: String,
    pub kind: ObjectKind,
    pub x: serde_json::Value,
    pub context: Vec<String>,
    pub target: String,
    pub span: (usize, usize),
}

impl DescriptionSample {
    pub fn to_record(&self, context: Vec<String>) -> DescRecord {
        let x = match &self.x {
            Payload::Table(t) => serde_json::Value::String(t.linear.clone()),
            Payload::Figure(f) => serde_json::Value::Array(
                f.image_paths
                    .iter()
                    .map(|p| serde_json::Value::String(p.clone()))
                    .collect(),
            ),
            Payload::Text(t) => serde_json::Value::String(t.clone()),
        };
        DescRecord {
            object_id: self.object_id.clone(),
            kind: self.kind,
            x,
            context,
            target: self.target.clone(),
            span: self.target_span,
        }
    }

    /// Whitespace token count of the object content.
    pub fn x_tokens(&self) -> usize {
        match &self.x {
            Payload::Table(t) => t.linear.split_whitespace().count(),
            Payload::Figure(f) => f.image_paths.len(),
            Payload::Text(t) => t.split_whitespace().count(),
        }
    }
}

/// External chart/bar labels for figures, keyed by (paper_id, figure_label).
/// Figures absent from the file are excluded from the description task.
#[derive(Debug, Clone, Default)]
pub struct FigureLabels {
    entries: BTreeMap<(String, String), bool>,
}

#[derive(Deserialize)]
struct FigureLabelRecord {
    paper_id: String,
    figure_label: String,
    chart_or_bar: bool,
}

impl FigureLabels {
    pub fn empty() -> FigureLabels {
        FigureLabels::default()
    }

    pub fn load(path: &Path) -> Result<FigureLabels, TaskgenError> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: FigureLabelRecord =
                serde_json::from_str(line).map_err(|e| TaskgenError::BadLabelFile {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            entries.insert(
                (record.paper_id, record.figure_label),
                record.chart_or_bar,
            );
        }
        Ok(FigureLabels { entries })
    }

    pub fn is_chart_or_bar(&self, paper_id: &str, figure_label: &str) -> bool {
        self.entries
            .get(&(paper_id.to_string(), figure_label.to_string()))
            .copied()
            .unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleReject {
    TargetTooShort,
    ObjectTooShort,
    ObjectTooLong,
    UnequalColumns,
    FigureNotChart,
}

impl SampleReject {
    pub fn as_str(&self) -> &'static str {
        match self {
            SampleReject::TargetTooShort => "target_too_short",
            SampleReject::ObjectTooShort => "object_too_short",
            SampleReject::ObjectTooLong => "object_too_long",
            SampleReject::UnequalColumns => "unequal_columns",
            SampleReject::FigureNotChart => "figure_not_chart",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleDecision {
    Keep,
    Reject(SampleReject),
}

/// The split filters: targets under 30 words are dropped; algorithm and
/// theorem payloads must hold 200..=500 tokens; tables need an equal column
/// count in every row; figures must be chart/bar per the external label
/// file (absent entries are excluded).
pub fn filter_description_sample(
    sample: &DescriptionSample,
    figure_labels: &FigureLabels,
) -> SampleDecision {
    if sample.target.split_whitespace().count() < MIN_TARGET_WORDS {
        return SampleDecision::Reject(SampleReject::TargetTooShort);
    }
    match sample.kind {
        ObjectKind::Algorithm | ObjectKind::Theorem => {
            let tokens = sample.x_tokens();
            if tokens < OBJECT_TOKENS_MIN {
                return SampleDecision::Reject(SampleReject::ObjectTooShort);
            }
            if tokens > OBJECT_TOKENS_MAX {
                return SampleDecision::Reject(SampleReject::ObjectTooLong);
            }
        }
        ObjectKind::Table => {
            let ok = sample
                .x
                .as_table()
                .map(|t| t.equal_columns && t.n_rows > 0)
                .unwrap_or(false);
            if !ok {
                return SampleDecision::Reject(SampleReject::UnequalColumns);
            }
        }
        ObjectKind::Figure => {
            let chart = sample
                .object_label
                .as_ref()
                .is_some_and(|l| figure_labels.is_chart_or_bar(&sample.paper_id, l));
            if !chart {
                return SampleDecision::Reject(SampleReject::FigureNotChart);
            }
        }
        _ => {}
    }
    SampleDecision::Keep
}

/// Derives all description samples of one document. Objects outside the
/// four task kinds, without content, or never referenced in the body are
/// skipped; located samples failing the split filters land in the reject
/// list with their reason.
#[allow(clippy::type_complexity)]
pub fn derive_description_samples(
    doc: &PaperDocument,
    context: ContextSize,
    figure_labels: &FigureLabels,
) -> (
    Vec<DescriptionSample>,
    Vec<(String, SampleReject)>,
    Vec<Warning>,
) {
    let flat = FlatBody::from_doc(doc);
    let mut samples = Vec::new();
    let mut rejects = Vec::new();
    let mut warnings = Vec::new();

    for (idx, object) in doc.objects.iter().enumerate() {
        if !DESCRIPTION_KINDS.contains(&object.kind) || !object.has_content {
            continue;
        }
        let Some(((i, j), dual)) = locate_in_flat(&flat, object) else {
            continue;
        };
        let object_id = format!("{}#o{}", doc.paper_id, idx);
        if dual {
            warnings.push(Warning::new(
                "taskgen",
                format!("{object_id}: dual-reference sentence inside the target span"),
            ));
        }
        let target = flat.sentences[i..=j].join(" ");
        let sample = DescriptionSample {
            object_id: object_id.clone(),
            paper_id: doc.paper_id.clone(),
            object_label: object.label.clone(),
            kind: object.kind,
            x: object.payload.clone(),
            target,
            target_span: (i, j),
            context_all: build_context(&flat, i, ContextSize::All),
            context_window: build_context(&flat, i, context),
        };
        match filter_description_sample(&sample, figure_labels) {
            SampleDecision::Keep => samples.push(sample),
            SampleDecision::Reject(reason) => rejects.push((object_id, reason)),
        }
    }
    (samples, rejects, warnings)
}

// ---------------------------------------------------------------------------
// Paragraph samples
// ---------------------------------------------------------------------------

/// A 300-word chunk of one cited paper's body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub cited_id: String,
    pub text: String,
}

/// One paragraph-generation sample: abstract in, introduction out, with
/// passages from whichever introduction-cited papers have full text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParagraphSample {
    pub paper_id: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub passages: Vec<Passage>,
    pub target: String,
    pub coverage: f64,
}

/// Splits a word sequence into consecutive passages of exactly
/// [`PASSAGE_WORDS`] words; the final passage keeps the remainder.
/// Concatenating the passages reproduces the word sequence.
pub fn chunk_passages(words: &[&str]) -> Vec<String> {
    words
        .chunks(PASSAGE_WORDS)
        .map(|chunk| chunk.join(" "))
        .collect()
}

fn find_introduction(doc: &PaperDocument) -> Option<&crate::parse::SectionNode> {
    fn walk(node: &crate::parse::SectionNode) -> Option<&crate::parse::SectionNode> {
        if node.level >= 1 && node.title.trim().eq_ignore_ascii_case("introduction") {
            return Some(node);
        }
        node.children.iter().find_map(walk)
    }
    doc.sections.iter().find_map(walk)
}

fn section_sentences(node: &crate::parse::SectionNode) -> Vec<&String> {
    let mut out: Vec<&String> = Vec::new();
    fn walk<'a>(node: &'a crate::parse::SectionNode, out: &mut Vec<&'a String>) {
        for p in &node.paragraphs {
            out.extend(p.sentences.iter());
        }
        for c in &node.children {
            walk(c, out);
        }
    }
    walk(node, &mut out);
    out
}

fn section_cite_keys(node: &crate::parse::SectionNode) -> Vec<String> {
    let mut keys = Vec::new();
    fn walk(node: &crate::parse::SectionNode, keys: &mut Vec<String>) {
        for p in &node.paragraphs {
            for (_, key) in &p.cite_marks {
                if !keys.contains(key) {
                    keys.push(key.clone());
                }
            }
        }
        for c in &node.children {
            walk(c, keys);
        }
    }
    walk(node, &mut keys);
    keys
}

/// Derives the paragraph sample of one document (zero or one): requires an
/// "Introduction" section whose text holds 200..=1000 tokens. Each cited
/// paper with full text contributes its body chunked into 300-word
/// passages, objects ignored; `coverage` is the fraction of distinct
/// introduction citations with full text available.
pub fn derive_paragraph_samples(
    doc: &PaperDocument,
    cited_docs: &BTreeMap<String, &PaperDocument>,
) -> Vec<ParagraphSample> {
    let Some(intro) = find_introduction(doc) else {
        return Vec::new();
    };
    let sentences = section_sentences(intro);
    let target = sentences
        .iter()
        .map(|s| s.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let tokens = target.split_whitespace().count();
    if !(INTRO_TOKENS_MIN..=INTRO_TOKENS_MAX).contains(&tokens) {
        return Vec::new();
    }

    let keys = section_cite_keys(intro);
    let mut passages = Vec::new();
    let mut available = 0usize;
    for key in &keys {
        let Some(link) = doc.links.iter().find(|l| &l.entry_key == key) else {
            continue;
        };
        let crate::bibres::LinkedId::Id(id) = &link.linked_id else {
            continue;
        };
        let Some(cited) = cited_docs.get(id) else {
            continue;
        };
        available += 1;
        let body = cited
            .body_sentences()
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let words: Vec<&str> = body.split_whitespace().collect();
        for text in chunk_passages(&words) {
            passages.push(Passage {
                cited_id: id.clone(),
                text,
            });
        }
    }
    let coverage = if keys.is_empty() {
        0.0
    } else {
        available as f64 / keys.len() as f64
    };
    vec![ParagraphSample {
        paper_id: doc.paper_id.clone(),
        abstract_text: doc.abstract_text.clone(),
        passages,
        target,
        coverage,
    }]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Metadata;
    use crate::parse::{Paragraph, SectionNode};
    use crate::postprocess::LinearTable;

    fn sentence(n: usize) -> String {
        format!("Sentence number {n} carries some words.")
    }

    /// One section holding `paragraphs`, each a list of (text, refs).
    fn mk_doc(paragraphs: Vec<Vec<(String, Vec<&str>)>>) -> PaperDocument {
        let section = SectionNode {
            title: "Body".into(),
            level: 1,
            paragraphs: paragraphs
                .into_iter()
                .map(|sents| Paragraph {
                    sentences: sents.iter().map(|(t, _)| t.clone()).collect(),
                    object_refs: sents
                        .iter()
                        .enumerate()
                        .flat_map(|(i, (_, refs))| {
                            refs.iter().map(move |r| (i, r.to_string()))
                        })
                        .collect(),
                    cite_marks: Vec::new(),
                })
                .collect(),
            children: Vec::new(),
        };
        let root = SectionNode {
            title: String::new(),
            level: 0,
            paragraphs: Vec::new(),
            children: vec![section],
        };
        let mut doc = PaperDocument {
            paper_id: "p".into(),
            metadata: Metadata::default(),
            abstract_text: String::new(),
            sections: vec![root],
            objects: Vec::new(),
            bib: Vec::new(),
            links: Vec::new(),
            word_count: 0,
            similar_papers: Vec::new(),
            code_links: Vec::new(),
        };
        doc.word_count = doc.count_words();
        doc
    }

    fn table_object(label: &str) -> PaperObject {
        PaperObject {
            kind: ObjectKind::Table,
            label: Some(label.to_string()),
            caption: None,
            payload: Payload::Table(LinearTable {
                grid: vec![vec!["a".into(), "b".into()]],
                linear: "<table> <row> <cell> a <cell> b".into(),
                equal_columns: true,
                n_rows: 1,
                n_cols: 2,
            }),
            has_content: true,
            env_name: "table".into(),
        }
    }

    fn numbered_doc(total: usize) -> PaperDocument {
        mk_doc(vec![(0..total).map(|n| (sentence(n), vec![])).collect()])
    }

    #[test]
    fn context_window_arithmetic() {
        let doc = numbered_doc(40);
        let flat = FlatBody::from_doc(&doc);
        let ctx = build_context(&flat, 25, ContextSize::Sentences(20));
        assert_eq!(ctx.len(), 20);
        assert_eq!(ctx[0], sentence(5));
        assert_eq!(ctx[19], sentence(24));
    }

    #[test]
    fn context_truncates_at_start() {
        let doc = numbered_doc(40);
        let flat = FlatBody::from_doc(&doc);
        let ctx = build_context(&flat, 10, ContextSize::Sentences(20));
        assert_eq!(ctx.len(), 10);
        assert_eq!(ctx[0], sentence(0));
    }

    #[test]
    fn context_all_is_whole_prefix() {
        let doc = numbered_doc(40);
        let flat = FlatBody::from_doc(&doc);
        let ctx = build_context(&flat, 17, ContextSize::All);
        assert_eq!(ctx.len(), 17);
    }

    #[test]
    fn dist_selector_exact_indices() {
        let doc = numbered_doc(40);
        let flat = FlatBody::from_doc(&doc);
        let i = 30;
        let context = build_context(&flat, i, ContextSize::All);
        let picked = baseline_select(&context, i, SelectorMode::Dist { a: 11, b: 20 }).unwrap();
        assert_eq!(picked.len(), 10);
        assert_eq!(picked[0], sentence(10));
        assert_eq!(picked[9], sentence(19));
    }

    #[test]
    fn dist_selector_truncates() {
        let doc = numbered_doc(40);
        let flat = FlatBody::from_doc(&doc);
        let i = 15;
        let context = build_context(&flat, i, ContextSize::All);
        let picked = baseline_select(&context, i, SelectorMode::Dist { a: 11, b: 20 }).unwrap();
        assert_eq!(picked.len(), 5);
        assert_eq!(picked[0], sentence(0));
        assert_eq!(picked[4], sentence(4));
    }

    #[test]
    fn dist_selector_empty_when_too_close() {
        let context: Vec<String> = (0..5).map(sentence).collect();
        let picked = baseline_select(&context, 5, SelectorMode::Dist { a: 11, b: 20 }).unwrap();
        assert!(picked.is_empty());
    }

    #[test]
    fn rand_selector_reproducible_and_sorted() {
        let context: Vec<String> = (0..50).map(sentence).collect();
        let a = baseline_select(&context, 50, SelectorMode::Rand { k: 10, seed: 7 }).unwrap();
        let b = baseline_select(&context, 50, SelectorMode::Rand { k: 10, seed: 7 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        let mut seen = std::collections::BTreeSet::new();
        for s in &a {
            assert!(seen.insert(s.clone()), "duplicate selection {s}");
        }
    }

    #[test]
    fn rand_selector_pinned_stream() {
        // freezes the generator: any change to the sampling chain must show up
        assert_eq!(sample_indices(30, 5, 0), vec![1, 17, 20, 22, 26]);
        assert_eq!(sample_indices(30, 5, 1), vec![8, 11, 12, 14, 28]);
    }

    #[test]
    fn rand_selector_rejects_small_context() {
        let context: Vec<String> = (0..5).map(sentence).collect();
        let err = baseline_select(&context, 5, SelectorMode::Rand { k: 10, seed: 0 });
        assert!(matches!(err, Err(TaskgenError::ContextTooSmall { .. })));
    }

    #[test]
    fn dist_disjoint_from_closest_ten() {
        let doc = numbered_doc(60);
        let flat = FlatBody::from_doc(&doc);
        let i = 30;
        let context = build_context(&flat, i, ContextSize::All);
        let dist = baseline_select(&context, i, SelectorMode::Dist { a: 11, b: 20 }).unwrap();
        let closest = build_context(&flat, i, ContextSize::Sentences(10));
        for s in &dist {
            assert!(!closest.contains(s));
        }
    }

    #[test]
    fn locate_unreferenced_is_none() {
        let doc = numbered_doc(10);
        assert_eq!(
            locate_description_target(&doc, &table_object("tab:x")),
            None
        );
    }

    #[test]
    fn locate_final_sentence_span() {
        // reference in the paragraph's last sentence: span (i, i)
        let doc = mk_doc(vec![
            vec![(sentence(0), vec![]), (sentence(1), vec!["tab:x"])],
            vec![(sentence(2), vec![])],
        ]);
        assert_eq!(
            locate_description_target(&doc, &table_object("tab:x")),
            Some((1, 1))
        );
    }

    #[test]
    fn locate_stops_before_other_object() {
        // paragraph spans sentences 5..=8, ref at 5, other object at 7
        let doc = mk_doc(vec![
            vec![
                (sentence(0), vec![]),
                (sentence(1), vec![]),
                (sentence(2), vec![]),
                (sentence(3), vec![]),
                (sentence(4), vec![]),
            ],
            vec![
                (sentence(5), vec!["tab:x"]),
                (sentence(6), vec![]),
                (sentence(7), vec!["fig:y"]),
                (sentence(8), vec![]),
            ],
        ]);
        assert_eq!(
            locate_description_target(&doc, &table_object("tab:x")),
            Some((5, 6))
        );
    }

    #[test]
    fn locate_runs_to_paragraph_end() {
        let doc = mk_doc(vec![vec![
            (sentence(0), vec!["tab:x"]),
            (sentence(1), vec![]),
            (sentence(2), vec![]),
        ]]);
        assert_eq!(
            locate_description_target(&doc, &table_object("tab:x")),
            Some((0, 2))
        );
    }

    #[test]
    fn locate_dual_reference_does_not_terminate() {
        let doc = mk_doc(vec![vec![
            (sentence(0), vec!["tab:x"]),
            (sentence(1), vec!["tab:x", "fig:y"]),
            (sentence(2), vec![]),
        ]]);
        let flat = FlatBody::from_doc(&doc);
        let ((i, j), dual) = locate_in_flat(&flat, &table_object("tab:x")).unwrap();
        assert_eq!((i, j), (0, 2));
        assert!(dual);
    }

    #[test]
    fn locate_uses_first_reference() {
        let doc = mk_doc(vec![
        	vec![(sentence(0), vec!["tab:x"])],
        	vec![(sentence(1), vec!["tab:x"])],
        ]);
        assert_eq!(
            locate_description_target(&doc, &table_object("tab:x")),
            Some((0, 0))
        );
    }

    fn sample_with(kind: ObjectKind, x: Payload, target_words: usize) -> DescriptionSample {
        DescriptionSample {
            object_id: "p#o0".into(),
            paper_id: "p".into(),
            object_label: Some("lbl".into()),
            kind,
            x,
            target: vec!["word"; target_words].join(" "),
            target_span: (0, 0),
            context_all: Vec::new(),
            context_window: Vec::new(),
        }
    }

    fn text_payload(tokens: usize) -> Payload {
        Payload::Text(vec!["tok"; tokens].join(" "))
    }

    #[test]
    fn filter_target_word_boundary() {
        let labels = FigureLabels::empty();
        let s29 = sample_with(ObjectKind::Theorem, text_payload(300), 29);
        let s30 = sample_with(ObjectKind::Theorem, text_payload(300), 30);
        assert_eq!(
            filter_description_sample(&s29, &labels),
            SampleDecision::Reject(SampleReject::TargetTooShort)
        );
        assert_eq!(filter_description_sample(&s30, &labels), SampleDecision::Keep);
    }

    #[test]
    fn filter_object_token_boundaries() {
        let labels = FigureLabels::empty();
        let cases = [
            (199, SampleDecision::Reject(SampleReject::ObjectTooShort)),
            (200, SampleDecision::Keep),
            (500, SampleDecision::Keep),
            (501, SampleDecision::Reject(SampleReject::ObjectTooLong)),
        ];
        for (tokens, expected) in cases {
            let s = sample_with(ObjectKind::Algorithm, text_payload(tokens), 40);
            assert_eq!(filter_description_sample(&s, &labels), expected, "{tokens} tokens");
        }
    }

    #[test]
    fn filter_table_columns() {
        let labels = FigureLabels::empty();
        let ragged = LinearTable {
            grid: vec![vec!["a".into(), "b".into()], vec!["c".into()]],
            linear: String::new(),
            equal_columns: false,
            n_rows: 2,
            n_cols: 2,
        };
        let s = sample_with(ObjectKind::Table, Payload::Table(ragged), 40);
        assert_eq!(
            filter_description_sample(&s, &labels),
            SampleDecision::Reject(SampleReject::UnequalColumns)
        );
        let rect = table_object("t").payload;
        let s = sample_with(ObjectKind::Table, rect, 40);
        assert_eq!(filter_description_sample(&s, &labels), SampleDecision::Keep);
    }

    #[test]
    fn filter_figure_needs_chart_label() {
        let mut labels = FigureLabels::empty();
        labels
            .entries
            .insert(("p".into(), "lbl".into()), true);
        let fig = Payload::Figure(crate::postprocess::FigurePayload {
            image_paths: vec!["a.png".into()],
            caption: None,
        });
        let s = sample_with(ObjectKind::Figure, fig.clone(), 40);
        assert_eq!(filter_description_sample(&s, &labels), SampleDecision::Keep);

        labels.entries.insert(("p".into(), "lbl".into()), false);
        assert_eq!(
            filter_description_sample(&s, &labels),
            SampleDecision::Reject(SampleReject::FigureNotChart)
        );

        labels.entries.clear();
        assert_eq!(
            filter_description_sample(&s, &labels),
            SampleDecision::Reject(SampleReject::FigureNotChart)
        );
    }

    #[test]
    fn chunking_examples() {
        let words: Vec<String> = (0..900).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let chunks = chunk_passages(&refs);
        assert_eq!(chunks.len(), 3);
        assert!(chunks.iter().all(|c| c.split_whitespace().count() == 300));

        let words: Vec<String> = (0..650).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let chunks = chunk_passages(&refs);
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks[2].split_whitespace().count(), 50);
    }

    #[test]
    fn chunking_is_a_partition() {
        let words: Vec<String> = (0..712).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let rejoined: Vec<String> = chunk_passages(&refs)
            .iter()
            .flat_map(|c| c.split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .collect();
        assert_eq!(rejoined, words);
    }

    fn doc_with_intro(intro_sentences: usize, cite_key: Option<&str>) -> PaperDocument {
        let mut paragraph = Paragraph {
            sentences: (0..intro_sentences).map(sentence).collect(),
            object_refs: Vec::new(),
            cite_marks: Vec::new(),
        };
        if let Some(key) = cite_key {
            paragraph.cite_marks.push((0, key.to_string()));
        }
        let intro = SectionNode {
            title: "Introduction".into(),
            level: 1,
            paragraphs: vec![paragraph],
            children: Vec::new(),
        };
        let root = SectionNode {
            title: String::new(),
            level: 0,
            paragraphs: Vec::new(),
            children: vec![intro],
        };
        let mut doc = PaperDocument {
            paper_id: "p".into(),
            metadata: Metadata::default(),
            abstract_text: "The abstract.".into(),
            sections: vec![root],
            objects: Vec::new(),
            bib: Vec::new(),
            links: Vec::new(),
            word_count: 0,
            similar_papers: Vec::new(),
            code_links: Vec::new(),
        };
        doc.word_count = doc.count_words();
        doc
    }

    #[test]
    fn paragraph_sample_requires_introduction() {
        let doc = numbered_doc(100);
        assert!(derive_paragraph_samples(&doc, &BTreeMap::new()).is_empty());
    }

    #[test]
    fn paragraph_sample_intro_length_bounds() {
        // each sentence is 6 words; 25 sentences = 150 tokens -> too short
        let doc = doc_with_intro(25, None);
        assert!(derive_paragraph_samples(&doc, &BTreeMap::new()).is_empty());
        // 40 sentences = 240 tokens -> kept
        let doc = doc_with_intro(40, None);
        let samples = derive_paragraph_samples(&doc, &BTreeMap::new());
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].coverage, 0.0);
        assert!(samples[0].passages.is_empty());
    }

    #[test]
    fn paragraph_sample_with_cited_passages() {
        let mut doc = doc_with_intro(40, Some("k1"));
        doc.links.push(crate::bibres::ResolutionResult {
            entry_key: "k1".into(),
            linked_id: crate::bibres::LinkedId::Id("cited1".into()),
            distance: Some(0.0),
            candidates_considered: 1,
            title_only: false,
        });
        let cited = numbered_doc(120); // 120 sentences x 6 words = 720 words
        let mut cited_docs = BTreeMap::new();
        cited_docs.insert("cited1".to_string(), &cited);
        let samples = derive_paragraph_samples(&doc, &cited_docs);
        assert_eq!(samples.len(), 1);
        let s = &samples[0];
        assert_eq!(s.coverage, 1.0);
        assert_eq!(s.passages.len(), 3); // 300 + 300 + 120
        assert!(s.passages.iter().all(|p| p.cited_id == "cited1"));
        assert_eq!(s.passages[2].text.split_whitespace().count(), 120);
        // partition: passages rebuild the cited body word sequence
        let rebuilt: Vec<&str> = s
            .passages
            .iter()
            .flat_map(|p| p.text.split_whitespace())
            .collect();
        let body = cited
            .body_sentences()
            .iter()
            .map(|x| x.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let original: Vec<&str> = body.split_whitespace().collect();
        assert_eq!(rebuilt, original);
    }

    #[test]
    fn split_dataset_deterministic() {
        let items: Vec<usize> = (0..100).collect();
        let (a1, b1, c1) = split_dataset(items.clone(), 60, 20, 20, 42);
        let (a2, b2, c2) = split_dataset(items, 60, 20, 20, 42);
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_eq!(c1, c2);
        assert_eq!((a1.len(), b1.len(), c1.len()), (60, 20, 20));
        let mut all: Vec<usize> = a1.into_iter().chain(b1).chain(c1).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn context_size_parsing() {
        assert_eq!("20".parse::<ContextSize>(), Ok(ContextSize::Sentences(20)));
        assert_eq!("inf".parse::<ContextSize>(), Ok(ContextSize::All));
        assert!("x".parse::<ContextSize>().is_err());
    }
}
