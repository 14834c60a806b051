//! Bibliography parsing and reference resolution: extract the entity fields
//! of each entry and link it to an external full-text record via normalized
//! edit distance over titles, confirmed by author matching. Entries with no
//! surviving candidate get the `-1` sentinel.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::classify::TaggerError;
use crate::Warning;

/// Default normalized-distance threshold for title matching.
pub const DEFAULT_TITLE_THRESHOLD: f64 = 0.15;

/// The entity inventory of a bibliography entry.
pub const ENTITY_FIELDS: &[&str] = &[
    "note", "volume", "date", "title", "journal", "publisher", "tech", "institution", "pages",
    "location", "booktitle", "editor", "author",
];

#[derive(Debug, Error)]
pub enum BibError {
    #[error("metadata db {path}: line {line}: {message}")]
    BadRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error("metadata db {path}: duplicate id {id:?}")]
    DuplicateId { path: String, id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One bibliography item: its key, raw text, and extracted entity fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BibEntry {
    pub key: String,
    pub raw: String,
    pub fields: BTreeMap<String, String>,
}

/// One record of the external full-text metadata database.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub id: String,
    pub title: String,
    pub authors: Vec<String>,
}

/// A resolved link, or the `-1` sentinel when no candidate survived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkedId {
    Id(String),
    Unlinked,
}

impl LinkedId {
    pub fn is_linked(&self) -> bool {
        matches!(self, LinkedId::Id(_))
    }
}

impl Serialize for LinkedId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            LinkedId::Id(id) => serializer.serialize_str(id),
            LinkedId::Unlinked => serializer.serialize_i64(-1),
        }
    }
}

impl<'de> Deserialize<'de> for LinkedId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Str(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Str(s) => Ok(LinkedId::Id(s)),
            Repr::Int(-1) => Ok(LinkedId::Unlinked),
            Repr::Int(other) => Err(D::Error::custom(format!(
                "link id must be a string or -1, got {other}"
            ))),
        }
    }
}

/// Resolution outcome for one bibliography entry. `linked_id` is `-1` iff
/// `distance` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionResult {
    #[serde(rename = "key")]
    pub entry_key: String,
    #[serde(rename = "id_or_-1")]
    pub linked_id: LinkedId,
    pub distance: Option<f64>,
    #[serde(skip)]
    pub candidates_considered: usize,
    /// Set when the entry had no extracted authors and the link rests on the
    /// title alone.
    #[serde(skip)]
    pub title_only: bool,
}

impl ResolutionResult {
    pub fn unlinked(key: &str, candidates_considered: usize) -> Self {
        ResolutionResult {
            entry_key: key.to_string(),
            linked_id: LinkedId::Unlinked,
            distance: None,
            candidates_considered,
            title_only: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Entry parsing
// ---------------------------------------------------------------------------

static RE_BIB_ENTRY_HEAD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"@([a-zA-Z]+)\s*\{\s*([^,\s}]+)\s*,").unwrap());
static RE_BIBITEM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\\bibitem\s*(?:\[[^\]]*\])?\s*\{([^}]*)\}").unwrap());

/// Parses a `.bib` (`@type{key, field = {...}, ...}`) or `.bbl`
/// (`\bibitem{key} ...`) file into entries. `.bib` field syntax populates
/// the entity fields directly; `.bbl` items keep only the raw text, which
/// [`extract_fields`] mines later. Malformed items are skipped with a
/// warning; an empty file yields an empty list.
pub fn parse_bib_entries(text: &str) -> (Vec<BibEntry>, Vec<Warning>) {
    if RE_BIBITEM.is_match(text) || text.contains("\\begin{thebibliography}") {
        parse_bbl(text)
    } else if text.contains('@') {
        parse_bib(text)
    } else {
        (Vec::new(), Vec::new())
    }
}

fn parse_bbl(text: &str) -> (Vec<BibEntry>, Vec<Warning>) {
    let mut entries = Vec::new();
    let matches: Vec<_> = RE_BIBITEM.captures_iter(text).collect();
    for (idx, cap) in matches.iter().enumerate() {
        let whole = cap.get(0).unwrap();
        let key = cap[1].trim().to_string();
        let start = whole.end();
        let end = matches
            .get(idx + 1)
            .map(|next| next.get(0).unwrap().start())
            .unwrap_or_else(|| {
                text.find("\\end{thebibliography}")
                    .filter(|&p| p > start)
                    .unwrap_or(text.len())
            });
        let raw = crate::scan::collapse_ws(&text[start..end]);
        entries.push(BibEntry {
            key,
            raw,
            fields: BTreeMap::new(),
        });
    }
    (entries, Vec::new())
}

fn parse_bib(text: &str) -> (Vec<BibEntry>, Vec<Warning>) {
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for cap in RE_BIB_ENTRY_HEAD.captures_iter(text) {
        let whole = cap.get(0).unwrap();
        let entry_type = cap[1].to_lowercase();
        if entry_type == "comment" || entry_type == "preamble" || entry_type == "string" {
            continue;
        }
        let key = cap[2].to_string();
        // body runs to the brace matching the opening `{`
        let open = text[whole.start()..].find('{').unwrap() + whole.start();
        let Some(end) = crate::scan::group_end(text, open) else {
            warnings.push(Warning::new(
                "bibres",
                format!("unclosed entry {key:?}; skipped"),
            ));
            continue;
        };
        let body = &text[whole.end()..end - 1];
        let mut fields = BTreeMap::new();
        for (name, value) in parse_bib_fields(body) {
            if let Some(canonical) = canonical_field(&name) {
                fields.insert(canonical.to_string(), value);
            }
        }
        entries.push(BibEntry {
            key,
            raw: crate::scan::collapse_ws(body),
            fields,
        });
    }
    (entries, warnings)
}

/// `.bib` field names mapped onto the entity inventory.
fn canonical_field(name: &str) -> Option<&'static str> {
    let lowered = name.to_lowercase();
    match lowered.as_str() {
        "year" => Some("date"),
        "address" => Some("location"),
        "school" => Some("institution"),
        other => ENTITY_FIELDS.iter().find(|f| **f == other).copied(),
    }
}

fn parse_bib_fields(body: &str) -> Vec<(String, String)> {
    let bytes = body.as_bytes();
    let mut fields = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        // field name
        let name_start = crate::scan::skip_ws(bytes, i);
        let mut j = name_start;
        while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_' || bytes[j] == b'-') {
            j += 1;
        }
        if j == name_start {
            i = name_start + 1;
            continue;
        }
        let name = body[name_start..j].to_string();
        let eq = crate::scan::skip_ws(bytes, j);
        if bytes.get(eq) != Some(&b'=') {
            i = j + 1;
            continue;
        }
        let vstart = crate::scan::skip_ws(bytes, eq + 1);
        let (value, after) = match bytes.get(vstart) {
            Some(&b'{') => match crate::scan::group_content(body, vstart) {
                Some((v, end)) => (v.to_string(), end),
                None => break,
            },
            Some(&b'"') => {
                let mut k = vstart + 1;
                while k < bytes.len() && bytes[k] != b'"' {
                    k += 1;
                }
                (body[vstart + 1..k].to_string(), (k + 1).min(bytes.len()))
            }
            Some(_) => {
                let mut k = vstart;
                while k < bytes.len() && bytes[k] != b',' {
                    k += 1;
                }
                (body[vstart..k].trim().to_string(), k)
            }
            None => break,
        };
        fields.push((name, crate::scan::collapse_ws(&value)));
        // skip to next comma
        let mut k = after;
        while k < bytes.len() && bytes[k] != b',' {
            k += 1;
        }
        i = k + 1;
    }
    fields
}

// ---------------------------------------------------------------------------
// Field extraction
// ---------------------------------------------------------------------------

/// External span tagger for bibliography fields: returns byte spans into the
/// raw entry text, one per entity it recognizes.
pub trait FieldTagger {
    fn extract(&mut self, raw: &str) -> Result<BTreeMap<String, (usize, usize)>, TaggerError>;
}

static RE_YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(19|20)\d{2}\b").unwrap());
static RE_PAGES: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:pp\.|pages)\s*(\d+\s*(?:--?|–|—)\s*\d+)").unwrap());
static RE_VOLUME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:vol\.|volume)\s*(\d+)").unwrap());

/// Fills the entity fields of an entry. With a tagger, its spans are
/// validated against the raw text and adopted verbatim; without one, rule
/// heuristics apply: the leading name list before the first hard period is
/// the author, the following span the title, plus year/pages/volume
/// patterns. Fields stay empty when no rule fires.
pub fn extract_fields(mut entry: BibEntry, tagger: Option<&mut dyn FieldTagger>) -> BibEntry {
    if entry.raw.is_empty() {
        return entry;
    }
    if let Some(tagger) = tagger {
        if let Ok(spans) = tagger.extract(&entry.raw) {
            for (name, (start, end)) in spans {
                let valid = start <= end
                    && end <= entry.raw.len()
                    && entry.raw.is_char_boundary(start)
                    && entry.raw.is_char_boundary(end)
                    && ENTITY_FIELDS.contains(&name.as_str());
                if valid {
                    entry
                        .fields
                        .insert(name, entry.raw[start..end].to_string());
                }
            }
            return entry;
        }
        // tagger failure falls through to the heuristics
    }

    let raw = entry.raw.clone();
    let segments = split_hard_periods(&raw);
    if segments.len() >= 2 {
        let author = segments[0].trim().trim_end_matches('.').trim();
        if looks_like_name_list(author) {
            entry
                .fields
                .entry("author".to_string())
                .or_insert_with(|| author.to_string());
            let title = segments[1]
                .trim()
                .trim_end_matches('.')
                .trim_matches(|c| c == '"' || c == '\u{201c}' || c == '\u{201d}' || c == '`' || c == '\'')
                .trim();
            if !title.is_empty() {
                entry
                    .fields
                    .entry("title".to_string())
                    .or_insert_with(|| title.to_string());
            }
        }
    }
    if let Some(m) = RE_YEAR.find(&raw) {
        entry
            .fields
            .entry("date".to_string())
            .or_insert_with(|| m.as_str().to_string());
    }
    if let Some(c) = RE_PAGES.captures(&raw.to_lowercase()) {
        entry
            .fields
            .entry("pages".to_string())
            .or_insert_with(|| c[1].split_whitespace().collect::<String>());
    }
    if let Some(c) = RE_VOLUME.captures(&raw.to_lowercase()) {
        entry
            .fields
            .entry("volume".to_string())
            .or_insert_with(|| c[1].to_string());
    }
    entry
}

/// Splits on periods that end a segment: a `.` not attached to a single
/// uppercase initial ("J.") or a known short abbreviation.
fn split_hard_periods(raw: &str) -> Vec<String> {
    let mut segments = Vec::new();
    let mut start = 0usize;
    let bytes = raw.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b != b'.' {
            continue;
        }
        let word_start = raw[..i]
            .rfind(|c: char| c.is_whitespace())
            .map(|p| p + 1)
            .unwrap_or(0);
        let word = &raw[word_start..i];
        let is_initial = word.chars().count() == 1
            && word.chars().next().is_some_and(|c| c.is_uppercase());
        let is_abbrev = matches!(
            word.to_lowercase().as_str(),
            "proc" | "conf" | "int" | "intl" | "trans" | "vol" | "pp" | "no" | "eds" | "ed" | "jr"
        );
        if !is_initial && !is_abbrev {
            segments.push(raw[start..=i].to_string());
            start = i + 1;
        }
    }
    if start < raw.len() && !raw[start..].trim().is_empty() {
        segments.push(raw[start..].to_string());
    }
    segments
}

fn looks_like_name_list(candidate: &str) -> bool {
    if candidate.is_empty() || candidate.len() > 200 {
        return false;
    }
    candidate
        .chars()
        .all(|c| c.is_alphabetic() || c.is_whitespace() || matches!(c, '.' | ',' | '-' | '\''))
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

/// Lowercases, folds diacritics, replaces punctuation with spaces, and
/// collapses whitespace.
pub fn normalize_title(title: &str) -> String {
    let folded: String = title.chars().flat_map(fold_char).collect();
    let spaced: String = folded
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    crate::scan::collapse_ws(&spaced)
}

/// ASCII-folds a lowercase character (diacritics dropped, ligatures split).
fn fold_char(c: char) -> impl Iterator<Item = char> {
    let lowered = c.to_lowercase().next().unwrap_or(c);
    let folded: &str = match lowered {
        'à' | 'á' | 'â' | 'ã' | 'ä' | 'å' | 'ā' | 'ă' | 'ą' => "a",
        'ç' | 'ć' | 'č' | 'ĉ' => "c",
        'è' | 'é' | 'ê' | 'ë' | 'ē' | 'ĕ' | 'ė' | 'ę' | 'ě' => "e",
        'ì' | 'í' | 'î' | 'ï' | 'ĩ' | 'ī' | 'ĭ' => "i",
        'ñ' | 'ń' | 'ň' | 'ņ' => "n",
        'ò' | 'ó' | 'ô' | 'õ' | 'ö' | 'ø' | 'ō' | 'ŏ' | 'ő' => "o",
        'ù' | 'ú' | 'û' | 'ü' | 'ũ' | 'ū' | 'ŭ' | 'ů' | 'ű' | 'ų' => "u",
        'ý' | 'ÿ' => "y",
        'ž' | 'ź' | 'ż' => "z",
        'š' | 'ś' | 'ş' | 'ŝ' => "s",
        'ğ' | 'ģ' | 'ĝ' => "g",
        'ť' | 'ţ' => "t",
        'ď' | 'đ' => "d",
        'ł' | 'ľ' | 'ĺ' => "l",
        'ř' | 'ŕ' => "r",
        'ß' => "ss",
        'æ' => "ae",
        'œ' => "oe",
        _ => return Folded::Single(lowered),
    };
    Folded::Str(folded.chars())
}

enum Folded {
    Single(char),
    Str(std::str::Chars<'static>),
}

impl Iterator for Folded {
    type Item = char;
    fn next(&mut self) -> Option<char> {
        match self {
            Folded::Single(c) => {
                let c = *c;
                *self = Folded::Str("".chars());
                Some(c)
            }
            Folded::Str(chars) => chars.next(),
        }
    }
}

/// Sound Levenshtein lower bound for ASCII strings: the bag (multiset)
/// distance. `None` when either string holds non-ASCII characters.
fn ascii_bag_lower_bound(a: &str, b: &str) -> Option<usize> {
    if !a.is_ascii() || !b.is_ascii() {
        return None;
    }
    let mut counts = [0i32; 128];
    for &byte in a.as_bytes() {
        counts[byte as usize] += 1;
    }
    for &byte in b.as_bytes() {
        counts[byte as usize] -= 1;
    }
    let surplus: i32 = counts.iter().filter(|c| **c > 0).sum();
    let deficit: i32 = -counts.iter().filter(|c| **c < 0).sum::<i32>();
    Some(surplus.max(deficit) as usize)
}

/// Character-level Levenshtein distance, two-row implementation.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut current: Vec<usize> = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        current[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            current[j + 1] = (current[j] + 1).min(prev[j + 1] + 1).min(prev[j] + cost);
        }
        std::mem::swap(&mut prev, &mut current);
    }
    prev[b.len()]
}

/// Normalized title distance in [0, 1]: Levenshtein over normalized titles
/// divided by the longer normalized length. Symmetric; zero iff the
/// normalized titles are equal.
pub fn title_distance(a: &str, b: &str) -> f64 {
    let na = normalize_title(a);
    let nb = normalize_title(b);
    let max_len = na.chars().count().max(nb.chars().count());
    if max_len == 0 {
        return 0.0;
    }
    levenshtein(&na, &nb) as f64 / max_len as f64
}

/// All records within `threshold` of `title`, ascending by distance; ties
/// keep database order.
pub fn match_title<'a>(
    title: &str,
    db: &'a [MetadataRecord],
    threshold: f64,
) -> Vec<(&'a MetadataRecord, f64)> {
    let query = normalize_title(title);
    let query_len = query.chars().count();
    let mut hits: Vec<(&MetadataRecord, f64)> = db
        .iter()
        .filter_map(|record| {
            let candidate = normalize_title(&record.title);
            let max_len = query_len.max(candidate.chars().count());
            if max_len == 0 {
                return Some((record, 0.0));
            }
            // cheap lower bound first: a candidate whose bag distance
            // already exceeds the threshold cannot pass the exact test
            if let Some(bound) = ascii_bag_lower_bound(&query, &candidate) {
                if bound as f64 / max_len as f64 > threshold {
                    return None;
                }
            }
            let d = levenshtein(&query, &candidate) as f64 / max_len as f64;
            (d <= threshold).then_some((record, d))
        })
        .collect();
    hits.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    hits
}

/// A person name split for comparison: normalized given tokens + surname.
#[derive(Debug, Clone, PartialEq, Eq)]
struct PersonName {
    given: Vec<String>,
    surname: String,
}

/// Parses "First M. Last" or "Last, First M." after normalization
/// (lowercase, diacritics and hyphens dropped, periods stripped).
fn parse_person(name: &str) -> Option<PersonName> {
    let normalized: String = name
        .chars()
        .flat_map(fold_char)
        .map(|c| if c == '-' { ' ' } else { c })
        .collect();
    let (surname_part, given_part) = match normalized.split_once(',') {
        Some((last, first)) => (last.to_string(), first.to_string()),
        None => {
            let tokens: Vec<&str> = normalized.split_whitespace().collect();
            match tokens.split_last() {
                Some((last, rest)) => (last.to_string(), rest.join(" ")),
                None => return None,
            }
        }
    };
    let clean = |s: &str| -> Vec<String> {
        s.split_whitespace()
            .map(|t| t.trim_matches('.').to_string())
            .filter(|t| !t.is_empty())
            .collect()
    };
    let surname = clean(&surname_part).join(" ");
    if surname.is_empty() {
        return None;
    }
    Some(PersonName {
        given: clean(&given_part),
        surname,
    })
}

fn persons_match(a: &PersonName, b: &PersonName) -> bool {
    if a.surname != b.surname {
        return false;
    }
    if a.given == b.given {
        return true;
    }
    // abbreviation vs full name: each shared given token must be a prefix of
    // its counterpart ("j" ~ "john"); extra tokens of the longer form are
    // allowed ("a doe" ~ "alice b doe")
    let shared = a.given.len().min(b.given.len());
    (0..shared).all(|k| {
        let (s, l) = (&a.given[k], &b.given[k]);
        s.starts_with(l.as_str()) || l.starts_with(s.as_str())
    })
}

fn is_et_al(name: &str) -> bool {
    let lowered = name.to_lowercase();
    let t = lowered.trim();
    t == "et al" || t == "et al." || t == "others"
}

/// Splits an author field into person names. Handles BibTeX " and "
/// separators; a comma inside one part is the "Last, First" form unless
/// several commas make it a plain list.
pub fn split_authors(value: &str) -> Vec<String> {
    let mut names = Vec::new();
    for part in value.split(" and ") {
        let commas = part.matches(',').count();
        if commas >= 2 {
            names.extend(part.split(',').map(str::trim).map(str::to_string));
        } else {
            names.push(part.trim().to_string());
        }
    }
    names
        .into_iter()
        .filter(|n| !n.is_empty() && !is_et_al(n))
        .collect()
}

/// True iff at least one entry author matches one record author, where names
/// match on equal normalized strings or on equal surnames with initial-
/// compatible given names.
pub fn match_authors(entry_authors: &[String], record_authors: &[String]) -> bool {
    let parse_all = |names: &[String]| -> Vec<PersonName> {
        names.iter().filter_map(|n| parse_person(n)).collect()
    };
    let entry = parse_all(entry_authors);
    let record = parse_all(record_authors);
    entry
        .iter()
        .any(|a| record.iter().any(|b| persons_match(a, b)))
}

// ---------------------------------------------------------------------------
// Resolution
// ---------------------------------------------------------------------------

/// Links one entry against the database: title candidates within the
/// threshold, filtered by author matching when the entry has authors, lowest
/// distance wins (ties by database order). No survivor records the `-1`
/// sentinel. Entries without a title are immediately unlinked.
pub fn resolve(entry: &BibEntry, db: &[MetadataRecord], threshold: f64) -> ResolutionResult {
    let Some(title) = entry.fields.get("title").filter(|t| !t.trim().is_empty()) else {
        return ResolutionResult::unlinked(&entry.key, 0);
    };
    let candidates = match_title(title, db, threshold);
    let considered = candidates.len();
    let entry_authors: Vec<String> = entry
        .fields
        .get("author")
        .map(|a| split_authors(a))
        .unwrap_or_default();
    let title_only = entry_authors.is_empty();

    let winner = candidates.into_iter().find(|(record, _)| {
        title_only || match_authors(&entry_authors, &record.authors)
    });
    match winner {
        Some((record, distance)) => ResolutionResult {
            entry_key: entry.key.clone(),
            linked_id: LinkedId::Id(record.id.clone()),
            distance: Some(distance),
            candidates_considered: considered,
            title_only,
        },
        None => ResolutionResult::unlinked(&entry.key, considered),
    }
}

/// Loads the JSON-lines metadata database, enforcing unique ids and
/// non-empty titles.
pub fn load_metadata_db(path: &Path) -> Result<Vec<MetadataRecord>, BibError> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: MetadataRecord =
            serde_json::from_str(line).map_err(|e| BibError::BadRecord {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        if record.title.trim().is_empty() {
            return Err(BibError::BadRecord {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("record {:?} has an empty title", record.id),
            });
        }
        if !seen.insert(record.id.clone()) {
            return Err(BibError::DuplicateId {
                path: path.display().to_string(),
                id: record.id,
            });
        }
        records.push(record);
    }
    Ok(records)
}
