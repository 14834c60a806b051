//! Shared helpers for the integration and acceptance suites.
#![allow(dead_code)] // each test target uses its own subset

use std::path::PathBuf;

use texstruct::bibres::{self, MetadataRecord};
use texstruct::classify::AliasTable;
use texstruct::corpus::{self, PaperDocument};
use texstruct::ingest::SourceBundle;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Assembles every paper of the fixture corpus, sorted by paper id.
pub fn load_fixture_corpus() -> Vec<PaperDocument> {
    let root = fixtures_dir().join("corpus");
    let aliases = AliasTable::builtin();
    let mut ids: Vec<String> = std::fs::read_dir(&root)
        .expect("fixture corpus dir")
        .flatten()
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    ids.sort();
    ids.iter()
        .map(|id| {
            let mut bundle =
                SourceBundle::from_dir(id, &root.join(id)).expect("bundle");
            let (doc, _) = corpus::assemble(&mut bundle, &aliases, None).expect("assemble");
            doc
        })
        .collect()
}

pub fn load_fixture_db() -> Vec<MetadataRecord> {
    bibres::load_metadata_db(&fixtures_dir().join("db.jsonl")).expect("db")
}

/// Fills the links of each document against the fixture database.
pub fn link_corpus(docs: &mut [PaperDocument], threshold: f64) {
    let db = load_fixture_db();
    for doc in docs {
        doc.links = doc
            .bib
            .iter()
            .map(|entry| bibres::resolve(entry, &db, threshold))
            .collect();
    }
}
