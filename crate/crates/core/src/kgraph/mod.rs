//! Corpus-level knowledge graph built from predicted documents.

mod graph;
mod normalize;

pub use graph::{
    build_edges, build_nodes, canonicalize_with_coref, document_contribution, select_marked, CanonicalMention,
    CountMode, Direction, DocumentContribution, Edge, GraphAccumulator, GraphOptions, KnowledgeGraph, NodeSet,
    RelationInstance,
};
pub use normalize::{build_acronym_table, find_acronyms, fold_plural, normalize_phrase, AcronymTable, CanonicalPhrase};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::labels::RelationType;

/// Builds the graph with per-document work spread over the current rayon
/// pool. The result does not depend on document order or pool size.
pub fn build_graph(docs: &[Document], options: GraphOptions) -> KnowledgeGraph {
    let table = build_acronym_table(docs);
    let acc = docs
        .par_iter()
        .map(|d| {
            let mut acc = GraphAccumulator::default();
            acc.add(document_contribution(d, &table, options.use_coref), options.count_mode);
            acc
        })
        .reduce(GraphAccumulator::default, |mut a, b| {
            a.merge(b);
            a
        });
    KnowledgeGraph::from_accumulator(acc, table, options)
}

/// Publication metadata for one document, from the sidecar file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocMetadata {
    pub doc_key: String,
    pub year: i32,
    #[serde(default)]
    pub venue: String,
}

/// Reads JSON lines of `{"doc_key", "year", "venue"}`.
pub fn load_metadata(path: &Path) -> Result<BTreeMap<String, DocMetadata>> {
    let text = crate::io::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let m: DocMetadata =
            serde_json::from_str(line).map_err(|source| Error::Parse { path: path.to_path_buf(), line: i + 1, source })?;
        out.insert(m.doc_key.clone(), m);
    }
    Ok(out)
}

/// Per year, the share of documents mentioning `task` that also contain a
/// `term --relation--> task` instance. Years without a task document are
/// absent. An unknown term or task yields an empty series.
pub fn trend(
    graph: &KnowledgeGraph,
    term: &str,
    relation: RelationType,
    task: &str,
    metadata: &BTreeMap<String, DocMetadata>,
) -> BTreeMap<i32, f64> {
    let term = normalize_phrase(term, &graph.acronyms).text;
    let task = normalize_phrase(task, &graph.acronyms).text;
    let mut series = BTreeMap::new();
    if !graph.nodes.contains_key(&term) {
        log::warn!("trend: {term:?} is not a graph node");
        return series;
    }
    let Some(task_docs) = graph.node_documents.get(&task) else {
        log::warn!("trend: {task:?} is not a graph node");
        return series;
    };
    let using: BTreeSet<&str> = graph
        .edges
        .iter()
        .filter(|e| e.relation == relation && e.head_tail() == (term.as_str(), task.as_str()))
        .flat_map(|e| e.provenance.iter().map(|(d, _)| d.as_str()))
        .collect();
    let mut per_year: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    for doc in task_docs {
        let Some(meta) = metadata.get(doc) else { continue };
        let entry = per_year.entry(meta.year).or_default();
        entry.1 += 1;
        if using.contains(doc.as_str()) {
            entry.0 += 1;
        }
    }
    for (year, (num, den)) in per_year {
        if den > 0 {
            series.insert(year, num as f64 / den as f64);
        }
    }
    series
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityMention, RelationMention};
    use crate::labels::EntityType;

    /// "a neural network for speech recognition" with the relation present
    /// or absent.
    fn paper(key: &str, uses: bool) -> Document {
        let tokens = if uses {
            "a neural network for speech recognition"
        } else {
            "a hidden markov model for speech recognition"
        };
        let mut d = Document::unannotated(key, vec![tokens.split(' ').map(String::from).collect()]);
        let (m, t) = if uses { (d.span(1, 2).unwrap(), d.span(4, 5).unwrap()) } else { (d.span(1, 3).unwrap(), d.span(5, 6).unwrap()) };
        d.entities = vec![EntityMention { span: m, label: EntityType::Method }, EntityMention { span: t, label: EntityType::Task }];
        d.relations = vec![RelationMention { head: m, tail: t, label: RelationType::UsedFor }];
        d
    }

    fn meta(docs: &[Document], year: i32) -> BTreeMap<String, DocMetadata> {
        docs.iter()
            .map(|d| (d.doc_key.clone(), DocMetadata { doc_key: d.doc_key.clone(), year, venue: "ACL".into() }))
            .collect()
    }

    #[test]
    fn trend_ratio_from_constructed_corpus() {
        let docs: Vec<Document> = (0..100).map(|i| paper(&format!("p{i}"), i < 51)).collect();
        let g = build_graph(&docs, GraphOptions { min_count: 10, ..Default::default() });
        let s = trend(&g, "neural networks", RelationType::UsedFor, "Speech Recognition", &meta(&docs, 2016));
        assert_eq!(s.len(), 1);
        assert!((s[&2016] - 0.51).abs() < 1e-12);
        assert!(trend(&g, "quantum computing", RelationType::UsedFor, "speech recognition", &meta(&docs, 2016)).is_empty());
    }

    #[test]
    fn every_task_paper_uses_the_term() {
        let docs: Vec<Document> = (0..30).map(|i| paper(&format!("p{i}"), true)).collect();
        let mut m = meta(&docs, 2000);
        for (i, d) in docs.iter().enumerate() {
            m.get_mut(&d.doc_key).unwrap().year = 2000 + (i % 3) as i32;
        }
        let g = build_graph(&docs, GraphOptions { min_count: 5, ..Default::default() });
        let s = trend(&g, "neural network", RelationType::UsedFor, "speech recognition", &m);
        assert_eq!(s.into_iter().collect::<Vec<_>>(), vec![(2000, 1.0), (2001, 1.0), (2002, 1.0)]);
    }

    #[test]
    fn metadata_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("meta.jsonl");
        std::fs::write(&p, "{\"doc_key\":\"a\",\"year\":2016,\"venue\":\"ACL\"}\n\n{\"doc_key\":\"b\",\"year\":2001}\n").unwrap();
        let m = load_metadata(&p).unwrap();
        assert_eq!((m["a"].year, m["b"].venue.as_str()), (2016, ""));
        std::fs::write(&p, "{\"doc_key\":\"a\"}\n").unwrap();
        assert!(matches!(load_metadata(&p), Err(Error::Parse { line: 1, .. })));
    }
}
