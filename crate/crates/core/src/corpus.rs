//! Document data model, the JSON-lines corpus format and gold target
//! derivation.
//!
//! Token indices are document-level and end-inclusive everywhere. A record
//! stores its annotations grouped per sentence:
//!
//! ```text
//! {"doc_key":"D1","sentences":[["a","b"]],"ner":[[[0,1,"Method"]]],"relations":[[]],"clusters":[]}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError};
use crate::labels::{EntityType, RelationType};
use crate::spanspace::SpanSpace;

/// A contiguous within-sentence token range, `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub sentence: usize,
}

impl Span {
    pub fn new(start: usize, end: usize, sentence: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end, sentence }
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn key(&self) -> (usize, usize) {
        (self.start, self.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityMention {
    pub span: Span,
    pub label: EntityType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationMention {
    pub head: Span,
    pub tail: Span,
    pub label: RelationType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_key: String,
    pub sentences: Vec<Vec<String>>,
    pub entities: Vec<EntityMention>,
    pub relations: Vec<RelationMention>,
    pub clusters: Vec<Vec<Span>>,
}

impl Document {
    pub fn unannotated(doc_key: impl Into<String>, sentences: Vec<Vec<String>>) -> Self {
        Document {
            doc_key: doc_key.into(),
            sentences,
            entities: Vec::new(),
            relations: Vec::new(),
            clusters: Vec::new(),
        }
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// Half-open document-level token range of every sentence.
    pub fn sentence_bounds(&self) -> Vec<(usize, usize)> {
        let mut offset = 0;
        self.sentences
            .iter()
            .map(|s| {
                let b = (offset, offset + s.len());
                offset += s.len();
                b
            })
            .collect()
    }

    /// Builds a span for `start..=end`, or `None` if the range is empty,
    /// out of bounds, or crosses a sentence boundary.
    pub fn span(&self, start: usize, end: usize) -> Option<Span> {
        if start > end {
            return None;
        }
        let bounds = self.sentence_bounds();
        bounds
            .iter()
            .position(|&(lo, hi)| start >= lo && start < hi)
            .filter(|&s| end < bounds[s].1)
            .map(|s| Span::new(start, end, s))
    }

    pub fn tokens(&self) -> Vec<&str> {
        self.sentences.iter().flatten().map(String::as_str).collect()
    }

    /// Surface string of a span, tokens joined by single spaces.
    pub fn span_text(&self, span: Span) -> String {
        let tokens = self.tokens();
        tokens[span.start..=span.end].join(" ")
    }

    /// Checks the data-model invariants.
    pub fn validate(&self) -> std::result::Result<(), ValidationError> {
        let bounds = self.sentence_bounds();
        let n = self.num_tokens();
        let check = |span: &Span, what: &str| -> std::result::Result<(), ValidationError> {
            if span.start > span.end || span.end >= n {
                return Err(ValidationError::doc(
                    &self.doc_key,
                    format!("{what} {span} out of range for {n} tokens"),
                ));
            }
            let (lo, hi) = bounds.get(span.sentence).copied().unwrap_or((0, 0));
            if span.start < lo || span.end >= hi {
                return Err(ValidationError::doc(
                    &self.doc_key,
                    format!("{what} {span} is not inside sentence {}", span.sentence),
                ));
            }
            Ok(())
        };
        for e in &self.entities {
            check(&e.span, "entity")?;
        }
        for r in &self.relations {
            check(&r.head, "relation head")?;
            check(&r.tail, "relation tail")?;
            if r.head.sentence != r.tail.sentence {
                return Err(ValidationError::doc(
                    &self.doc_key,
                    format!("relation {} -> {} crosses sentences", r.head, r.tail),
                ));
            }
        }
        let mut seen = HashSet::new();
        for cluster in &self.clusters {
            let mut local = HashSet::new();
            for span in cluster {
                check(span, "cluster mention")?;
                if !local.insert(span.key()) {
                    return Err(ValidationError::doc(
                        &self.doc_key,
                        format!("mention {span} repeated within a cluster"),
                    ));
                }
                if !seen.insert(span.key()) {
                    return Err(ValidationError::doc(
                        &self.doc_key,
                        format!("mention {span} belongs to more than one cluster"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// `[start, end, label]`
type NerRow = (usize, usize, String);
/// `[head start, head end, tail start, tail end, label]`
type RelationRow = (usize, usize, usize, usize, String);

/// On-disk record layout.
#[derive(Debug, Serialize, Deserialize)]
struct Record {
    doc_key: String,
    sentences: Vec<Vec<String>>,
    #[serde(default)]
    ner: Vec<Vec<NerRow>>,
    #[serde(default)]
    relations: Vec<Vec<RelationRow>>,
    #[serde(default)]
    clusters: Vec<Vec<(usize, usize)>>,
}

impl Record {
    fn into_document(self) -> std::result::Result<Document, ValidationError> {
        let mut doc = Document::unannotated(self.doc_key, self.sentences);
        let bounds = doc.sentence_bounds();
        let n = doc.num_tokens();
        let key = doc.doc_key.clone();
        if self.ner.len() > bounds.len() || self.relations.len() > bounds.len() {
            return Err(ValidationError::doc(&key, "more annotation groups than sentences"));
        }
        let in_sentence = |start: usize, end: usize, s: usize| -> std::result::Result<Span, ValidationError> {
            if start > end || end >= n {
                return Err(ValidationError::doc(
                    &key,
                    format!("span [{start}, {end}] out of range for {n} tokens"),
                ));
            }
            let (lo, hi) = bounds[s];
            if start < lo || end >= hi {
                return Err(ValidationError::doc(
                    &key,
                    format!("span [{start}, {end}] crosses the boundary of sentence {s}"),
                ));
            }
            Ok(Span::new(start, end, s))
        };
        for (s, group) in self.ner.into_iter().enumerate() {
            for (start, end, label) in group {
                let span = in_sentence(start, end, s)?;
                doc.entities.push(EntityMention { span, label: label.parse()? });
            }
        }
        for (s, group) in self.relations.into_iter().enumerate() {
            for (s1, e1, s2, e2, label) in group {
                let head = in_sentence(s1, e1, s)?;
                let tail = in_sentence(s2, e2, s)?;
                doc.relations.push(RelationMention { head, tail, label: label.parse()? });
            }
        }
        for cluster in self.clusters {
            let mut spans = Vec::with_capacity(cluster.len());
            for (start, end) in cluster {
                let span = doc.span(start, end).ok_or_else(|| {
                    ValidationError::doc(
                        &key,
                        format!("cluster mention [{start}, {end}] is out of range or crosses sentences"),
                    )
                })?;
                spans.push(span);
            }
            doc.clusters.push(spans);
        }
        doc.validate()?;
        Ok(doc)
    }

    fn from_document(doc: &Document) -> Record {
        let ns = doc.sentences.len();
        let mut ner = vec![Vec::new(); ns];
        for e in &doc.entities {
            ner[e.span.sentence].push((e.span.start, e.span.end, e.label.as_str().to_string()));
        }
        let mut relations = vec![Vec::new(); ns];
        for r in &doc.relations {
            relations[r.head.sentence].push((
                r.head.start,
                r.head.end,
                r.tail.start,
                r.tail.end,
                r.label.as_str().to_string(),
            ));
        }
        Record {
            doc_key: doc.doc_key.clone(),
            sentences: doc.sentences.clone(),
            ner,
            relations,
            clusters: doc
                .clusters
                .iter()
                .map(|c| c.iter().map(|s| (s.start, s.end)).collect())
                .collect(),
        }
    }
}

/// Parses newline-delimited records; `path` is used only in diagnostics.
pub fn parse_documents(text: &str, path: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line)
            .map_err(|source| Error::Parse { path: path.to_path_buf(), line: i + 1, source })?;
        docs.push(record.into_document()?);
    }
    Ok(docs)
}

pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    let text = crate::io::read_to_string(path)?;
    parse_documents(&text, path)
}

/// Canonical serialization: one compact JSON object per line.
pub fn documents_to_jsonl(docs: &[Document]) -> String {
    let mut out = String::new();
    for doc in docs {
        out.push_str(&serde_json::to_string(&Record::from_document(doc)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_documents(path: &Path, docs: &[Document]) -> Result<()> {
    crate::io::write_atomic(path, documents_to_jsonl(docs).as_bytes())
}

/// Gold targets projected onto an enumerated span space.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldAssignment {
    /// Per span position; `None` is the null type.
    pub entity_target: Vec<Option<EntityType>>,
    /// Ordered span-position pairs with a non-null gold relation.
    pub relation_target: HashMap<(usize, usize), RelationType>,
    /// Per span position, the earlier enumerated positions in the same gold
    /// cluster. An empty list means the only correct antecedent is null.
    pub antecedent_sets: Vec<Vec<usize>>,
    /// Gold cluster id per span position.
    pub cluster_of: Vec<Option<usize>>,
    /// Distinct gold spans wider than the enumeration width cap.
    pub dropped: Vec<Span>,
}

impl GoldAssignment {
    pub fn dropped_count(&self) -> usize {
        self.dropped.len()
    }

    pub fn relation(&self, head: usize, tail: usize) -> Option<RelationType> {
        self.relation_target.get(&(head, tail)).copied()
    }
}

/// Aligns gold annotations with `space` by exact `(start, end)` match.
pub fn derive_gold(doc: &Document, space: &SpanSpace) -> std::result::Result<GoldAssignment, ValidationError> {
    let n = space.len();
    let mut dropped = BTreeMap::new();
    let mut note_dropped = |span: Span| {
        dropped.insert(span.key(), span);
    };

    let mut entity_target = vec![None; n];
    for e in &doc.entities {
        match space.position(e.span.start, e.span.end) {
            Some(i) => match entity_target[i] {
                Some(prev) if prev != e.label => {
                    return Err(ValidationError::doc(
                        &doc.doc_key,
                        format!("span {} labelled both {prev} and {}", e.span, e.label),
                    ))
                }
                _ => entity_target[i] = Some(e.label),
            },
            None => note_dropped(e.span),
        }
    }

    let mut relation_target = HashMap::new();
    for r in &doc.relations {
        let head = space.position(r.head.start, r.head.end);
        let tail = space.position(r.tail.start, r.tail.end);
        match (head, tail) {
            (Some(h), Some(t)) => {
                if let Some(prev) = relation_target.insert((h, t), r.label) {
                    if prev != r.label {
                        return Err(ValidationError::doc(
                            &doc.doc_key,
                            format!("pair {} -> {} labelled both {prev} and {}", r.head, r.tail, r.label),
                        ));
                    }
                }
            }
            _ => {
                if head.is_none() {
                    note_dropped(r.head);
                }
                if tail.is_none() {
                    note_dropped(r.tail);
                }
            }
        }
    }

    let mut cluster_of = vec![None; n];
    let mut antecedent_sets = vec![Vec::new(); n];
    for (c, cluster) in doc.clusters.iter().enumerate() {
        let mut members: Vec<usize> = Vec::with_capacity(cluster.len());
        for span in cluster {
            match space.position(span.start, span.end) {
                Some(i) => members.push(i),
                None => note_dropped(*span),
            }
        }
        members.sort_unstable();
        for (k, &i) in members.iter().enumerate() {
            cluster_of[i] = Some(c);
            antecedent_sets[i] = members[..k].to_vec();
        }
    }

    Ok(GoldAssignment {
        entity_target,
        relation_target,
        antecedent_sets,
        cluster_of,
        dropped: dropped.into_values().collect(),
    })
}

/// Corpus-level annotation counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub entities: usize,
    pub relations: usize,
    pub relations_per_doc: f64,
    pub coref_links: usize,
    pub clusters: usize,
    /// Set when the corpus is empty and `relations_per_doc` is a placeholder 0.
    pub empty: bool,
}

pub fn corpus_stats(docs: &[Document]) -> CorpusStats {
    let entities = docs.iter().map(|d| d.entities.len()).sum();
    let relations: usize = docs.iter().map(|d| d.relations.len()).sum();
    let clusters = docs.iter().map(|d| d.clusters.len()).sum();
    let coref_links = docs
        .iter()
        .flat_map(|d| &d.clusters)
        .map(|c| c.len().saturating_sub(1))
        .sum();
    let empty = docs.is_empty();
    CorpusStats {
        documents: docs.len(),
        entities,
        relations,
        relations_per_doc: if empty { 0.0 } else { relations as f64 / docs.len() as f64 },
        coref_links,
        clusters,
        empty,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spanspace::enumerate_spans;

    fn parse(text: &str) -> Result<Vec<Document>> {
        parse_documents(text, Path::new("test.jsonl"))
    }

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn empty_file_yields_no_documents() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn single_entity_record() {
        let docs = parse(r#"{"doc_key":"d","sentences":[["a","b","c"]],"ner":[[[0,1,"Method"]]]}"#).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].entities.len(), 1);
        assert_eq!(docs[0].entities[0].span.width(), 2);
        assert_eq!(docs[0].entities[0].label, EntityType::Method);
    }

    #[test]
    fn cross_sentence_relation_is_rejected() {
        let err = parse(
            r#"{"doc_key":"d","sentences":[["a","b"],["c"]],"relations":[[[0,0,2,2,"Used-for"]]]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(ValidationError::Document { ref doc_key, .. }) if doc_key == "d"));
    }

    #[test]
    fn malformed_record_names_line() {
        let err = parse("{\"doc_key\":\"a\",\"sentences\":[]}\n{oops").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_label_rejected() {
        let err = parse(r#"{"doc_key":"d","sentences":[["a"]],"ner":[[[0,0,"Person"]]]}"#).unwrap_err();
        assert!(matches!(err, Error::Validation(ValidationError::UnknownLabel(_))));
    }

    #[test]
    fn out_of_range_and_shared_mentions_rejected() {
        assert!(parse(r#"{"doc_key":"d","sentences":[["a"]],"ner":[[[0,3,"Task"]]]}"#).is_err());
        assert!(parse(r#"{"doc_key":"d","sentences":[["a","b"]],"clusters":[[[0,0],[1,1]],[[0,0],[1,1]]]}"#).is_err());
        assert!(parse(r#"{"doc_key":"d","sentences":[["a","b"]],"clusters":[[[0,0],[0,0]]]}"#).is_err());
        assert!(parse(r#"{"doc_key":"d","sentences":[["a"],["b"]],"clusters":[[[0,1]]]}"#).is_err());
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let text = concat!(
            r#"{"doc_key":"d1","sentences":[["a","b","c"],["d","e"]],"ner":[[[0,1,"Method"],[2,2,"Task"]],[[3,4,"Generic"]]],"relations":[[[0,1,2,2,"Used-for"]],[]],"clusters":[[[0,1],[3,4]]]}"#,
            "\n",
            r#"{"doc_key":"d2","sentences":[["x"]],"ner":[[]],"relations":[[]],"clusters":[]}"#,
            "\n"
        );
        let docs = parse(text).unwrap();
        assert_eq!(documents_to_jsonl(&docs), text);
    }

    #[test]
    fn derive_gold_without_annotations() {
        let doc = Document::unannotated("d", vec![toks(&["a", "b", "c"])]);
        let space = enumerate_spans(&doc, 8).unwrap();
        let gold = derive_gold(&doc, &space).unwrap();
        assert!(gold.entity_target.iter().all(Option::is_none));
        assert!(gold.antecedent_sets.iter().all(Vec::is_empty));
        assert!(gold.relation_target.is_empty());
        assert_eq!(gold.dropped_count(), 0);
    }

    #[test]
    fn derive_gold_antecedents_follow_cluster_order() {
        let mut doc = Document::unannotated("d", vec![toks(&["a", "b", "c", "d"])]);
        let a = doc.span(0, 0).unwrap();
        let b = doc.span(1, 2).unwrap();
        let c = doc.span(3, 3).unwrap();
        doc.clusters.push(vec![c, a, b]);
        let space = enumerate_spans(&doc, 8).unwrap();
        let gold = derive_gold(&doc, &space).unwrap();
        let (pa, pb, pc) = (
            space.position(0, 0).unwrap(),
            space.position(1, 2).unwrap(),
            space.position(3, 3).unwrap(),
        );
        // Oracle: antecedents of a mention are the cluster members that come
        // before it in canonical span order.
        let cluster = [pa, pb, pc];
        for &m in &cluster {
            let mut expected: Vec<usize> = cluster.iter().copied().filter(|&o| o < m).collect();
            expected.sort_unstable();
            assert_eq!(gold.antecedent_sets[m], expected);
        }
        assert_eq!(gold.antecedent_sets[pb], vec![pa]);
        assert_eq!(gold.antecedent_sets[pc], vec![pa, pb]);
        assert!(gold.antecedent_sets[pa].is_empty());
    }

    #[test]
    fn derive_gold_drops_wide_spans() {
        let words: Vec<&str> = vec!["w"; 10];
        let mut doc = Document::unannotated("d", vec![toks(&words)]);
        doc.entities.push(EntityMention { span: doc.span(0, 8).unwrap(), label: EntityType::Task });
        let space = enumerate_spans(&doc, 8).unwrap();
        let gold = derive_gold(&doc, &space).unwrap();
        assert_eq!(gold.dropped_count(), 1);
        assert!(gold.entity_target.iter().all(Option::is_none));
    }

    #[test]
    fn derive_gold_rejects_conflicting_types() {
        let mut doc = Document::unannotated("d", vec![toks(&["a", "b"])]);
        let s = doc.span(0, 1).unwrap();
        doc.entities.push(EntityMention { span: s, label: EntityType::Task });
        doc.entities.push(EntityMention { span: s, label: EntityType::Method });
        let space = enumerate_spans(&doc, 8).unwrap();
        assert!(derive_gold(&doc, &space).is_err());
    }

    #[test]
    fn stats_table_one_ratio() {
        let mut docs: Vec<Document> =
            (0..500).map(|i| Document::unannotated(format!("d{i}"), vec![toks(&["a", "b"])])).collect();
        let a = docs[0].span(0, 0).unwrap();
        let b = docs[0].span(1, 1).unwrap();
        for i in 0..4716 {
            let d = &mut docs[i % 500];
            d.relations.push(RelationMention { head: a, tail: b, label: RelationType::UsedFor });
        }
        let stats = corpus_stats(&docs);
        assert_eq!(stats.relations, 4716);
        assert!((stats.relations_per_doc - 9.432).abs() < 1e-12);
        assert_eq!(format!("{:.1}", stats.relations_per_doc), "9.4");
    }

    #[test]
    fn stats_cluster_links() {
        let mut doc = Document::unannotated("d", vec![toks(&["a", "b", "c"])]);
        doc.clusters.push(vec![doc.span(0, 0).unwrap(), doc.span(1, 1).unwrap(), doc.span(2, 2).unwrap()]);
        let stats = corpus_stats(&[doc]);
        assert_eq!((stats.coref_links, stats.clusters), (2, 1));
        let empty = corpus_stats(&[]);
        assert!(empty.empty);
        assert_eq!((empty.entities, empty.relations, empty.relations_per_doc), (0, 0, 0.0));
    }
}
