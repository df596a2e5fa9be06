use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Span};
use crate::labels::{EntityType, RelationType};

use super::normalize::{normalize_phrase, AcronymTable, CanonicalPhrase};

/// A predicted entity mention with its canonical phrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalMention {
    pub span: Span,
    pub phrase: CanonicalPhrase,
    pub label: EntityType,
}

/// Phrases for every predicted entity mention. Within a cluster, all
/// entity mentions take the phrase of the longest non-Generic entity
/// member (ties to the lexicographically smallest); clusters with only
/// Generic members are left alone. Cluster spans without an entity type
/// do not take part.
pub fn canonicalize_with_coref(doc: &Document, table: &AcronymTable) -> Vec<CanonicalMention> {
    let mut mentions: Vec<CanonicalMention> = doc
        .entities
        .iter()
        .map(|e| CanonicalMention { span: e.span, phrase: normalize_phrase(&doc.span_text(e.span), table), label: e.label })
        .collect();
    let position: HashMap<Span, usize> = mentions.iter().enumerate().map(|(i, m)| (m.span, i)).collect();
    for cluster in &doc.clusters {
        let members: Vec<usize> = cluster.iter().filter_map(|s| position.get(s).copied()).collect();
        let representative = members
            .iter()
            .map(|&i| &mentions[i])
            .filter(|m| m.label != EntityType::Generic)
            .min_by(|a, b| {
                let (x, y) = (&a.phrase.text, &b.phrase.text);
                y.chars().count().cmp(&x.chars().count()).then_with(|| x.cmp(y))
            })
            .map(|m| m.phrase.clone());
        if let Some(rep) = representative {
            for &i in &members {
                mentions[i].phrase = rep.clone();
            }
        }
    }
    mentions
}

/// Whether relation directions are counted separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Head is the lexicographically smaller phrase (always used for
    /// symmetric types).
    Forward,
    /// Head is the larger phrase.
    Reverse,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        }
    }
}

/// What a node frequency counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    /// Every mention.
    #[default]
    Mention,
    /// At most once per document.
    Document,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphOptions {
    /// Nodes need a frequency strictly greater than this.
    pub min_count: usize,
    pub count_mode: CountMode,
    /// Replace phrases inside coreference clusters.
    pub use_coref: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions { min_count: 10, count_mode: CountMode::Mention, use_coref: true }
    }
}

/// One relation instance between two phrases.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationInstance {
    pub head: String,
    pub tail: String,
    pub label: RelationType,
    pub doc_key: String,
    pub sentence: usize,
}

/// Per-document phrase and relation occurrences; the map step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DocumentContribution {
    pub doc_key: String,
    pub phrases: Vec<String>,
    pub relations: Vec<RelationInstance>,
}

pub fn document_contribution(doc: &Document, table: &AcronymTable, use_coref: bool) -> DocumentContribution {
    let mentions = if use_coref {
        canonicalize_with_coref(doc, table)
    } else {
        let no_clusters = Document { clusters: Vec::new(), ..doc.clone() };
        canonicalize_with_coref(&no_clusters, table)
    };
    let by_span: HashMap<Span, &str> = mentions.iter().map(|m| (m.span, m.phrase.text.as_str())).collect();
    let phrase_of = |s: Span| by_span.get(&s).map_or_else(|| normalize_phrase(&doc.span_text(s), table).text, |p| p.to_string());
    DocumentContribution {
        doc_key: doc.doc_key.clone(),
        phrases: mentions.iter().map(|m| m.phrase.text.clone()).collect(),
        relations: doc
            .relations
            .iter()
            .map(|r| RelationInstance {
                head: phrase_of(r.head),
                tail: phrase_of(r.tail),
                label: r.label,
                doc_key: doc.doc_key.clone(),
                sentence: r.head.sentence,
            })
            .collect(),
    }
}

/// Count maps that can be merged in any order; the reduce step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraphAccumulator {
    /// Phrase frequency under the chosen count mode.
    pub phrase_counts: BTreeMap<String, usize>,
    /// Documents mentioning each phrase.
    pub phrase_documents: BTreeMap<String, BTreeSet<String>>,
    pub relations: Vec<RelationInstance>,
}

impl GraphAccumulator {
    pub fn add(&mut self, contribution: DocumentContribution, mode: CountMode) {
        let mut seen = BTreeSet::new();
        for phrase in contribution.phrases {
            if mode == CountMode::Mention || seen.insert(phrase.clone()) {
                *self.phrase_counts.entry(phrase.clone()).or_default() += 1;
            }
            self.phrase_documents.entry(phrase).or_default().insert(contribution.doc_key.clone());
        }
        self.relations.extend(contribution.relations);
    }

    pub fn merge(&mut self, other: GraphAccumulator) {
        for (p, c) in other.phrase_counts {
            *self.phrase_counts.entry(p).or_default() += c;
        }
        for (p, docs) in other.phrase_documents {
            self.phrase_documents.entry(p).or_default().extend(docs);
        }
        self.relations.extend(other.relations);
    }
}

/// Frequent phrases and where every other phrase went.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NodeSet {
    /// Node phrase to frequency, merged phrases included.
    pub nodes: BTreeMap<String, usize>,
    /// Infrequent phrase to the node it was merged into.
    pub merged: BTreeMap<String, String>,
    /// Infrequent phrases matching no node, with their counts.
    pub residual: BTreeMap<String, usize>,
}

impl NodeSet {
    /// The node a phrase belongs to, if any.
    pub fn node_of<'a>(&'a self, phrase: &'a str) -> Option<&'a str> {
        if self.nodes.contains_key(phrase) {
            Some(phrase)
        } else {
            self.merged.get(phrase).map(String::as_str)
        }
    }
}

fn contains_tokens(haystack: &[&str], needle: &[&str]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Phrases with frequency above `k` become nodes; every other phrase
/// containing a node phrase on token boundaries is merged into the
/// longest such node (most tokens, then most characters, then
/// lexicographically smallest).
pub fn build_nodes(counts: &BTreeMap<String, usize>, k: usize) -> NodeSet {
    let frequent: Vec<(&String, Vec<&str>)> =
        counts.iter().filter(|(_, &c)| c > k).map(|(p, _)| (p, p.split(' ').collect())).collect();
    let mut set = NodeSet {
        nodes: frequent.iter().map(|(p, _)| ((*p).clone(), counts[*p])).collect(),
        ..Default::default()
    };
    for (phrase, &count) in counts.iter().filter(|(_, &c)| c <= k) {
        let tokens: Vec<&str> = phrase.split(' ').collect();
        let target = frequent
            .iter()
            .filter(|(_, ft)| contains_tokens(&tokens, ft))
            .min_by(|(a, at), (b, bt)| {
                bt.len().cmp(&at.len()).then_with(|| b.chars().count().cmp(&a.chars().count())).then_with(|| a.cmp(b))
            });
        match target {
            Some((node, _)) => {
                *set.nodes.get_mut(*node).expect("node exists") += count;
                set.merged.insert(phrase.clone(), (*node).clone());
            }
            None => {
                set.residual.insert(phrase.clone(), count);
            }
        }
    }
    set
}

/// Relation counts between one unordered node pair in one type and
/// direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    /// The lexicographically smaller node.
    pub source: String,
    pub target: String,
    pub relation: RelationType,
    pub direction: Direction,
    pub count: usize,
    /// The most frequent type and direction for this pair.
    pub marked: bool,
    /// `(doc_key, sentence index)` of every instance, sorted.
    pub provenance: Vec<(String, usize)>,
}

impl Edge {
    /// Head and tail phrases of the underlying relation.
    pub fn head_tail(&self) -> (&str, &str) {
        match self.direction {
            Direction::Forward => (&self.source, &self.target),
            Direction::Reverse => (&self.target, &self.source),
        }
    }
}

/// Index of the winning `(type, direction, count)` entry: highest count,
/// ties to the earlier relation type, then forward before reverse.
pub fn select_marked(counts: &[(RelationType, Direction, usize)]) -> Option<usize> {
    let key = |&(r, d, c): &(RelationType, Direction, usize)| {
        let order = RelationType::ALL.iter().position(|&x| x == r).expect("known type");
        (std::cmp::Reverse(c), order, d)
    };
    (0..counts.len()).min_by_key(|&i| key(&counts[i]))
}

/// Groups relation instances by unordered node pair and marks the most
/// frequent type and direction per pair. Instances whose ends fall outside
/// the node set, or on the same node, are skipped.
pub fn build_edges(relations: &[RelationInstance], nodes: &NodeSet) -> Vec<Edge> {
    type Key = (String, String, RelationType, Direction);
    let mut grouped: BTreeMap<Key, Vec<(String, usize)>> = BTreeMap::new();
    for r in relations {
        let (Some(h), Some(t)) = (nodes.node_of(&r.head), nodes.node_of(&r.tail)) else { continue };
        if h == t {
            continue;
        }
        let (source, target, direction) = if r.label.is_symmetric() || h < t {
            (h.min(t), h.max(t), Direction::Forward)
        } else {
            (t, h, Direction::Reverse)
        };
        grouped
            .entry((source.to_string(), target.to_string(), r.label, direction))
            .or_default()
            .push((r.doc_key.clone(), r.sentence));
    }
    let mut edges: Vec<Edge> = grouped
        .into_iter()
        .map(|((source, target, relation, direction), mut provenance)| {
            provenance.sort();
            Edge { source, target, relation, direction, count: provenance.len(), marked: false, provenance }
        })
        .collect();
    let mut start = 0;
    while start < edges.len() {
        let mut end = start;
        while end < edges.len() && edges[end].source == edges[start].source && edges[end].target == edges[start].target {
            end += 1;
        }
        let counts: Vec<_> = edges[start..end].iter().map(|e| (e.relation, e.direction, e.count)).collect();
        if let Some(i) = select_marked(&counts) {
            edges[start + i].marked = true;
        }
        start = end;
    }
    edges
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub options: GraphOptions,
    pub acronyms: AcronymTable,
    pub nodes: BTreeMap<String, usize>,
    pub merged: BTreeMap<String, String>,
    pub residual: BTreeMap<String, usize>,
    /// Sorted by source, target, relation type and direction.
    pub edges: Vec<Edge>,
    /// Documents mentioning each node, merged phrases included.
    pub node_documents: BTreeMap<String, BTreeSet<String>>,
    /// Publication metadata of the input documents, when supplied.
    #[serde(default)]
    pub metadata: BTreeMap<String, super::DocMetadata>,
}

impl KnowledgeGraph {
    pub fn from_accumulator(acc: GraphAccumulator, acronyms: AcronymTable, options: GraphOptions) -> Self {
        let node_set = build_nodes(&acc.phrase_counts, options.min_count);
        let edges = build_edges(&acc.relations, &node_set);
        let mut node_documents: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (phrase, docs) in acc.phrase_documents {
            if let Some(node) = node_set.node_of(&phrase) {
                node_documents.entry(node.to_string()).or_default().extend(docs);
            }
        }
        KnowledgeGraph {
            options,
            acronyms,
            nodes: node_set.nodes,
            merged: node_set.merged,
            residual: node_set.residual,
            edges,
            node_documents,
            metadata: BTreeMap::new(),
        }
    }

    /// `phrase<TAB>frequency`, sorted by phrase.
    pub fn nodes_tsv(&self) -> String {
        let mut out = String::from("phrase\tfrequency\n");
        for (p, c) in &self.nodes {
            let _ = writeln!(out, "{p}\t{c}");
        }
        out
    }

    /// `phrase1<TAB>phrase2<TAB>relation<TAB>direction<TAB>count<TAB>marked`
    pub fn edges_tsv(&self) -> String {
        let mut out = String::from("phrase1\tphrase2\trelation\tdirection\tcount\tmarked\n");
        for e in &self.edges {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.source,
                e.target,
                e.relation.as_str(),
                e.direction.as_str(),
                e.count,
                e.marked
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn marked_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.marked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityMention;

    fn doc(sentence: &str, entities: &[(usize, usize, EntityType)], clusters: &[&[(usize, usize)]]) -> Document {
        let mut d = Document::unannotated("d", vec![sentence.split(' ').map(String::from).collect()]);
        d.entities = entities.iter().map(|&(s, e, l)| EntityMention { span: d.span(s, e).unwrap(), label: l }).collect();
        d.clusters = clusters.iter().map(|c| c.iter().map(|&(s, e)| d.span(s, e).unwrap()).collect()).collect();
        d
    }

    fn phrases(m: &[CanonicalMention]) -> Vec<&str> {
        m.iter().map(|m| m.phrase.text.as_str()).collect()
    }

    #[test]
    fn coref_canonicalization() {
        use EntityType::*;
        let t = AcronymTable::default();
        let d = doc("MORPA is fast and it works", &[(0, 0, Method), (4, 4, Generic)], &[&[(0, 0), (4, 4)]]);
        assert_eq!(phrases(&canonicalize_with_coref(&d, &t)), vec!["morpa", "morpa"]);

        let d = doc("MORPA is fast and it works", &[(0, 0, Method), (4, 4, Generic)], &[]);
        assert_eq!(phrases(&canonicalize_with_coref(&d, &t)), vec!["morpa", "it"]);

        let d = doc(
            "the system , our parser , fast neural parser",
            &[(0, 1, Generic), (3, 4, Method), (6, 8, Method)],
            &[&[(0, 1), (3, 4), (6, 8)]],
        );
        assert_eq!(phrases(&canonicalize_with_coref(&d, &t)), vec!["fast neural parser"; 3]);

        let d = doc("it and this", &[(0, 0, Generic), (2, 2, Generic)], &[&[(0, 0), (2, 2)]]);
        assert_eq!(phrases(&canonicalize_with_coref(&d, &t)), vec!["it", "this"]);

        // equal length: lexicographically smallest wins
        let d = doc("beta or alfa", &[(0, 0, Method), (2, 2, Method)], &[&[(0, 0), (2, 2)]]);
        assert_eq!(phrases(&canonicalize_with_coref(&d, &t)), vec!["alfa", "alfa"]);
    }

    fn counts(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
        pairs.iter().map(|(p, c)| (p.to_string(), *c)).collect()
    }

    #[test]
    fn node_selection_and_merging() {
        let c = counts(&[("object detection", 510), ("detection", 1297)]);
        let n = build_nodes(&c, 100);
        assert_eq!(n.nodes, c);

        let c = counts(&[("object detection", 20), ("robust object detection", 3), ("particle", 2), ("art", 15)]);
        let n = build_nodes(&c, 10);
        assert_eq!(n.nodes["object detection"], 23);
        assert_eq!(n.merged["robust object detection"], "object detection");
        assert_eq!(n.residual["particle"], 2);
        let total: usize = c.values().sum();
        assert_eq!(n.nodes.values().sum::<usize>(), total - n.residual.values().sum::<usize>());

        // longest frequent phrase wins
        let c = counts(&[("detection", 50), ("object detection", 20), ("fast object detection", 1)]);
        assert_eq!(build_nodes(&c, 10).merged["fast object detection"], "object detection");

        assert!(build_nodes(&c, 1000).nodes.is_empty());
    }

    #[test]
    fn marking_follows_counts_then_type_order() {
        use Direction::*;
        use RelationType::*;
        let dominant_conjunction = [(Conjunction, Forward, 80), (UsedFor, Forward, 10), (UsedFor, Reverse, 4)];
        assert_eq!(select_marked(&dominant_conjunction), Some(0));
        let dominant_hyponym = [(Conjunction, Forward, 4), (HyponymOf, Forward, 25), (UsedFor, Forward, 2), (UsedFor, Reverse, 2)];
        assert_eq!(select_marked(&dominant_hyponym), Some(1));
        assert_eq!(select_marked(&[(UsedFor, Reverse, 1)]), Some(0));
        assert_eq!(select_marked(&[(UsedFor, Reverse, 3), (Compare, Forward, 3)]), Some(1));
        assert_eq!(select_marked(&[(UsedFor, Reverse, 3), (UsedFor, Forward, 3)]), Some(1));
        assert_eq!(select_marked(&[]), None);
    }

    #[test]
    fn edges_group_by_unordered_pair() {
        let nodes = build_nodes(&counts(&[("a", 5), ("b", 5), ("c", 5)]), 1);
        let inst = |h: &str, t: &str, l, s| RelationInstance {
            head: h.into(),
            tail: t.into(),
            label: l,
            doc_key: "d".into(),
            sentence: s,
        };
        let rels = vec![
            inst("a", "b", RelationType::Conjunction, 0),
            inst("b", "a", RelationType::Conjunction, 1),
            inst("b", "a", RelationType::UsedFor, 2),
            inst("a", "a", RelationType::UsedFor, 0),
            inst("a", "z", RelationType::UsedFor, 0),
        ];
        let edges = build_edges(&rels, &nodes);
        assert_eq!(edges.len(), 2);
        assert_eq!((edges[0].relation, edges[0].count, edges[0].marked), (RelationType::Conjunction, 2, true));
        assert_eq!(edges[1].direction, Direction::Reverse);
        assert_eq!(edges[1].head_tail(), ("b", "a"));
        assert_eq!(edges[0].provenance, vec![("d".to_string(), 0), ("d".to_string(), 1)]);
    }
}
