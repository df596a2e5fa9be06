//! Turns task distributions into discrete predictions.

use std::collections::{BTreeMap, HashSet};

use crate::corpus::{Document, EntityMention, RelationMention, Span};
use crate::labels::{EntityType, RelationType};
use crate::scorer::TaskDistributions;
use crate::spanspace::SpanSpace;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictedDocument {
    pub doc_key: String,
    pub sentences: Vec<Vec<String>>,
    pub entities: Vec<EntityMention>,
    pub relations: Vec<RelationMention>,
    /// Clusters of at least two mentions, pairwise disjoint.
    pub clusters: Vec<Vec<Span>>,
}

impl PredictedDocument {
    /// The same content in the corpus data model, for serialization and
    /// evaluation.
    pub fn into_document(self) -> Document {
        Document {
            doc_key: self.doc_key,
            sentences: self.sentences,
            entities: self.entities,
            relations: self.relations,
            clusters: self.clusters,
        }
    }
}

/// Index of the largest entry; the first one wins ties.
fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn decode_entities(space: &SpanSpace, dists: &TaskDistributions) -> Vec<EntityMention> {
    dists
        .entity
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            EntityType::from_label_index(argmax(p)).map(|label| EntityMention { span: space.get(i), label })
        })
        .collect()
}

/// Argmax per ordered pair. A symmetric type predicted in both orders is
/// emitted once, earlier span first.
pub fn decode_relations(space: &SpanSpace, dists: &TaskDistributions) -> Vec<RelationMention> {
    let mut emitted: Vec<(usize, usize, RelationType)> = Vec::new();
    let mut seen_symmetric = HashSet::new();
    for (&(i, j), p) in dists.relation_pairs.iter().zip(&dists.relation) {
        let Some(label) = RelationType::from_label_index(argmax(p)) else { continue };
        if label.is_symmetric() {
            let key = (i.min(j), i.max(j), label);
            if !seen_symmetric.insert(key) {
                // already emitted in the other order; keep the canonical one
                if let Some(e) = emitted.iter_mut().find(|e| (e.0.min(e.1), e.0.max(e.1), e.2) == key) {
                    *e = key;
                }
                continue;
            }
        }
        emitted.push((i, j, label));
    }
    emitted
        .into_iter()
        .map(|(i, j, label)| RelationMention { head: space.get(i), tail: space.get(j), label })
        .collect()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Links every beam span to its most probable antecedent and returns the
/// connected components with two or more mentions.
pub fn decode_coref(space: &SpanSpace, dists: &TaskDistributions) -> Vec<Vec<Span>> {
    let m = dists.coref_beam.len();
    let mut uf = UnionFind::new(m);
    for (k, p) in dists.coref.iter().enumerate() {
        let best = argmax(p);
        if best > 0 {
            uf.union(k, best - 1);
        }
    }
    let mut components: BTreeMap<usize, Vec<Span>> = BTreeMap::new();
    for k in 0..m {
        let root = uf.find(k);
        components.entry(root).or_default().push(space.get(dists.coref_beam[k]));
    }
    components.into_values().filter(|c| c.len() >= 2).collect()
}

pub fn decode(doc: &Document, space: &SpanSpace, dists: &TaskDistributions) -> PredictedDocument {
    PredictedDocument {
        doc_key: doc.doc_key.clone(),
        sentences: doc.sentences.clone(),
        entities: decode_entities(space, dists),
        relations: decode_relations(space, dists),
        clusters: decode_coref(space, dists),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spanspace::enumerate_spans;
    use proptest::prelude::*;

    fn space(n: usize) -> SpanSpace {
        let doc = Document::unannotated("d", vec![(0..n).map(|i| format!("w{i}")).collect()]);
        enumerate_spans(&doc, 1).unwrap()
    }

    fn one_hot(n: usize, k: usize) -> Vec<f64> {
        (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn entity_decoding() {
        let s = space(2);
        let null_everywhere = TaskDistributions { entity: vec![one_hot(7, 0); 2], ..Default::default() };
        assert!(decode_entities(&s, &null_everywhere).is_empty());

        let tie = TaskDistributions { entity: vec![vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]], ..Default::default() };
        assert!(decode_entities(&s, &tie).is_empty());

        let task = TaskDistributions {
            entity: vec![vec![0.3, 0.5, 0.04, 0.04, 0.04, 0.04, 0.04]],
            ..Default::default()
        };
        let out = decode_entities(&s, &task);
        assert_eq!(out, vec![EntityMention { span: s.get(0), label: EntityType::Task }]);
    }

    #[test]
    fn relation_decoding() {
        let s = space(2);
        let conj = RelationType::Conjunction.label_index();
        let used = RelationType::UsedFor.label_index();
        let d = TaskDistributions {
            relation_pairs: vec![(1, 0), (0, 1)],
            relation: vec![one_hot(8, conj), one_hot(8, conj)],
            ..Default::default()
        };
        let out = decode_relations(&s, &d);
        assert_eq!(
            out,
            vec![RelationMention { head: s.get(0), tail: s.get(1), label: RelationType::Conjunction }]
        );

        let d = TaskDistributions {
            relation_pairs: vec![(0, 1), (1, 0)],
            relation: vec![one_hot(8, used), one_hot(8, 0)],
            ..Default::default()
        };
        let out = decode_relations(&s, &d);
        assert_eq!(out, vec![RelationMention { head: s.get(0), tail: s.get(1), label: RelationType::UsedFor }]);

        let d = TaskDistributions { relation_pairs: vec![(0, 1)], relation: vec![one_hot(8, 0)], ..Default::default() };
        assert!(decode_relations(&s, &d).is_empty());
    }

    fn coref_dists(links: &[Option<usize>]) -> TaskDistributions {
        TaskDistributions {
            coref_beam: (0..links.len()).collect(),
            coref: links
                .iter()
                .enumerate()
                .map(|(k, l)| one_hot(k + 1, l.map_or(0, |a| a + 1)))
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn coref_decoding() {
        let s = space(5);
        assert!(decode_coref(&s, &coref_dists(&[None, None, None])).is_empty());

        let chain = decode_coref(&s, &coref_dists(&[None, Some(0), Some(1)]));
        assert_eq!(chain, vec![vec![s.get(0), s.get(1), s.get(2)]]);

        // b->a, d->c, e->c
        let two = decode_coref(&s, &coref_dists(&[None, Some(0), None, Some(2), Some(2)]));
        assert_eq!(two, vec![vec![s.get(0), s.get(1)], vec![s.get(2), s.get(3), s.get(4)]]);
    }

    proptest! {
        #[test]
        fn decoded_output_is_well_formed(
            ent in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 7), 6),
            links in prop::collection::vec(0usize..10, 6),
            rel in prop::collection::vec((0usize..6, 0usize..6, 0usize..8), 0..20),
        ) {
            let s = space(6);
            let mut d = coref_dists(&links.iter().enumerate().map(|(k, &l)| if k == 0 || l >= k { None } else { Some(l) }).collect::<Vec<_>>());
            d.entity = ent;
            let mut seen = HashSet::new();
            for (i, j, l) in rel {
                if i != j && seen.insert((i, j)) {
                    d.relation_pairs.push((i, j));
                    d.relation.push(one_hot(8, l));
                }
            }
            let doc = Document::unannotated("d", vec![(0..6).map(|i| format!("w{i}")).collect()]);
            let p = decode(&doc, &s, &d);
            let q = decode(&doc, &s, &d);
            prop_assert_eq!(&p, &q);
            let spans: HashSet<_> = p.entities.iter().map(|e| e.span).collect();
            prop_assert_eq!(spans.len(), p.entities.len());
            let pairs: HashSet<_> = p.relations.iter().map(|r| (r.head, r.tail)).collect();
            prop_assert_eq!(pairs.len(), p.relations.len());
            let mut mentions = HashSet::new();
            for c in &p.clusters {
                prop_assert!(c.len() >= 2);
                for m in c {
                    prop_assert!(mentions.insert(*m));
                }
            }
            let doc = p.into_document();
            prop_assert!(doc.validate().is_ok());
        }
    }
}
