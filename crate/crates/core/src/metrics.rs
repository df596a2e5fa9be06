//! Exact-match entity and relation scores, coreference metrics (MUC, B³,
//! CEAF-φ4 and their average) and pseudo-recall for pooled evaluations.
//!
//! Every ratio with a zero denominator is defined as 0. Corpus scores are
//! micro-averaged: per-document numerators and denominators are summed
//! before dividing.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::ValidationError;
use crate::labels::{EntityType, RelationType};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Prf { precision, recall, f1 }
    }

    pub fn from_counts(p_num: f64, p_den: f64, r_num: f64, r_den: f64) -> Self {
        Prf::new(ratio(p_num, p_den), ratio(r_num, r_den))
    }
}

/// Numerators and denominators of a precision/recall pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Counts {
    pub p_num: f64,
    pub p_den: f64,
    pub r_num: f64,
    pub r_den: f64,
}

impl Counts {
    pub fn prf(&self) -> Prf {
        Prf::from_counts(self.p_num, self.p_den, self.r_num, self.r_den)
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.p_num += o.p_num;
        self.p_den += o.p_den;
        self.r_num += o.r_num;
        self.r_den += o.r_den;
    }
}

fn set_counts<T: Eq + Hash>(gold: &HashSet<T>, pred: &HashSet<T>) -> Counts {
    let correct = pred.intersection(gold).count() as f64;
    Counts { p_num: correct, p_den: pred.len() as f64, r_num: correct, r_den: gold.len() as f64 }
}

fn entity_set(doc: &Document) -> HashSet<(usize, usize, EntityType)> {
    doc.entities.iter().map(|e| (e.span.start, e.span.end, e.label)).collect()
}

type RelationKey = ((usize, usize), (usize, usize), RelationType);

/// Symmetric relations are keyed with the earlier span first so either
/// order matches.
fn relation_set(doc: &Document) -> HashSet<RelationKey> {
    doc.relations
        .iter()
        .map(|r| {
            let (h, t) = (r.head.key(), r.tail.key());
            if r.label.is_symmetric() && t < h {
                (t, h, r.label)
            } else {
                (h, t, r.label)
            }
        })
        .collect()
}

/// Pairs gold documents with predictions by `doc_key`; a gold document
/// without a prediction is scored against an empty one.
fn aligned<'a>(gold: &'a [Document], pred: &'a [Document]) -> Vec<(&'a Document, Option<&'a Document>)> {
    let by_key: HashMap<&str, &Document> = pred.iter().map(|d| (d.doc_key.as_str(), d)).collect();
    gold.iter().map(|g| (g, by_key.get(g.doc_key.as_str()).copied())).collect()
}

pub fn entity_counts(gold: &Document, pred: &Document) -> Counts {
    set_counts(&entity_set(gold), &entity_set(pred))
}

pub fn relation_counts(gold: &Document, pred: &Document) -> Counts {
    set_counts(&relation_set(gold), &relation_set(pred))
}

pub fn entity_prf(gold: &[Document], pred: &[Document]) -> Prf {
    let mut total = Counts::default();
    for (g, p) in aligned(gold, pred) {
        total += match p {
            Some(p) => entity_counts(g, p),
            None => Counts { r_den: entity_set(g).len() as f64, ..Default::default() },
        };
    }
    total.prf()
}

pub fn relation_prf(gold: &[Document], pred: &[Document]) -> Prf {
    let mut total = Counts::default();
    for (g, p) in aligned(gold, pred) {
        total += match p {
            Some(p) => relation_counts(g, p),
            None => Counts { r_den: relation_set(g).len() as f64, ..Default::default() },
        };
    }
    total.prf()
}

/// A coreference cluster as a list of mention keys.
pub type Cluster<M> = Vec<M>;

fn mention_index<M: Eq + Hash + Clone + std::fmt::Debug>(
    clusters: &[Cluster<M>],
) -> Result<HashMap<M, usize>, ValidationError> {
    let mut index = HashMap::new();
    for (c, cluster) in clusters.iter().enumerate() {
        let mut local = HashSet::new();
        for m in cluster {
            if !local.insert(m) {
                return Err(ValidationError::DuplicateMention(format!("{m:?}")));
            }
            index.insert(m.clone(), c);
        }
    }
    Ok(index)
}

/// Link-based recall of `key` against `response`: each key cluster scores
/// `|K| - |partitions of K induced by response|` out of `|K| - 1`.
/// Mentions missing from the response form singleton partitions.
fn muc_side<M: Eq + Hash + Clone>(key: &[Cluster<M>], response: &HashMap<M, usize>) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for cluster in key {
        let mut parts = HashSet::new();
        let mut singletons = 0usize;
        for m in cluster {
            match response.get(m) {
                Some(&c) => {
                    parts.insert(c);
                }
                None => singletons += 1,
            }
        }
        num += (cluster.len() - parts.len() - singletons) as f64;
        den += cluster.len().saturating_sub(1) as f64;
    }
    (num, den)
}

pub fn muc_counts<M: Eq + Hash + Clone + std::fmt::Debug>(
    gold: &[Cluster<M>],
    pred: &[Cluster<M>],
) -> Result<Counts, ValidationError> {
    let (gi, pi) = (mention_index(gold)?, mention_index(pred)?);
    let (r_num, r_den) = muc_side(gold, &pi);
    let (p_num, p_den) = muc_side(pred, &gi);
    Ok(Counts { p_num, p_den, r_num, r_den })
}

/// Mention-weighted overlap: each key mention scores
/// `|K(m) ∩ R(m)| / |K(m)|`, with `R(m) = {m}` when unresolved.
fn b_cubed_side<M: Eq + Hash + Clone>(key: &[Cluster<M>], response: &[Cluster<M>], response_index: &HashMap<M, usize>) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for cluster in key {
        let members: HashSet<&M> = cluster.iter().collect();
        for m in cluster {
            let overlap = match response_index.get(m) {
                Some(&c) => response[c].iter().filter(|x| members.contains(x)).count(),
                None => 1,
            };
            num += overlap as f64 / cluster.len() as f64;
            den += 1.0;
        }
    }
    (num, den)
}

pub fn b_cubed_counts<M: Eq + Hash + Clone + std::fmt::Debug>(
    gold: &[Cluster<M>],
    pred: &[Cluster<M>],
) -> Result<Counts, ValidationError> {
    let (gi, pi) = (mention_index(gold)?, mention_index(pred)?);
    let (r_num, r_den) = b_cubed_side(gold, pred, &pi);
    let (p_num, p_den) = b_cubed_side(pred, gold, &gi);
    Ok(Counts { p_num, p_den, r_num, r_den })
}

/// `2 |g ∩ p| / (|g| + |p|)`
pub fn phi4<M: Eq + Hash>(g: &[M], p: &[M]) -> f64 {
    if g.is_empty() && p.is_empty() {
        return 0.0;
    }
    let gs: HashSet<&M> = g.iter().collect();
    let common = p.iter().filter(|m| gs.contains(m)).count();
    2.0 * common as f64 / (g.len() + p.len()) as f64
}

pub fn ceaf_phi4_counts<M: Eq + Hash + Clone + std::fmt::Debug>(
    gold: &[Cluster<M>],
    pred: &[Cluster<M>],
) -> Result<Counts, ValidationError> {
    mention_index(gold)?;
    mention_index(pred)?;
    let sim: Vec<Vec<f64>> = gold.iter().map(|g| pred.iter().map(|p| phi4(g, p)).collect()).collect();
    let best = max_weight_assignment(&sim).1;
    Ok(Counts { p_num: best, p_den: pred.len() as f64, r_num: best, r_den: gold.len() as f64 })
}

/// Maximum-weight one-to-one matching between rows and columns of a
/// nonnegative matrix (Hungarian algorithm on the padded square problem).
/// Returns the column matched to each row and the total weight.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> (Vec<Option<usize>>, f64) {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    if n == 0 {
        return (vec![None; rows], 0.0);
    }
    let max_w = weights.iter().flatten().copied().fold(0.0, f64::max);
    // cost[i][j] for the 1-based potentials formulation
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            max_w - weights[i][j]
        } else {
            max_w
        }
    };
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![None; rows];
    let mut total = 0.0;
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i - 1 < rows && j - 1 < cols {
            assignment[i - 1] = Some(j - 1);
            total += weights[i - 1][j - 1];
        }
    }
    (assignment, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CorefScores {
    pub muc: Prf,
    pub b_cubed: Prf,
    pub ceaf_phi4: Prf,
    /// Unweighted mean of the three precision, recall and F1 values.
    pub average: Prf,
}

pub fn coref_average(muc: Prf, b_cubed: Prf, ceaf: Prf) -> Prf {
    let mean = |f: fn(&Prf) -> f64| (f(&muc) + f(&b_cubed) + f(&ceaf)) / 3.0;
    Prf { precision: mean(|p| p.precision), recall: mean(|p| p.recall), f1: mean(|p| p.f1) }
}

#[derive(Debug, Clone, Copy, Default)]
struct CorefCounts {
    muc: Counts,
    b_cubed: Counts,
    ceaf: Counts,
}

impl CorefCounts {
    fn scores(&self) -> CorefScores {
        let (muc, b_cubed, ceaf_phi4) = (self.muc.prf(), self.b_cubed.prf(), self.ceaf.prf());
        CorefScores { muc, b_cubed, ceaf_phi4, average: coref_average(muc, b_cubed, ceaf_phi4) }
    }
}

fn coref_counts<M: Eq + Hash + Clone + std::fmt::Debug>(
    gold: &[Cluster<M>],
    pred: &[Cluster<M>],
) -> Result<CorefCounts, ValidationError> {
    Ok(CorefCounts {
        muc: muc_counts(gold, pred)?,
        b_cubed: b_cubed_counts(gold, pred)?,
        ceaf: ceaf_phi4_counts(gold, pred)?,
    })
}

/// Scores for one document's clusters.
pub fn coref_scores<M: Eq + Hash + Clone + std::fmt::Debug>(
    gold: &[Cluster<M>],
    pred: &[Cluster<M>],
) -> Result<CorefScores, ValidationError> {
    Ok(coref_counts(gold, pred)?.scores())
}

fn doc_clusters(doc: &Document) -> Vec<Cluster<(usize, usize)>> {
    doc.clusters.iter().map(|c| c.iter().map(|s| s.key()).collect()).collect()
}

/// Corpus-level coreference scores, summing counts over documents.
pub fn corpus_coref_scores(gold: &[Document], pred: &[Document]) -> Result<CorefScores, ValidationError> {
    let mut total = CorefCounts::default();
    for (g, p) in aligned(gold, pred) {
        let pc = p.map(doc_clusters).unwrap_or_default();
        let c = coref_counts(&doc_clusters(g), &pc)?;
        total.muc += c.muc;
        total.b_cubed += c.b_cubed;
        total.ceaf += c.ceaf;
    }
    Ok(total.scores())
}

/// Recall against the union of all systems' validated outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoRecall {
    pub value: f64,
    /// The pooled union was empty, so `value` is a placeholder 0.
    pub undefined: bool,
}

pub fn pseudo_recall<T: Ord>(correct_by_system: &BTreeMap<String, BTreeSet<T>>, system: &str) -> PseudoRecall {
    let union: BTreeSet<&T> = correct_by_system.values().flatten().collect();
    if union.is_empty() {
        log::warn!("pseudo-recall undefined: no system has a correct output");
        return PseudoRecall { value: 0.0, undefined: true };
    }
    let own = correct_by_system.get(system).map_or(0, BTreeSet::len);
    PseudoRecall { value: own as f64 / union.len() as f64, undefined: false }
}

/// Evaluation results for a corpus of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub documents: usize,
    pub entity: Prf,
    pub relation: Prf,
    pub coref: CorefScores,
}

impl EvalReport {
    pub fn compute(gold: &[Document], pred: &[Document]) -> Result<Self, ValidationError> {
        Ok(EvalReport {
            documents: gold.len(),
            entity: entity_prf(gold, pred),
            relation: relation_prf(gold, pred),
            coref: corpus_coref_scores(gold, pred)?,
        })
    }

    /// Mean of entity F1, relation F1 and average coreference F1.
    pub fn average_f1(&self) -> f64 {
        (self.entity.f1 + self.relation.f1 + self.coref.average.f1) / 3.0
    }

    /// Tab-separated table with one row per metric.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("task\tmetric\tprecision\trecall\tf1\n");
        let rows = [
            ("entity", "exact", self.entity),
            ("relation", "exact", self.relation),
            ("coref", "muc", self.coref.muc),
            ("coref", "b_cubed", self.coref.b_cubed),
            ("coref", "ceaf_phi4", self.coref.ceaf_phi4),
            ("coref", "average", self.coref.average),
        ];
        for (task, metric, p) in rows {
            let _ = writeln!(out, "{task}\t{metric}\t{:.6}\t{:.6}\t{:.6}", p.precision, p.recall, p.f1);
        }
        out
    }
}
