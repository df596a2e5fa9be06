//! Candidate span enumeration and beam pruning.

use std::collections::HashMap;
use std::ops::Range;

use crate::corpus::{Document, Span};
use crate::error::{Error, Result};

/// All within-sentence spans of width `1..=max_width`, in canonical order
/// (start ascending, then end ascending).
#[derive(Debug, Clone)]
pub struct SpanSpace {
    spans: Vec<Span>,
    index: HashMap<(usize, usize), usize>,
    sentence_ranges: Vec<Range<usize>>,
    max_width: usize,
}

impl SpanSpace {
    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn max_width(&self) -> usize {
        self.max_width
    }

    pub fn get(&self, position: usize) -> Span {
        self.spans[position]
    }

    pub fn position(&self, start: usize, end: usize) -> Option<usize> {
        self.index.get(&(start, end)).copied()
    }

    /// Positions of the spans belonging to each sentence.
    pub fn sentence_ranges(&self) -> &[Range<usize>] {
        &self.sentence_ranges
    }
}

pub fn enumerate_spans(doc: &Document, max_width: usize) -> Result<SpanSpace> {
    if max_width < 1 {
        return Err(Error::Config(format!("max span width must be at least 1, got {max_width}")));
    }
    let mut spans = Vec::new();
    let mut sentence_ranges = Vec::with_capacity(doc.sentences.len());
    for (s, (lo, hi)) in doc.sentence_bounds().into_iter().enumerate() {
        let first = spans.len();
        for start in lo..hi {
            let last = (start + max_width).min(hi);
            for end in start..last {
                spans.push(Span::new(start, end, s));
            }
        }
        sentence_ranges.push(first..spans.len());
    }
    let index = spans.iter().enumerate().map(|(i, s)| (s.key(), i)).collect();
    Ok(SpanSpace { spans, index, sentence_ranges, max_width })
}

/// Closed-form span count for one sentence.
pub fn span_count(sentence_len: usize, max_width: usize) -> usize {
    (1..=max_width.min(sentence_len)).map(|w| sentence_len - w + 1).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BeamKind {
    Coref,
    Relation,
}

/// A pruned subset of span positions, sorted canonically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Beam {
    pub kind: BeamKind,
    pub members: Vec<usize>,
    pub capacity: usize,
}

impl Beam {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// For the member at beam index `k`, its candidate antecedents are the
    /// members at beam indices `0..k`.
    pub fn antecedent_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.members.len()).flat_map(|k| (0..k).map(move |a| (k, a))).collect()
    }
}

/// `max(1, floor(ratio * n))`. The small epsilon keeps products such as
/// `0.29 * 100` from flooring one below their decimal value.
pub fn beam_capacity(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + 1e-9).floor() as usize).max(1)
}

pub fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("beam ratio must lie in (0, 1], got {ratio}")))
    }
}

/// Keeps the `max(1, floor(ratio * n))` highest-scoring spans. Ties go to the
/// canonically earlier span.
pub fn prune(space: &SpanSpace, scores: &[f64], ratio: f64, n: usize, kind: BeamKind) -> Result<Beam> {
    check_ratio(ratio)?;
    if scores.len() != space.len() {
        return Err(Error::Model(format!(
            "{} pruning scores for {} spans",
            scores.len(),
            space.len()
        )));
    }
    let capacity = beam_capacity(ratio, n);
    let mut order: Vec<usize> = (0..space.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(capacity);
    order.sort_unstable();
    Ok(Beam { kind, members: order, capacity })
}

/// Ordered pairs `(i, j)`, `i != j`, of beam members sharing a sentence.
/// Pairs are listed in canonical order of `i`, then `j`.
pub fn pair_candidates(space: &SpanSpace, beam: &Beam) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for &i in &beam.members {
        let si = space.get(i).sentence;
        for &j in &beam.members {
            if i != j && space.get(j).sentence == si {
                pairs.push((i, j));
            }
        }
    }
    pairs
}
