//! Negative log-likelihood losses, both on plain distributions and as
//! graph nodes for backpropagation.

use crate::autodiff::{Graph, Var};
use crate::corpus::GoldAssignment;
use crate::labels::{EntityType, RelationType};
use crate::model::ForwardPass;
use crate::scorer::TaskDistributions;

use super::config::LossWeights;

/// Per-task losses of one document (or a sum over documents).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TaskLosses {
    pub entity: f64,
    pub relation: f64,
    pub coref: f64,
}

impl TaskLosses {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.entity * self.entity + w.relation * self.relation + w.coref * self.coref
    }
}

impl std::ops::AddAssign for TaskLosses {
    fn add_assign(&mut self, o: TaskLosses) {
        self.entity += o.entity;
        self.relation += o.relation;
        self.coref += o.coref;
    }
}

/// `sum_d (w_E L_E + w_R L_R + w_C L_C)`
pub fn total_objective(weights: &LossWeights, losses: &[TaskLosses]) -> f64 {
    losses.iter().map(|l| l.weighted(weights)).sum()
}

fn entity_index(t: Option<EntityType>) -> usize {
    t.map_or(0, EntityType::label_index)
}

fn relation_index(t: Option<RelationType>) -> usize {
    t.map_or(0, RelationType::label_index)
}

/// `-sum_i log P(gold_i)` over every enumerated span, the null type included.
pub fn entity_loss(dists: &TaskDistributions, gold: &GoldAssignment) -> f64 {
    dists
        .entity
        .iter()
        .zip(&gold.entity_target)
        .map(|(p, &t)| -p[entity_index(t)].ln())
        .sum()
}

/// `-sum log P(gold)` over the candidate pairs.
pub fn relation_loss(dists: &TaskDistributions, gold: &GoldAssignment) -> f64 {
    dists
        .relation_pairs
        .iter()
        .zip(&dists.relation)
        .map(|(&(i, j), p)| -p[relation_index(gold.relation(i, j))].ln())
        .sum()
}

/// Correct antecedent options for each coreference beam member, as
/// indices into `[null, member 0, member 1, ...]`. Gold antecedents that
/// are not earlier beam members are dropped; an empty set becomes `{null}`.
pub fn coref_targets(beam: &[usize], gold: &GoldAssignment) -> Vec<Vec<usize>> {
    beam.iter()
        .enumerate()
        .map(|(k, &span)| {
            let gold_ante = &gold.antecedent_sets[span];
            let options: Vec<usize> = beam[..k]
                .iter()
                .enumerate()
                .filter(|(_, member)| gold_ante.contains(member))
                .map(|(a, _)| a + 1)
                .collect();
            if options.is_empty() {
                vec![0]
            } else {
                options
            }
        })
        .collect()
}

/// `-sum_i log sum_{c in C*_i} P(c)`
pub fn coref_loss(dists: &TaskDistributions, targets: &[Vec<usize>]) -> f64 {
    dists
        .coref
        .iter()
        .zip(targets)
        .map(|(p, options)| -options.iter().map(|&c| p[c]).sum::<f64>().ln())
        .sum()
}

/// Loss nodes for one forward pass; `None` where a task has no terms.
pub struct LossVars {
    pub entity: Option<Var>,
    pub relation: Option<Var>,
    pub coref: Option<Var>,
}

impl LossVars {
    pub fn values(&self, g: &Graph<'_>) -> TaskLosses {
        let v = |x: Option<Var>| x.map_or(0.0, |x| g.scalar(x));
        TaskLosses { entity: v(self.entity), relation: v(self.relation), coref: v(self.coref) }
    }
}

fn negated_sum(g: &mut Graph<'_>, column: Var) -> Var {
    let s = g.sum(column);
    g.scale(s, -1.0)
}

pub fn loss_vars(g: &mut Graph<'_>, pass: &ForwardPass, gold: &GoldAssignment) -> LossVars {
    let Some(lp) = &pass.log_probs else {
        return LossVars { entity: None, relation: None, coref: None };
    };
    let positions: Vec<(usize, usize)> =
        gold.entity_target.iter().enumerate().map(|(i, &t)| (i, entity_index(t))).collect();
    let picked = g.pick(lp.entity, &positions);
    let entity = Some(negated_sum(g, picked));

    let relation = lp.relation.map(|r| {
        let positions: Vec<(usize, usize)> = pass
            .relation_pairs
            .iter()
            .enumerate()
            .map(|(p, &(i, j))| (p, relation_index(gold.relation(i, j))))
            .collect();
        let picked = g.pick(r, &positions);
        negated_sum(g, picked)
    });

    let coref = lp.coref.map(|c| {
        let selections: Vec<(usize, Vec<usize>)> =
            coref_targets(&pass.beams.coref.members, gold).into_iter().enumerate().collect();
        let marginals = g.log_sum_exp_select(c, &selections);
        negated_sum(g, marginals)
    });

    LossVars { entity, relation, coref }
}

/// Weighted objective node. Tasks with weight 0 are left out of the graph,
/// so their heads receive exactly zero gradient.
pub fn objective_var(g: &mut Graph<'_>, losses: &LossVars, weights: &LossWeights) -> Option<Var> {
    let terms: Vec<Var> = [(losses.entity, weights.entity), (losses.relation, weights.relation), (losses.coref, weights.coref)]
        .into_iter()
        .filter_map(|(v, w)| v.filter(|_| w != 0.0).map(|v| (v, w)))
        .map(|(v, w)| if w == 1.0 { v } else { g.scale(v, w) })
        .collect();
    let mut it = terms.into_iter();
    let first = it.next()?;
    Some(it.fold(first, |acc, v| g.add(acc, v)))
}
