//! Unary and pairwise span scores and their normalization into independent
//! per-span and per-pair distributions.
//!
//! Null outcomes always score 0: entity and relation logits get a leading
//! zero column and every antecedent row starts with a zero for the null
//! antecedent. All normalizations are log-softmax with max subtraction.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::encoder::{apply_mask, Mode};
use crate::error::{Error, Result};
use crate::labels::{EntityType, RelationType};
use crate::spanspace::Beam;

/// Feedforward network: ReLU hidden layers and a bias-free linear output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ffnn {
    hidden: Vec<(ParamId, ParamId)>,
    output: ParamId,
    input_dim: usize,
    output_dim: usize,
}

impl Ffnn {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        layers: usize,
        output_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut hidden = Vec::with_capacity(layers);
        let mut dim = input_dim;
        for l in 0..layers {
            let w = store.add(format!("{name}.hidden{l}.weight"), Tensor::glorot(dim, hidden_dim, rng));
            let b = store.add(format!("{name}.hidden{l}.bias"), Tensor::zeros(1, hidden_dim));
            hidden.push((w, b));
            dim = hidden_dim;
        }
        let output = store.add(format!("{name}.output"), Tensor::glorot(dim, output_dim, rng));
        Ffnn { hidden, output, input_dim, output_dim }
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.hidden.iter().flat_map(|&(w, b)| [w, b]).chain([self.output]).collect()
    }

    /// Row-wise application to an `N x input_dim` matrix.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, mode: &mut Mode<'_>) -> Var {
        let mut h = x;
        for &(w, b) in &self.hidden {
            let wv = g.param(w);
            let bv = g.param(b);
            let z = g.matmul(h, wv);
            let z = g.add_row(z, bv);
            h = g.relu(z);
            let rows = g.shape(h).0;
            let cols = g.shape(h).1;
            let mask = mode.mask(rows, cols, |d| d.ffnn);
            h = apply_mask(g, h, mask);
        }
        let out = g.param(self.output);
        g.matmul(h, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Relation,
    Coref,
}

/// The five task heads over shared span representations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScorerParams {
    pub entity: Ffnn,
    pub mention_relation: Ffnn,
    pub mention_coref: Ffnn,
    pub relation_pair: Ffnn,
    pub coref_pair: Ffnn,
}

impl ScorerParams {
    pub fn new(store: &mut ParamStore, span_dim: usize, hidden: usize, layers: usize, rng: &mut ChaCha8Rng) -> Self {
        let pair_dim = 3 * span_dim;
        ScorerParams {
            entity: Ffnn::new(store, "scorer.entity", span_dim, hidden, layers, EntityType::ALL.len(), rng),
            mention_relation: Ffnn::new(store, "scorer.mention_relation", span_dim, hidden, layers, 1, rng),
            mention_coref: Ffnn::new(store, "scorer.mention_coref", span_dim, hidden, layers, 1, rng),
            relation_pair: Ffnn::new(store, "scorer.relation_pair", pair_dim, hidden, layers, RelationType::ALL.len(), rng),
            coref_pair: Ffnn::new(store, "scorer.coref_pair", pair_dim, hidden, layers, 1, rng),
        }
    }
}

/// Unary scores for a batch of spans, as graph nodes.
pub struct UnaryVars {
    /// `N x 6`
    pub entity: Var,
    /// `N x 1`
    pub mention_relation: Var,
    /// `N x 1`
    pub mention_coref: Var,
}

pub fn unary_vars(g: &mut Graph<'_>, params: &ScorerParams, spans: Var, mode: &mut Mode<'_>) -> UnaryVars {
    UnaryVars {
        entity: params.entity.forward(g, spans, mode),
        mention_relation: params.mention_relation.forward(g, spans, mode),
        mention_coref: params.mention_coref.forward(g, spans, mode),
    }
}

/// Pair scores for `pairs` of rows of `spans`: the network sees
/// `[g_i, g_j, g_i * g_j]`.
pub fn pairwise_vars(
    g: &mut Graph<'_>,
    params: &ScorerParams,
    spans: Var,
    pairs: &[(usize, usize)],
    kind: PairKind,
    mode: &mut Mode<'_>,
) -> Var {
    let left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let gi = g.gather_rows(spans, &left);
    let gj = g.gather_rows(spans, &right);
    let prod = g.mul(gi, gj);
    let input = g.concat_cols(&[gi, gj, prod]);
    let net = match kind {
        PairKind::Relation => &params.relation_pair,
        PairKind::Coref => &params.coref_pair,
    };
    net.forward(g, input, mode)
}

/// Unary scores of one span representation.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryScores {
    pub entity: Vec<f64>,
    pub mention_relation: f64,
    pub mention_coref: f64,
}

pub fn unary_scores(store: &ParamStore, params: &ScorerParams, span_repr: &[f64]) -> UnaryScores {
    let mut g = Graph::new(store);
    let x = g.constant(Tensor::row_vector(span_repr.to_vec()));
    let u = unary_vars(&mut g, params, x, &mut Mode::Eval);
    UnaryScores {
        entity: g.value(u.entity).data.clone(),
        mention_relation: g.scalar(u.mention_relation),
        mention_coref: g.scalar(u.mention_coref),
    }
}

/// Relation kind returns one score per non-null relation type; coreference
/// kind a single score.
pub fn pairwise_score(
    store: &ParamStore,
    params: &ScorerParams,
    gi: &[f64],
    gj: &[f64],
    kind: PairKind,
) -> Result<Vec<f64>> {
    if gi.len() != gj.len() {
        return Err(Error::Model(format!("span representations of dimension {} and {}", gi.len(), gj.len())));
    }
    let mut g = Graph::new(store);
    let x = g.constant(Tensor::from_vec(2, gi.len(), gi.iter().chain(gj).copied().collect()));
    let s = pairwise_vars(&mut g, params, x, &[(0, 1)], kind, &mut Mode::Eval);
    Ok(g.value(s).data.clone())
}

/// Normalized distributions for one document.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskDistributions {
    /// Per enumerated span, probabilities over `[null, Task, Method, ...]`.
    pub entity: Vec<Vec<f64>>,
    /// Ordered span-position pairs with both ends in the relation beam.
    pub relation_pairs: Vec<(usize, usize)>,
    /// Per pair, probabilities over `[null, Compare, Part-of, ...]`.
    pub relation: Vec<Vec<f64>>,
    /// Span positions in the coreference beam, canonical order.
    pub coref_beam: Vec<usize>,
    /// For beam member `k`, probabilities over `[null, member 0, ..., member k-1]`.
    pub coref: Vec<Vec<f64>>,
}

/// Pair scores aligned with the relation pairs and the coreference
/// antecedent pairs (`Beam::antecedent_pairs` order).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairwiseScores {
    pub relation: Vec<Vec<f64>>,
    pub coref: Vec<f64>,
}

fn softmax_with_null(scores: impl Iterator<Item = f64>) -> Vec<f64> {
    let logits: Vec<f64> = std::iter::once(0.0).chain(scores).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Combines unary and pairwise scores into the three families of
/// distributions: `Phi_R(r, i, j) = mr(i) + mr(j) + r(i, j)[r]`,
/// `Phi_C(i, j) = mc(i) + mc(j) + c(i, j)`, nulls fixed at 0.
pub fn assemble_distributions(
    unary: &[UnaryScores],
    relation_pairs: &[(usize, usize)],
    coref_beam: &Beam,
    pairwise: &PairwiseScores,
) -> TaskDistributions {
    let entity = unary.iter().map(|u| softmax_with_null(u.entity.iter().copied())).collect();
    let relation = relation_pairs
        .iter()
        .zip(&pairwise.relation)
        .map(|(&(i, j), scores)| {
            let base = unary[i].mention_relation + unary[j].mention_relation;
            softmax_with_null(scores.iter().map(|s| s + base))
        })
        .collect();
    let members = &coref_beam.members;
    let mut coref = Vec::with_capacity(members.len());
    let mut next = 0;
    for (k, &i) in members.iter().enumerate() {
        let scores = (0..k).map(|a| {
            let j = members[a];
            
            unary[i].mention_coref + unary[j].mention_coref + pairwise.coref[next + a]
        });
        coref.push(softmax_with_null(scores));
        next += k;
    }
    TaskDistributions {
        entity,
        relation_pairs: relation_pairs.to_vec(),
        relation,
        coref_beam: members.clone(),
        coref,
    }
}

/// Log-probability nodes for one document.
pub struct LogProbVars {
    /// `N x 7`
    pub entity: Var,
    /// `P x 8`, or `None` without relation candidates.
    pub relation: Option<Var>,
    /// `m x (m + 1)`, column 0 the null antecedent and column `1 + a` beam
    /// member `a`; entries for non-earlier members are `-inf`.
    pub coref: Option<Var>,
}

/// Graph-side counterpart of [`assemble_distributions`], in log space.
pub fn assemble_log_probs(
    g: &mut Graph<'_>,
    params: &ScorerParams,
    spans: Var,
    unary: &UnaryVars,
    relation_pairs: &[(usize, usize)],
    coref_beam: &Beam,
    mode: &mut Mode<'_>,
) -> LogProbVars {
    let n = g.shape(spans).0;
    let zeros = g.constant(Tensor::zeros(n, 1));
    let entity_logits = g.concat_cols(&[zeros, unary.entity]);
    let entity = g.log_softmax_rows(entity_logits);

    let relation = if relation_pairs.is_empty() {
        None
    } else {
        let p = relation_pairs.len();
        let pair = pairwise_vars(g, params, spans, relation_pairs, PairKind::Relation, mode);
        let left: Vec<usize> = relation_pairs.iter().map(|x| x.0).collect();
        let right: Vec<usize> = relation_pairs.iter().map(|x| x.1).collect();
        let ml = g.gather_rows(unary.mention_relation, &left);
        let mr = g.gather_rows(unary.mention_relation, &right);
        let mention = g.add(ml, mr);
        let phi = g.add_col(pair, mention);
        let zeros = g.constant(Tensor::zeros(p, 1));
        let logits = g.concat_cols(&[zeros, phi]);
        Some(g.log_softmax_rows(logits))
    };

    let m = coref_beam.members.len();
    let coref = if m == 0 {
        None
    } else {
        let mut base = Tensor::filled(m, m + 1, f64::NEG_INFINITY);
        for k in 0..m {
            base.data[k * (m + 1)] = 0.0;
        }
        let ante = coref_beam.antecedent_pairs();
        let logits = if ante.is_empty() {
            g.constant(base)
        } else {
            let span_pairs: Vec<(usize, usize)> =
                ante.iter().map(|&(k, a)| (coref_beam.members[k], coref_beam.members[a])).collect();
            let pair = pairwise_vars(g, params, spans, &span_pairs, PairKind::Coref, mode);
            let left: Vec<usize> = span_pairs.iter().map(|x| x.0).collect();
            let right: Vec<usize> = span_pairs.iter().map(|x| x.1).collect();
            let ml = g.gather_rows(unary.mention_coref, &left);
            let mr = g.gather_rows(unary.mention_coref, &right);
            let mention = g.add(ml, mr);
            let phi = g.add(pair, mention);
            let positions: Vec<(usize, usize)> = ante.iter().map(|&(k, a)| (k, a + 1)).collect();
            g.scatter(base, phi, &positions)
        };
        Some(g.log_softmax_rows(logits))
    };

    LogProbVars { entity, relation, coref }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spanspace::BeamKind;
    use rand::SeedableRng;

    fn scorer(span_dim: usize, hidden: usize) -> (ScorerParams, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ScorerParams::new(&mut store, span_dim, hidden, 2, &mut rng);
        (p, store)
    }

    #[test]
    fn head_output_sizes() {
        let (p, _) = scorer(4, 3);
        assert_eq!(p.entity.output_dim(), EntityType::NUM_LABELS - 1);
        assert_eq!(p.relation_pair.output_dim(), RelationType::NUM_LABELS - 1);
        assert_eq!(p.mention_coref.output_dim(), 1);
        assert_eq!(p.coref_pair.output_dim(), 1);
        assert_eq!(p.relation_pair.input_dim(), 12);
    }

    #[test]
    fn zero_parameters_give_zero_scores() {
        let (p, mut store) = scorer(4, 3);
        store.fill(0.0);
        let u = unary_scores(&store, &p, &[0.3, -1.0, 2.0, 0.5]);
        assert!(u.entity.iter().all(|&s| s == 0.0));
        assert_eq!((u.mention_relation, u.mention_coref), (0.0, 0.0));
        let r = pairwise_score(&store, &p, &[1.0; 4], &[2.0; 4], PairKind::Relation).unwrap();
        assert_eq!(r, vec![0.0; 7]);
    }

    #[test]
    fn identical_inputs_identical_scores() {
        let (p, store) = scorer(4, 3);
        let a = unary_scores(&store, &p, &[0.1, 0.2, 0.3, 0.4]);
        let b = unary_scores(&store, &p, &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(a, b);
    }

    #[test]
    fn hand_computed_forward_pass() {
        // 2-dim input, one hidden layer of 2 units, scalar output.
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Ffnn::new(&mut store, "t", 2, 2, 1, 1, &mut rng);
        let ids = net.param_ids();
        *store.get_mut(ids[0]) = Tensor::from_vec(2, 2, vec![1.0, -1.0, 2.0, 0.5]);
        *store.get_mut(ids[1]) = Tensor::from_vec(1, 2, vec![0.5, -3.0]);
        *store.get_mut(ids[2]) = Tensor::from_vec(2, 1, vec![2.0, 7.0]);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::row_vector(vec![1.0, 2.0]));
        let y = net.forward(&mut g, x, &mut Mode::Eval);
        // hidden pre-activation: [1*1 + 2*2 + 0.5, 1*-1 + 2*0.5 - 3] = [5.5, -3]
        // relu -> [5.5, 0]; output 2 * 5.5 + 7 * 0 = 11
        assert_eq!(g.scalar(y), 11.0);
    }

    #[test]
    fn pairwise_input_uses_elementwise_product() {
        let (p, store) = scorer(3, 4);
        let gi = [0.5, -0.2, 0.9];
        let r1 = pairwise_score(&store, &p, &gi, &[0.0; 3], PairKind::Relation).unwrap();
        let r2 = pairwise_score(&store, &p, &[0.0; 3], &gi, PairKind::Relation).unwrap();
        // swapping arguments changes ordered-pair scores
        assert_ne!(r1, r2);
        let c = pairwise_score(&store, &p, &gi, &[0.1, 0.2, 0.3], PairKind::Coref).unwrap();
        assert_eq!(c.len(), 1);
        assert!(pairwise_score(&store, &p, &gi, &[0.0; 2], PairKind::Coref).is_err());

        // the product block of the input is all zeros when g_j is zero
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::from_vec(2, 3, gi.iter().copied().chain([0.0; 3]).collect()));
        let left = g.gather_rows(x, &[0]);
        let right = g.gather_rows(x, &[1]);
        let prod = g.mul(left, right);
        assert!(g.value(prod).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_entity_distribution_from_zero_scores() {
        let unary = vec![UnaryScores { entity: vec![0.0; 6], mention_relation: 0.0, mention_coref: 0.0 }];
        let beam = Beam { kind: BeamKind::Coref, members: vec![0], capacity: 1 };
        let d = assemble_distributions(&unary, &[], &beam, &PairwiseScores::default());
        for p in &d.entity[0] {
            assert!((p - 1.0 / 7.0).abs() < 1e-15);
        }
        // first beam member has only the null antecedent
        assert_eq!(d.coref[0], vec![1.0]);
    }

    #[test]
    fn antecedent_softmax_arithmetic() {
        let unary = vec![UnaryScores { entity: vec![0.0; 6], mention_relation: 0.0, mention_coref: 0.0 }; 3];
        let beam = Beam { kind: BeamKind::Coref, members: vec![0, 1, 2], capacity: 3 };
        // antecedent pairs: (1,0), (2,0), (2,1)
        let pairwise = PairwiseScores { relation: vec![], coref: vec![0.0, 2f64.ln(), 0.0] };
        let d = assemble_distributions(&unary, &[], &beam, &pairwise);
        // oracle: exp([0, ln 2, 0]) / (1 + 2 + 1)
        let expected = [0.25, 0.5, 0.25];
        for (p, e) in d.coref[2].iter().zip(expected) {
            assert!((p - e).abs() < 1e-15, "{p} vs {e}");
        }
    }

    #[test]
    fn null_score_convention() {
        let base = vec![0.3, -0.2, 1.0, 0.0, 0.5, -1.0];
        let p0 = softmax_with_null(base.iter().copied());
        let shifted = softmax_with_null(base.iter().map(|x| x + 0.7));
        let argmax = |p: &[f64]| {
            let mut order: Vec<usize> = (1..p.len()).collect();
            order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
            order
        };
        assert_eq!(argmax(&p0), argmax(&shifted));
        assert!(shifted[0] < p0[0]);
        let mut raised = base.clone();
        raised[4] += 0.1;
        assert!(softmax_with_null(raised.into_iter())[0] < p0[0]);
    }

    #[test]
    fn graph_and_direct_assembly_agree() {
        let (p, store) = scorer(4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let reprs = Tensor::uniform(4, 4, 1.0, &mut rng);
        let pairs = vec![(0, 1), (1, 0), (2, 3)];
        let beam = Beam { kind: BeamKind::Coref, members: vec![0, 2, 3], capacity: 3 };

        let mut g = Graph::new(&store);
        let x = g.constant(reprs.clone());
        let u = unary_vars(&mut g, &p, x, &mut Mode::Eval);
        let lp = assemble_log_probs(&mut g, &p, x, &u, &pairs, &beam, &mut Mode::Eval);

        let unary: Vec<UnaryScores> = (0..4).map(|i| unary_scores(&store, &p, reprs.row(i))).collect();
        let relation = pairs
            .iter()
            .map(|&(i, j)| pairwise_score(&store, &p, reprs.row(i), reprs.row(j), PairKind::Relation).unwrap())
            .collect();
        let coref = beam
            .antecedent_pairs()
            .iter()
            .map(|&(k, a)| {
                let (i, j) = (beam.members[k], beam.members[a]);
                pairwise_score(&store, &p, reprs.row(i), reprs.row(j), PairKind::Coref).unwrap()[0]
            })
            .collect();
        let d = assemble_distributions(&unary, &pairs, &beam, &PairwiseScores { relation, coref });

        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        let ent = g.value(lp.entity);
        for (i, row) in d.entity.iter().enumerate() {
            assert!(row.iter().enumerate().all(|(c, &p)| close(p, ent.get(i, c).exp())));
        }
        let rel = g.value(lp.relation.unwrap());
        for (k, row) in d.relation.iter().enumerate() {
            assert!(row.iter().enumerate().all(|(c, &p)| close(p, rel.get(k, c).exp())));
        }
        let co = g.value(lp.coref.unwrap());
        for (k, row) in d.coref.iter().enumerate() {
            assert_eq!(row.len(), k + 1);
            assert!(row.iter().enumerate().all(|(c, &p)| close(p, co.get(k, c).exp())));
            for c in k + 1..=3 {
                assert_eq!(co.get(k, c).exp(), 0.0);
            }
        }
    }

    #[test]
    fn mention_coref_weights_are_shared_across_arguments() {
        // Phi_C(i, j) - c(i, j) = mc(i) + mc(j) uses one head for both sides.
        let (p, store) = scorer(2, 3);
        let gi = [0.4, -0.7];
        let gj = [1.1, 0.2];
        let ui = unary_scores(&store, &p, &gi);
        let uj = unary_scores(&store, &p, &gj);
        let c = pairwise_score(&store, &p, &gj, &gi, PairKind::Coref).unwrap()[0];
        let unary = vec![ui.clone(), uj.clone()];
        let beam = Beam { kind: BeamKind::Coref, members: vec![0, 1], capacity: 2 };
        let d = assemble_distributions(&unary, &[], &beam, &PairwiseScores { relation: vec![], coref: vec![c] });
        let phi = ui.mention_coref + uj.mention_coref + c;
        let expected = phi.exp() / (1.0 + phi.exp());
        assert!((d.coref[1][1] - expected).abs() < 1e-12);
    }
}
