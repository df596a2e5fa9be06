//! The full multi-task model: encoder, shared span representations, task
//! heads and beam pruning.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore};
use crate::corpus::Document;
use crate::decoder::{decode, PredictedDocument};
use crate::encoder::{ContextualStore, EncoderConfig, EncoderParams, Mode, Vocab};
use crate::error::Result;
use crate::scorer::{
    assemble_distributions, assemble_log_probs, pairwise_vars, unary_vars, LogProbVars, PairKind,
    PairwiseScores, ScorerParams, TaskDistributions, UnaryScores,
};
use crate::spanspace::{check_ratio, enumerate_spans, pair_candidates, prune, Beam, BeamKind, SpanSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub ffnn_hidden: usize,
    pub ffnn_layers: usize,
    pub beam_coref: f64,
    pub beam_relation: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        check_ratio(self.beam_coref)?;
        check_ratio(self.beam_relation)?;
        if self.encoder.max_width < 1 {
            return Err(crate::Error::Config("max_width must be at least 1".into()));
        }
        if self.encoder.hidden == 0 || self.ffnn_hidden == 0 {
            return Err(crate::Error::Config("hidden sizes must be positive".into()));
        }
        if self.encoder.char_widths.contains(&0) {
            return Err(crate::Error::Config("character filter widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub encoder: EncoderParams,
    pub scorer: ScorerParams,
}

/// Beams chosen for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct Beams {
    pub coref: Beam,
    pub relation: Beam,
}

/// Graph nodes and index structures of one forward pass.
pub struct ForwardPass {
    pub space: SpanSpace,
    pub beams: Beams,
    pub relation_pairs: Vec<(usize, usize)>,
    /// `None` for a document without candidate spans.
    pub log_probs: Option<LogProbVars>,
    /// Unary and pairwise score nodes, kept for inference read-out.
    scores: Option<ScoreVars>,
}

struct ScoreVars {
    unary: crate::scorer::UnaryVars,
    relation_pair: Option<crate::autodiff::Var>,
    coref_pair: Option<crate::autodiff::Var>,
}

impl Model {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = EncoderParams::new(config.encoder.clone(), &vocab, &mut params, &mut rng);
        let scorer =
            ScorerParams::new(&mut params, config.encoder.span_dim(), config.ffnn_hidden, config.ffnn_layers, &mut rng);
        Ok(Model { config, vocab, params, encoder, scorer })
    }

    /// Runs the model on `doc`. Beams are chosen from the current mention
    /// scores unless `fixed_beams` is given.
    pub fn forward<'p>(
        &'p self,
        g: &mut Graph<'p>,
        doc: &Document,
        contextual: Option<&ContextualStore>,
        mode: &mut Mode<'_>,
        fixed_beams: Option<&Beams>,
    ) -> Result<ForwardPass> {
        let space = enumerate_spans(doc, self.config.encoder.max_width)?;
        let n = doc.num_tokens();
        let encoded = self.encoder.encode_tokens(g, doc, &self.vocab, contextual, mode)?;
        let empty_beam = |kind| Beam { kind, members: Vec::new(), capacity: 0 };
        let Some(encoded) = encoded.filter(|_| !space.is_empty()) else {
            return Ok(ForwardPass {
                space,
                beams: Beams { coref: empty_beam(BeamKind::Coref), relation: empty_beam(BeamKind::Relation) },
                relation_pairs: Vec::new(),
                log_probs: None,
                scores: None,
            });
        };
        let reprs = self.encoder.span_representations(g, &encoded, space.spans());
        let unary = unary_vars(g, &self.scorer, reprs.g, mode);
        let beams = match fixed_beams {
            Some(b) => b.clone(),
            None => {
                let mr = g.value(unary.mention_relation).data.clone();
                let mc = g.value(unary.mention_coref).data.clone();
                Beams {
                    coref: prune(&space, &mc, self.config.beam_coref, n, BeamKind::Coref)?,
                    relation: prune(&space, &mr, self.config.beam_relation, n, BeamKind::Relation)?,
                }
            }
        };
        let relation_pairs = pair_candidates(&space, &beams.relation);
        let log_probs =
            assemble_log_probs(g, &self.scorer, reprs.g, &unary, &relation_pairs, &beams.coref, mode);

        // Pair scores again for read-out; in eval mode this is cheap relative
        // to the encoder and keeps the log-prob assembly self-contained.
        let (relation_pair, coref_pair) = if matches!(mode, Mode::Eval) {
            let rp = (!relation_pairs.is_empty())
                .then(|| pairwise_vars(g, &self.scorer, reprs.g, &relation_pairs, PairKind::Relation, mode));
            let ante: Vec<(usize, usize)> = beams
                .coref
                .antecedent_pairs()
                .iter()
                .map(|&(k, a)| (beams.coref.members[k], beams.coref.members[a]))
                .collect();
            let cp = (!ante.is_empty()).then(|| pairwise_vars(g, &self.scorer, reprs.g, &ante, PairKind::Coref, mode));
            (rp, cp)
        } else {
            (None, None)
        };

        Ok(ForwardPass {
            space,
            beams,
            relation_pairs,
            log_probs: Some(log_probs),
            scores: Some(ScoreVars { unary, relation_pair, coref_pair }),
        })
    }

    /// Inference: unary and pairwise scores read out of the graph and
    /// normalized by [`assemble_distributions`].
    pub fn distributions(
        &self,
        doc: &Document,
        contextual: Option<&ContextualStore>,
    ) -> Result<(SpanSpace, TaskDistributions)> {
        let mut g = Graph::new(&self.params);
        let pass = self.forward(&mut g, doc, contextual, &mut Mode::Eval, None)?;
        let Some(scores) = pass.scores else {
            return Ok((pass.space, TaskDistributions::default()));
        };
        let entity = g.value(scores.unary.entity);
        let mr = g.value(scores.unary.mention_relation);
        let mc = g.value(scores.unary.mention_coref);
        let unary: Vec<UnaryScores> = (0..pass.space.len())
            .map(|i| UnaryScores {
                entity: entity.row(i).to_vec(),
                mention_relation: mr.data[i],
                mention_coref: mc.data[i],
            })
            .collect();
        let relation = scores
            .relation_pair
            .map(|v| {
                let t = g.value(v);
                (0..t.rows).map(|r| t.row(r).to_vec()).collect()
            })
            .unwrap_or_default();
        let coref = scores.coref_pair.map(|v| g.value(v).data.clone()).unwrap_or_default();
        let dists = assemble_distributions(
            &unary,
            &pass.relation_pairs,
            &pass.beams.coref,
            &PairwiseScores { relation, coref },
        );
        Ok((pass.space, dists))
    }

    pub fn predict(&self, doc: &Document, contextual: Option<&ContextualStore>) -> Result<PredictedDocument> {
        let (space, dists) = self.distributions(doc, contextual)?;
        Ok(decode(doc, &space, &dists))
    }
}
