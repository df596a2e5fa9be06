//! The joint objective and the optimization loop.

mod checkpoint;
mod config;
mod gradcheck;
mod loss;
mod optim;

pub use checkpoint::Checkpoint;
pub use config::{LossWeights, TrainConfig};
pub use gradcheck::{check_config, check_document, gradient_check, perturb_parameters, relative_error, GradientCheck};
pub use loss::{
    coref_loss, coref_targets, entity_loss, loss_vars, objective_var, relation_loss, total_objective, LossVars,
    TaskLosses,
};
pub use optim::{global_norm, Adam, AdamState};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor};
use crate::corpus::{derive_gold, Document, GoldAssignment};
use crate::encoder::{ContextualStore, Mode, Vocab};
use crate::error::{Error, Result, ValidationError};
use crate::metrics::EvalReport;
use crate::model::{Beams, Model};
use crate::spanspace::enumerate_spans;

/// Losses, weighted objective and parameter gradients of one document.
#[derive(Debug, Clone)]
pub struct DocumentGradient {
    pub losses: TaskLosses,
    pub objective: f64,
    /// One tensor per parameter; all zeros when the objective has no terms.
    pub grads: Vec<Tensor>,
    pub beams: Beams,
}

/// Gold targets aligned with the document's span space.
pub fn gold_for(doc: &Document, max_width: usize) -> Result<GoldAssignment> {
    let space = enumerate_spans(doc, max_width)?;
    Ok(derive_gold(doc, &space)?)
}

pub fn document_gradient(
    model: &Model,
    doc: &Document,
    gold: &GoldAssignment,
    weights: &LossWeights,
    contextual: Option<&ContextualStore>,
    mode: &mut Mode<'_>,
    fixed_beams: Option<&Beams>,
) -> Result<DocumentGradient> {
    let mut g = Graph::new(&model.params);
    let pass = model.forward(&mut g, doc, contextual, mode, fixed_beams)?;
    let vars = loss_vars(&mut g, &pass, gold);
    let losses = vars.values(&g);
    let (objective, grads) = match objective_var(&mut g, &vars, weights) {
        Some(obj) => (g.scalar(obj), g.backward(obj)),
        None => (0.0, model.params.zeros_like()),
    };
    Ok(DocumentGradient { losses, objective, grads, beams: pass.beams })
}

/// Weighted objective with beams held fixed, no dropout, no gradients.
pub fn document_objective(
    model: &Model,
    doc: &Document,
    gold: &GoldAssignment,
    weights: &LossWeights,
    contextual: Option<&ContextualStore>,
    beams: Option<&Beams>,
) -> Result<f64> {
    let mut g = Graph::new(&model.params);
    let pass = model.forward(&mut g, doc, contextual, &mut Mode::Eval, beams)?;
    let vars = loss_vars(&mut g, &pass, gold);
    Ok(objective_var(&mut g, &vars, weights).map_or(0.0, |v| g.scalar(v)))
}

pub fn predict_all(model: &Model, docs: &[Document], contextual: Option<&ContextualStore>) -> Result<Vec<Document>> {
    docs.iter().map(|d| Ok(model.predict(d, contextual)?.into_document())).collect()
}

pub fn evaluate_model(model: &Model, gold: &[Document], contextual: Option<&ContextualStore>) -> Result<EvalReport> {
    let pred = predict_all(model, gold, contextual)?;
    Ok(EvalReport::compute(gold, &pred)?)
}

/// Losses recorded after one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub losses: TaskLosses,
    pub total: f64,
}

/// Tab-separated training log: `step, L_E, L_R, L_C, total`.
pub fn loss_log_tsv(records: &[LossRecord]) -> String {
    let mut out = String::from("step\tentity\trelation\tcoref\ttotal\n");
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{:.9}\t{:.9}\t{:.9}\t{:.9}",
            r.step, r.losses.entity, r.losses.relation, r.losses.coref, r.total
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The best checkpoint by dev average F1, or the final one without a
    /// dev set.
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
    /// `(step, average F1)` for every dev evaluation.
    pub dev_scores: Vec<(usize, f64)>,
}

/// Trains from scratch, one document per step, visiting the corpus in a
/// seeded random order that is reshuffled every epoch.
pub fn train(
    train_docs: &[Document],
    dev_docs: Option<&[Document]>,
    config: &TrainConfig,
    contextual: Option<&ContextualStore>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_docs.is_empty() {
        return Err(ValidationError::EmptyCorpus("training".into()).into());
    }
    let golds = train_docs
        .iter()
        .map(|d| {
            let gold = gold_for(d, config.max_width)?;
            if gold.dropped_count() > 0 {
                log::warn!("{}: {} gold spans exceed the width cap", d.doc_key, gold.dropped_count());
            }
            Ok(gold)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut model = Model::new(config.model_config(), Vocab::build(train_docs), config.seed)?;
    let mut adam = Adam::new(&model.params, config.learning_rate, config.decay_rate, config.decay_steps, config.clip_norm);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let weights = config.weights();
    let dropout = config.dropout();

    let mut log = Vec::with_capacity(config.max_steps);
    let mut dev_scores = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let snapshot = |model: &Model, adam: &Adam, step: usize| Checkpoint {
        config: config.clone(),
        model: model.clone(),
        optimizer: Some(adam.state.clone()),
        step,
    };

    let mut order: Vec<usize> = Vec::new();
    for step in 1..=config.max_steps {
        if order.is_empty() {
            order = (0..train_docs.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let i = order.pop().expect("refilled above");
        let mut mode = Mode::Train { rng: &mut rng, dropout };
        let dg = document_gradient(&model, &train_docs[i], &golds[i], &weights, contextual, &mut mode, None)?;
        if !dg.objective.is_finite() || dg.grads.iter().any(|t| t.data.iter().any(|x| !x.is_finite())) {
            return Err(Error::Diverged { step });
        }
        adam.step(&mut model.params, dg.grads);
        log.push(LossRecord { step, losses: dg.losses, total: dg.objective });

        let evaluate_now = config.eval_every > 0 && step % config.eval_every == 0 || step == config.max_steps;
        if let (Some(dev), true) = (dev_docs, evaluate_now) {
            let f1 = evaluate_model(&model, dev, contextual)?.average_f1();
            log::info!("step {step}: dev average F1 {f1:.4}");
            dev_scores.push((step, f1));
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                let ck = snapshot(&model, &adam, step);
                if let Some(path) = &config.checkpoint {
                    ck.save(path)?;
                }
                best = Some((f1, ck));
            }
        }
    }

    let checkpoint = match best {
        Some((_, ck)) => ck,
        None => {
            let ck = snapshot(&model, &adam, config.max_steps);
            if let Some(path) = &config.checkpoint {
                ck.save(path)?;
            }
            ck
        }
    };
    Ok(TrainOutcome { checkpoint, log, dev_scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityMention, RelationMention};
    use crate::labels::{EntityType, RelationType};

    pub(crate) fn tiny_train_config() -> TrainConfig {
        TrainConfig {
            word_dim: 4,
            char_dim: 3,
            char_filters: 2,
            char_widths: vec![2],
            hidden: 4,
            width_dim: 3,
            max_width: 3,
            ffnn_hidden: 6,
            ffnn_layers: 1,
            beam_coref: 0.5,
            beam_relation: 0.5,
            dropout_input: 0.0,
            dropout_lstm: 0.0,
            dropout_ffnn: 0.0,
            learning_rate: 0.01,
            max_steps: 30,
            eval_every: 0,
            ..TrainConfig::default()
        }
    }

    fn toy_doc(key: &str) -> Document {
        let mut d = Document::unannotated(
            key,
            vec![
                vec!["parsers".into(), "use".into(), "grammars".into()],
                vec!["they".into(), "are".into(), "fast".into()],
            ],
        );
        let a = d.span(0, 0).unwrap();
        let b = d.span(2, 2).unwrap();
        let c = d.span(3, 3).unwrap();
        d.entities = vec![
            EntityMention { span: a, label: EntityType::Method },
            EntityMention { span: b, label: EntityType::Material },
            EntityMention { span: c, label: EntityType::Generic },
        ];
        d.relations = vec![RelationMention { head: b, tail: a, label: RelationType::UsedFor }];
        d.clusters = vec![vec![a, c]];
        d
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let docs = vec![toy_doc("a"), toy_doc("b")];
        let cfg = tiny_train_config();
        let a = train(&docs, None, &cfg, None).unwrap();
        let b = train(&docs, None, &cfg, None).unwrap();
        assert_eq!(a.log, b.log);
        assert!(a.log.last().unwrap().total < a.log[0].total);
        assert_eq!(a.checkpoint.step, 30);
        let tsv = loss_log_tsv(&a.log);
        assert_eq!(tsv.lines().count(), 31);
        assert!(tsv.starts_with("step\tentity\trelation\tcoref\ttotal\n1\t"));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            train(&[], None, &tiny_train_config(), None),
            Err(Error::Validation(ValidationError::EmptyCorpus(_)))
        ));
    }

    #[test]
    fn dev_selection_keeps_best() {
        let docs = vec![toy_doc("a")];
        let cfg = TrainConfig { eval_every: 10, ..tiny_train_config() };
        let out = train(&docs, Some(&docs), &cfg, None).unwrap();
        assert_eq!(out.dev_scores.len(), 3);
        let best = out.dev_scores.iter().map(|s| s.1).fold(f64::MIN, f64::max);
        let first_best = out.dev_scores.iter().find(|s| s.1 == best).unwrap().0;
        assert_eq!(out.checkpoint.step, first_best);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let docs = vec![toy_doc("a")];
        let cfg = TrainConfig { max_steps: 5, ..tiny_train_config() };
        let out = train(&docs, None, &cfg, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        out.checkpoint.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.step, 5);
        assert_eq!(back.optimizer, out.checkpoint.optimizer);
        for (x, y) in back.model.params.iter().zip(out.checkpoint.model.params.iter()) {
            assert_eq!(x.value.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y.value.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        let (_, d1) = back.model.distributions(&docs[0], None).unwrap();
        let (_, d2) = out.checkpoint.model.distributions(&docs[0], None).unwrap();
        assert_eq!(d1, d2);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(Checkpoint::from_bytes(&bytes, &path), Err(Error::Checkpoint { .. })));
        assert!(matches!(Checkpoint::from_bytes(b"garbage", &path), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn zero_relation_weight_gives_zero_relation_gradients() {
        let doc = toy_doc("a");
        let cfg = TrainConfig { weight_relation: 0.0, ..tiny_train_config() };
        let model = Model::new(cfg.model_config(), Vocab::build([&doc]), 3).unwrap();
        let gold = gold_for(&doc, cfg.max_width).unwrap();
        let dg = document_gradient(&model, &doc, &gold, &cfg.weights(), None, &mut Mode::Eval, None).unwrap();
        let relation_ids: Vec<_> = model.scorer.relation_pair.param_ids().into_iter().chain(model.scorer.mention_relation.param_ids()).collect();
        for id in relation_ids {
            assert!(dg.grads[id.0].data.iter().all(|&x| x == 0.0), "{}", model.params.name(id));
        }
        assert!(dg.grads.iter().any(|t| t.data.iter().any(|&x| x != 0.0)));
    }

    #[test]
    fn scaling_weights_scales_objective_and_gradients() {
        let doc = toy_doc("a");
        let cfg = tiny_train_config();
        let model = Model::new(cfg.model_config(), Vocab::build([&doc]), 5).unwrap();
        let gold = gold_for(&doc, cfg.max_width).unwrap();
        let w = LossWeights { entity: 0.5, relation: 2.0, coref: 1.5 };
        let w3 = LossWeights { entity: 1.5, relation: 6.0, coref: 4.5 };
        let a = document_gradient(&model, &doc, &gold, &w, None, &mut Mode::Eval, None).unwrap();
        let b = document_gradient(&model, &doc, &gold, &w3, None, &mut Mode::Eval, None).unwrap();
        assert!((b.objective - 3.0 * a.objective).abs() < 1e-9 * b.objective.abs());
        let scale = global_norm(&b.grads);
        for (x, y) in a.grads.iter().zip(&b.grads) {
            for (p, q) in x.data.iter().zip(&y.data) {
                assert!((q - 3.0 * p).abs() <= 1e-12 * scale);
            }
        }
        assert_eq!(total_objective(&w, &[a.losses]), a.objective);
    }

    #[test]
    fn graph_losses_match_distribution_losses() {
        let doc = toy_doc("a");
        let cfg = tiny_train_config();
        let model = Model::new(cfg.model_config(), Vocab::build([&doc]), 9).unwrap();
        let gold = gold_for(&doc, cfg.max_width).unwrap();
        let dg = document_gradient(&model, &doc, &gold, &cfg.weights(), None, &mut Mode::Eval, None).unwrap();
        let (_, d) = model.distributions(&doc, None).unwrap();
        let targets = coref_targets(&d.coref_beam, &gold);
        assert!((dg.losses.entity - entity_loss(&d, &gold)).abs() < 1e-9);
        assert!((dg.losses.relation - relation_loss(&d, &gold)).abs() < 1e-9);
        assert!((dg.losses.coref - coref_loss(&d, &targets)).abs() < 1e-9);
    }
}
