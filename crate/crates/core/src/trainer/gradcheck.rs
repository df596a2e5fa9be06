use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::corpus::{Document, EntityMention, GoldAssignment, RelationMention};
use crate::encoder::{ContextualStore, Mode};
use crate::error::Result;
use crate::labels::{EntityType, RelationType};
use crate::model::{Beams, Model};

use super::{document_gradient, gold_for, loss_vars, objective_var, LossWeights, TrainConfig};

/// A two-sentence document exercising all three tasks.
pub fn check_document() -> Document {
    let mut d = Document::unannotated(
        "gradient-check",
        vec![
            "we use neural parsers for text".split(' ').map(String::from).collect(),
            "they are fast".split(' ').map(String::from).collect(),
        ],
    );
    let parsers = d.span(2, 3).expect("in range");
    let text = d.span(5, 5).expect("in range");
    let they = d.span(6, 6).expect("in range");
    d.entities = vec![
        EntityMention { span: parsers, label: EntityType::Method },
        EntityMention { span: text, label: EntityType::Material },
        EntityMention { span: they, label: EntityType::Generic },
    ];
    d.relations = vec![RelationMention { head: parsers, tail: text, label: RelationType::UsedFor }];
    d.clusters = vec![vec![parsers, they]];
    d
}

/// A hidden-4 configuration small enough to difference every parameter.
pub fn check_config() -> TrainConfig {
    TrainConfig {
        word_dim: 4,
        char_dim: 3,
        char_filters: 2,
        char_widths: vec![2],
        hidden: 4,
        width_dim: 3,
        max_width: 3,
        ffnn_hidden: 5,
        ffnn_layers: 2,
        beam_coref: 0.5,
        beam_relation: 0.5,
        ..TrainConfig::default()
    }
}

/// Adds uniform noise in `[-scale, scale)` to every parameter, so biases
/// and other zero-initialized values are random too.
pub fn perturb_parameters(model: &mut Model, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for x in model.params.get_mut(id).data.iter_mut() {
            *x += rng.gen_range(-scale..scale);
        }
    }
}

/// Gradient magnitudes below this are compared in absolute terms.
const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst compared entry.
    pub worst: Option<(String, usize)>,
    /// Scalars compared.
    pub checked: usize,
    /// Scalars whose difference interval crosses a ReLU or max-pool kink,
    /// where the central difference does not estimate the derivative.
    pub skipped_kinks: usize,
    pub objective: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

fn objective_and_pattern(
    model: &Model,
    doc: &Document,
    gold: &GoldAssignment,
    weights: &LossWeights,
    contextual: Option<&ContextualStore>,
    beams: &Beams,
) -> Result<(f64, Vec<usize>)> {
    let mut g = Graph::new(&model.params);
    let pass = model.forward(&mut g, doc, contextual, &mut Mode::Eval, Some(beams))?;
    let vars = loss_vars(&mut g, &pass, gold);
    let value = objective_var(&mut g, &vars, weights).map_or(0.0, |v| g.scalar(v));
    Ok((value, g.activation_pattern()))
}

/// Compares backpropagated gradients of the weighted objective against
/// central differences with step `step * max(1, |theta|)` for every scalar
/// parameter. Dropout is off and the beams chosen at the unperturbed
/// parameters are held fixed.
pub fn gradient_check(
    model: &Model,
    doc: &Document,
    weights: &LossWeights,
    contextual: Option<&ContextualStore>,
    step: f64,
) -> Result<GradientCheck> {
    let gold = gold_for(doc, model.config.encoder.max_width)?;
    let base = document_gradient(model, doc, &gold, weights, contextual, &mut Mode::Eval, None)?;
    let (_, base_pattern) = objective_and_pattern(model, doc, &gold, weights, contextual, &base.beams)?;
    let mut probe = model.clone();
    let mut report = GradientCheck {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
        objective: base.objective,
    };
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for k in 0..model.params.get(id).len() {
            let theta = model.params.get(id).data[k];
            let h = step * theta.abs().max(1.0);
            probe.params.get_mut(id).data[k] = theta + h;
            let (plus, plus_pattern) = objective_and_pattern(&probe, doc, &gold, weights, contextual, &base.beams)?;
            probe.params.get_mut(id).data[k] = theta - h;
            let (minus, minus_pattern) = objective_and_pattern(&probe, doc, &gold, weights, contextual, &base.beams)?;
            probe.params.get_mut(id).data[k] = theta;
            if plus_pattern != base_pattern || minus_pattern != base_pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(base.grads[id.0].data[k], numeric);
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err.max(report.max_relative_error);
                report.worst = Some((model.params.name(id).to_string(), k));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Vocab;
    use crate::trainer::tests::tiny_train_config;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 0.0) < 1e-5);
    }

    #[test]
    fn zero_parameters_have_zero_gradient() {
        let doc = Document::unannotated("z", vec![vec!["a".into(), "b".into()], vec!["c".into()]]);
        let cfg = tiny_train_config();
        let mut model = Model::new(cfg.model_config(), Vocab::build([&doc]), 0).unwrap();
        model.params.fill(0.0);
        let gold = gold_for(&doc, cfg.max_width).unwrap();
        let dg = document_gradient(&model, &doc, &gold, &cfg.weights(), None, &mut Mode::Eval, None).unwrap();
        assert!(dg.grads.iter().all(|t| t.data.iter().all(|&x| x == 0.0)));
    }
}
