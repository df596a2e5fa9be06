#![allow(dead_code)]

use sciextract::corpus::{Document, EntityMention, RelationMention};
use sciextract::labels::{EntityType, RelationType};
use sciextract::trainer::TrainConfig;

/// One synthetic abstract: `we use M for T on D .` / `it improves S .`
/// with `it` corefering with the method. Every label has its own words.
fn toy_doc(key: &str, method: &str, task: &str, data: &str, metric: &str) -> Document {
    let s1 = format!("we use {method} for {task} on {data} .");
    let s2 = format!("it improves {metric} .");
    let tok = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    let mut d = Document::unannotated(key, vec![tok(&s1), tok(&s2)]);
    let m = d.span(2, 2).unwrap();
    let t = d.span(4, 4).unwrap();
    let x = d.span(6, 6).unwrap();
    let it = d.span(8, 8).unwrap();
    let s = d.span(10, 10).unwrap();
    d.entities = vec![
        EntityMention { span: m, label: EntityType::Method },
        EntityMention { span: t, label: EntityType::Task },
        EntityMention { span: x, label: EntityType::Material },
        EntityMention { span: it, label: EntityType::Generic },
        EntityMention { span: s, label: EntityType::Metric },
    ];
    d.relations = vec![
        RelationMention { head: m, tail: t, label: RelationType::UsedFor },
        RelationMention { head: x, tail: t, label: RelationType::EvaluateFor },
    ];
    d.clusters = vec![vec![m, it]];
    d
}

pub fn toy_corpus() -> Vec<Document> {
    let rows = [
        ("lstm", "parsing", "treebank", "accuracy"),
        ("crf", "tagging", "wikipedia", "recall"),
        ("svm", "summarization", "newswire", "bleu"),
        ("transformer", "translation", "europarl", "rouge"),
        ("perceptron", "chunking", "tweets", "precision"),
    ];
    rows.iter()
        .enumerate()
        .map(|(i, (m, t, d, s))| toy_doc(&format!("toy{i}"), m, t, d, s))
        .collect()
}

pub fn overfit_config() -> TrainConfig {
    TrainConfig {
        word_dim: 16,
        char_dim: 8,
        char_filters: 8,
        char_widths: vec![2, 3],
        hidden: 16,
        width_dim: 8,
        max_width: 3,
        ffnn_hidden: 32,
        ffnn_layers: 2,
        dropout_input: 0.0,
        dropout_lstm: 0.0,
        dropout_ffnn: 0.0,
        learning_rate: 0.01,
        decay_rate: 1.0,
        max_steps: 500,
        eval_every: 0,
        beam_coref: 1.0,
        beam_relation: 1.0,
        seed: 7,
        ..TrainConfig::default()
    }
}
