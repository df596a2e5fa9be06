//! Token encoder and shared span representations.
//!
//! Each token's input is the concatenation of a word embedding, a
//! character-CNN summary and (optionally) a precomputed contextual vector.
//! Sentences are encoded independently by a one-layer bidirectional LSTM.
//! A span is represented by
//! `[state(start); state(end); attention-weighted head; width embedding]`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::corpus::{Document, Span};
use crate::error::{Error, Result};

pub const UNK_WORD: usize = 0;
pub const PAD_CHAR: usize = 0;
pub const UNK_CHAR: usize = 1;

/// Which vectors the head attention averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionValues {
    /// Contextualized token states.
    #[default]
    States,
    /// Token inputs before the recurrent layer.
    Inputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_widths: Vec<usize>,
    pub hidden: usize,
    pub width_dim: usize,
    pub max_width: usize,
    /// Dimension of the precomputed contextual vectors; 0 disables the hook.
    pub contextual_dim: usize,
    pub attention_values: AttentionValues,
}

impl EncoderConfig {
    pub fn input_dim(&self) -> usize {
        self.word_dim + self.char_filters * self.char_widths.len() + self.contextual_dim
    }

    pub fn state_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn value_dim(&self) -> usize {
        match self.attention_values {
            AttentionValues::States => self.state_dim(),
            AttentionValues::Inputs => self.input_dim(),
        }
    }

    /// Dimension of a span representation.
    pub fn span_dim(&self) -> usize {
        2 * self.state_dim() + self.value_dim() + self.width_dim
    }
}

/// Word and character vocabularies. Index 0 of the word table is the
/// unknown word; the character table reserves padding and unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    words: Vec<String>,
    chars: Vec<char>,
    word_index: HashMap<String, usize>,
    char_index: HashMap<char, usize>,
}

#[derive(Clone, Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
    chars: Vec<char>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        let mut v = Vocab { words: r.words, chars: r.chars, word_index: HashMap::new(), char_index: HashMap::new() };
        v.reindex();
        v
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { words: v.words, chars: v.chars }
    }
}

impl Vocab {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut words = BTreeSet::new();
        let mut chars = BTreeSet::new();
        for doc in docs {
            for token in doc.sentences.iter().flatten() {
                chars.extend(token.chars());
                words.insert(token.clone());
            }
        }
        let mut vocab = Vocab {
            words: std::iter::once("<unk>".to_string()).chain(words).collect(),
            chars: ['\u{0}', '\u{1}'].into_iter().chain(chars).collect(),
            word_index: HashMap::new(),
            char_index: HashMap::new(),
        };
        vocab.reindex();
        vocab
    }

    fn reindex(&mut self) {
        self.word_index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        self.char_index = self.chars.iter().enumerate().skip(2).map(|(i, &c)| (c, i)).collect();
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.word_index.get(word).copied().unwrap_or(UNK_WORD)
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(UNK_CHAR)
    }
}

/// Precomputed per-token contextual vectors keyed by document.
///
/// File format: JSON lines; the first line is a header `{"dim": D}`, every
/// following line is `{"doc_key": ..., "sentences": [[[f64; D], ...], ...]}`.
#[derive(Debug, Clone, Default)]
pub struct ContextualStore {
    dim: usize,
    docs: HashMap<String, Vec<Vec<Vec<f64>>>>,
}

#[derive(Deserialize)]
struct ContextHeader {
    dim: usize,
}

#[derive(Deserialize)]
struct ContextRecord {
    doc_key: String,
    sentences: Vec<Vec<Vec<f64>>>,
}

impl ContextualStore {
    pub fn new(dim: usize) -> Self {
        ContextualStore { dim, docs: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, doc_key: impl Into<String>, sentences: Vec<Vec<Vec<f64>>>) -> Result<()> {
        let doc_key = doc_key.into();
        if let Some(bad) = sentences.iter().flatten().find(|v| v.len() != self.dim) {
            return Err(Error::Model(format!(
                "contextual vector of dimension {} for {doc_key}, header declares {}",
                bad.len(),
                self.dim
            )));
        }
        self.docs.insert(doc_key, sentences);
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_to_string(path)?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, source| Error::Parse { path: path.to_path_buf(), line, source };
        let (i, header) = lines
            .next()
            .ok_or_else(|| Error::Model(format!("{}: missing header line", path.display())))?;
        let header: ContextHeader = serde_json::from_str(header).map_err(|e| parse_err(i + 1, e))?;
        let mut store = ContextualStore::new(header.dim);
        for (i, line) in lines {
            let rec: ContextRecord = serde_json::from_str(line).map_err(|e| parse_err(i + 1, e))?;
            store.insert(rec.doc_key, rec.sentences)?;
        }
        Ok(store)
    }

    fn vector(&self, doc_key: &str, sentence: usize, token: usize) -> Result<&[f64]> {
        self.docs
            .get(doc_key)
            .and_then(|s| s.get(sentence))
            .and_then(|t| t.get(token))
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::Model(format!(
                    "contextual embedding missing for ({doc_key}, sentence {sentence}, token {token})"
                ))
            })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LstmParams {
    input: ParamId,
    recurrent: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConvFilter {
    width: usize,
    weight: ParamId,
    bias: ParamId,
}

/// Parameter handles of the encoder inside a [`ParamStore`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    word_emb: ParamId,
    char_emb: ParamId,
    conv: Vec<ConvFilter>,
    forward: LstmParams,
    backward: LstmParams,
    attn_weight: ParamId,
    attn_bias: ParamId,
    width_emb: ParamId,
}

/// Dropout rates applied in training mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub input: f64,
    pub lstm: f64,
    pub ffnn: f64,
}

impl Dropout {
    pub const NONE: Dropout = Dropout { input: 0.0, lstm: 0.0, ffnn: 0.0 };
}

/// Inference is deterministic; training draws dropout masks from `rng`.
pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng, dropout: Dropout },
}

impl Mode<'_> {
    /// Inverted-dropout mask of shape `rows x cols`, or `None` when inactive.
    pub(crate) fn mask(&mut self, rows: usize, cols: usize, pick: fn(&Dropout) -> f64) -> Option<Tensor> {
        match self {
            Mode::Eval => None,
            Mode::Train { rng, dropout } => {
                let p = pick(dropout);
                if p <= 0.0 {
                    return None;
                }
                let keep = 1.0 - p;
                let data = (0..rows * cols)
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                Some(Tensor::from_vec(rows, cols, data))
            }
        }
    }
}

pub(crate) fn apply_mask(g: &mut Graph<'_>, x: Var, mask: Option<Tensor>) -> Var {
    match mask {
        Some(m) => {
            let m = g.constant(m);
            g.mul(x, m)
        }
        None => x,
    }
}

/// Token inputs and contextualized states for a whole document.
pub struct EncodedDoc {
    /// `n x input_dim`
    pub inputs: Var,
    /// `n x 2*hidden`
    pub states: Var,
}

/// Batched span representations.
pub struct SpanReprs {
    /// `N x span_dim`
    pub g: Var,
    /// The head-attention node; its weights are exposed by
    /// [`Graph::attention_weights`].
    pub attention: Var,
}

impl EncoderParams {
    pub fn new(config: EncoderConfig, vocab: &Vocab, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let c = &config;
        let word_emb = store.add("encoder.word_emb", Tensor::uniform(vocab.num_words(), c.word_dim, 0.5, rng));
        let mut char_table = Tensor::uniform(vocab.num_chars(), c.char_dim, 0.5, rng);
        char_table.data[PAD_CHAR * c.char_dim..(PAD_CHAR + 1) * c.char_dim].fill(0.0);
        let char_emb = store.add("encoder.char_emb", char_table);
        let conv = c
            .char_widths
            .iter()
            .map(|&width| ConvFilter {
                width,
                weight: store.add(
                    format!("encoder.conv{width}.weight"),
                    Tensor::glorot(width * c.char_dim, c.char_filters, rng),
                ),
                bias: store.add(format!("encoder.conv{width}.bias"), Tensor::zeros(1, c.char_filters)),
            })
            .collect();
        let mut lstm = |name: &str| {
            let h = c.hidden;
            let mut bias = Tensor::zeros(1, 4 * h);
            // forget-gate bias starts at 1
            bias.data[h..2 * h].fill(1.0);
            LstmParams {
                input: store.add(format!("encoder.{name}.input"), Tensor::glorot(c.input_dim(), 4 * h, rng)),
                recurrent: store.add(format!("encoder.{name}.recurrent"), Tensor::glorot(h, 4 * h, rng)),
                bias: store.add(format!("encoder.{name}.bias"), bias),
            }
        };
        let forward = lstm("lstm_fwd");
        let backward = lstm("lstm_bwd");
        let attn_weight = store.add("encoder.attn.weight", Tensor::glorot(c.state_dim(), 1, rng));
        let attn_bias = store.add("encoder.attn.bias", Tensor::zeros(1, 1));
        let width_emb = store.add("encoder.width_emb", Tensor::uniform(c.max_width, c.width_dim, 0.5, rng));
        EncoderParams {
            config,
            word_emb,
            char_emb,
            conv,
            forward,
            backward,
            attn_weight,
            attn_bias,
            width_emb,
        }
    }

    fn char_ids(&self, vocab: &Vocab, word: &str) -> Vec<usize> {
        let min_len = self.config.char_widths.iter().copied().max().unwrap_or(1);
        let mut ids: Vec<usize> = word.chars().map(|c| vocab.char_id(c)).collect();
        if ids.len() < min_len {
            ids.resize(min_len, PAD_CHAR);
        }
        ids
    }

    /// Max-pooled character convolution for one word: `1 x filters*widths`.
    fn char_repr(&self, g: &mut Graph<'_>, ids: &[usize]) -> Option<Var> {
        if self.conv.is_empty() || self.config.char_filters == 0 {
            return None;
        }
        let dc = self.config.char_dim;
        let emb = g.lookup(self.char_emb, ids);
        let mut pooled = Vec::with_capacity(self.conv.len());
        for f in &self.conv {
            let positions = ids.len() - f.width + 1;
            let rows: Vec<usize> = (0..positions).flat_map(|p| p..p + f.width).collect();
            let windows = g.gather_rows(emb, &rows);
            let windows = g.reshape(windows, positions, f.width * dc);
            let w = g.param(f.weight);
            let b = g.param(f.bias);
            let conv = g.matmul(windows, w);
            let conv = g.add_row(conv, b);
            let act = g.tanh(conv);
            pooled.push(g.max_over_rows(act));
        }
        Some(if pooled.len() == 1 { pooled[0] } else { g.concat_cols(&pooled) })
    }

    fn lstm(&self, g: &mut Graph<'_>, p: &LstmParams, x: Var, reverse: bool, mode: &mut Mode<'_>) -> Var {
        let h_dim = self.config.hidden;
        let len = g.shape(x).0;
        let w = g.param(p.input);
        let u = g.param(p.recurrent);
        let b = g.param(p.bias);
        let xw = g.matmul(x, w);
        let xw = g.add_row(xw, b);
        let recurrent_mask = mode.mask(1, h_dim, |d| d.lstm);
        let mut h = g.constant(Tensor::zeros(1, h_dim));
        let mut c = g.constant(Tensor::zeros(1, h_dim));
        let mut outputs = vec![h; len];
        let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
        for t in order {
            let h_in = apply_mask(g, h, recurrent_mask.clone());
            let hu = g.matmul(h_in, u);
            let xt = g.gather_rows(xw, &[t]);
            let gates = g.add(xt, hu);
            let i = g.slice_cols(gates, 0, h_dim);
            let f = g.slice_cols(gates, h_dim, h_dim);
            let cand = g.slice_cols(gates, 2 * h_dim, h_dim);
            let o = g.slice_cols(gates, 3 * h_dim, h_dim);
            let i = g.sigmoid(i);
            let f = g.sigmoid(f);
            let cand = g.tanh(cand);
            let o = g.sigmoid(o);
            let keep = g.mul(f, c);
            let write = g.mul(i, cand);
            c = g.add(keep, write);
            let tc = g.tanh(c);
            h = g.mul(o, tc);
            outputs[t] = h;
        }
        g.concat_rows(&outputs)
    }

    /// Encodes every sentence independently. Returns `None` for a document
    /// without tokens.
    pub fn encode_tokens(
        &self,
        g: &mut Graph<'_>,
        doc: &Document,
        vocab: &Vocab,
        contextual: Option<&ContextualStore>,
        mode: &mut Mode<'_>,
    ) -> Result<Option<EncodedDoc>> {
        let cfg = &self.config;
        if cfg.contextual_dim > 0 {
            match contextual {
                Some(store) if store.dim() == cfg.contextual_dim => {}
                Some(store) => {
                    return Err(Error::Model(format!(
                        "contextual store has dimension {}, model expects {}",
                        store.dim(),
                        cfg.contextual_dim
                    )))
                }
                None => return Err(Error::Model("model expects a contextual-embedding store".into())),
            }
        }
        if doc.num_tokens() == 0 {
            return Ok(None);
        }

        // Character features once per distinct word in the document.
        let mut word_slot: HashMap<&str, usize> = HashMap::new();
        let mut char_rows = Vec::new();
        for token in doc.sentences.iter().flatten() {
            if !word_slot.contains_key(token.as_str()) {
                let ids = self.char_ids(vocab, token);
                if let Some(v) = self.char_repr(g, &ids) {
                    char_rows.push(v);
                }
                word_slot.insert(token, word_slot.len());
            }
        }
        let char_table = if char_rows.is_empty() { None } else { Some(g.concat_rows(&char_rows)) };

        let mut inputs = Vec::new();
        let mut states = Vec::new();
        for (s, sentence) in doc.sentences.iter().enumerate() {
            if sentence.is_empty() {
                continue;
            }
            let ids: Vec<usize> = sentence.iter().map(|w| vocab.word_id(w)).collect();
            let mut parts = vec![g.lookup(self.word_emb, &ids)];
            if let Some(table) = char_table {
                let slots: Vec<usize> = sentence.iter().map(|w| word_slot[w.as_str()]).collect();
                parts.push(g.gather_rows(table, &slots));
            }
            if cfg.contextual_dim > 0 {
                let store = contextual.expect("checked above");
                let mut data = Vec::with_capacity(sentence.len() * cfg.contextual_dim);
                for t in 0..sentence.len() {
                    data.extend_from_slice(store.vector(&doc.doc_key, s, t)?);
                }
                parts.push(g.constant(Tensor::from_vec(sentence.len(), cfg.contextual_dim, data)));
            }
            let x = if parts.len() == 1 { parts[0] } else { g.concat_cols(&parts) };
            let input_mask = mode.mask(sentence.len(), cfg.input_dim(), |d| d.input);
            let x = apply_mask(g, x, input_mask);
            let fwd = self.lstm(g, &self.forward, x, false, mode);
            let bwd = self.lstm(g, &self.backward, x, true, mode);
            states.push(g.concat_cols(&[fwd, bwd]));
            inputs.push(x);
        }
        let inputs = g.concat_rows(&inputs);
        let states = g.concat_rows(&states);
        Ok(Some(EncodedDoc { inputs, states }))
    }

    /// Representations for `spans` (all of width `1..=max_width`).
    pub fn span_representations(&self, g: &mut Graph<'_>, encoded: &EncodedDoc, spans: &[Span]) -> SpanReprs {
        let starts: Vec<usize> = spans.iter().map(|s| s.start).collect();
        let ends: Vec<usize> = spans.iter().map(|s| s.end).collect();
        let widths: Vec<usize> = spans.iter().map(|s| s.width() - 1).collect();
        let ranges: Vec<(usize, usize)> = spans.iter().map(Span::key).collect();

        let start_states = g.gather_rows(encoded.states, &starts);
        let end_states = g.gather_rows(encoded.states, &ends);
        let aw = g.param(self.attn_weight);
        let ab = g.param(self.attn_bias);
        let head_scores = g.matmul(encoded.states, aw);
        let head_scores = g.add_row(head_scores, ab);
        let values = match self.config.attention_values {
            AttentionValues::States => encoded.states,
            AttentionValues::Inputs => encoded.inputs,
        };
        let attention = g.span_attention(head_scores, values, &ranges);
        let width = g.lookup(self.width_emb, &widths);
        let g_all = g.concat_cols(&[start_states, end_states, attention, width]);
        SpanReprs { g: g_all, attention }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spanspace::enumerate_spans;
    use rand::SeedableRng;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            word_dim: 3,
            char_dim: 3,
            char_filters: 2,
            char_widths: vec![2],
            hidden: 4,
            width_dim: 3,
            max_width: 3,
            contextual_dim: 0,
            attention_values: AttentionValues::States,
        }
    }

    fn doc(sentences: &[&[&str]]) -> Document {
        Document::unannotated(
            "d",
            sentences.iter().map(|s| s.iter().map(|w| w.to_string()).collect()).collect(),
        )
    }

    fn setup(config: EncoderConfig, d: &Document) -> (EncoderParams, Vocab, ParamStore) {
        let vocab = Vocab::build([d]);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = EncoderParams::new(config, &vocab, &mut store, &mut rng);
        (params, vocab, store)
    }

    fn states_of(params: &EncoderParams, vocab: &Vocab, store: &ParamStore, d: &Document) -> Tensor {
        let mut g = Graph::new(store);
        let enc = params.encode_tokens(&mut g, d, vocab, None, &mut Mode::Eval).unwrap().unwrap();
        g.value(enc.states).clone()
    }

    #[test]
    fn single_token_sentence_shape() {
        let d = doc(&[&["parser"]]);
        let (params, vocab, store) = setup(tiny_config(), &d);
        let states = states_of(&params, &vocab, &store, &d);
        assert_eq!(states.shape(), (1, 8));
    }

    #[test]
    fn sentences_are_encoded_independently() {
        let a: &[&str] = &["we", "parse", "text"];
        let b: &[&str] = &["it", "works"];
        let d1 = doc(&[a, b]);
        let d2 = doc(&[b, a]);
        let (params, vocab, store) = setup(tiny_config(), &d1);
        let s1 = states_of(&params, &vocab, &store, &d1);
        let s2 = states_of(&params, &vocab, &store, &d2);
        for t in 0..3 {
            assert_eq!(s1.row(t), s2.row(t + 2));
        }
        for t in 0..2 {
            assert_eq!(s1.row(t + 3), s2.row(t));
        }
    }

    #[test]
    fn states_depend_on_context() {
        let d = doc(&[&["neural", "parser"], &["fast", "parser", "here"]]);
        let (params, vocab, store) = setup(tiny_config(), &d);
        let s = states_of(&params, &vocab, &store, &d);
        assert_ne!(s.row(1), s.row(3));
    }

    #[test]
    fn span_representation_shapes_and_attention() {
        let d = doc(&[&["a", "b", "c"], &["a", "b", "c"]]);
        for values in [AttentionValues::States, AttentionValues::Inputs] {
            let cfg = EncoderConfig { attention_values: values, ..tiny_config() };
            let (params, vocab, store) = setup(cfg.clone(), &d);
            let space = enumerate_spans(&d, cfg.max_width).unwrap();
            let mut g = Graph::new(&store);
            let enc = params.encode_tokens(&mut g, &d, &vocab, None, &mut Mode::Eval).unwrap().unwrap();
            let reprs = params.span_representations(&mut g, &enc, space.spans());
            let gv = g.value(reprs.g).clone();
            let expected_dim = 2 * (2 * cfg.hidden) + cfg.value_dim() + cfg.width_dim;
            assert_eq!(gv.shape(), (space.len(), expected_dim));
            assert_eq!(cfg.span_dim(), expected_dim);
            let weights = g.attention_weights(reprs.attention).unwrap();
            for (span, w) in space.spans().iter().zip(weights) {
                assert_eq!(w.len(), span.width());
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                if span.width() == 1 {
                    assert_eq!(w, &vec![1.0]);
                }
            }
            // identical sentences give identical representations
            for (i, span) in space.spans().iter().enumerate().filter(|(_, s)| s.sentence == 0) {
                let j = space.position(span.start + 3, span.end + 3).unwrap();
                assert_eq!(gv.row(i), gv.row(j));
            }
        }
    }

    #[test]
    fn unknown_words_use_reserved_slot() {
        let d = doc(&[&["known"]]);
        let vocab = Vocab::build([&d]);
        assert_eq!(vocab.word_id("never-seen"), UNK_WORD);
        assert_ne!(vocab.word_id("known"), UNK_WORD);
        assert_eq!(vocab.char_id('#'), UNK_CHAR);
    }

    #[test]
    fn contextual_store_is_required_and_keyed() {
        let d = doc(&[&["a", "b"]]);
        let cfg = EncoderConfig { contextual_dim: 2, ..tiny_config() };
        let (params, vocab, store) = setup(cfg, &d);
        let mut g = Graph::new(&store);
        assert!(params.encode_tokens(&mut g, &d, &vocab, None, &mut Mode::Eval).is_err());

        let mut ctx = ContextualStore::new(2);
        ctx.insert("d", vec![vec![vec![0.1, 0.2]]]).unwrap();
        let err = params.encode_tokens(&mut g, &d, &vocab, Some(&ctx), &mut Mode::Eval).err().unwrap();
        assert!(err.to_string().contains("token 1"), "{err}");

        ctx.insert("d", vec![vec![vec![0.1, 0.2], vec![0.3, 0.4]]]).unwrap();
        let enc = params.encode_tokens(&mut g, &d, &vocab, Some(&ctx), &mut Mode::Eval).unwrap().unwrap();
        assert_eq!(g.shape(enc.inputs).1, params.config.input_dim());
        assert!(ctx.insert("e", vec![vec![vec![1.0]]]).is_err());
    }

    #[test]
    fn contextual_store_file_header_is_validated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ctx.jsonl");
        std::fs::write(&p, "{\"dim\":2}\n{\"doc_key\":\"d\",\"sentences\":[[[1.0,2.0]]]}\n").unwrap();
        let store = ContextualStore::load(&p).unwrap();
        assert_eq!(store.dim(), 2);
        assert_eq!(store.vector("d", 0, 0).unwrap(), &[1.0, 2.0]);
        std::fs::write(&p, "{\"dim\":3}\n{\"doc_key\":\"d\",\"sentences\":[[[1.0,2.0]]]}\n").unwrap();
        assert!(ContextualStore::load(&p).is_err());
    }
}
