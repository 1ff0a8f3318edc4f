//! Forward and backward passes of the endorsement-level classifier.
//!
//! The context path projects the normalized features (`c = lrel(P·x)`),
//! scores each latent basis with `vᵀ tanh(U [c; b_k])`, and mixes the bases
//! with the softmax of those scores. The text path encodes each sentence
//! with a bi-directional GRU over additive word/POS/lemma embeddings and
//! averages the sentence vectors. A scalar gate computed from the context
//! embedding scales the text vector before the softmax output layer.

mod config;
pub mod gru;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{ContextEncoder, LinearInputs, ModelConfig, TextMode, Variant, VocabSizes};
use gru::{GruIds, GruStep};

use crate::error::{Error, Result};
use crate::features::{ContextFeatureVector, N_FEATURES};
use crate::numerics::{
    argmax, dot, lrel, lrel_grad, matvec, matvec_t_acc, outer_acc, sigmoid, softmax, ParamId,
    ParamStore, Tensor,
};

/// Word, POS and lemma indices of one token.
pub type TokenIds = [u32; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub comment_id: String,
    pub thread_id: String,
    pub subreddit: String,
    pub features: ContextFeatureVector,
    pub sentences: Vec<Vec<TokenIds>>,
    pub label: usize,
}

#[derive(Debug, Clone)]
struct ModelIds {
    projection: Option<ParamId>,
    hidden_layers: Vec<ParamId>,
    bases: Option<ParamId>,
    attn_u: Option<ParamId>,
    attn_v: Option<ParamId>,
    gate_w: Option<ParamId>,
    output: Option<ParamId>,
    linear_w: Option<ParamId>,
    linear_b: Option<ParamId>,
    emb_word: Option<ParamId>,
    emb_pos: Option<ParamId>,
    emb_lemma: Option<ParamId>,
    gru_fwd: Option<GruIds>,
    gru_bwd: Option<GruIds>,
}

#[derive(Debug, Clone)]
pub enum ContextTrace {
    Latent {
        c_pre: Vec<f64>,
        c: Vec<f64>,
        /// tanh(U [c; b_k]) per basis.
        hidden: Vec<Vec<f64>>,
        scores: Vec<f64>,
        a: Vec<f64>,
    },
    Feedforward {
        pre: Vec<Vec<f64>>,
        act: Vec<Vec<f64>>,
    },
    Linear {
        inputs: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct SentenceTrace {
    pub tokens: Vec<Vec<f64>>,
    /// Left-to-right states, one per token.
    pub forward: Vec<GruStep>,
    /// Right-to-left states, in processing order (last token first).
    pub backward: Vec<GruStep>,
    pub embedding: Vec<f64>,
}

/// Every intermediate activation of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub x: [f64; N_FEATURES],
    pub context: ContextTrace,
    /// Context embedding fed to the gate and output layer (c̃, or the last
    /// feedforward layer).
    pub c_tilde: Vec<f64>,
    pub sentences: Vec<SentenceTrace>,
    pub d: Vec<f64>,
    pub gate: f64,
    pub d_tilde: Vec<f64>,
    pub logits: Vec<f64>,
    pub y: Vec<f64>,
}

impl ForwardTrace {
    /// Attention coefficients, when the latent-mode encoder is used.
    pub fn attention(&self) -> Option<&[f64]> {
        match &self.context {
            ContextTrace::Latent { a, .. } => Some(a),
            _ => None,
        }
    }

    pub fn projected_context(&self) -> Option<&[f64]> {
        match &self.context {
            ContextTrace::Latent { c, .. } => Some(c),
            ContextTrace::Feedforward { act, .. } => act.first().map(Vec::as_slice),
            ContextTrace::Linear { .. } => None,
        }
    }

    pub fn predicted_level(&self) -> usize {
        argmax(&self.y)
    }
}

/// Size of every declared parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCensus {
    pub tensors: Vec<(String, usize)>,
    pub total: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    ids: ModelIds,
}

const P_PROJECTION: &str = "context.projection";
const P_BASES: &str = "attention.bases";
const P_ATTN_U: &str = "attention.u";
const P_ATTN_V: &str = "attention.v";
const P_GATE: &str = "gate.w";
const P_OUTPUT: &str = "output.q";
const P_LIN_W: &str = "linear.w";
const P_LIN_B: &str = "linear.b";
const P_EMB_WORD: &str = "embedding.word";
const P_EMB_POS: &str = "embedding.pos";
const P_EMB_LEMMA: &str = "embedding.lemma";
const GRU_FWD: &str = "gru.fwd";
const GRU_BWD: &str = "gru.bwd";
const GRU_NAMES: [&str; 9] = [
    "w_update", "w_reset", "w_cand", "u_update", "u_reset", "u_cand", "b_update", "b_reset",
    "b_cand",
];

fn hidden_layer_name(i: usize) -> String {
    format!("context.hidden{i}")
}

/// Declared shape of every parameter under `config`, in registration order.
fn declared_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let k = config.n_bases;
    let c = config.context_width;
    let d = config.text_width;
    let levels = config.n_levels;
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    match config.context_encoder {
        ContextEncoder::Linear { inputs } => {
            out.push((P_LIN_W.into(), vec![levels, inputs.indices().len()]));
            out.push((P_LIN_B.into(), vec![levels]));
            return out;
        }
        ContextEncoder::Feedforward { layers } => {
            out.push((P_PROJECTION.into(), vec![c, N_FEATURES]));
            for i in 1..layers {
                out.push((hidden_layer_name(i), vec![c, c]));
            }
        }
        ContextEncoder::LatentModes => {
            out.push((P_PROJECTION.into(), vec![c, N_FEATURES]));
            out.push((P_BASES.into(), vec![k, c]));
            out.push((P_ATTN_U.into(), vec![c, 2 * c]));
            out.push((P_ATTN_V.into(), vec![c]));
        }
    }
    if config.text_mode == TextMode::Gated {
        out.push((P_GATE.into(), vec![c]));
    }
    let width = if config.uses_text() { c + d } else { c };
    out.push((P_OUTPUT.into(), vec![levels, width]));
    if config.uses_text() {
        out.push((P_EMB_WORD.into(), vec![d, config.vocab.word]));
        out.push((P_EMB_POS.into(), vec![d, config.vocab.pos]));
        out.push((P_EMB_LEMMA.into(), vec![d, config.vocab.lemma]));
        let h = d / 2;
        for prefix in [GRU_FWD, GRU_BWD] {
            for name in GRU_NAMES {
                let dims = match &name[..1] {
                    "w" => vec![h, d],
                    "u" => vec![h, h],
                    _ => vec![h],
                };
                out.push((format!("{prefix}.{name}"), dims));
            }
        }
    }
    out
}

fn is_bias(name: &str) -> bool {
    name == P_LIN_B || name.rsplit('.').next().is_some_and(|n| n.starts_with("b_"))
}

impl ModelIds {
    fn resolve(config: &ModelConfig, store: &ParamStore) -> Result<Self> {
        for (name, dims) in declared_shapes(config) {
            match store.id(&name) {
                Some(id) if store.value(id).dims == dims => {}
                Some(id) => {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has dims {:?}, expected {dims:?}",
                        store.value(id).dims
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter {name}"))),
            }
        }
        let get = |n: &str| store.id(n);
        let gru = |prefix: &str| -> Option<GruIds> {
            let id = |n: &str| store.id(&format!("{prefix}.{n}"));
            Some(GruIds {
                w_update: id("w_update")?,
                w_reset: id("w_reset")?,
                w_cand: id("w_cand")?,
                u_update: id("u_update")?,
                u_reset: id("u_reset")?,
                u_cand: id("u_cand")?,
                b_update: id("b_update")?,
                b_reset: id("b_reset")?,
                b_cand: id("b_cand")?,
            })
        };
        let layers = match config.context_encoder {
            ContextEncoder::Feedforward { layers } => layers,
            _ => 1,
        };
        Ok(ModelIds {
            projection: get(P_PROJECTION),
            hidden_layers: (1..layers)
                .map(|i| store.id(&hidden_layer_name(i)).expect("checked above"))
                .collect(),
            bases: get(P_BASES),
            attn_u: get(P_ATTN_U),
            attn_v: get(P_ATTN_V),
            gate_w: get(P_GATE),
            output: get(P_OUTPUT),
            linear_w: get(P_LIN_W),
            linear_b: get(P_LIN_B),
            emb_word: get(P_EMB_WORD),
            emb_pos: get(P_EMB_POS),
            emb_lemma: get(P_EMB_LEMMA),
            gru_fwd: if config.uses_text() { gru(GRU_FWD) } else { None },
            gru_bwd: if config.uses_text() { gru(GRU_BWD) } else { None },
        })
    }
}

impl Model {
    /// Fresh model: biases zero, everything else Gaussian with
    /// `config.init_std`, drawn from a generator seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        for (name, dims) in declared_shapes(&config) {
            let t = if is_bias(&name) {
                Tensor::zeros(dims)
            } else {
                Tensor::gaussian(dims, config.init_std, &mut rng)
            };
            store.insert(name, t);
        }
        let ids = ModelIds::resolve(&config, &store)?;
        Ok(Model {
            config,
            params: store,
            ids,
        })
    }

    /// Rebuilds a model around existing parameters, checking every shape.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let ids = ModelIds::resolve(&config, &params)?;
        if params.len() != declared_shapes(&config).len() {
            return Err(Error::Checkpoint(
                "parameter set does not match the configuration".into(),
            ));
        }
        Ok(Model {
            config,
            params,
            ids,
        })
    }

    pub fn census(&self) -> ParamCensus {
        let tensors: Vec<(String, usize)> = self
            .params
            .ids_by_name()
            .into_iter()
            .map(|id| (self.params.name(id).to_string(), self.params.value(id).len()))
            .collect();
        let total = tensors.iter().map(|(_, n)| n).sum();
        ParamCensus { tensors, total }
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.id(name).map(|id| self.params.value(id))
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.id(name).map(|id| self.params.value_mut(id))
    }

    /// Checks token indices and the label against the configured sizes.
    pub fn check_example(&self, ex: &LabeledExample) -> Result<()> {
        if ex.label >= self.config.n_levels {
            return Err(Error::OutOfRange {
                what: "label",
                index: ex.label,
                size: self.config.n_levels,
            });
        }
        if self.config.uses_text() {
            for tok in ex.sentences.iter().flatten() {
                self.embed_token(&self.params, *tok)?;
            }
            if ex.sentences.iter().any(Vec::is_empty) {
                return Err(Error::Config(format!(
                    "comment {} has an empty sentence",
                    ex.comment_id
                )));
            }
        }
        Ok(())
    }

    /// `c = lrel(P·x)`.
    pub fn project_context(&self, params: &ParamStore, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = params.value(self.ids.projection.expect("projection"));
        let mut pre = vec![0.0; self.config.context_width];
        matvec(p, x, &mut pre);
        let c = pre.iter().map(|&v| lrel(v)).collect();
        (pre, c)
    }

    /// Attention over the bases: returns (tanh hidden per basis, scores, a, c̃).
    #[allow(clippy::type_complexity)]
    pub fn attend(
        &self,
        params: &ParamStore,
        c: &[f64],
    ) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let cw = self.config.context_width;
        let bases = params.value(self.ids.bases.expect("bases"));
        let u = params.value(self.ids.attn_u.expect("attention u"));
        let v = &params.value(self.ids.attn_v.expect("attention v")).data;
        let mut hidden = Vec::with_capacity(self.config.n_bases);
        let mut scores = Vec::with_capacity(self.config.n_bases);
        let mut joined = vec![0.0; 2 * cw];
        joined[..cw].copy_from_slice(c);
        for k in 0..self.config.n_bases {
            joined[cw..].copy_from_slice(bases.row(k));
            let mut h = vec![0.0; cw];
            matvec(u, &joined, &mut h);
            h.iter_mut().for_each(|x| *x = x.tanh());
            scores.push(dot(v, &h));
            hidden.push(h);
        }
        let a = softmax(&scores);
        let mut c_tilde = vec![0.0; cw];
        for (k, &ak) in a.iter().enumerate() {
            for (o, b) in c_tilde.iter_mut().zip(bases.row(k)) {
                *o += ak * b;
            }
        }
        (hidden, scores, a, c_tilde)
    }

    /// Sum of the word, POS and lemma embedding columns.
    pub fn embed_token(&self, params: &ParamStore, tok: TokenIds) -> Result<Vec<f64>> {
        let d = self.config.text_width;
        let mut z = vec![0.0; d];
        for (slot, (id, what)) in [
            (self.ids.emb_word, "word vocabulary"),
            (self.ids.emb_pos, "pos vocabulary"),
            (self.ids.emb_lemma, "lemma vocabulary"),
        ]
        .into_iter()
        .enumerate()
        {
            let e = params.value(id.ok_or_else(|| Error::Config("model has no text path".into()))?);
            let (_, vocab) = e.shape2();
            let col = tok[slot] as usize;
            if col >= vocab {
                return Err(Error::OutOfRange {
                    what,
                    index: col,
                    size: vocab,
                });
            }
            for (r, zr) in z.iter_mut().enumerate() {
                *zr += e.data[r * vocab + col];
            }
        }
        Ok(z)
    }

    /// Bi-directional encoding of one sentence of token vectors.
    pub fn encode_sentence(&self, params: &ParamStore, tokens: Vec<Vec<f64>>) -> Result<SentenceTrace> {
        if tokens.is_empty() {
            return Err(Error::Config("cannot encode an empty sentence".into()));
        }
        let h = self.config.text_width / 2;
        let fwd_ids = self.ids.gru_fwd.as_ref().expect("text path");
        let bwd_ids = self.ids.gru_bwd.as_ref().expect("text path");
        let fwd_in: Vec<&[f64]> = tokens.iter().map(Vec::as_slice).collect();
        let bwd_in: Vec<&[f64]> = tokens.iter().rev().map(Vec::as_slice).collect();
        let forward = gru::run(&params.values, fwd_ids, &fwd_in, h);
        let backward = gru::run(&params.values, bwd_ids, &bwd_in, h);
        let mut embedding = forward.last().expect("non-empty").h.clone();
        embedding.extend_from_slice(&backward.last().expect("non-empty").h);
        Ok(SentenceTrace {
            tokens,
            forward,
            backward,
            embedding,
        })
    }

    /// Mean of the sentence embeddings, or zero without sentences.
    pub fn encode_comment(&self, params: &ParamStore, sentences: &[Vec<TokenIds>]) -> Result<(Vec<f64>, Vec<SentenceTrace>)> {
        let mut d = vec![0.0; self.config.text_width];
        let mut traces = Vec::with_capacity(sentences.len());
        for s in sentences {
            let tokens = s
                .iter()
                .map(|&t| self.embed_token(params, t))
                .collect::<Result<Vec<_>>>()?;
            let tr = self.encode_sentence(params, tokens)?;
            for (o, v) in d.iter_mut().zip(&tr.embedding) {
                *o += v;
            }
            traces.push(tr);
        }
        if !traces.is_empty() {
            let n = traces.len() as f64;
            d.iter_mut().for_each(|v| *v /= n);
        }
        Ok((d, traces))
    }

    /// `g = sigmoid(wᵀ c̃)`, `d̃ = g·d`.
    pub fn gate(&self, params: &ParamStore, c_tilde: &[f64], d: &[f64]) -> (f64, Vec<f64>) {
        let g = match (self.config.text_mode, self.ids.gate_w) {
            (TextMode::Gated, Some(w)) => sigmoid(dot(&params.value(w).data, c_tilde)),
            _ => 1.0,
        };
        (g, d.iter().map(|v| g * v).collect())
    }

    pub fn predict(&self, ex: &LabeledExample) -> (Vec<f64>, ForwardTrace) {
        let trace = self.forward(&self.params, ex);
        (trace.y.clone(), trace)
    }

    pub fn predict_level(&self, ex: &LabeledExample) -> usize {
        self.forward(&self.params, ex).predicted_level()
    }

    /// Full forward pass under an arbitrary parameter set with this model's
    /// layout. Panics on out-of-range token ids; see [`Model::check_example`].
    pub fn forward(&self, params: &ParamStore, ex: &LabeledExample) -> ForwardTrace {
        let x = ex.features.normalized;
        let levels = self.config.n_levels;

        let (context, c_tilde) = match self.config.context_encoder {
            ContextEncoder::Linear { inputs } => {
                let sel: Vec<f64> = inputs.indices().iter().map(|&i| x[i]).collect();
                let w = params.value(self.ids.linear_w.expect("linear w"));
                let b = params.value(self.ids.linear_b.expect("linear b"));
                let mut logits = b.data.clone();
                for (r, l) in logits.iter_mut().enumerate() {
                    *l += dot(w.row(r), &sel);
                }
                let y = softmax(&logits);
                return ForwardTrace {
                    x,
                    context: ContextTrace::Linear { inputs: sel },
                    c_tilde: Vec::new(),
                    sentences: Vec::new(),
                    d: Vec::new(),
                    gate: 0.0,
                    d_tilde: Vec::new(),
                    logits,
                    y,
                };
            }
            ContextEncoder::Feedforward { .. } => {
                let (p0, a0) = self.project_context(params, &x);
                let mut pre = vec![p0];
                let mut act = vec![a0];
                for &id in &self.ids.hidden_layers {
                    let mut p = vec![0.0; self.config.context_width];
                    matvec(params.value(id), act.last().unwrap(), &mut p);
                    act.push(p.iter().map(|&v| lrel(v)).collect());
                    pre.push(p);
                }
                let out = act.last().unwrap().clone();
                (ContextTrace::Feedforward { pre, act }, out)
            }
            ContextEncoder::LatentModes => {
                let (c_pre, c) = self.project_context(params, &x);
                let (hidden, scores, a, c_tilde) = self.attend(params, &c);
                (
                    ContextTrace::Latent {
                        c_pre,
                        c,
                        hidden,
                        scores,
                        a,
                    },
                    c_tilde,
                )
            }
        };

        let (d, sentences) = if self.config.uses_text() {
            self.encode_comment(params, &ex.sentences)
                .expect("example checked against vocabulary")
        } else {
            (Vec::new(), Vec::new())
        };
        let (gate, d_tilde) = if self.config.uses_text() {
            self.gate(params, &c_tilde, &d)
        } else {
            (0.0, Vec::new())
        };

        let q = params.value(self.ids.output.expect("output"));
        let mut input = c_tilde.clone();
        input.extend_from_slice(&d_tilde);
        let mut logits = vec![0.0; levels];
        matvec(q, &input, &mut logits);
        let y = softmax(&logits);
        ForwardTrace {
            x,
            context,
            c_tilde,
            sentences,
            d,
            gate,
            d_tilde,
            logits,
            y,
        }
    }

    /// Mean negative log-likelihood of `batch` under `params`.
    pub fn loss(&self, params: &ParamStore, batch: &[&LabeledExample]) -> f64 {
        let total: f64 = batch
            .iter()
            .map(|ex| nll(&self.forward(params, ex).logits, ex.label))
            .sum();
        total / batch.len() as f64
    }

    /// Mean negative log-likelihood of `batch`; its gradient is added to
    /// `self.params.grads`.
    pub fn loss_and_backward(&mut self, batch: &[&LabeledExample]) -> f64 {
        assert!(!batch.is_empty(), "empty batch");
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        let mut grads = std::mem::take(&mut self.params.grads);
        for ex in batch {
            let trace = self.forward(&self.params, ex);
            total += nll(&trace.logits, ex.label);
            self.backward(&self.params, &mut grads, &trace, ex, scale);
        }
        self.params.grads = grads;
        total * scale
    }

    fn backward(
        &self,
        params: &ParamStore,
        grads: &mut [Tensor],
        trace: &ForwardTrace,
        ex: &LabeledExample,
        scale: f64,
    ) {
        let values = &params.values;
        let cw = self.config.context_width;
        let mut d_logits: Vec<f64> = trace.y.iter().map(|p| p * scale).collect();
        d_logits[ex.label] -= scale;

        if let ContextTrace::Linear { inputs } = &trace.context {
            outer_acc(&mut grads[self.ids.linear_w.unwrap().0], &d_logits, inputs);
            for (g, d) in grads[self.ids.linear_b.unwrap().0].data.iter_mut().zip(&d_logits) {
                *g += d;
            }
            return;
        }

        let q_id = self.ids.output.unwrap();
        let mut input = trace.c_tilde.clone();
        input.extend_from_slice(&trace.d_tilde);
        outer_acc(&mut grads[q_id.0], &d_logits, &input);
        let mut d_input = vec![0.0; input.len()];
        matvec_t_acc(&values[q_id.0], &d_logits, &mut d_input);
        let mut d_c_tilde = d_input[..cw].to_vec();

        if self.config.uses_text() {
            let d_d_tilde = &d_input[cw..];
            let d_d: Vec<f64> = d_d_tilde.iter().map(|v| v * trace.gate).collect();
            if let (TextMode::Gated, Some(w)) = (self.config.text_mode, self.ids.gate_w) {
                let d_g = dot(d_d_tilde, &trace.d);
                let d_pre = d_g * trace.gate * (1.0 - trace.gate);
                for (g, c) in grads[w.0].data.iter_mut().zip(&trace.c_tilde) {
                    *g += d_pre * c;
                }
                for (dc, wv) in d_c_tilde.iter_mut().zip(&values[w.0].data) {
                    *dc += d_pre * wv;
                }
            }
            self.backward_text(values, grads, trace, ex, &d_d);
        }

        match &trace.context {
            ContextTrace::Latent {
                c_pre,
                c,
                hidden,
                a,
                ..
            } => {
                let bases_id = self.ids.bases.unwrap();
                let u_id = self.ids.attn_u.unwrap();
                let v_id = self.ids.attn_v.unwrap();
                let bases = &values[bases_id.0];

                // c̃ = Σ a_k b_k
                let d_a: Vec<f64> = (0..a.len()).map(|k| dot(bases.row(k), &d_c_tilde)).collect();
                for (k, &ak) in a.iter().enumerate() {
                    for (g, dc) in grads[bases_id.0].row_mut(k).iter_mut().zip(&d_c_tilde) {
                        *g += ak * dc;
                    }
                }
                // softmax over scores
                let mean: f64 = a.iter().zip(&d_a).map(|(p, d)| p * d).sum();
                let d_scores: Vec<f64> = a.iter().zip(&d_a).map(|(p, d)| p * (d - mean)).collect();

                let mut d_c = vec![0.0; cw];
                let mut joined = vec![0.0; 2 * cw];
                joined[..cw].copy_from_slice(c);
                for (k, h) in hidden.iter().enumerate() {
                    let ds = d_scores[k];
                    for (g, hv) in grads[v_id.0].data.iter_mut().zip(h) {
                        *g += ds * hv;
                    }
                    let d_pre: Vec<f64> = h
                        .iter()
                        .zip(&values[v_id.0].data)
                        .map(|(hv, vv)| ds * vv * (1.0 - hv * hv))
                        .collect();
                    joined[cw..].copy_from_slice(bases.row(k));
                    outer_acc(&mut grads[u_id.0], &d_pre, &joined);
                    let mut d_joined = vec![0.0; 2 * cw];
                    matvec_t_acc(&values[u_id.0], &d_pre, &mut d_joined);
                    for i in 0..cw {
                        d_c[i] += d_joined[i];
                    }
                    for (g, dj) in grads[bases_id.0].row_mut(k).iter_mut().zip(&d_joined[cw..]) {
                        *g += dj;
                    }
                }
                let d_c_pre: Vec<f64> = d_c.iter().zip(c_pre).map(|(g, p)| g * lrel_grad(*p)).collect();
                outer_acc(&mut grads[self.ids.projection.unwrap().0], &d_c_pre, &trace.x);
            }
            ContextTrace::Feedforward { pre, act } => {
                let mut d_act = d_c_tilde;
                for layer in (0..pre.len()).rev() {
                    let d_pre: Vec<f64> = d_act
                        .iter()
                        .zip(&pre[layer])
                        .map(|(g, p)| g * lrel_grad(*p))
                        .collect();
                    if layer == 0 {
                        outer_acc(&mut grads[self.ids.projection.unwrap().0], &d_pre, &trace.x);
                    } else {
                        let id = self.ids.hidden_layers[layer - 1];
                        outer_acc(&mut grads[id.0], &d_pre, &act[layer - 1]);
                        let mut prev = vec![0.0; cw];
                        matvec_t_acc(&values[id.0], &d_pre, &mut prev);
                        d_act = prev;
                    }
                }
            }
            ContextTrace::Linear { .. } => unreachable!(),
        }
    }

    fn backward_text(
        &self,
        values: &[Tensor],
        grads: &mut [Tensor],
        trace: &ForwardTrace,
        ex: &LabeledExample,
        d_d: &[f64],
    ) {
        if trace.sentences.is_empty() {
            return;
        }
        let h = self.config.text_width / 2;
        let per_sentence = 1.0 / trace.sentences.len() as f64;
        let fwd_ids = self.ids.gru_fwd.as_ref().unwrap();
        let bwd_ids = self.ids.gru_bwd.as_ref().unwrap();
        let d_fwd: Vec<f64> = d_d[..h].iter().map(|v| v * per_sentence).collect();
        let d_bwd: Vec<f64> = d_d[h..].iter().map(|v| v * per_sentence).collect();
        let emb = [
            self.ids.emb_word.unwrap(),
            self.ids.emb_pos.unwrap(),
            self.ids.emb_lemma.unwrap(),
        ];

        for (s, tokens) in trace.sentences.iter().zip(&ex.sentences) {
            let n = s.tokens.len();
            let fwd_in: Vec<&[f64]> = s.tokens.iter().map(Vec::as_slice).collect();
            let bwd_in: Vec<&[f64]> = s.tokens.iter().rev().map(Vec::as_slice).collect();
            let mut d_fwd_in = vec![vec![0.0; 2 * h]; n];
            let mut d_bwd_in = vec![vec![0.0; 2 * h]; n];
            gru::backward(values, grads, fwd_ids, &fwd_in, &s.forward, &d_fwd, &mut d_fwd_in);
            gru::backward(values, grads, bwd_ids, &bwd_in, &s.backward, &d_bwd, &mut d_bwd_in);
            for (t, tok) in tokens.iter().enumerate() {
                let dz: Vec<f64> = d_fwd_in[t]
                    .iter()
                    .zip(&d_bwd_in[n - 1 - t])
                    .map(|(a, b)| a + b)
                    .collect();
                for (slot, id) in emb.iter().enumerate() {
                    let g = &mut grads[id.0];
                    let (_, vocab) = g.shape2();
                    let col = tok[slot] as usize;
                    for (r, v) in dz.iter().enumerate() {
                        g.data[r * vocab + col] += v;
                    }
                }
            }
        }
    }
}

/// `-log softmax(logits)[label]`, computed without forming the softmax.
pub fn nll(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}
