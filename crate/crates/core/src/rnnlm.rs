//! Word-level recurrent language model (Elman or LSTM cells) trained with
//! truncated back-propagation through time and plain SGD.
//!
//! Tag words (SP, SID_*, INT_*) are ordinary vocabulary items. Hidden state
//! carries across them inside a training sequence and resets between
//! sequences.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseErrorKind, Result};
use crate::lm::LanguageModel;
use crate::vocab::{TokenId, Vocabulary, BOS_TOKEN, EOS_TOKEN};

const MAGIC: &[u8; 8] = b"CTXRNNLM";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    /// tanh Elman cell.
    Simple,
    /// LSTM cell with input, forget, candidate and output gates.
    Gated,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Simple => 1,
            CellKind::Gated => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnLmConfig {
    /// Filled from the vocabulary at [`RnnLm::init`].
    #[serde(default)]
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub cell: CellKind,
    pub bptt: usize,
    pub learning_rate: f64,
    /// Multiplied into the learning rate after each epoch.
    #[serde(default = "one")]
    pub lr_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default = "default_init_range")]
    pub init_range: f64,
    #[serde(default)]
    pub bos_id: TokenId,
    #[serde(default)]
    pub eos_id: TokenId,
}

fn one() -> f64 {
    1.0
}
fn default_clip() -> f64 {
    5.0
}
fn default_init_range() -> f64 {
    0.1
}

impl Default for RnnLmConfig {
    /// Desk-scale default: one 64-unit LSTM layer.
    fn default() -> Self {
        RnnLmConfig {
            vocab_size: 0,
            embedding_dim: 32,
            hidden_dim: 64,
            num_layers: 1,
            cell: CellKind::Gated,
            bptt: 20,
            learning_rate: 0.5,
            lr_decay: 1.0,
            epochs: 10,
            seed: 7,
            clip_norm: 5.0,
            init_range: 0.1,
            bos_id: 0,
            eos_id: 0,
        }
    }
}

impl RnnLmConfig {
    /// Three 256-unit LSTM layers.
    pub fn large_preset() -> Self {
        RnnLmConfig {
            embedding_dim: 256,
            hidden_dim: 256,
            num_layers: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embedding_dim", self.embedding_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("bptt", self.bptt),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be > 0".into()));
        }
        Ok(())
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.embedding_dim
        } else {
            self.hidden_dim
        }
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        let (v, e, h) = (self.vocab_size, self.embedding_dim, self.hidden_dim);
        let g = self.cell.gates();
        let layers: usize = (0..self.num_layers)
            .map(|l| g * h * (self.layer_input(l) + h + 1))
            .sum();
        v * e + layers + v * h + v
    }

    fn shapes(&self) -> Vec<(String, usize, usize)> {
        let gh = self.cell.gates() * self.hidden_dim;
        let mut s = vec![("embedding".to_string(), self.vocab_size, self.embedding_dim)];
        for l in 0..self.num_layers {
            s.push((format!("layer{l}.w_input"), gh, self.layer_input(l)));
            s.push((format!("layer{l}.w_hidden"), gh, self.hidden_dim));
            s.push((format!("layer{l}.bias"), gh, 1));
        }
        s.push(("output.weight".to_string(), self.vocab_size, self.hidden_dim));
        s.push(("output.bias".to_string(), self.vocab_size, 1));
        s
    }
}

/// Row-major parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: String, rows: usize, cols: usize) -> Self {
        Tensor {
            name,
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// out += self · x
    fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o += acc;
        }
    }

    /// out += selfᵀ · y
    fn matvec_t_add(&self, y: &[f64], out: &mut [f64]) {
        for (r, &yr) in y.iter().enumerate().take(self.rows) {
            if yr == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * yr;
            }
        }
    }

    /// self += y · xᵀ
    fn outer_add(&mut self, y: &[f64], x: &[f64]) {
        let cols = self.cols;
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (g, b) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *g += yr * b;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Hidden {
    h: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

/// Recurrent state after some history, with the next-word distribution
/// cached so that scoring many continuations is cheap.
#[derive(Debug, Clone)]
pub struct RnnState {
    hidden: Hidden,
    log_probs: Arc<Vec<f64>>,
}

impl RnnState {
    /// Top-layer hidden activation.
    pub fn output(&self) -> &[f64] {
        self.hidden.h.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Next-word log-probabilities over the whole vocabulary.
    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.hidden.h
    }

    pub fn is_finite(&self) -> bool {
        self.hidden.h.iter().chain(&self.hidden.c).flatten().all(|x| x.is_finite())
    }
}

impl PartialEq for RnnState {
    fn eq(&self, other: &Self) -> bool {
        self.hidden == other.hidden
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_perplexity: f64,
    pub heldout_perplexity: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
}

impl TrainReport {
    pub fn final_heldout_perplexity(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.heldout_perplexity)
    }
}

struct LayerCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates (LSTM: i, f, g, o).
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

struct StepCache {
    token: TokenId,
    layers: Vec<LayerCache>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnLm {
    config: RnnLmConfig,
    params: Vec<Tensor>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    for z in logits.iter_mut() {
        *z -= lse;
    }
}

fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

impl RnnLm {
    /// Deterministic initialization from `config.seed`.
    pub fn init(mut config: RnnLmConfig, vocab: &Vocabulary) -> Result<Self> {
        config.bos_id = vocab
            .id(BOS_TOKEN)
            .ok_or_else(|| Error::Config("vocabulary lacks <s>".into()))?;
        config.eos_id = vocab
            .id(EOS_TOKEN)
            .ok_or_else(|| Error::Config("vocabulary lacks </s>".into()))?;
        config.vocab_size = vocab.len();
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let r = config.init_range;
        let params = config
            .shapes()
            .into_iter()
            .map(|(name, rows, cols)| {
                let mut t = Tensor::zeros(name, rows, cols);
                for x in &mut t.data {
                    *x = if r > 0.0 { quantize(rng.gen_range(-r..r)) } else { 0.0 };
                }
                t
            })
            .collect();
        Ok(RnnLm { config, params })
    }

    pub fn config(&self) -> &RnnLmConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn layer_params(&self, l: usize) -> (&Tensor, &Tensor, &Tensor) {
        let b = 1 + 3 * l;
        (&self.params[b], &self.params[b + 1], &self.params[b + 2])
    }

    fn embedding(&self) -> &Tensor {
        &self.params[0]
    }

    fn output_weight(&self) -> &Tensor {
        &self.params[1 + 3 * self.config.num_layers]
    }

    fn output_bias(&self) -> &Tensor {
        &self.params[2 + 3 * self.config.num_layers]
    }

    fn zero_hidden(&self) -> Hidden {
        let h = self.config.hidden_dim;
        let n = self.config.num_layers;
        let c = match self.config.cell {
            CellKind::Simple => vec![Vec::new(); n],
            CellKind::Gated => vec![vec![0.0; h]; n],
        };
        Hidden {
            h: vec![vec![0.0; h]; n],
            c,
        }
    }

    fn check_token(&self, w: TokenId) -> Result<()> {
        if (w as usize) < self.config.vocab_size {
            Ok(())
        } else {
            Err(Error::UnknownTokenId(w))
        }
    }

    /// One cell update. Returns (activated gates, new c, new h).
    fn cell_forward(&self, l: usize, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.config.hidden_dim;
        let (wx, wh, b) = self.layer_params(l);
        let mut z = b.data.clone();
        wx.matvec_add(x, &mut z);
        wh.matvec_add(h_prev, &mut z);
        match self.config.cell {
            CellKind::Simple => {
                let h: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
                (Vec::new(), Vec::new(), h)
            }
            CellKind::Gated => {
                let mut gates = z;
                for k in 0..hd {
                    gates[k] = sigmoid(gates[k]);
                    gates[hd + k] = sigmoid(gates[hd + k]);
                    gates[2 * hd + k] = gates[2 * hd + k].tanh();
                    gates[3 * hd + k] = sigmoid(gates[3 * hd + k]);
                }
                let mut c = vec![0.0; hd];
                let mut h = vec![0.0; hd];
                for k in 0..hd {
                    c[k] = gates[hd + k] * c_prev[k] + gates[k] * gates[2 * hd + k];
                    h[k] = gates[3 * hd + k] * c[k].tanh();
                }
                (gates, c, h)
            }
        }
    }

    fn advance_hidden(&self, hidden: &Hidden, word: TokenId) -> Hidden {
        let mut x = self.embedding().row(word as usize).to_vec();
        let mut next = Hidden {
            h: Vec::with_capacity(hidden.h.len()),
            c: Vec::with_capacity(hidden.c.len()),
        };
        for l in 0..self.config.num_layers {
            let (_, c, h) = self.cell_forward(l, &x, &hidden.h[l], &hidden.c[l]);
            x = h.clone();
            next.h.push(h);
            next.c.push(c);
        }
        next
    }

    fn output_log_probs(&self, top: &[f64]) -> Vec<f64> {
        let mut logits = self.output_bias().data.clone();
        self.output_weight().matvec_add(top, &mut logits);
        log_softmax(&mut logits);
        logits
    }

    fn make_state(&self, hidden: Hidden) -> RnnState {
        let lp = self.output_log_probs(hidden.h.last().expect("at least one layer"));
        RnnState {
            hidden,
            log_probs: Arc::new(lp),
        }
    }

    /// State after `<s>` only.
    pub fn initial(&self) -> RnnState {
        let h = self.advance_hidden(&self.zero_hidden(), self.config.bos_id);
        self.make_state(h)
    }

    /// Cost of `word` given `state`, and the state advanced past `word`.
    pub fn step(&self, state: &RnnState, word: TokenId) -> Result<(f64, RnnState)> {
        self.check_token(word)?;
        let cost = -state.log_probs[word as usize];
        let next = self.make_state(self.advance_hidden(&state.hidden, word));
        Ok((cost, next))
    }

    /// State after `<s> words`.
    pub fn history_state(&self, words: &[TokenId]) -> Result<RnnState> {
        let mut s = self.initial();
        for &w in words {
            s = self.step(&s, w)?.1;
        }
        Ok(s)
    }

    /// Forward over a chunk, recording what the backward pass needs.
    fn forward_chunk(&self, inputs: &[TokenId], targets: &[TokenId], init: &Hidden) -> (f64, Vec<StepCache>, Hidden) {
        let mut hidden = init.clone();
        let mut caches = Vec::with_capacity(inputs.len());
        let mut loss = 0.0;
        for (&tok, &tgt) in inputs.iter().zip(targets) {
            let mut x = self.embedding().row(tok as usize).to_vec();
            let mut layers = Vec::with_capacity(self.config.num_layers);
            for l in 0..self.config.num_layers {
                let (gates, c, h) = self.cell_forward(l, &x, &hidden.h[l], &hidden.c[l]);
                layers.push(LayerCache {
                    x: std::mem::take(&mut x),
                    h_prev: std::mem::replace(&mut hidden.h[l], h.clone()),
                    c_prev: std::mem::replace(&mut hidden.c[l], c.clone()),
                    gates,
                    c,
                    h: h.clone(),
                });
                x = h;
            }
            let lp = self.output_log_probs(&x);
            loss -= lp[tgt as usize];
            let probs = lp.iter().map(|v| v.exp()).collect();
            caches.push(StepCache {
                token: tok,
                layers,
                probs,
            });
        }
        (loss, caches, hidden)
    }

    /// Gradients of the summed loss over a chunk, scaled by `scale`.
    fn backward_chunk(&self, caches: &[StepCache], targets: &[TokenId], scale: f64) -> Vec<Tensor> {
        let mut grads: Vec<Tensor> = self
            .params
            .iter()
            .map(|t| Tensor::zeros(t.name.clone(), t.rows, t.cols))
            .collect();
        let nl = self.config.num_layers;
        let hd = self.config.hidden_dim;
        let out_w_idx = 1 + 3 * nl;
        let mut dh_next = vec![vec![0.0; hd]; nl];
        let mut dc_next = vec![vec![0.0; hd]; nl];
        for (t, step) in caches.iter().enumerate().rev() {
            let mut dlogits: Vec<f64> = step.probs.iter().map(|p| p * scale).collect();
            dlogits[targets[t] as usize] -= scale;
            let top = &step.layers[nl - 1].h;
            grads[out_w_idx].outer_add(&dlogits, top);
            for (g, d) in grads[out_w_idx + 1].data.iter_mut().zip(&dlogits) {
                *g += d;
            }
            let mut dh_above = vec![0.0; hd];
            self.output_weight().matvec_t_add(&dlogits, &mut dh_above);
            for l in (0..nl).rev() {
                let lc = &step.layers[l];
                let dh: Vec<f64> = dh_above.iter().zip(&dh_next[l]).map(|(a, b)| a + b).collect();
                let dz = match self.config.cell {
                    CellKind::Simple => dh.iter().zip(&lc.h).map(|(d, h)| d * (1.0 - h * h)).collect::<Vec<f64>>(),
                    CellKind::Gated => {
                        let g = &lc.gates;
                        let mut dz = vec![0.0; 4 * hd];
                        for k in 0..hd {
                            let (i, f, cand, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
                            let tc = lc.c[k].tanh();
                            let d_o = dh[k] * tc;
                            let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[l][k];
                            let d_i = dc * cand;
                            let d_f = dc * lc.c_prev[k];
                            let d_g = dc * i;
                            dc_next[l][k] = dc * f;
                            dz[k] = d_i * i * (1.0 - i);
                            dz[hd + k] = d_f * f * (1.0 - f);
                            dz[2 * hd + k] = d_g * (1.0 - cand * cand);
                            dz[3 * hd + k] = d_o * o * (1.0 - o);
                        }
                        dz
                    }
                };
                let b = 1 + 3 * l;
                grads[b].outer_add(&dz, &lc.x);
                grads[b + 1].outer_add(&dz, &lc.h_prev);
                for (g, d) in grads[b + 2].data.iter_mut().zip(&dz) {
                    *g += d;
                }
                let (wx, wh, _) = self.layer_params(l);
                let mut dx = vec![0.0; lc.x.len()];
                wx.matvec_t_add(&dz, &mut dx);
                let mut dhp = vec![0.0; hd];
                wh.matvec_t_add(&dz, &mut dhp);
                dh_next[l] = dhp;
                dh_above = dx;
            }
            let e = &mut grads[0];
            let cols = e.cols;
            let row = step.token as usize;
            for (g, d) in e.data[row * cols..(row + 1) * cols].iter_mut().zip(&dh_above) {
                *g += d;
            }
        }
        grads
    }

    /// Mean cross-entropy of predicting `tokens[1..]` from `tokens[..n-1]`,
    /// starting from a zero hidden state, and its gradient.
    pub fn loss_and_gradients(&self, tokens: &[TokenId]) -> Result<(f64, Vec<Tensor>)> {
        if tokens.len() < 2 {
            return Err(Error::Config("need at least two tokens".into()));
        }
        for &t in tokens {
            self.check_token(t)?;
        }
        let (inputs, targets) = (&tokens[..tokens.len() - 1], &tokens[1..]);
        let scale = 1.0 / inputs.len() as f64;
        let (loss, caches, _) = self.forward_chunk(inputs, targets, &self.zero_hidden());
        let grads = self.backward_chunk(&caches, targets, scale);
        Ok((loss * scale, grads))
    }

    /// Mean cross-entropy only; see [`RnnLm::loss_and_gradients`].
    pub fn loss(&self, tokens: &[TokenId]) -> Result<f64> {
        if tokens.len() < 2 {
            return Err(Error::Config("need at least two tokens".into()));
        }
        let (inputs, targets) = (&tokens[..tokens.len() - 1], &tokens[1..]);
        let (loss, _, _) = self.forward_chunk(inputs, targets, &self.zero_hidden());
        Ok(loss / inputs.len() as f64)
    }

    fn wrap(&self, seq: &[TokenId]) -> Vec<TokenId> {
        let mut t = Vec::with_capacity(seq.len() + 2);
        t.push(self.config.bos_id);
        t.extend_from_slice(seq);
        t.push(self.config.eos_id);
        t
    }

    /// Perplexity over `<s> seq </s>` for each sequence, state reset per sequence.
    pub fn perplexity(&self, corpus: &[Vec<TokenId>]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for seq in corpus {
            let t = self.wrap(seq);
            for &w in &t {
                self.check_token(w)?;
            }
            let (loss, _, _) = self.forward_chunk(&t[..t.len() - 1], &t[1..], &self.zero_hidden());
            total += loss;
            count += t.len() - 1;
        }
        if count == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok((total / count as f64).exp())
    }

    /// SGD with truncated BPTT over `<s> seq </s>` sequences. Returns the
    /// per-epoch perplexity log.
    pub fn train(&mut self, corpus: &[Vec<TokenId>], heldout: Option<&[Vec<TokenId>]>) -> Result<TrainReport> {
        self.config.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let seqs: Vec<Vec<TokenId>> = corpus.iter().map(|s| self.wrap(s)).collect();
        for s in &seqs {
            for &w in s {
                self.check_token(w)?;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed);
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        let mut lr = self.config.learning_rate;
        let mut report = TrainReport::default();
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut count = 0usize;
            for &si in &order {
                let seq = &seqs[si];
                let (inputs, targets) = (&seq[..seq.len() - 1], &seq[1..]);
                let mut hidden = self.zero_hidden();
                for start in (0..inputs.len()).step_by(self.config.bptt) {
                    let end = (start + self.config.bptt).min(inputs.len());
                    let (loss, caches, next) = self.forward_chunk(&inputs[start..end], &targets[start..end], &hidden);
                    if !loss.is_finite() {
                        return Err(Error::NumericalDivergence(format!(
                            "loss became non-finite in epoch {} at learning rate {lr}; \
                             lower the learning rate or the clip norm",
                            epoch + 1
                        )));
                    }
                    total += loss;
                    count += end - start;
                    let scale = 1.0 / (end - start) as f64;
                    let grads = self.backward_chunk(&caches, &targets[start..end], scale);
                    self.apply_sgd(&grads, lr);
                    hidden = next;
                }
            }
            let heldout_ppl = match heldout {
                Some(h) if !h.is_empty() => Some(self.perplexity(h)?),
                _ => None,
            };
            let train_ppl = (total / count as f64).exp();
            log::info!(
                "epoch {} lr {lr:.4} train ppl {train_ppl:.3} heldout ppl {}",
                epoch + 1,
                heldout_ppl.map_or("-".to_string(), |p| format!("{p:.3}"))
            );
            report.epochs.push(EpochLog {
                epoch: epoch + 1,
                learning_rate: lr,
                train_perplexity: train_ppl,
                heldout_perplexity: heldout_ppl,
            });
            lr *= self.config.lr_decay;
        }
        Ok(report)
    }

    fn apply_sgd(&mut self, grads: &[Tensor], lr: f64) {
        if lr == 0.0 {
            return;
        }
        let norm = grads
            .iter()
            .flat_map(|g| &g.data)
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let clip = if norm > self.config.clip_norm {
            self.config.clip_norm / norm
        } else {
            1.0
        };
        for (p, g) in self.params.iter_mut().zip(grads) {
            for (x, d) in p.data.iter_mut().zip(&g.data) {
                *x = quantize(*x - lr * clip * d);
            }
        }
    }

    /// Binary model file: magic, version, length-prefixed JSON config,
    /// tensor count, then per tensor `rows`, `cols` and little-endian f32 data.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let cfg = serde_json::to_vec(&self.config)?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for t in &self.params {
            w.write_all(&(t.rows as u32).to_le_bytes())?;
            w.write_all(&(t.cols as u32).to_le_bytes())?;
            for &x in &t.data {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
            r.read_exact(buf).map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => Error::Parse {
                    line: 0,
                    kind: ParseErrorKind::Truncated,
                },
                _ => Error::Io(e),
            })
        }
        fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
            let mut b = [0u8; 4];
            read_exact(r, &mut b)?;
            Ok(u32::from_le_bytes(b))
        }
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic).map_err(|_| Error::FormatVersionMismatch("missing header".into()))?;
        if &magic != MAGIC {
            return Err(Error::FormatVersionMismatch("not a model file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::FormatVersionMismatch(format!(
                "file version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let len = read_u32(&mut r)? as usize;
        let mut cfg = vec![0u8; len];
        read_exact(&mut r, &mut cfg)?;
        let config: RnnLmConfig = serde_json::from_slice(&cfg).map_err(|e| Error::Parse {
            line: 0,
            kind: ParseErrorKind::Malformed(format!("config block: {e}")),
        })?;
        config.validate()?;
        let shapes = config.shapes();
        let count = read_u32(&mut r)? as usize;
        if count != shapes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{count} tensors in file, config implies {}",
                shapes.len()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for (name, rows, cols) in shapes {
            let fr = read_u32(&mut r)? as usize;
            let fc = read_u32(&mut r)? as usize;
            if (fr, fc) != (rows, cols) {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: file has {fr}x{fc}, config implies {rows}x{cols}"
                )));
            }
            let mut raw = vec![0u8; rows * cols * 4];
            read_exact(&mut r, &mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            params.push(Tensor { name, rows, cols, data });
        }
        Ok(RnnLm { config, params })
    }

    /// Loads and checks that the model matches `vocab`.
    pub fn load_for_vocab<R: Read>(r: R, vocab: &Vocabulary) -> Result<Self> {
        let m = Self::load(r)?;
        if m.config.vocab_size != vocab.len() {
            return Err(Error::ShapeMismatch(format!(
                "model vocabulary has {} tokens, vocabulary file has {}",
                m.config.vocab_size,
                vocab.len()
            )));
        }
        Ok(m)
    }
}

impl LanguageModel for RnnLm {
    type State = RnnState;

    fn initial_state(&self) -> RnnState {
        self.initial()
    }

    fn score(&self, state: &RnnState, word: TokenId) -> Result<(f64, RnnState)> {
        self.step(state, word)
    }

    fn final_cost(&self, state: &RnnState) -> Result<f64> {
        Ok(-state.log_probs[self.config.eos_id as usize])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        let mut v = Vocabulary::with_specials();
        for w in ["a", "b", "c", "SP"] {
            v.insert(w);
        }
        v
    }

    fn small(cell: CellKind) -> RnnLmConfig {
        RnnLmConfig {
            embedding_dim: 4,
            hidden_dim: 5,
            num_layers: 2,
            cell,
            ..RnnLmConfig::default()
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let v = vocab();
        let a = RnnLm::init(small(CellKind::Gated), &v).unwrap();
        let b = RnnLm::init(small(CellKind::Gated), &v).unwrap();
        assert_eq!(a, b);
        let mut cfg = small(CellKind::Gated);
        cfg.seed = 8;
        assert_ne!(a, RnnLm::init(cfg, &v).unwrap());
    }

    #[test]
    fn vocab_without_sentence_end_is_rejected() {
        let mut v = Vocabulary::new();
        v.insert(BOS_TOKEN);
        v.insert("a");
        assert!(matches!(RnnLm::init(RnnLmConfig::default(), &v), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_count_matches_formula() {
        let v = vocab();
        let m = RnnLm::init(RnnLmConfig::default(), &v).unwrap();
        let n: usize = m.parameters().iter().map(|t| t.data.len()).sum();
        // V*E + 4H(E+H+1) + V*H + V with V=8, E=32, H=64
        assert_eq!(n, 8 * 32 + 4 * 64 * (32 + 64 + 1) + 8 * 64 + 8);
        assert_eq!(n, m.config().parameter_count());
    }

    #[test]
    fn zero_weights_give_uniform_costs() {
        let v = vocab();
        let mut m = RnnLm::init(small(CellKind::Simple), &v).unwrap();
        for t in m.parameters_mut() {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
        let s = m.initial();
        for w in 0..v.len() as TokenId {
            let (c, _) = m.step(&s, w).unwrap();
            assert!((c - (v.len() as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_token_id() {
        let v = vocab();
        let m = RnnLm::init(small(CellKind::Gated), &v).unwrap();
        assert!(matches!(m.step(&m.initial(), 99), Err(Error::UnknownTokenId(99))));
    }

    #[test]
    fn history_state_is_stepwise() {
        let v = vocab();
        let m = RnnLm::init(small(CellKind::Gated), &v).unwrap();
        let (a, b, c) = (4, 5, 6);
        let s_ab = m.history_state(&[a, b]).unwrap();
        let s_abc = m.history_state(&[a, b, c]).unwrap();
        assert_eq!(m.step(&s_ab, c).unwrap().1, s_abc);
        assert_eq!(m.history_state(&[]).unwrap(), m.initial());
    }

    #[test]
    fn lr_zero_keeps_parameters() {
        let v = vocab();
        let mut cfg = small(CellKind::Gated);
        cfg.learning_rate = 0.0;
        cfg.epochs = 3;
        let mut m = RnnLm::init(cfg, &v).unwrap();
        let before = m.clone();
        let rep = m.train(&[vec![4, 5, 6], vec![5, 7]], None).unwrap();
        assert_eq!(m, before);
        let p0 = rep.epochs[0].train_perplexity;
        for e in &rep.epochs {
            assert!((e.train_perplexity - p0).abs() < 1e-9 * p0);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let v = vocab();
        let mut cfg = small(CellKind::Simple);
        cfg.learning_rate = f64::MAX;
        cfg.clip_norm = f64::MAX;
        cfg.epochs = 3;
        let mut m = RnnLm::init(cfg, &v).unwrap();
        let err = m.train(&vec![vec![4, 5, 6, 4, 5, 6]; 4], None).unwrap_err();
        assert!(matches!(err, Error::NumericalDivergence(_)), "{err}");
    }

    #[test]
    fn save_load_round_trip() {
        let v = vocab();
        let m = RnnLm::init(small(CellKind::Gated), &v).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = RnnLm::load(&buf[..]).unwrap();
        assert_eq!(back, m);
        // truncated
        let err = RnnLm::load(&buf[..buf.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. } | Error::FormatVersionMismatch(_)));
        let err = RnnLm::load(&buf[..5]).unwrap_err();
        assert!(matches!(err, Error::FormatVersionMismatch(_)));
        // vocabulary of a different size
        let mut v2 = v.clone();
        v2.insert("extra");
        assert!(matches!(RnnLm::load_for_vocab(&buf[..], &v2), Err(Error::ShapeMismatch(_))));
    }
}
