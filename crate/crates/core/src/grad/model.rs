//! Fixed-window next-token predictor with exact per-sample and per-token
//! gradients.
//!
//! For a supervised position `p` the model embeds the `context_window`
//! tokens preceding `p` (slots before the start of the sequence contribute a
//! zero vector), concatenates them, applies one tanh hidden layer and a
//! softmax output layer. The loss at `p` is the cross-entropy of the token
//! at `p`. Only generation positions are supervised.

use crate::error::{Error, Result};
use crate::grad::data::ToySample;
use crate::grad::layout::{FlatGradient, LayerMap};
use crate::rng::SplitRng;
use crate::scalar::Scalar;
use crate::source::SourceId;

pub const EMBEDDING: &str = "embedding";
pub const HIDDEN_WEIGHT: &str = "hidden.weight";
pub const HIDDEN_BIAS: &str = "hidden.bias";
pub const OUTPUT_WEIGHT: &str = "output.weight";
pub const OUTPUT_BIAS: &str = "output.bias";

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelShape {
    pub vocab_size: usize,
    pub context_window: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.context_window == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::config(format!("every model dimension must be positive: {self:?}")));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.context_window * self.embed_dim
    }

    /// Parameter layout: embedding `[V, D]`, hidden weight `[H, C*D]`,
    /// hidden bias `[H]`, output weight `[V, H]`, output bias `[V]`, all
    /// row-major.
    pub fn layer_map(&self) -> Result<LayerMap> {
        self.validate()?;
        LayerMap::from_lengths([
            (EMBEDDING, self.vocab_size * self.embed_dim),
            (HIDDEN_WEIGHT, self.hidden_dim * self.input_dim()),
            (HIDDEN_BIAS, self.hidden_dim),
            (OUTPUT_WEIGHT, self.vocab_size * self.hidden_dim),
            (OUTPUT_BIAS, self.vocab_size),
        ])
    }

    pub fn parameter_count(&self) -> usize {
        self.vocab_size * self.embed_dim
            + self.hidden_dim * self.input_dim()
            + self.hidden_dim
            + self.vocab_size * self.hidden_dim
            + self.vocab_size
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Clone, Copy, Debug)]
struct Offsets {
    emb: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl Offsets {
    fn of(shape: &ModelShape) -> Self {
        let emb = 0;
        let w1 = emb + shape.vocab_size * shape.embed_dim;
        let b1 = w1 + shape.hidden_dim * shape.input_dim();
        let w2 = b1 + shape.hidden_dim;
        let b2 = w2 + shape.vocab_size * shape.hidden_dim;
        Self { emb, w1, b1, w2, b2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyLm<T> {
    shape: ModelShape,
    layer_map: LayerMap,
    params: Vec<T>,
    epochs_trained: u64,
    learning_rate: f64,
}

impl<T: Scalar> ToyLm<T> {
    /// Seeded initialization: embeddings uniform in `[-0.5, 0.5)`, weights
    /// uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        let layer_map = shape.layer_map()?;
        let mut rng = SplitRng::new(seed, 0);
        let mut params = vec![T::zero(); layer_map.total_len()];
        let o = Offsets::of(&shape);
        let w1_scale = 1.0 / (shape.input_dim() as f64).sqrt();
        let w2_scale = 1.0 / (shape.hidden_dim as f64).sqrt();
        for v in &mut params[o.emb..o.w1] {
            *v = T::of(rng.symmetric(0.5));
        }
        for v in &mut params[o.w1..o.b1] {
            *v = T::of(rng.symmetric(w1_scale));
        }
        for v in &mut params[o.w2..o.b2] {
            *v = T::of(rng.symmetric(w2_scale));
        }
        Ok(Self { shape, layer_map, params, epochs_trained: 0, learning_rate: 0.0 })
    }

    pub fn from_parts(shape: ModelShape, params: Vec<T>, epochs_trained: u64, learning_rate: f64) -> Result<Self> {
        let layer_map = shape.layer_map()?;
        if params.len() != layer_map.total_len() {
            return Err(Error::data(format!("expected {} parameters, found {}", layer_map.total_len(), params.len())));
        }
        Ok(Self { shape, layer_map, params, epochs_trained, learning_rate })
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn layer_map(&self) -> &LayerMap {
        &self.layer_map
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Slice of one named layer.
    pub fn layer(&self, name: &str) -> Option<&[T]> {
        self.layer_map.get(name).map(|e| &self.params[e.offset..e.offset + e.length])
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let e = self.layer_map.get(name)?.clone();
        Some(&mut self.params[e.offset..e.offset + e.length])
    }

    pub fn epochs_trained(&self) -> u64 {
        self.epochs_trained
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub(crate) fn set_training_record(&mut self, epochs: u64, learning_rate: f64) {
        self.epochs_trained = epochs;
        self.learning_rate = learning_rate;
    }

    pub fn check_sample(&self, sample: &ToySample) -> Result<()> {
        sample.validate()?;
        let v = self.shape.vocab_size as u32;
        if let Some(t) = sample.tokens().find(|&t| t >= v) {
            return Err(Error::input(format!("sample {} has token {t} outside vocabulary of {v}", sample.id)));
        }
        Ok(())
    }

    /// Exact gradient of the mean generation-token loss of `sample`.
    pub fn sample_gradient(&self, sample: &ToySample) -> Result<FlatGradient<T>> {
        self.check_sample(sample)?;
        let seq = sample.sequence();
        let p = sample.prompt_tokens.len();
        let g = sample.generation_tokens.len();
        let weight = T::one() / T::of(g as f64);
        let mut grad = vec![T::zero(); self.params.len()];
        let mut ws = Workspace::new(&self.shape);
        for j in 0..g {
            self.accumulate_position(&seq, p + j, weight, &mut grad, &mut ws);
        }
        FlatGradient::new(grad, self.layer_map.clone(), SourceId::sample(sample.id))
    }

    /// Exact gradient of the loss at generation position `token_index`.
    pub fn token_gradient(&self, sample: &ToySample, token_index: usize) -> Result<FlatGradient<T>> {
        self.check_sample(sample)?;
        let g = sample.generation_tokens.len();
        if token_index >= g {
            return Err(Error::input(format!(
                "token index {token_index} out of range for sample {} with {g} generation tokens",
                sample.id
            )));
        }
        let seq = sample.sequence();
        let mut grad = vec![T::zero(); self.params.len()];
        let mut ws = Workspace::new(&self.shape);
        self.accumulate_position(&seq, sample.prompt_tokens.len() + token_index, T::one(), &mut grad, &mut ws);
        FlatGradient::new(grad, self.layer_map.clone(), SourceId::token(sample.id, token_index as u32))
    }

    /// Mean generation-token cross-entropy of `sample`.
    pub fn sample_loss(&self, sample: &ToySample) -> Result<T> {
        self.check_sample(sample)?;
        Ok(self.sample_loss_unchecked(sample))
    }

    pub(crate) fn sample_loss_unchecked(&self, sample: &ToySample) -> T {
        let seq = sample.sequence();
        let p = sample.prompt_tokens.len();
        let g = sample.generation_tokens.len();
        let mut ws = Workspace::new(&self.shape);
        let total: T = (0..g).map(|j| self.position_loss(&seq, p + j, &mut ws)).sum();
        total / T::of(g as f64)
    }

    /// Next-token probabilities given the tokens in `context` (only the last
    /// `context_window` are used).
    pub fn next_token_probs(&self, context: &[u32]) -> Vec<T> {
        let mut ws = Workspace::new(&self.shape);
        let mut seq = context.to_vec();
        seq.push(0);
        self.forward(&seq, seq.len() - 1, &mut ws);
        ws.probs.clone()
    }

    /// Greedy decoding; ties go to the lowest token id.
    pub fn generate(&self, prompt: &[u32], max_tokens: usize) -> Vec<u32> {
        let mut seq = prompt.to_vec();
        let mut ws = Workspace::new(&self.shape);
        let mut out = Vec::with_capacity(max_tokens);
        for _ in 0..max_tokens {
            seq.push(0);
            let pos = seq.len() - 1;
            self.forward(&seq, pos, &mut ws);
            let mut best = 0;
            for (i, p) in ws.probs.iter().enumerate() {
                if *p > ws.probs[best] {
                    best = i;
                }
            }
            seq[pos] = best as u32;
            out.push(best as u32);
        }
        out
    }

    fn forward(&self, seq: &[u32], pos: usize, ws: &mut Workspace<T>) {
        let s = &self.shape;
        let o = Offsets::of(s);
        let (d, c, h, v) = (s.embed_dim, s.context_window, s.hidden_dim, s.vocab_size);
        let input_dim = c * d;

        for slot in 0..c {
            let dst = &mut ws.x[slot * d..(slot + 1) * d];
            match context_token(seq, pos, c, slot) {
                Some(tok) => {
                    let src = o.emb + tok as usize * d;
                    dst.copy_from_slice(&self.params[src..src + d]);
                }
                None => dst.fill(T::zero()),
            }
        }

        for k in 0..h {
            let row = &self.params[o.w1 + k * input_dim..o.w1 + (k + 1) * input_dim];
            let z = row.iter().zip(&ws.x).fold(self.params[o.b1 + k], |acc, (w, x)| acc + *w * *x);
            ws.h[k] = z.tanh();
        }

        let mut max = T::neg_infinity();
        for u in 0..v {
            let row = &self.params[o.w2 + u * h..o.w2 + (u + 1) * h];
            let z = row.iter().zip(&ws.h).fold(self.params[o.b2 + u], |acc, (w, x)| acc + *w * *x);
            ws.probs[u] = z;
            max = max.max(z);
        }
        let mut total = T::zero();
        for p in ws.probs.iter_mut() {
            *p = (*p - max).exp();
            total = total + *p;
        }
        for p in ws.probs.iter_mut() {
            *p = *p / total;
        }
    }

    fn position_loss(&self, seq: &[u32], pos: usize, ws: &mut Workspace<T>) -> T {
        self.forward(seq, pos, ws);
        -ws.probs[seq[pos] as usize].ln()
    }

    /// Adds `weight * dL(pos)/dθ` into `grad` and returns the position loss.
    fn accumulate_position(&self, seq: &[u32], pos: usize, weight: T, grad: &mut [T], ws: &mut Workspace<T>) -> T {
        self.forward(seq, pos, ws);
        let s = &self.shape;
        let o = Offsets::of(s);
        let (d, c, h, v) = (s.embed_dim, s.context_window, s.hidden_dim, s.vocab_size);
        let input_dim = c * d;
        let target = seq[pos] as usize;
        let loss = -ws.probs[target].ln();

        // Output layer: dL/dlogits = softmax - onehot.
        ws.dh.fill(T::zero());
        for u in 0..v {
            let mut dl = ws.probs[u];
            if u == target {
                dl = dl - T::one();
            }
            let dl = dl * weight;
            grad[o.b2 + u] = grad[o.b2 + u] + dl;
            let w_row = o.w2 + u * h;
            for k in 0..h {
                grad[w_row + k] = grad[w_row + k] + dl * ws.h[k];
                ws.dh[k] = ws.dh[k] + self.params[w_row + k] * dl;
            }
        }

        // Hidden layer through tanh.
        ws.dx.fill(T::zero());
        for k in 0..h {
            let dz = ws.dh[k] * (T::one() - ws.h[k] * ws.h[k]);
            grad[o.b1 + k] = grad[o.b1 + k] + dz;
            let w_row = o.w1 + k * input_dim;
            for i in 0..input_dim {
                grad[w_row + i] = grad[w_row + i] + dz * ws.x[i];
                ws.dx[i] = ws.dx[i] + self.params[w_row + i] * dz;
            }
        }

        // Embedding rows of the context tokens.
        for slot in 0..c {
            if let Some(tok) = context_token(seq, pos, c, slot) {
                let dst = o.emb + tok as usize * d;
                for t in 0..d {
                    grad[dst + t] = grad[dst + t] + ws.dx[slot * d + t];
                }
            }
        }
        loss
    }
}

/// Token feeding context slot `slot` (0 = oldest) for the prediction at `pos`.
#[inline]
fn context_token(seq: &[u32], pos: usize, window: usize, slot: usize) -> Option<u32> {
    let back = window - slot;
    pos.checked_sub(back).map(|i| seq[i])
}

struct Workspace<T> {
    x: Vec<T>,
    h: Vec<T>,
    probs: Vec<T>,
    dh: Vec<T>,
    dx: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    fn new(s: &ModelShape) -> Self {
        let input_dim = s.context_window * s.embed_dim;
        Self {
            x: vec![T::zero(); input_dim],
            h: vec![T::zero(); s.hidden_dim],
            probs: vec![T::zero(); s.vocab_size],
            dh: vec![T::zero(); s.hidden_dim],
            dx: vec![T::zero(); input_dim],
        }
    }
}
