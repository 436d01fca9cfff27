//! A small reference language model with hand-derived gradients.
//!
//! Architecture, per position `t`:
//!
//! ```text
//! m_t = mean(E[x_s] for s in t-k+1 ..= t)      (bag of the last k tokens)
//! h_t = tanh(M m_t + c)
//! z_t = W h_t + b                              (W is the probed output layer)
//! p_t = softmax(z_t),  loss = mean_t -ln p_t[x_{t+1}]
//! ```
//!
//! Tokens are bytes folded into the vocabulary after three specials
//! (BOS, SEP, EOS). With the default vocabulary of 259 every byte keeps its own
//! id, so any UTF-8 text is encodable.

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LossScope, ProbeConfig, ProbeError, ProbeModel};
use crate::dataset::SampleRecord;
use crate::linalg::Matrix;

pub const BOS: u32 = 0;
pub const SEP: u32 = 1;
pub const EOS: u32 = 2;
pub const N_SPECIAL: usize = 3;
/// Vocabulary size at which every byte has a dedicated id.
pub const BYTE_VOCAB: usize = N_SPECIAL + 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TinyLmConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    /// Number of trailing tokens averaged into the context vector.
    pub context: usize,
    /// Parameters start uniform in `(-init_range, init_range)`.
    pub init_range: f64,
    pub seed: u64,
}

impl Default for TinyLmConfig {
    fn default() -> Self {
        Self {
            vocab_size: BYTE_VOCAB,
            hidden: 32,
            context: 4,
            init_range: 0.08,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub max_seq_len: usize,
    pub loss_scope: LossScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            learning_rate: 0.1,
            seed: 0,
            max_seq_len: super::DEFAULT_MAX_SEQ_LEN,
            loss_scope: LossScope::ResponseOnly,
        }
    }
}

/// Token ids plus the index of the first supervised position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub tokens: Vec<u32>,
    /// Positions `first_target .. tokens.len() - 1` each predict the next token.
    pub first_target: usize,
}

impl Encoded {
    pub fn n_targets(&self) -> usize {
        (self.tokens.len() - 1).saturating_sub(self.first_target)
    }
}

/// Gradients for every TinyLM parameter, laid out like the parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub embedding: Vec<f64>,
    pub mixer_weight: Vec<f64>,
    pub mixer_bias: Vec<f64>,
    pub output_weight: Vec<f64>,
    pub output_bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TinyLm {
    cfg: TinyLmConfig,
    embedding: Matrix,
    mixer_weight: Matrix,
    mixer_bias: Vec<f64>,
    output_weight: Matrix,
    output_bias: Vec<f64>,
}

struct Position {
    ctx_start: usize,
    ctx_end: usize,
    mean: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
    target: u32,
}

impl TinyLm {
    pub fn new(cfg: TinyLmConfig) -> Result<Self, ProbeError> {
        if cfg.vocab_size <= N_SPECIAL {
            return Err(ProbeError::InvalidConfig(format!(
                "vocab_size must exceed {N_SPECIAL}, got {}",
                cfg.vocab_size
            )));
        }
        if cfg.hidden == 0 || cfg.context == 0 {
            return Err(ProbeError::InvalidConfig("hidden and context must be positive".into()));
        }
        if !(cfg.init_range.is_finite() && cfg.init_range > 0.0) {
            return Err(ProbeError::InvalidConfig("init_range must be positive".into()));
        }
        let (v, h) = (cfg.vocab_size, cfg.hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let r = cfg.init_range;
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-r..r)).collect() };
        let embedding = Matrix::from_vec(v, h, draw(v * h))?;
        let mixer_weight = Matrix::from_vec(h, h, draw(h * h))?;
        let mixer_bias = draw(h);
        let output_weight = Matrix::from_vec(v, h, draw(v * h))?;
        let output_bias = draw(v);
        Ok(Self {
            cfg,
            embedding,
            mixer_weight,
            mixer_bias,
            output_weight,
            output_bias,
        })
    }

    pub fn config(&self) -> &TinyLmConfig {
        &self.cfg
    }

    pub fn output_bias(&self) -> &[f64] {
        &self.output_bias
    }

    /// Copy with a replaced output-layer weight matrix.
    pub fn with_output_layer(&self, w: Matrix) -> Result<Self, ProbeError> {
        if w.shape() != self.output_weight.shape() {
            return Err(crate::linalg::LinalgError::ShapeMismatch {
                left: self.output_weight.shape(),
                right: w.shape(),
            }
            .into());
        }
        Ok(Self {
            output_weight: w,
            ..self.clone()
        })
    }

    /// Output weights and bias set to zero, giving uniform predictions.
    pub fn with_zeroed_output(mut self) -> Self {
        self.output_weight = Matrix::zeros(self.cfg.vocab_size, self.cfg.hidden);
        self.output_bias.iter_mut().for_each(|b| *b = 0.0);
        self
    }

    /// Named weight tensors, for snapshotting and layer-delta reports.
    pub fn layers(&self) -> Vec<(String, Matrix)> {
        let row = |v: &[f64]| Matrix::from_vec(1, v.len(), v.to_vec()).expect("finite bias");
        vec![
            ("embedding".to_string(), self.embedding.clone()),
            ("mixer.weight".to_string(), self.mixer_weight.clone()),
            ("mixer.bias".to_string(), row(&self.mixer_bias)),
            ("output.weight".to_string(), self.output_weight.clone()),
            ("output.bias".to_string(), row(&self.output_bias)),
        ]
    }

    pub fn token_for_byte(&self, byte: u8) -> u32 {
        (N_SPECIAL + byte as usize % (self.cfg.vocab_size - N_SPECIAL)) as u32
    }

    /// `[BOS] prompt [SEP] response [EOS]`, truncated to `max_seq_len` by
    /// dropping prompt tokens from the left first, then response tokens from
    /// the right.
    pub fn encode(&self, sample: &SampleRecord, max_seq_len: usize, scope: LossScope) -> Result<Encoded, ProbeError> {
        let prompt = sample.prompt();
        let mut response: Vec<u32> = sample.response.bytes().map(|b| self.token_for_byte(b)).collect();
        response.push(EOS);
        let prompt: Vec<u32> = prompt.bytes().map(|b| self.token_for_byte(b)).collect();

        let room = max_seq_len.saturating_sub(2);
        response.truncate(room);
        let keep_prompt = prompt.len().min(room - response.len());
        let prompt = &prompt[prompt.len() - keep_prompt..];

        let mut tokens = Vec::with_capacity(2 + prompt.len() + response.len());
        tokens.push(BOS);
        tokens.extend_from_slice(prompt);
        let sep_idx = tokens.len();
        tokens.push(SEP);
        tokens.extend_from_slice(&response);

        let first_target = match scope {
            LossScope::ResponseOnly => sep_idx,
            LossScope::FullSequence => 0,
        };
        let encoded = Encoded { tokens, first_target };
        if encoded.n_targets() == 0 {
            return Err(ProbeError::EmptyTarget {
                sample_id: sample.id.clone(),
            });
        }
        Ok(encoded)
    }

    fn forward(&self, enc: &Encoded) -> Vec<Position> {
        let h = self.cfg.hidden;
        let v = self.cfg.vocab_size;
        let mut out = Vec::with_capacity(enc.n_targets());
        for t in enc.first_target..enc.tokens.len() - 1 {
            let ctx_start = (t + 1).saturating_sub(self.cfg.context);
            let ctx_end = t + 1;
            let mut mean = vec![0.0; h];
            for &tok in &enc.tokens[ctx_start..ctx_end] {
                for (m, e) in mean.iter_mut().zip(self.embedding.row(tok as usize)) {
                    *m += e;
                }
            }
            let inv = 1.0 / (ctx_end - ctx_start) as f64;
            mean.iter_mut().for_each(|m| *m *= inv);

            let hidden: Vec<f64> = (0..h)
                .map(|i| (dot(self.mixer_weight.row(i), &mean) + self.mixer_bias[i]).tanh())
                .collect();

            let mut probs: Vec<f64> = (0..v)
                .map(|i| dot(self.output_weight.row(i), &hidden) + self.output_bias[i])
                .collect();
            softmax_in_place(&mut probs);

            out.push(Position {
                ctx_start,
                ctx_end,
                mean,
                hidden,
                probs,
                target: enc.tokens[t + 1],
            });
        }
        out
    }

    fn mean_nll(positions: &[Position]) -> f64 {
        let total: f64 = positions
            .iter()
            .map(|p| -p.probs[p.target as usize].max(f64::MIN_POSITIVE).ln())
            .sum();
        total / positions.len() as f64
    }

    /// Hidden state and target token of every supervised position.
    pub fn hidden_states(&self, sample: &SampleRecord, cfg: &ProbeConfig) -> Result<Vec<(Vec<f64>, u32)>, ProbeError> {
        let enc = self.encode(sample, cfg.max_seq_len, cfg.loss_scope)?;
        Ok(self
            .forward(&enc)
            .into_iter()
            .map(|p| (p.hidden, p.target))
            .collect())
    }

    /// Loss and gradients for all parameters.
    pub fn full_gradients(&self, sample: &SampleRecord, max_seq_len: usize, scope: LossScope) -> Result<(f64, Gradients), ProbeError> {
        let enc = self.encode(sample, max_seq_len, scope)?;
        let positions = self.forward(&enc);
        let loss = Self::mean_nll(&positions);
        let (v, h) = (self.cfg.vocab_size, self.cfg.hidden);
        let mut g = Gradients {
            embedding: vec![0.0; v * h],
            mixer_weight: vec![0.0; h * h],
            mixer_bias: vec![0.0; h],
            output_weight: vec![0.0; v * h],
            output_bias: vec![0.0; v],
        };
        let scale = 1.0 / positions.len() as f64;
        let mut dz = vec![0.0; v];
        let mut dh = vec![0.0; h];
        let mut dpre = vec![0.0; h];
        let mut dmean = vec![0.0; h];
        for pos in &positions {
            for (i, d) in dz.iter_mut().enumerate() {
                *d = pos.probs[i] * scale;
            }
            dz[pos.target as usize] -= scale;

            dh.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..v {
                let d = dz[i];
                g.output_bias[i] += d;
                let w_row = self.output_weight.row(i);
                let g_row = &mut g.output_weight[i * h..(i + 1) * h];
                for j in 0..h {
                    g_row[j] += d * pos.hidden[j];
                    dh[j] += d * w_row[j];
                }
            }

            for j in 0..h {
                dpre[j] = dh[j] * (1.0 - pos.hidden[j] * pos.hidden[j]);
            }
            dmean.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..h {
                let d = dpre[i];
                g.mixer_bias[i] += d;
                let m_row = self.mixer_weight.row(i);
                let g_row = &mut g.mixer_weight[i * h..(i + 1) * h];
                for j in 0..h {
                    g_row[j] += d * pos.mean[j];
                    dmean[j] += d * m_row[j];
                }
            }

            let inv = 1.0 / (pos.ctx_end - pos.ctx_start) as f64;
            for &tok in &enc.tokens[pos.ctx_start..pos.ctx_end] {
                let g_row = &mut g.embedding[tok as usize * h..(tok as usize + 1) * h];
                for j in 0..h {
                    g_row[j] += dmean[j] * inv;
                }
            }
        }
        Ok((loss, g))
    }

    /// Plain SGD update over all parameters.
    pub fn apply(&mut self, g: &Gradients, lr: f64) {
        let step = |p: &mut [f64], d: &[f64]| {
            for (x, dx) in p.iter_mut().zip(d) {
                *x -= lr * dx;
            }
        };
        step(self.embedding.as_mut_slice(), &g.embedding);
        step(self.mixer_weight.as_mut_slice(), &g.mixer_weight);
        step(&mut self.mixer_bias, &g.mixer_bias);
        step(self.output_weight.as_mut_slice(), &g.output_weight);
        step(&mut self.output_bias, &g.output_bias);
    }

    /// Per-sample SGD for `tc.epochs` passes in a seeded shuffled order.
    /// Returns the mean training loss of each epoch. Samples without
    /// supervised tokens are skipped.
    pub fn train(&mut self, samples: &[SampleRecord], tc: &TrainConfig) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut history = Vec::with_capacity(tc.epochs);
        for _ in 0..tc.epochs {
            order.shuffle(&mut rng);
            let (mut total, mut count) = (0.0, 0usize);
            for &i in &order {
                if let Ok((loss, g)) = self.full_gradients(&samples[i], tc.max_seq_len, tc.loss_scope) {
                    self.apply(&g, tc.learning_rate);
                    total += loss;
                    count += 1;
                }
            }
            history.push(if count == 0 { f64::NAN } else { total / count as f64 });
        }
        history
    }

    /// Mean per-sample loss over the samples that have supervised tokens.
    pub fn mean_loss(&self, samples: &[SampleRecord], cfg: &ProbeConfig) -> Option<f64> {
        let losses: Vec<f64> = samples.iter().filter_map(|s| self.loss(s, cfg).ok()).collect();
        if losses.is_empty() {
            None
        } else {
            Some(losses.iter().sum::<f64>() / losses.len() as f64)
        }
    }
}

impl ProbeModel for TinyLm {
    fn base_output_layer(&self) -> &Matrix {
        &self.output_weight
    }

    fn output_layer_gradient(&self, sample: &SampleRecord, cfg: &ProbeConfig) -> Result<Matrix, ProbeError> {
        let enc = self.encode(sample, cfg.max_seq_len, cfg.loss_scope)?;
        let positions = self.forward(&enc);
        let (v, h) = (self.cfg.vocab_size, self.cfg.hidden);
        let scale = 1.0 / positions.len() as f64;
        let mut g = vec![0.0; v * h];
        for pos in &positions {
            for i in 0..v {
                let mut d = pos.probs[i];
                if i == pos.target as usize {
                    d -= 1.0;
                }
                let d = d * scale;
                for (gx, hx) in g[i * h..(i + 1) * h].iter_mut().zip(&pos.hidden) {
                    *gx += d * hx;
                }
            }
        }
        Ok(Matrix::from_vec(v, h, g)?)
    }

    fn loss(&self, sample: &SampleRecord, cfg: &ProbeConfig) -> Result<f64, ProbeError> {
        let enc = self.encode(sample, cfg.max_seq_len, cfg.loss_scope)?;
        Ok(Self::mean_nll(&self.forward(&enc)))
    }

    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, m) in self.layers() {
            hasher.update(name.as_bytes());
            for v in m.as_slice() {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        format!(
            "tinylm-v{}-h{}-k{}-{}",
            self.cfg.vocab_size, self.cfg.hidden, self.cfg.context, hex
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in z.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    z.iter_mut().for_each(|x| *x *= inv);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(v: usize, h: usize, seed: u64) -> TinyLm {
        TinyLm::new(TinyLmConfig {
            vocab_size: v,
            hidden: h,
            seed,
            ..TinyLmConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn encoding_layout() {
        let m = model(BYTE_VOCAB, 4, 0);
        let enc = m
            .encode(&SampleRecord::new("s", "ab", "c"), 64, LossScope::ResponseOnly)
            .unwrap();
        let a = m.token_for_byte(b'a');
        let b = m.token_for_byte(b'b');
        let c = m.token_for_byte(b'c');
        assert_eq!(enc.tokens, vec![BOS, a, b, SEP, c, EOS]);
        assert_eq!(enc.first_target, 3);
        assert_eq!(enc.n_targets(), 2);
        assert_eq!(a, 3 + 97);

        let full = m
            .encode(&SampleRecord::new("s", "ab", "c"), 64, LossScope::FullSequence)
            .unwrap();
        assert_eq!(full.n_targets(), 5);
    }

    #[test]
    fn truncation_drops_prompt_from_the_left() {
        let m = model(BYTE_VOCAB, 4, 0);
        let enc = m
            .encode(&SampleRecord::new("s", "abcdef", "xy"), 6, LossScope::ResponseOnly)
            .unwrap();
        let t = |b: u8| m.token_for_byte(b);
        assert_eq!(enc.tokens, vec![BOS, t(b'f'), SEP, t(b'x'), t(b'y'), EOS]);

        // Response longer than the budget keeps its head.
        let enc = m
            .encode(&SampleRecord::new("s", "abc", "wxyz"), 4, LossScope::ResponseOnly)
            .unwrap();
        assert_eq!(enc.tokens, vec![BOS, SEP, t(b'w'), t(b'x')]);
    }

    #[test]
    fn folded_vocabulary_stays_in_range() {
        let m = model(11, 4, 0);
        for b in 0..=255u8 {
            let t = m.token_for_byte(b) as usize;
            assert!((N_SPECIAL..11).contains(&t));
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = model(BYTE_VOCAB, 16, 9);
        let enc = m
            .encode(&SampleRecord::new("s", "hello", "world, again"), 64, LossScope::FullSequence)
            .unwrap();
        for pos in m.forward(&enc) {
            let s: f64 = pos.probs.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = model(11, 8, 7);
        let b = model(11, 8, 7);
        let c = model(11, 8, 8);
        assert_eq!(a.base_output_layer(), b.base_output_layer());
        assert_ne!(a.base_output_layer(), c.base_output_layer());
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert!(a
            .base_output_layer()
            .as_slice()
            .iter()
            .all(|v| v.abs() < 0.08));
    }

    #[test]
    fn output_gradient_agrees_with_full_backward() {
        let m = model(BYTE_VOCAB, 8, 2);
        let s = SampleRecord::new("s", "count", "1 2 3");
        let cfg = ProbeConfig::default();
        let g = m.output_layer_gradient(&s, &cfg).unwrap();
        let (_, full) = m.full_gradients(&s, cfg.max_seq_len, cfg.loss_scope).unwrap();
        for (a, b) in g.as_slice().iter().zip(&full.output_weight) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    // Central differences on a handful of entries of every non-output tensor;
    // the output layer is covered more thoroughly in the integration tests.
    #[test]
    fn full_backward_matches_finite_differences() {
        let m = model(20, 6, 4);
        let s = SampleRecord::new("s", "abcab", "cabca");
        let cfg = ProbeConfig::default();
        let (_, g) = m.full_gradients(&s, cfg.max_seq_len, cfg.loss_scope).unwrap();
        let eps = 1e-5;
        let loss_of = |m: &TinyLm| m.loss(&s, &cfg).unwrap();

        type Access = fn(&mut TinyLm) -> &mut [f64];
        let cases: [(Access, &[f64]); 4] = [
            (|m| m.embedding.as_mut_slice(), &g.embedding),
            (|m| m.mixer_weight.as_mut_slice(), &g.mixer_weight),
            (|m| &mut m.mixer_bias[..], &g.mixer_bias),
            (|m| &mut m.output_bias[..], &g.output_bias),
        ];
        for (access, grad) in cases {
            let n = grad.len();
            for idx in [0, n / 3, n / 2, n - 1]
                .into_iter()
                .chain(grad.iter().position(|v| v.abs() > 1e-6))
            {
                let mut plus = m.clone();
                access(&mut plus)[idx] += eps;
                let mut minus = m.clone();
                access(&mut minus)[idx] -= eps;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
                let err = (fd - grad[idx]).abs();
                assert!(
                    err <= 1e-4 * fd.abs().max(grad[idx].abs()) + 1e-9,
                    "idx {idx}: fd {fd} analytic {}",
                    grad[idx]
                );
            }
        }
    }

    #[test]
    fn training_reduces_loss_on_a_repetitive_corpus() {
        let mut m = model(BYTE_VOCAB, 16, 1);
        let samples: Vec<_> = (0..20)
            .map(|i| SampleRecord::new(format!("s{i}"), "repeat", "ab ab ab ab ab ab"))
            .collect();
        let cfg = ProbeConfig::default();
        let before = m.mean_loss(&samples, &cfg).unwrap();
        let history = m.train(
            &samples,
            &TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
        );
        let after = m.mean_loss(&samples, &cfg).unwrap();
        assert_eq!(history.len(), 3);
        assert!(after < 0.5 * before, "{before} -> {after}");
    }

    #[test]
    fn training_is_deterministic() {
        let samples: Vec<_> = (0..10)
            .map(|i| SampleRecord::new(format!("s{i}"), "q", format!("answer {i}")))
            .collect();
        let tc = TrainConfig {
            epochs: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let mut a = model(BYTE_VOCAB, 8, 3);
        let mut b = model(BYTE_VOCAB, 8, 3);
        a.train(&samples, &tc);
        b.train(&samples, &tc);
        assert_eq!(a.fingerprint(), b.fingerprint());
    }
}
