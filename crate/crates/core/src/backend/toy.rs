use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    log_softmax, BackendError, Capabilities, Embedding, Gradients, MaskCondition, ModelBackend, Result, TokenId,
    TrainableBackend, Vocabulary, BOS,
};

pub const DEFAULT_INIT_SCALE: f64 = 0.1;

/// Mean-pooled bag-of-tokens language model.
///
/// Parameters live in one flat vector laid out as `E` (|V| x d, row-major),
/// then `U` (|V| x d), then `b` (|V|).
///
/// * context `c(X)` = mean of `E` rows over input tokens (zero if empty)
/// * prefix `p(a_<j)` = mean of `E` rows over BOS and previous answer tokens
/// * logits = `U (c + p) / 2 + b`
/// * `embed_text(T)` = L2-normalized mean of `E` rows over `T`
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBackend {
    vocab: Vocabulary,
    dim: usize,
    seed: u64,
    params: Vec<f64>,
}

impl ToyBackend {
    /// Uniform initialization in [-scale, scale] from a seeded ChaCha8 stream.
    pub fn random(vocab: Vocabulary, dim: usize, seed: u64, scale: f64) -> Self {
        let n = 2 * vocab.len() * dim + vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        ToyBackend {
            vocab,
            dim,
            seed,
            params,
        }
    }

    pub fn zeros(vocab: Vocabulary, dim: usize) -> Self {
        let n = 2 * vocab.len() * dim + vocab.len();
        ToyBackend {
            vocab,
            dim,
            seed: 0,
            params: vec![0.0; n],
        }
    }

    pub fn from_parts(vocab: Vocabulary, dim: usize, seed: u64, params: Vec<f64>) -> Result<Self> {
        let expected = 2 * vocab.len() * dim + vocab.len();
        if params.len() != expected {
            return Err(BackendError::ShapeMismatch {
                expected,
                got: params.len(),
            });
        }
        Ok(ToyBackend {
            vocab,
            dim,
            seed,
            params,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn u_offset(&self) -> usize {
        self.vocab.len() * self.dim
    }

    fn b_offset(&self) -> usize {
        2 * self.vocab.len() * self.dim
    }

    pub fn e_row(&self, id: TokenId) -> &[f64] {
        let s = id as usize * self.dim;
        &self.params[s..s + self.dim]
    }

    pub fn u_row(&self, id: TokenId) -> &[f64] {
        let s = self.u_offset() + id as usize * self.dim;
        &self.params[s..s + self.dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.b_offset()..]
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        let off = self.b_offset();
        &mut self.params[off..]
    }

    pub fn e_row_mut(&mut self, id: TokenId) -> &mut [f64] {
        let s = id as usize * self.dim;
        &mut self.params[s..s + self.dim]
    }

    pub fn u_row_mut(&mut self, id: TokenId) -> &mut [f64] {
        let s = self.u_offset() + id as usize * self.dim;
        &mut self.params[s..s + self.dim]
    }

    /// Mean of `E` rows, summed in id order so the result is exactly
    /// independent of token order.
    fn mean_rows<'a, I: IntoIterator<Item = &'a TokenId>>(&self, ids: I) -> Vec<f64> {
        let mut ids: Vec<TokenId> = ids.into_iter().copied().collect();
        ids.sort_unstable();
        let mut m = vec![0.0; self.dim];
        for &id in &ids {
            for (a, e) in m.iter_mut().zip(self.e_row(id)) {
                *a += e;
            }
        }
        let n = ids.len();
        if n > 0 {
            for a in m.iter_mut() {
                *a /= n as f64;
            }
        }
        m
    }

    fn logits(&self, state: &[f64]) -> Vec<f64> {
        let b = self.bias();
        (0..self.vocab.len())
            .map(|r| {
                let u = self.u_row(r as TokenId);
                b[r] + u.iter().zip(state).map(|(x, y)| x * y).sum::<f64>()
            })
            .collect()
    }

    fn add_to_e_row(grads: &mut Gradients, dim: usize, id: TokenId, v: &[f64], scale: f64) {
        let s = id as usize * dim;
        for (g, x) in grads.as_mut_slice()[s..s + dim].iter_mut().zip(v) {
            *g += scale * x;
        }
    }
}

impl ModelBackend for ToyBackend {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            next_token_log_probs: true,
            embed_text: true,
            masked_logits: true,
            trainable: true,
        }
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn next_token_log_probs(&self, input: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let c = self.mean_rows(input);
        let p = self.mean_rows(std::iter::once(&BOS).chain(prefix));
        let s: Vec<f64> = c.iter().zip(&p).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut z = self.logits(&s);
        log_softmax(&mut z);
        z
    }

    fn embed_text(&self, tokens: &[TokenId]) -> Embedding {
        let m = self.mean_rows(tokens);
        let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Embedding {
                vector: m,
                degenerate: true,
            };
        }
        Embedding {
            vector: m.into_iter().map(|x| x / norm).collect(),
            degenerate: false,
        }
    }

    fn masked_log_probs(&self, tokens: &[TokenId], position: usize, condition: MaskCondition<'_>) -> Result<Vec<f64>> {
        if position >= tokens.len() {
            return Err(BackendError::PositionOutOfRange {
                position,
                len: tokens.len(),
            });
        }
        let context: &[TokenId] = match condition {
            MaskCondition::WithContext(x) => x,
            MaskCondition::AnswerOnly => &[],
        };
        let window = context.iter().chain(
            tokens
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != position)
                .map(|(_, t)| t),
        );
        let m = self.mean_rows(window);
        let mut z = self.logits(&m);
        log_softmax(&mut z);
        Ok(z)
    }
}

impl TrainableBackend for ToyBackend {
    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn param(&self, index: usize) -> f64 {
        self.params[index]
    }

    fn set_param(&mut self, index: usize, value: f64) {
        self.params[index] = value;
    }

    fn param_label(&self, index: usize) -> String {
        let (u, b) = (self.u_offset(), self.b_offset());
        if index < u {
            format!("E[{},{}]", index / self.dim, index % self.dim)
        } else if index < b {
            let i = index - u;
            format!("U[{},{}]", i / self.dim, i % self.dim)
        } else {
            format!("b[{}]", index - b)
        }
    }

    fn sequence_nll_with_grad(&self, input: &[TokenId], answer: &[TokenId], scale: f64, grads: &mut Gradients) -> f64 {
        let d = self.dim;
        let v = self.vocab.len();
        let (u_off, b_off) = (self.u_offset(), self.b_offset());
        let c = self.mean_rows(input);
        let prefix_ids: Vec<TokenId> = std::iter::once(BOS).chain(answer.iter().copied()).collect();
        let mut dc = vec![0.0; d];
        // Gradient w.r.t. p_j for every step, consumed after the loop.
        let mut dps: Vec<Vec<f64>> = Vec::with_capacity(answer.len());
        let mut loss = 0.0;
        for (j, &target) in answer.iter().enumerate() {
            let len = (j + 1) as f64;
            let p = self.mean_rows(&prefix_ids[..=j]);
            let s: Vec<f64> = c.iter().zip(&p).map(|(a, b)| 0.5 * (a + b)).collect();
            let mut z = self.logits(&s);
            log_softmax(&mut z);
            loss -= z[target as usize];
            let mut ds = vec![0.0; d];
            let g = grads.as_mut_slice();
            for r in 0..v {
                let dz = scale * (z[r].exp() - if r == target as usize { 1.0 } else { 0.0 });
                if dz == 0.0 {
                    continue;
                }
                g[b_off + r] += dz;
                let urow = u_off + r * d;
                for k in 0..d {
                    g[urow + k] += dz * s[k];
                    ds[k] += dz * self.params[urow + k];
                }
            }
            for k in 0..d {
                dc[k] += 0.5 * ds[k];
            }
            dps.push(ds.iter().map(|x| 0.5 * x / len).collect());
        }
        // Prefix slot q (0 = BOS, q >= 1 = answer[q-1]) feeds every p_j with j >= q.
        let mut suffix = vec![0.0; d];
        for q in (0..answer.len()).rev() {
            for k in 0..d {
                suffix[k] += dps[q][k];
            }
            Self::add_to_e_row(grads, d, prefix_ids[q], &suffix, 1.0);
        }
        if !input.is_empty() {
            let w = 1.0 / input.len() as f64;
            for &id in input {
                Self::add_to_e_row(grads, d, id, &dc, w);
            }
        }
        loss
    }

    fn embed_backward(&self, tokens: &[TokenId], upstream: &[f64], grads: &mut Gradients) {
        let m = self.mean_rows(tokens);
        let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return;
        }
        let e: Vec<f64> = m.iter().map(|x| x / norm).collect();
        let eg: f64 = e.iter().zip(upstream).map(|(a, b)| a * b).sum();
        let dm: Vec<f64> = upstream.iter().zip(&e).map(|(g, x)| (g - x * eg) / norm).collect();
        let w = 1.0 / tokens.len() as f64;
        for &id in tokens {
            Self::add_to_e_row(grads, self.dim, id, &dm, w);
        }
    }

    fn apply_gradients(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(BackendError::ShapeMismatch {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        for (p, g) in self.params.iter_mut().zip(grads.as_slice()) {
            *p -= lr * g;
        }
        Ok(())
    }
}
