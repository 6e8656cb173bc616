use super::{CrfModel, Encoded, TaggerError};

pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Emission and transition scores of one sentence under fixed weights.
#[derive(Debug, Clone)]
pub struct Lattice {
    k: usize,
    len: usize,
    /// `T × K`
    emit: Vec<f64>,
    /// `K × K`, from-label major.
    trans: Vec<f64>,
}

impl Lattice {
    /// Scores with weights `scale * params` (the scale lets the trainer keep
    /// L2 shrinkage lazy).
    pub(crate) fn build(model: &CrfModel, params: &[f64], scale: f64, enc: &Encoded) -> Lattice {
        let k = model.num_labels();
        let len = enc.len();
        let d = model.dense_dim();
        let dense_off = model.dense_offset();
        let mut emit = vec![0.0; len * k];
        for (t, feats) in enc.features.iter().enumerate() {
            let row = &mut emit[t * k..(t + 1) * k];
            for &f in feats {
                let w = &params[f as usize * k..(f as usize + 1) * k];
                for (r, w) in row.iter_mut().zip(w) {
                    *r += w;
                }
            }
            if d > 0 {
                let x = &enc.dense[t * d..(t + 1) * d];
                for (j, &xj) in x.iter().enumerate() {
                    if xj == 0.0 {
                        continue;
                    }
                    let w = &params[dense_off + j * k..dense_off + (j + 1) * k];
                    for (r, w) in row.iter_mut().zip(w) {
                        *r += xj * w;
                    }
                }
            }
            for r in row {
                *r *= scale;
            }
        }
        let off = model.transition_offset();
        let trans = params[off..off + k * k].iter().map(|w| w * scale).collect();
        Lattice {
            k,
            len,
            emit,
            trans,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn emission(&self, t: usize, label: usize) -> f64 {
        self.emit[t * self.k + label]
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.trans[from * self.k + to]
    }

    /// Unnormalized log-score of a label path.
    pub fn path_score(&self, labels: &[usize]) -> f64 {
        let mut s = 0.0;
        for (t, &y) in labels.iter().enumerate() {
            s += self.emission(t, y);
            if t > 0 {
                s += self.transition(labels[t - 1], y);
            }
        }
        s
    }

    fn forward(&self) -> Vec<f64> {
        let k = self.k;
        let mut alpha = vec![0.0; self.len * k];
        if self.len == 0 {
            return alpha;
        }
        alpha[..k].copy_from_slice(&self.emit[..k]);
        let mut buf = vec![0.0; k];
        for t in 1..self.len {
            for y in 0..k {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = alpha[(t - 1) * k + j] + self.trans[j * k + y];
                }
                alpha[t * k + y] = self.emit[t * k + y] + log_sum_exp(buf.iter().copied());
            }
        }
        alpha
    }

    fn backward(&self) -> Vec<f64> {
        let k = self.k;
        let mut beta = vec![0.0; self.len * k];
        let mut buf = vec![0.0; k];
        for t in (0..self.len.saturating_sub(1)).rev() {
            for y in 0..k {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = self.trans[y * k + j] + self.emit[(t + 1) * k + j] + beta[(t + 1) * k + j];
                }
                beta[t * k + y] = log_sum_exp(buf.iter().copied());
            }
        }
        beta
    }

    /// log Z by the forward algorithm.
    pub fn log_partition(&self) -> f64 {
        if self.len == 0 {
            return 0.0;
        }
        let alpha = self.forward();
        let last = (self.len - 1) * self.k;
        log_sum_exp(alpha[last..last + self.k].iter().copied())
    }

    pub fn log_prob(&self, labels: &[usize]) -> f64 {
        self.path_score(labels) - self.log_partition()
    }

    /// Per-token label marginals, `T × K`.
    pub fn marginals(&self) -> Vec<f64> {
        let alpha = self.forward();
        let beta = self.backward();
        let log_z = self.log_partition();
        alpha
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a + b - log_z).exp())
            .collect()
    }

    /// Highest-scoring path. Ties go to the lowest label index, both when
    /// choosing the final label and at every backtrack step.
    pub fn viterbi(&self) -> (Vec<usize>, f64) {
        let k = self.k;
        if self.len == 0 {
            return (Vec::new(), 0.0);
        }
        let mut delta = self.emit[..k].to_vec();
        let mut back = vec![0usize; self.len * k];
        let mut next = vec![0.0; k];
        for t in 1..self.len {
            for (y, n) in next.iter_mut().enumerate() {
                let mut best = 0;
                let mut best_score = delta[0] + self.trans[y];
                for (j, d) in delta.iter().enumerate().skip(1) {
                    let s = d + self.trans[j * k + y];
                    if s > best_score {
                        best = j;
                        best_score = s;
                    }
                }
                back[t * k + y] = best;
                *n = best_score + self.emit[t * k + y];
            }
            std::mem::swap(&mut delta, &mut next);
        }
        let mut last = 0;
        for y in 1..k {
            if delta[y] > delta[last] {
                last = y;
            }
        }
        let score = delta[last];
        let mut path = vec![0; self.len];
        path[self.len - 1] = last;
        for t in (1..self.len).rev() {
            path[t - 1] = back[t * k + path[t]];
        }
        (path, score)
    }

    /// Gradient of `log p(gold | x)` with respect to the model parameters:
    /// observed minus expected feature counts, reported to `sink` as
    /// `(param index, value)` pairs. Returns the log-likelihood.
    pub(crate) fn gradient(
        &self,
        model: &CrfModel,
        enc: &Encoded,
        gold: &[usize],
        mut sink: impl FnMut(usize, f64),
    ) -> Result<f64, TaggerError> {
        let k = self.k;
        if gold.len() != self.len {
            return Err(TaggerError::Misaligned {
                features: self.len,
                labels: gold.len(),
            });
        }
        let alpha = self.forward();
        let beta = self.backward();
        let last = (self.len - 1) * k;
        let log_z = log_sum_exp(alpha[last..last + k].iter().copied());
        let ll = self.path_score(gold) - log_z;
        if !ll.is_finite() {
            return Err(TaggerError::NonFinite { sentence: 0 });
        }

        let d = model.dense_dim();
        let dense_off = model.dense_offset();
        let mut coef = vec![0.0; k];
        for t in 0..self.len {
            for (y, c) in coef.iter_mut().enumerate() {
                let p = (alpha[t * k + y] + beta[t * k + y] - log_z).exp();
                *c = f64::from(u8::from(gold[t] == y)) - p;
            }
            for &f in &enc.features[t] {
                let base = f as usize * k;
                for (y, &c) in coef.iter().enumerate() {
                    sink(base + y, c);
                }
            }
            if d > 0 {
                let x = &enc.dense[t * d..(t + 1) * d];
                for (j, &xj) in x.iter().enumerate() {
                    if xj == 0.0 {
                        continue;
                    }
                    let base = dense_off + j * k;
                    for (y, &c) in coef.iter().enumerate() {
                        sink(base + y, c * xj);
                    }
                }
            }
        }

        let off = model.transition_offset();
        let mut trans_grad = vec![0.0; k * k];
        for t in 1..self.len {
            trans_grad[gold[t - 1] * k + gold[t]] += 1.0;
            for from in 0..k {
                let a = alpha[(t - 1) * k + from] - log_z;
                for to in 0..k {
                    let lp =
                        a + self.trans[from * k + to] + self.emit[t * k + to] + beta[t * k + to];
                    trans_grad[from * k + to] -= lp.exp();
                }
            }
        }
        for (i, g) in trans_grad.into_iter().enumerate() {
            sink(off + i, g);
        }
        Ok(ll)
    }
}
