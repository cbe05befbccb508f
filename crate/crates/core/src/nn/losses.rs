use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor2D};
use crate::{Error, Result};

const LN_2: f64 = std::f64::consts::LN_2;

/// Sinusoid frequencies 2^k for k in 1..=10.
pub const POSENC_FREQS: [f64; 10] =
    [2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0];

/// Features per input coordinate after positional encoding: the raw value
/// plus one sinusoid per frequency.
pub fn posenc_dim(state_dim: usize) -> usize {
    state_dim * (1 + POSENC_FREQS.len())
}

/// Positional encoding of one state: per coordinate, the block
/// `(x, sin 2x, sin 4x, ..., sin 1024x)` is appended to `out`.
pub fn positional_encode<T: Scalar>(coords: &[f64], out: &mut Vec<T>) {
    for &x in coords {
        out.push(T::from_f64(x));
        for w in POSENC_FREQS {
            out.push(T::from_f64((w * x).sin()));
        }
    }
}

/// Encode a batch of states (given as flat row-major coords) into a tensor.
pub fn posenc_batch<T: Scalar>(coords: &[f64], state_dim: usize) -> Tensor2D<T> {
    let rows = coords.len() / state_dim;
    let mut data = Vec::with_capacity(rows * posenc_dim(state_dim));
    for r in 0..rows {
        positional_encode(&coords[r * state_dim..(r + 1) * state_dim], &mut data);
    }
    Tensor2D::from_vec(rows, posenc_dim(state_dim), data)
}

/// Diagonal-Gaussian posteriors for a batch: per row an 8-dim (in general
/// `dims`) mean and log-variance. Log-variances are clamped to [-10, 10] at
/// construction so the KL penalty cannot overflow early in annealing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct GaussianPosterior<T: Scalar> {
    pub mean: Tensor2D<T>,
    pub log_var: Tensor2D<T>,
}

pub const LOG_VAR_CLAMP: f64 = 10.0;

impl<T: Scalar> GaussianPosterior<T> {
    pub fn new(mean: Tensor2D<T>, mut log_var: Tensor2D<T>) -> Result<Self> {
        if mean.rows() != log_var.rows() || mean.cols() != log_var.cols() {
            return Err(Error::contract("posterior mean/log_var shape mismatch"));
        }
        for v in log_var.data_mut() {
            let f = v.to_f64();
            if f > LOG_VAR_CLAMP {
                *v = T::from_f64(LOG_VAR_CLAMP);
            } else if f < -LOG_VAR_CLAMP {
                *v = T::from_f64(-LOG_VAR_CLAMP);
            }
        }
        Ok(GaussianPosterior { mean, log_var })
    }

    pub fn rows(&self) -> usize {
        self.mean.rows()
    }

    pub fn dims(&self) -> usize {
        self.mean.cols()
    }

    pub fn std_row(&self, r: usize) -> Vec<f64> {
        self.log_var.row(r).iter().map(|lv| (0.5 * lv.to_f64()).exp()).collect()
    }
}

/// KL(N(mu, sigma²) || N(0, 1)) per batch row, in nats:
/// `0.5 * Σ_d (mu² + sigma² - 1 - log sigma²)`.
pub fn gaussian_kl<T: Scalar>(post: &GaussianPosterior<T>) -> Vec<f64> {
    (0..post.rows())
        .map(|r| {
            post.mean
                .row(r)
                .iter()
                .zip(post.log_var.row(r))
                .map(|(m, lv)| {
                    let (m, lv) = (m.to_f64(), lv.to_f64());
                    0.5 * (m * m + lv.exp() - 1.0 - lv)
                })
                .sum()
        })
        .collect()
}

/// Per-element gradients of the plain KL: dKL/dmu = mu,
/// dKL/dlog_var = 0.5 (sigma² - 1).
pub fn gaussian_kl_grads<T: Scalar>(post: &GaussianPosterior<T>) -> (Tensor2D<T>, Tensor2D<T>) {
    let mut dmu = post.mean.clone();
    let mut dlv = post.log_var.clone();
    for v in dlv.data_mut() {
        *v = T::from_f64(0.5 * (v.to_f64().exp() - 1.0));
    }
    let _ = &mut dmu; // dKL/dmu is the mean itself
    (dmu, dlv)
}

/// Reparameterized sample `u = mu + sigma ⊙ noise`; gradients flow to the
/// mean and log-variance through the returned sample.
pub fn reparameterize<T: Scalar>(post: &GaussianPosterior<T>, noise: &Tensor2D<T>) -> Tensor2D<T> {
    assert_eq!(noise.rows(), post.rows(), "noise batch mismatch");
    assert_eq!(noise.cols(), post.dims(), "noise dim mismatch");
    let mut out = post.mean.clone();
    for i in 0..out.data().len() {
        let sigma = (0.5 * post.log_var.data()[i].to_f64()).exp();
        let v = out.data()[i].to_f64() + sigma * noise.data()[i].to_f64();
        out.data_mut()[i] = T::from_f64(v);
    }
    out
}

/// Softmax with temperature; `tau = 0` collapses to a one-hot at the argmax
/// (ties broken toward the lowest index).
pub fn tempered_softmax<T: Scalar>(logits: &[T], tau: f64) -> Vec<T> {
    assert!(tau >= 0.0, "temperature must be non-negative");
    if tau == 0.0 {
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if v.to_f64() > logits[best].to_f64() {
                best = i;
            }
        }
        let mut out = vec![T::ZERO; logits.len()];
        out[best] = T::ONE;
        return out;
    }
    let scaled: Vec<f64> = logits.iter().map(|v| v.to_f64() / tau).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| T::from_f64(e / sum)).collect()
}

/// InfoNCE loss over a batch of query/key embedding pairs with squared
/// Euclidean distance as the (negated) similarity score.
#[derive(Debug, Clone)]
pub struct InfoNce<T: Scalar> {
    /// Contrastive loss in nats.
    pub loss_nats: f64,
    /// The implied mutual-information lower bound, `log2 B - loss / ln 2`.
    pub mi_lower_bits: f64,
    pub grad_queries: Tensor2D<T>,
    pub grad_keys: Tensor2D<T>,
}

/// `loss = -(1/B) Σ_i log [ exp(-|q_i - k_i|²) / Σ_j exp(-|q_i - k_j|²) ]`.
///
/// Row i of `keys` is the positive for row i of `queries`; the remaining
/// rows act as in-batch negatives.
pub fn infonce_loss<T: Scalar>(queries: &Tensor2D<T>, keys: &Tensor2D<T>) -> Result<InfoNce<T>> {
    let b = queries.rows();
    if b < 2 {
        return Err(Error::contract("infonce needs a batch of at least 2"));
    }
    if keys.rows() != b || keys.cols() != queries.cols() {
        return Err(Error::contract(format!(
            "infonce shape mismatch: queries {}x{}, keys {}x{}",
            queries.rows(),
            queries.cols(),
            keys.rows(),
            keys.cols()
        )));
    }

    // scores s_ij = -(|q_i|² + |k_j|² - 2 q_i·k_j)
    let qk = queries.matmul_nt(keys);
    let qsq: Vec<f64> = (0..b)
        .map(|i| queries.row(i).iter().map(|v| v.to_f64() * v.to_f64()).sum())
        .collect();
    let ksq: Vec<f64> = (0..b)
        .map(|j| keys.row(j).iter().map(|v| v.to_f64() * v.to_f64()).sum())
        .collect();

    let mut loss = 0.0;
    // dL/ds as a B×B matrix, then grads via two gemms.
    let mut w = Tensor2D::<T>::zeros(b, b);
    for i in 0..b {
        let mut scores = vec![0.0f64; b];
        for j in 0..b {
            scores[j] = -(qsq[i] + ksq[j] - 2.0 * qk.get(i, j).to_f64());
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for s in &scores {
            denom += (s - max).exp();
        }
        let lse = max + denom.ln();
        loss += lse - scores[i];
        for j in 0..b {
            let p = (scores[j] - lse).exp();
            let delta = if i == j { 1.0 } else { 0.0 };
            w.set(i, j, T::from_f64((p - delta) / b as f64));
        }
    }
    loss /= b as f64;

    // ds_ij/dq_i = -2 (q_i - k_j); ds_ij/dk_j = +2 (q_i - k_j)
    let row_sums: Vec<f64> = (0..b).map(|i| w.row(i).iter().map(|v| v.to_f64()).sum()).collect();
    let col_sums: Vec<f64> = {
        let mut cs = vec![0.0f64; b];
        for i in 0..b {
            for (j, v) in w.row(i).iter().enumerate() {
                cs[j] += v.to_f64();
            }
        }
        cs
    };
    let wk = w.matmul(keys); // Σ_j w_ij k_j
    let wq = w.matmul_tn(queries); // Σ_i w_ij q_i

    let mut grad_q = Tensor2D::zeros(b, queries.cols());
    let mut grad_k = Tensor2D::zeros(b, queries.cols());
    for i in 0..b {
        for c in 0..queries.cols() {
            let gq = -2.0 * (queries.get(i, c).to_f64() * row_sums[i] - wk.get(i, c).to_f64());
            grad_q.set(i, c, T::from_f64(gq));
            let gk = 2.0 * (wq.get(i, c).to_f64() - keys.get(i, c).to_f64() * col_sums[i]);
            grad_k.set(i, c, T::from_f64(gk));
        }
    }

    Ok(InfoNce {
        loss_nats: loss,
        mi_lower_bits: (b as f64).log2() - loss / LN_2,
        grad_queries: grad_q,
        grad_keys: grad_k,
    })
}

/// Lower and upper bounds on the transmitted information per measurement,
/// in bits, from in-batch likelihood ratios of the encoder posteriors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub lower_bits: f64,
    pub upper_bits: f64,
}

/// Poole-style bounds: for each sampled `u_i`,
/// `lower` averages `log p(u_i|x_i) - log (1/B) Σ_j p(u_i|x_j)` and
/// `upper` uses the leave-one-out denominator `1/(B-1) Σ_{j≠i}`.
pub fn mi_bounds<T: Scalar>(post: &GaussianPosterior<T>, samples: &Tensor2D<T>) -> Result<MiEstimate> {
    let b = post.rows();
    if b < 2 {
        return Err(Error::contract("mi bounds need a batch of at least 2"));
    }
    if samples.rows() != b || samples.cols() != post.dims() {
        return Err(Error::contract("mi bounds sample shape mismatch"));
    }
    let d = post.dims();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();

    // Precompute per-row inverse variances and log-variance sums in f64.
    let mut inv_var = vec![0.0f64; b * d];
    let mut logvar_sum = vec![0.0f64; b];
    for j in 0..b {
        for (c, lv) in post.log_var.row(j).iter().enumerate() {
            let lv = lv.to_f64();
            inv_var[j * d + c] = (-lv).exp();
            logvar_sum[j] += lv;
        }
    }

    let mut lower = 0.0;
    let mut upper = 0.0;
    let mut ll = vec![0.0f64; b];
    for i in 0..b {
        let u: Vec<f64> = samples.row(i).iter().map(|v| v.to_f64()).collect();
        for j in 0..b {
            let mut quad = 0.0;
            let mu = post.mean.row(j);
            for c in 0..d {
                let diff = u[c] - mu[c].to_f64();
                quad += diff * diff * inv_var[j * d + c];
            }
            ll[j] = -0.5 * (quad + logvar_sum[j] + d as f64 * ln2pi);
        }
        let max = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_all: f64 = ll.iter().map(|v| (v - max).exp()).sum();
        let lme_all = max + (sum_all / b as f64).ln();
        let sum_loo = sum_all - (ll[i] - max).exp();
        // guard: all mass on the diagonal makes the LOO denominator tiny
        let lme_loo = max + (sum_loo.max(f64::MIN_POSITIVE) / (b - 1) as f64).ln();
        lower += ll[i] - lme_all;
        upper += ll[i] - lme_loo;
    }
    Ok(MiEstimate {
        lower_bits: lower / b as f64 / LN_2,
        upper_bits: upper / b as f64 / LN_2,
    })
}
