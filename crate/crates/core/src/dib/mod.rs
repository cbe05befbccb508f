//! The distributed information-bottleneck trainer.
//!
//! Four networks are trained jointly: a shared two-stage encoder (an IB head
//! producing a diagonal-Gaussian posterior over an 8-dim bottleneck, then a
//! vector quantizer mapping bottleneck samples to symbol probabilities), a
//! sequence predictor that maps the L concatenated soft measurements into a
//! shared 32-dim space, and a reference-state encoder mapping the reference
//! state into the same space. InfoNCE in that space rewards information
//! about the reference state; a squared KL penalty with annealed weight
//! `beta` prices the information each single measurement transmits.
//!
//! Training stops once the per-measurement transmitted information exceeds
//! a threshold (one bit for binary partitions), after which the soft
//! measurement is hardened into a deterministic [`Partition`] by majority
//! vote over a fixed set of bottleneck noise vectors.

mod experiments;

use std::collections::VecDeque;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::exec;
use crate::maps::{sample_trajectory, MapSpec, Trajectory, DEFAULT_BURN_IN};
use crate::nn::{
    gaussian_kl, infonce_loss, mi_bounds, posenc_batch, posenc_dim, tempered_softmax, Activation,
    AdamState, DenseNet, GaussianPosterior, MiEstimate, NetGrads, Scalar, Tensor2D,
};
use crate::partitions::{NeuralPartition, Partition};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

pub use experiments::{
    reproduce_experiment, ExperimentKind, ExperimentResult, ExperimentScale, Fig3Panel,
    TrialSummary, WinnerCertification,
};

/// Width of the information-bottleneck space.
pub const BOTTLENECK_DIM: usize = 8;
/// Width of the shared contrastive space.
pub const SHARED_DIM: usize = 32;
/// Default number of noise vectors whose majority vote hardens a partition.
pub const DEFAULT_HARDEN_VOTES: usize = 32;

/// Rows per batch chunk; fixed so the chunked gradient reduction is
/// bit-identical for any worker count.
const CHUNK_ROWS: usize = 256;

/// Everything a training run needs to be reproduced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub map: MapSpec,
    /// Window length L.
    pub sequence_len: usize,
    /// Index of the reference state inside the window.
    pub ref_index: usize,
    pub batch_size: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Schedule length at the base annealing rate.
    pub base_steps: usize,
    /// Annealing-rate multiplier: 0.5 doubles the schedule length at the
    /// same endpoints (half the rate of information annealing).
    pub anneal_multiplier: f64,
    pub learning_rate: f64,
    /// Stop once the 100-step running mean of the lower MI bound crosses
    /// this many bits.
    pub stop_threshold_bits: f64,
    pub seed: u64,
    pub training_pool_len: usize,
}

impl TrainerConfig {
    pub fn new(map: MapSpec, sequence_len: usize, seed: u64) -> Self {
        TrainerConfig {
            map,
            sequence_len,
            ref_index: sequence_len / 2,
            batch_size: 2048,
            beta_start: 10.0,
            beta_end: 1e-4,
            base_steps: 20_000,
            anneal_multiplier: 1.0,
            learning_rate: 3e-4,
            stop_threshold_bits: 1.0,
            seed,
            training_pool_len: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.map.validate()?;
        if self.sequence_len == 0 {
            return Err(Error::contract("sequence length must be >= 1"));
        }
        if self.ref_index >= self.sequence_len {
            return Err(Error::contract(format!(
                "ref_index {} out of range for L = {}",
                self.ref_index, self.sequence_len
            )));
        }
        if !(self.beta_start > self.beta_end && self.beta_end > 0.0) {
            return Err(Error::contract("annealing requires beta_start > beta_end > 0"));
        }
        if self.batch_size < 2 {
            return Err(Error::contract("batch size must be >= 2"));
        }
        if self.anneal_multiplier <= 0.0 {
            return Err(Error::contract("anneal multiplier must be positive"));
        }
        if self.training_pool_len < self.sequence_len {
            return Err(Error::contract("training pool shorter than one window"));
        }
        Ok(())
    }

    /// Total scheduled steps: `base_steps / anneal_multiplier`.
    pub fn total_steps(&self) -> usize {
        (self.base_steps as f64 / self.anneal_multiplier).round() as usize
    }

    /// Geometric interpolation from `beta_start` to `beta_end`.
    pub fn beta_at(&self, step: usize) -> f64 {
        let total = self.total_steps();
        debug_assert!(step <= total, "step beyond schedule");
        let f = (step.min(total)) as f64 / total as f64;
        self.beta_start * (self.beta_end / self.beta_start).powf(f)
    }
}

/// The four networks of the measurement stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct DibNets<T: Scalar> {
    pub encoder: DenseNet<T>,
    pub quantizer: DenseNet<T>,
    pub predictor: DenseNet<T>,
    pub ref_encoder: DenseNet<T>,
}

impl<T: Scalar> DibNets<T> {
    /// The published architecture: encoder posenc→128→128→16 (8 means + 8
    /// log-variances), quantizer 8→128→128→2, predictor 2L→256→256→32,
    /// reference encoder posenc→256→256→32.
    pub fn standard(state_dim: usize, sequence_len: usize, rng: &mut ChaCha8Rng) -> Self {
        let input = posenc_dim(state_dim);
        DibNets {
            encoder: DenseNet::new(
                &[input, 128, 128, 2 * BOTTLENECK_DIM],
                Activation::LeakyRectifier,
                Activation::Linear,
                rng,
            ),
            quantizer: DenseNet::new(
                &[BOTTLENECK_DIM, 128, 128, 2],
                Activation::LeakyRectifier,
                Activation::Linear,
                rng,
            ),
            predictor: DenseNet::new(
                &[2 * sequence_len, 256, 256, SHARED_DIM],
                Activation::LeakyRectifier,
                Activation::Linear,
                rng,
            ),
            ref_encoder: DenseNet::new(
                &[input, 256, 256, SHARED_DIM],
                Activation::LeakyRectifier,
                Activation::Linear,
                rng,
            ),
        }
    }

    pub fn bottleneck_dim(&self) -> usize {
        self.encoder.output_dim() / 2
    }

    pub fn alphabet_size(&self) -> usize {
        self.quantizer.output_dim()
    }
}

/// Parameter gradients for all four networks.
#[derive(Debug, Clone)]
pub struct DibGrads<T: Scalar> {
    pub encoder: NetGrads<T>,
    pub quantizer: NetGrads<T>,
    pub predictor: NetGrads<T>,
    pub ref_encoder: NetGrads<T>,
}

impl<T: Scalar> DibGrads<T> {
    fn zeros_like(nets: &DibNets<T>) -> Self {
        DibGrads {
            encoder: NetGrads::zeros_like(&nets.encoder),
            quantizer: NetGrads::zeros_like(&nets.quantizer),
            predictor: NetGrads::zeros_like(&nets.predictor),
            ref_encoder: NetGrads::zeros_like(&nets.ref_encoder),
        }
    }

    fn accumulate(&mut self, other: &DibGrads<T>) {
        self.encoder.accumulate(&other.encoder);
        self.quantizer.accumulate(&other.quantizer);
        self.predictor.accumulate(&other.predictor);
        self.ref_encoder.accumulate(&other.ref_encoder);
    }
}

/// One training batch: window states, reference states and bottleneck noise,
/// all laid out row-major so chunked processing is purely positional.
#[derive(Debug, Clone)]
pub struct StepBatch {
    /// B·L states, row-major coords.
    pub window_coords: Vec<f64>,
    /// B reference states.
    pub ref_coords: Vec<f64>,
    /// B·L noise vectors of the bottleneck width.
    pub noise: Vec<f64>,
    pub batch_size: usize,
    pub sequence_len: usize,
    pub state_dim: usize,
    /// Position of the reference state inside each window.
    pub ref_index: usize,
}

/// Losses and gradients of one step.
#[derive(Debug, Clone)]
pub struct StepOutput<T: Scalar> {
    pub loss_nats: f64,
    pub infonce_nats: f64,
    /// Mean per-state KL in nats.
    pub kl_mean_nats: f64,
    pub mi: MiEstimate,
    pub grads: DibGrads<T>,
}

struct ChunkForward<T: Scalar> {
    enc_cache: crate::nn::ForwardCache<T>,
    quant_cache: crate::nn::ForwardCache<T>,
    pred_cache: crate::nn::ForwardCache<T>,
    ref_cache: crate::nn::ForwardCache<T>,
    posterior: GaussianPosterior<T>,
    /// Raw (pre-clamp) log-variance outputs; the clamp gate zeroes
    /// gradients outside the window.
    raw_log_var: Tensor2D<T>,
    noise: Tensor2D<T>,
    soft_u: Tensor2D<T>,
    kl_nats: Vec<f64>,
}

/// Forward and backward over one batch: the full loss
/// `InfoNCE + beta · mean_batch Σ_pos KL²` with exact gradients.
///
/// The batch is processed in fixed-size chunks that may run in parallel;
/// chunk results are reduced in index order, so the output is bit-identical
/// for any worker count.
pub fn step_loss_and_grads<T: Scalar>(
    nets: &DibNets<T>,
    batch: &StepBatch,
    beta: f64,
) -> Result<StepOutput<T>> {
    let b = batch.batch_size;
    let l = batch.sequence_len;
    let d = batch.state_dim;
    let bd = nets.bottleneck_dim();
    if batch.window_coords.len() != b * l * d
        || batch.ref_coords.len() != b * d
        || batch.noise.len() != b * l * bd
    {
        return Err(Error::contract("batch buffers do not match declared shape"));
    }

    let n_chunks = b.div_ceil(CHUNK_ROWS);
    let forwards: Vec<Result<ChunkForward<T>>> = exec::map_indexed(n_chunks, |ci| {
        let r0 = ci * CHUNK_ROWS;
        let r1 = ((ci + 1) * CHUNK_ROWS).min(b);
        let rows = r1 - r0;

        let x = posenc_batch::<T>(&batch.window_coords[r0 * l * d..r1 * l * d], d);
        let enc_cache = nets.encoder.forward(&x)?;
        let enc_out = enc_cache.output();
        let mut mean = Tensor2D::<T>::zeros(rows * l, bd);
        let mut raw_log_var = Tensor2D::<T>::zeros(rows * l, bd);
        for r in 0..rows * l {
            let row = enc_out.row(r);
            mean.row_mut(r).copy_from_slice(&row[..bd]);
            raw_log_var.row_mut(r).copy_from_slice(&row[bd..]);
        }
        let posterior = GaussianPosterior::new(mean, raw_log_var.clone())?;

        let noise_chunk = Tensor2D::from_vec(
            rows * l,
            bd,
            batch.noise[r0 * l * bd..r1 * l * bd].iter().map(|v| T::from_f64(*v)).collect(),
        );
        let samples = crate::nn::reparameterize(&posterior, &noise_chunk);
        let quant_cache = nets.quantizer.forward(&samples)?;
        let logits = quant_cache.output();
        let mut soft_u = Tensor2D::<T>::zeros(rows * l, nets.alphabet_size());
        for r in 0..rows * l {
            let p = tempered_softmax(logits.row(r), 1.0);
            soft_u.row_mut(r).copy_from_slice(&p);
        }

        // concatenate the L soft measurements of each window
        let m = nets.alphabet_size();
        let mut useq = Tensor2D::<T>::zeros(rows, l * m);
        for w in 0..rows {
            for pos in 0..l {
                let src = soft_u.row(w * l + pos).to_vec();
                useq.row_mut(w)[pos * m..(pos + 1) * m].copy_from_slice(&src);
            }
        }
        let pred_cache = nets.predictor.forward(&useq)?;

        let xref = posenc_batch::<T>(&batch.ref_coords[r0 * d..r1 * d], d);
        let ref_cache = nets.ref_encoder.forward(&xref)?;

        let kl_nats = gaussian_kl(&posterior);
        Ok(ChunkForward {
            enc_cache,
            quant_cache,
            pred_cache,
            ref_cache,
            posterior,
            raw_log_var,
            noise: noise_chunk,
            soft_u,
            kl_nats,
        })
    });
    let forwards: Vec<ChunkForward<T>> = forwards.into_iter().collect::<Result<_>>()?;

    // Global contrastive phase over the assembled embeddings.
    let mut queries = Tensor2D::<T>::zeros(b, SHARED_DIM);
    let mut keys = Tensor2D::<T>::zeros(b, SHARED_DIM);
    {
        let mut row = 0;
        for fwd in &forwards {
            for r in 0..fwd.pred_cache.output().rows() {
                queries.row_mut(row).copy_from_slice(fwd.pred_cache.output().row(r));
                keys.row_mut(row).copy_from_slice(fwd.ref_cache.output().row(r));
                row += 1;
            }
        }
    }
    let nce = infonce_loss(&queries, &keys)?;

    // Per-measurement MI bounds on the reference-position posteriors,
    // reusing the training samples drawn at those positions.
    let mi = {
        let mut mean = Tensor2D::<T>::zeros(b, bd);
        let mut log_var = Tensor2D::<T>::zeros(b, bd);
        let mut samples = Tensor2D::<T>::zeros(b, bd);
        let mut row = 0;
        for fwd in &forwards {
            let rows = fwd.pred_cache.output().rows();
            for w in 0..rows {
                let local = w * l + batch.ref_index;
                let mu = fwd.posterior.mean.row(local);
                let lv = fwd.posterior.log_var.row(local);
                let eps = fwd.noise.row(local);
                mean.row_mut(row).copy_from_slice(mu);
                log_var.row_mut(row).copy_from_slice(lv);
                let out = samples.row_mut(row);
                for c in 0..bd {
                    let sigma = (0.5 * lv[c].to_f64()).exp();
                    out[c] = T::from_f64(mu[c].to_f64() + sigma * eps[c].to_f64());
                }
                row += 1;
            }
        }
        mi_bounds(&GaussianPosterior::new(mean, log_var)?, &samples)?
    };

    let kl_sum: f64 = forwards.iter().flat_map(|f| f.kl_nats.iter()).sum();
    let kl_sq_window_sum: f64 =
        forwards.iter().flat_map(|f| f.kl_nats.iter()).map(|k| k * k).sum();
    let kl_penalty = kl_sq_window_sum / b as f64;
    let loss_nats = nce.loss_nats + beta * kl_penalty;
    if !loss_nats.is_finite() {
        return Err(Error::TrainingDiverged {
            step: 0,
            detail: format!(
                "loss is not finite (infonce = {}, kl penalty = {kl_penalty})",
                nce.loss_nats
            ),
        });
    }

    // Backward, chunked the same way.
    let backs: Vec<Result<DibGrads<T>>> = exec::map_indexed(n_chunks, |ci| {
        let fwd = &forwards[ci];
        let r0 = ci * CHUNK_ROWS;
        let rows = fwd.pred_cache.output().rows();
        let m = nets.alphabet_size();

        let dq = nce.grad_queries.rows_slice(r0, rows);
        let (du_seq, pred_grads) = nets.predictor.backward(&fwd.pred_cache, &dq)?;
        let dk = nce.grad_keys.rows_slice(r0, rows);
        let (_, ref_grads) = nets.ref_encoder.backward(&fwd.ref_cache, &dk)?;

        // un-concatenate and push through the softmax
        let mut dlogits = Tensor2D::<T>::zeros(rows * l, m);
        for w in 0..rows {
            for pos in 0..l {
                let du = &du_seq.row(w)[pos * m..(pos + 1) * m];
                let u = fwd.soft_u.row(w * l + pos);
                let dot: f64 =
                    du.iter().zip(u).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
                let out = dlogits.row_mut(w * l + pos);
                for k in 0..m {
                    out[k] = T::from_f64(u[k].to_f64() * (du[k].to_f64() - dot));
                }
            }
        }
        let (dsamples, quant_grads) = nets.quantizer.backward(&fwd.quant_cache, &dlogits)?;

        // reparameterization + squared-KL penalty, then the clamp gate
        let mut enc_upstream = Tensor2D::<T>::zeros(rows * l, 2 * bd);
        for r in 0..rows * l {
            let kl_coeff = beta * 2.0 * fwd.kl_nats[r] / b as f64;
            let noise = fwd.noise.row(r);
            let mu = fwd.posterior.mean.row(r);
            let lv = fwd.posterior.log_var.row(r);
            let raw = fwd.raw_log_var.row(r);
            let ds = dsamples.row(r);
            let out = enc_upstream.row_mut(r);
            for c in 0..bd {
                let sigma = (0.5 * lv[c].to_f64()).exp();
                // d/dmu: sample path + KL path
                out[c] = T::from_f64(ds[c].to_f64() + kl_coeff * mu[c].to_f64());
                // d/dlog_var: sample path 0.5·eps·sigma + KL path 0.5(sigma²-1)
                let mut g = ds[c].to_f64() * noise[c].to_f64() * 0.5 * sigma
                    + kl_coeff * 0.5 * (sigma * sigma - 1.0);
                if raw[c].to_f64().abs() > crate::nn::LOG_VAR_CLAMP {
                    g = 0.0;
                }
                out[bd + c] = T::from_f64(g);
            }
        }
        let (_, enc_grads) = nets.encoder.backward(&fwd.enc_cache, &enc_upstream)?;

        Ok(DibGrads {
            encoder: enc_grads,
            quantizer: quant_grads,
            predictor: pred_grads,
            ref_encoder: ref_grads,
        })
    });

    let mut grads = DibGrads::zeros_like(nets);
    for g in backs {
        grads.accumulate(&g?);
    }

    Ok(StepOutput {
        loss_nats,
        infonce_nats: nce.loss_nats,
        kl_mean_nats: kl_sum / (b * l) as f64,
        mi,
        grads,
    })
}

/// Per-step curve record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub beta: f64,
    pub infonce_nats: f64,
    pub kl_nats_mean: f64,
    pub mi_lower_bits: f64,
    pub mi_upper_bits: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The running mean of the lower MI bound crossed the threshold.
    MiThreshold { step: usize },
    ScheduleEnd,
}

/// A completed training run.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub config: TrainerConfig,
    pub curves: Vec<StepRecord>,
    pub partition: Partition,
    pub stop_reason: StopReason,
    pub wall_seconds: f64,
}

/// Live trainer state: the networks, their Adam moments, the sampling
/// stream, and the training pool.
pub struct TrainerState {
    pub config: TrainerConfig,
    pub nets: DibNets<f32>,
    adam_encoder: AdamState,
    adam_quantizer: AdamState,
    adam_predictor: AdamState,
    adam_ref: AdamState,
    rng: ChaCha8Rng,
    pool: Trajectory,
    pub step: usize,
    mi_window: VecDeque<f64>,
}

impl TrainerState {
    pub fn new(config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = stream(config.seed, "net-init", 0);
        let nets = DibNets::standard(config.map.dim(), config.sequence_len, &mut init_rng);
        let pool = sample_trajectory(
            &config.map,
            config.training_pool_len,
            DEFAULT_BURN_IN,
            derive_seed(config.seed, "training-pool", 0),
        )?;
        Ok(TrainerState {
            adam_encoder: AdamState::new(nets.encoder.param_count(), config.learning_rate),
            adam_quantizer: AdamState::new(nets.quantizer.param_count(), config.learning_rate),
            adam_predictor: AdamState::new(nets.predictor.param_count(), config.learning_rate),
            adam_ref: AdamState::new(nets.ref_encoder.param_count(), config.learning_rate),
            rng: stream(config.seed, "training-stream", 0),
            nets,
            pool,
            config,
            step: 0,
            mi_window: VecDeque::with_capacity(STOP_WINDOW),
        })
    }

    /// Draw the next batch: uniform random windows (with replacement) from
    /// the pool; the reference state is the window state at `ref_index`.
    pub fn sample_batch(&mut self) -> StepBatch {
        let b = self.config.batch_size;
        let l = self.config.sequence_len;
        let d = self.pool.dim();
        let bd = BOTTLENECK_DIM;
        let max_start = self.pool.len() - l;
        let starts: Vec<usize> = (0..b).map(|_| self.rng.gen_range(0..=max_start)).collect();
        let mut window_coords = Vec::with_capacity(b * l * d);
        let mut ref_coords = Vec::with_capacity(b * d);
        for &s in &starts {
            window_coords.extend_from_slice(
                &self.pool.raw()[s * d..(s + l) * d],
            );
            let r = s + self.config.ref_index;
            ref_coords.extend_from_slice(&self.pool.raw()[r * d..(r + 1) * d]);
        }
        let noise: Vec<f64> =
            (0..b * l * bd).map(|_| self.rng.sample(StandardNormal)).collect();
        StepBatch {
            window_coords,
            ref_coords,
            noise,
            batch_size: b,
            sequence_len: l,
            state_dim: d,
            ref_index: self.config.ref_index,
        }
    }

    /// One optimization step at the scheduled beta. Returns the curve
    /// record.
    pub fn training_step(&mut self) -> Result<StepRecord> {
        let beta = self.config.beta_at(self.step);
        let batch = self.sample_batch();
        let out = step_loss_and_grads(&self.nets, &batch, beta).map_err(|e| match e {
            Error::TrainingDiverged { detail, .. } => {
                Error::TrainingDiverged { step: self.step, detail }
            }
            other => other,
        })?;
        self.adam_encoder.step_net(&mut self.nets.encoder, &out.grads.encoder)?;
        self.adam_quantizer.step_net(&mut self.nets.quantizer, &out.grads.quantizer)?;
        self.adam_predictor.step_net(&mut self.nets.predictor, &out.grads.predictor)?;
        self.adam_ref.step_net(&mut self.nets.ref_encoder, &out.grads.ref_encoder)?;
        let rec = StepRecord {
            step: self.step,
            beta,
            infonce_nats: out.infonce_nats,
            kl_nats_mean: out.kl_mean_nats,
            mi_lower_bits: out.mi.lower_bits,
            mi_upper_bits: out.mi.upper_bits,
        };
        self.step += 1;
        if self.mi_window.len() == STOP_WINDOW {
            self.mi_window.pop_front();
        }
        self.mi_window.push_back(out.mi.lower_bits);
        Ok(rec)
    }

    /// True once the running mean of the lower MI bound crosses the stop
    /// threshold.
    pub fn should_stop(&self) -> bool {
        self.mi_window.len() == STOP_WINDOW
            && self.mi_window.iter().sum::<f64>() / STOP_WINDOW as f64
                >= self.config.stop_threshold_bits
    }

    /// Harden the current soft measurement into a deterministic partition:
    /// `votes` fixed noise vectors, each voting through the quantizer at
    /// temperature zero; majority wins, ties to the lowest symbol.
    pub fn harden(&self, votes: usize) -> Result<Partition> {
        if votes == 0 {
            return Err(Error::contract("hardening needs at least one noise vector"));
        }
        let mut rng = stream(self.config.seed, "harden-noise", 0);
        let bd = self.nets.bottleneck_dim();
        let noise: Vec<Vec<f32>> = (0..votes)
            .map(|_| (0..bd).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect())
            .collect();
        Ok(Partition::Neural(NeuralPartition {
            encoder: self.nets.encoder.clone(),
            quantizer: self.nets.quantizer.clone(),
            noise,
            input_dim: self.config.map.dim(),
            seed: self.config.seed,
        }))
    }
}

/// Length of the stopping-criterion running window.
pub const STOP_WINDOW: usize = 100;

/// Run a full training loop: anneal beta, stop early once the transmitted
/// information per measurement exceeds the threshold, and harden the final
/// measurement. Non-convergence is not an error; the run records how it
/// stopped.
pub fn train(config: TrainerConfig) -> Result<TrainingRun> {
    let start = Instant::now();
    let mut state = TrainerState::new(config.clone())?;
    let total = config.total_steps();
    let mut curves = Vec::with_capacity(total.min(1 << 16));
    let mut stop_reason = StopReason::ScheduleEnd;
    for _ in 0..total {
        let rec = state.training_step()?;
        curves.push(rec);
        if state.should_stop() {
            stop_reason = StopReason::MiThreshold { step: state.step - 1 };
            break;
        }
    }
    let partition = state.harden(DEFAULT_HARDEN_VOTES)?;
    Ok(TrainingRun {
        config,
        curves,
        partition,
        stop_reason,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Fraction of evaluation states whose hardened symbol changes when the
/// vote noise is redrawn with a different seed; a stability diagnostic for
/// the ensemble-of-partitions view.
pub fn hardening_flip_rate(
    state: &TrainerState,
    votes: usize,
    eval_coords: &[f64],
    alt_seed: u64,
) -> Result<f64> {
    let base = state.harden(votes)?;
    let alt = {
        let mut rng = stream(alt_seed, "harden-noise", 0);
        let bd = state.nets.bottleneck_dim();
        let noise: Vec<Vec<f32>> = (0..votes)
            .map(|_| (0..bd).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect())
            .collect();
        Partition::Neural(NeuralPartition {
            encoder: state.nets.encoder.clone(),
            quantizer: state.nets.quantizer.clone(),
            noise,
            input_dim: state.config.map.dim(),
            seed: alt_seed,
        })
    };
    let d = state.config.map.dim();
    let a = base.apply_coords(eval_coords, d)?;
    let b = alt.apply_coords(eval_coords, d)?;
    let flips = a.iter().zip(&b).filter(|(x, y)| x != y).count();
    Ok(flips as f64 / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_batch(seed: u64, b: usize, l: usize, d: usize, bd: usize) -> StepBatch {
        let mut rng = stream(seed, "tiny-batch", 0);
        StepBatch {
            window_coords: (0..b * l * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ref_coords: (0..b * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            noise: (0..b * l * bd).map(|_| rng.sample(StandardNormal)).collect(),
            batch_size: b,
            sequence_len: l,
            state_dim: d,
            ref_index: l / 2,
        }
    }

    fn tiny_nets<T: Scalar>(seed: u64, d: usize, l: usize, bd: usize) -> DibNets<T> {
        let mut rng = stream(seed, "tiny-nets", 0);
        DibNets {
            encoder: DenseNet::new(
                &[posenc_dim(d), 4, 2 * bd],
                Activation::LeakyRectifier,
                Activation::Linear,
                &mut rng,
            ),
            quantizer: DenseNet::new(
                &[bd, 4, 2],
                Activation::LeakyRectifier,
                Activation::Linear,
                &mut rng,
            ),
            predictor: DenseNet::new(
                &[2 * l, 4, SHARED_DIM],
                Activation::LeakyRectifier,
                Activation::Linear,
                &mut rng,
            ),
            ref_encoder: DenseNet::new(
                &[posenc_dim(d), 4, SHARED_DIM],
                Activation::LeakyRectifier,
                Activation::Linear,
                &mut rng,
            ),
        }
    }

    #[test]
    fn beta_schedule_endpoints_and_midpoint() {
        let mut cfg = TrainerConfig::new(MapSpec::ikeda_standard(), 12, 0);
        assert_eq!(cfg.beta_at(0), 10.0);
        assert!((cfg.beta_at(cfg.total_steps()) - 1e-4).abs() < 1e-12);
        cfg.anneal_multiplier = 0.5;
        assert_eq!(cfg.total_steps(), 40_000);
        // geometric midpoint of [10, 1e-4]
        let mid = cfg.beta_at(20_000);
        assert!((mid - 10.0 * (1e-5f64).powf(0.5)).abs() < 1e-9, "mid {mid}");
        assert!((mid - 0.0316227766).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainerConfig::new(MapSpec::logistic_r4(), 4, 0);
        assert!(cfg.validate().is_ok());
        cfg.ref_index = 4;
        assert!(cfg.validate().is_err());
        cfg.ref_index = 0;
        cfg.beta_end = 20.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn step_gradients_match_finite_differences_f64() {
        let (b, l, d, bd) = (4, 2, 1, 3);
        let nets = tiny_nets::<f64>(1, d, l, bd);
        let batch = tiny_batch(2, b, l, d, bd);
        let beta = 0.37;
        let out = step_loss_and_grads(&nets, &batch, beta).unwrap();

        let loss_of = |n: &DibNets<f64>| step_loss_and_grads(n, &batch, beta).unwrap().loss_nats;
        let h = 1e-6;
        let mut max_rel: f64 = 0.0;
        for which in 0..4 {
            let (param_count, grads_flat) = {
                let (net, g) = match which {
                    0 => (&nets.encoder, &out.grads.encoder),
                    1 => (&nets.quantizer, &out.grads.quantizer),
                    2 => (&nets.predictor, &out.grads.predictor),
                    _ => (&nets.ref_encoder, &out.grads.ref_encoder),
                };
                let mut flat = Vec::new();
                g.visit(|s| flat.extend_from_slice(s));
                (net.param_count(), flat)
            };
            // probe a spread of parameters rather than all of them
            let stride = (param_count / 25).max(1);
            for p in (0..param_count).step_by(stride) {
                let mut plus = nets.clone();
                let mut minus = nets.clone();
                for (target, delta) in [(&mut plus, h), (&mut minus, -h)] {
                    let net = match which {
                        0 => &mut target.encoder,
                        1 => &mut target.quantizer,
                        2 => &mut target.predictor,
                        _ => &mut target.ref_encoder,
                    };
                    let mut seen = 0;
                    net.visit_params_mut(|sl| {
                        if p >= seen && p < seen + sl.len() {
                            sl[p - seen] += delta;
                        }
                        seen += sl.len();
                    });
                }
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let g = grads_flat[p];
                let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-7);
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel < 1e-6, "max rel err {max_rel}");
    }

    #[test]
    fn step_gradients_match_finite_differences_f32() {
        let (b, l, d, bd) = (4, 2, 1, 3);
        let nets64 = tiny_nets::<f64>(3, d, l, bd);
        let nets = tiny_nets::<f32>(3, d, l, bd);
        let batch = tiny_batch(4, b, l, d, bd);
        let beta = 0.1;
        let out = step_loss_and_grads(&nets, &batch, beta).unwrap();
        // compare f32 analytic grads against f64 finite differences of the
        // same function to avoid f32 cancellation in the probe itself
        let loss_of = |n: &DibNets<f64>| step_loss_and_grads(n, &batch, beta).unwrap().loss_nats;
        let h = 1e-6;
        let mut flat32 = Vec::new();
        out.grads.encoder.visit(|s| flat32.extend_from_slice(s));
        let total = nets64.encoder.param_count();
        let stride = (total / 20).max(1);
        let mut max_rel: f64 = 0.0;
        for p in (0..total).step_by(stride) {
            let mut plus = nets64.clone();
            let mut minus = nets64.clone();
            for (target, delta) in [(&mut plus, h), (&mut minus, -h)] {
                let mut seen = 0;
                target.encoder.visit_params_mut(|sl| {
                    if p >= seen && p < seen + sl.len() {
                        sl[p - seen] += delta;
                    }
                    seen += sl.len();
                });
            }
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let g = flat32[p] as f64;
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-3);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-3, "max rel err {max_rel}");
    }

    #[test]
    fn chunked_and_unchunked_agree() {
        // a batch larger than one chunk must give identical results to the
        // same computation done at chunk size >= batch (here: compare two
        // runs, which exercises determinism of the chunked path)
        let (b, l, d, bd) = (CHUNK_ROWS + 7, 2, 2, 3);
        let nets = tiny_nets::<f32>(5, d, l, bd);
        let batch = tiny_batch(6, b, l, d, bd);
        let a = step_loss_and_grads(&nets, &batch, 0.2).unwrap();
        let bb = step_loss_and_grads(&nets, &batch, 0.2).unwrap();
        assert_eq!(a.loss_nats, bb.loss_nats);
        let mut ga = Vec::new();
        let mut gb = Vec::new();
        a.grads.encoder.visit(|s| ga.extend_from_slice(s));
        bb.grads.encoder.visit(|s| gb.extend_from_slice(s));
        assert_eq!(ga, gb);
    }

    #[test]
    fn zero_information_limit_pinned_beta() {
        // with beta pinned at beta_start for a few hundred steps the KL is
        // driven to ~0, the MI bounds sit near zero, and InfoNCE is at
        // chance level ln(batch)
        let mut cfg = TrainerConfig::new(MapSpec::logistic_chaotic(), 3, 7);
        cfg.batch_size = 128;
        cfg.training_pool_len = 20_000;
        cfg.base_steps = 500;
        cfg.beta_start = 10.0;
        cfg.beta_end = 9.999; // pinned high throughout
        cfg.stop_threshold_bits = f64::INFINITY;
        let mut state = TrainerState::new(cfg.clone()).unwrap();
        let mut last = None;
        for _ in 0..500 {
            last = Some(state.training_step().unwrap());
        }
        let rec = last.unwrap();
        assert!(rec.mi_lower_bits < 0.05, "mi lower {}", rec.mi_lower_bits);
        let chance = (cfg.batch_size as f64).ln();
        assert!(
            (rec.infonce_nats - chance).abs() / chance < 0.02,
            "infonce {} vs chance {chance}",
            rec.infonce_nats
        );
        // the squared penalty's restoring force vanishes near zero, so the
        // KL floats at a small residual rather than exactly zero
        assert!(rec.kl_nats_mean < 0.1, "kl {}", rec.kl_nats_mean);
    }

    #[test]
    fn mi_bound_ordering_holds_during_training() {
        let mut cfg = TrainerConfig::new(MapSpec::henon_standard(), 2, 9);
        cfg.batch_size = 64;
        cfg.training_pool_len = 10_000;
        cfg.base_steps = 40;
        cfg.stop_threshold_bits = f64::INFINITY;
        let mut state = TrainerState::new(cfg).unwrap();
        for _ in 0..40 {
            let rec = state.training_step().unwrap();
            assert!(
                rec.mi_lower_bits <= rec.mi_upper_bits + 0.01,
                "lower {} > upper {}",
                rec.mi_lower_bits,
                rec.mi_upper_bits
            );
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let mut cfg = TrainerConfig::new(MapSpec::logistic_r4(), 2, 21);
        cfg.batch_size = 32;
        cfg.training_pool_len = 5_000;
        cfg.base_steps = 10;
        let mut a = TrainerState::new(cfg.clone()).unwrap();
        let mut b = TrainerState::new(cfg).unwrap();
        for _ in 0..10 {
            let ra = a.training_step().unwrap();
            let rb = b.training_step().unwrap();
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn hardened_partition_is_a_hard_measurement() {
        let mut cfg = TrainerConfig::new(MapSpec::ikeda_standard(), 2, 13);
        cfg.batch_size = 32;
        cfg.training_pool_len = 5_000;
        cfg.base_steps = 5;
        let mut state = TrainerState::new(cfg).unwrap();
        for _ in 0..5 {
            state.training_step().unwrap();
        }
        let p = state.harden(8).unwrap();
        let t = sample_trajectory(&MapSpec::ikeda_standard(), 500, 100, 3).unwrap();
        let s1 = crate::partitions::symbolize(&p, &t).unwrap();
        let s2 = crate::partitions::symbolize(&p, &t).unwrap();
        assert_eq!(s1.symbols(), s2.symbols());
        // K = 1 equals the single-noise deterministic assignment
        let p1 = state.harden(1).unwrap();
        let s3 = crate::partitions::symbolize(&p1, &t).unwrap();
        let s4 = crate::partitions::symbolize(&p1, &t).unwrap();
        assert_eq!(s3.symbols(), s4.symbols());
    }

    #[test]
    fn harden_is_independent_of_votes_when_variance_is_tiny() {
        // hand-built stack: the posterior mean separates states strongly
        // relative to the clamp-floor sigma (e^-5), so every vote agrees
        // and the partition does not depend on the vote count
        use crate::nn::DenseLayer;
        let d = 1;
        let bd = 2;
        // encoder: 11 posenc features -> [x, -x, logvar, logvar]
        let mut w = Tensor2D::<f32>::zeros(posenc_dim(d), 2 * bd);
        w.set(0, 0, 1.0);
        w.set(0, 1, -1.0);
        let encoder = DenseNet::from_layers(vec![DenseLayer {
            weights: w,
            bias: vec![0.0, 0.0, -30.0, -30.0],
            activation: Activation::Linear,
        }]);
        // quantizer: strongly scaled identity logits
        let mut q = Tensor2D::<f32>::zeros(bd, 2);
        q.set(0, 0, 50.0);
        q.set(1, 1, 50.0);
        let quantizer = DenseNet::from_layers(vec![DenseLayer {
            weights: q,
            bias: vec![0.0, 0.0],
            activation: Activation::Linear,
        }]);
        let build = |votes: usize| {
            let mut rng = stream(99, "harden-noise", 0);
            let noise: Vec<Vec<f32>> = (0..votes)
                .map(|_| (0..bd).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect())
                .collect();
            Partition::Neural(crate::partitions::NeuralPartition {
                encoder: encoder.clone(),
                quantizer: quantizer.clone(),
                noise,
                input_dim: d,
                seed: 99,
            })
        };
        // states away from the x = 0 decision boundary
        let coords: Vec<f64> = (0..200).map(|i| 0.2 + 0.003 * i as f64).chain((0..200).map(|i| -0.2 - 0.003 * i as f64)).collect();
        let a = build(1).apply_coords(&coords, d).unwrap();
        let b = build(9).apply_coords(&coords, d).unwrap();
        let c = build(32).apply_coords(&coords, d).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
        // and the symbols actually split by sign
        assert!(a[..200].iter().all(|s| *s == 0));
        assert!(a[200..].iter().all(|s| *s == 1));
    }
}
