//! Entropy-rate estimation of symbol sequences.
//!
//! Three estimators are provided — infinite-depth context tree weighting
//! (the workhorse), an LZ cross-parsing variant, and bias-corrected block
//! entropy — plus the finite-size protocol that runs an estimator over
//! log-spaced window lengths and the scaling-ansatz fit
//! `h_N = h_inf + c·log N / N^gamma` that extrapolates to infinite length.

mod block;
mod ctw;
mod fit;
mod lz;

use serde::{Deserialize, Serialize};

pub use block::{block_entropy_rate, grassberger_g};
pub use ctw::{ctw_entropy_rate, CtwTree};
pub use fit::fit_scaling_ansatz;
pub use lz::lz_cross_parse_rate;

use crate::exec;
use crate::maps::{sample_trajectory, MapSpec, DEFAULT_BURN_IN};
use crate::partitions::{symbolize, Partition, SymbolSequence};
use crate::rng::stream;
use crate::{Error, Result};

/// Which estimator produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Ctw,
    LzCross,
    Block { b: usize },
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorKind::Ctw => write!(f, "ctw"),
            EstimatorKind::LzCross => write!(f, "lz_cross"),
            EstimatorKind::Block { b } => write!(f, "block{b}"),
        }
    }
}

/// An entropy-rate estimate in bits per symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub value_bits: f64,
    pub stderr_bits: f64,
    pub method: EstimatorKind,
    pub n: usize,
    /// Set when the block estimator saw too many distinct blocks for the
    /// sample size (more than n/10) and the value should be distrusted.
    pub undersampled: bool,
}

/// Result of the scaling-ansatz fit `h_N = h_inf + c·log N / N^gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub h_inf: f64,
    pub c: f64,
    pub gamma: f64,
    pub stderr_h_inf: f64,
    /// Euclidean norm of the weighted residuals at the optimum.
    pub residual_norm: f64,
}

/// Fifteen logarithmically spaced window lengths between 2×10³ and 2×10⁶.
pub fn default_protocol_lengths() -> Vec<usize> {
    log_spaced_lengths(2_000, 2_000_000, 15)
}

/// `count` log-spaced integers in [lo, hi], deduplicated and sorted.
pub fn log_spaced_lengths(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    assert!(lo >= 2 && hi >= lo && count >= 1);
    let (llo, lhi) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<usize> = (0..count)
        .map(|i| {
            let f = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
            (llo + f * (lhi - llo)).exp().round() as usize
        })
        .collect();
    out.dedup();
    out
}

/// Default number of window repeats per length.
pub const DEFAULT_REPEATS: usize = 5;

/// Run `estimator` over `repeats` random contiguous windows at each length.
///
/// Window offsets are drawn per (length, repeat) pair from a deterministic
/// stream, so results do not depend on execution order; jobs run in
/// parallel. The LZ cross estimator draws a second independent window of
/// the same length as its codebook.
pub fn finite_size_protocol(
    full: &SymbolSequence,
    estimator: EstimatorKind,
    lengths: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<(usize, EntropyEstimate)>> {
    if lengths.is_empty() || repeats == 0 {
        return Err(Error::contract("protocol needs at least one length and one repeat"));
    }
    let max_len = *lengths.iter().max().unwrap();
    if max_len > full.len() {
        return Err(Error::contract(format!(
            "window length {max_len} exceeds dataset length {}",
            full.len()
        )));
    }
    let jobs: Vec<(usize, usize)> = lengths
        .iter()
        .flat_map(|&len| (0..repeats).map(move |r| (len, r)))
        .collect();
    let results = exec::map_indexed(jobs.len(), |ji| -> Result<(usize, EntropyEstimate)> {
        let (len, _repeat) = jobs[ji];
        let mut rng = stream(seed, "protocol-window", ji as u64);
        let start = sample_offset(&mut rng, full.len() - len);
        let window = full.window(start, len)?;
        let est = match estimator {
            EstimatorKind::Ctw => ctw_entropy_rate(&window)?,
            EstimatorKind::LzCross => {
                let db_start = sample_offset(&mut rng, full.len() - len);
                let db = full.window(db_start, len)?;
                lz_cross_parse_rate(&db, &window)?
            }
            EstimatorKind::Block { b } => block_entropy_rate(&window, b)?,
        };
        Ok((len, est))
    });
    results.into_iter().collect()
}

fn sample_offset(rng: &mut rand_chacha::ChaCha8Rng, max_inclusive: usize) -> usize {
    use rand::Rng;
    if max_inclusive == 0 {
        0
    } else {
        rng.gen_range(0..=max_inclusive)
    }
}

/// Collapse protocol output into one (N, mean, stderr) triple per length.
pub fn aggregate_by_length(points: &[(usize, EntropyEstimate)]) -> Vec<(f64, f64, f64)> {
    let mut lengths: Vec<usize> = points.iter().map(|(n, _)| *n).collect();
    lengths.sort_unstable();
    lengths.dedup();
    lengths
        .into_iter()
        .map(|len| {
            let vals: Vec<f64> = points
                .iter()
                .filter(|(n, _)| *n == len)
                .map(|(_, e)| e.value_bits)
                .collect();
            let k = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / k;
            let stderr = if vals.len() > 1 {
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
                (var / k).sqrt()
            } else {
                0.0
            };
            (len as f64, mean, stderr)
        })
        .collect()
}

/// Everything `estimate_h_inf` produced, for callers that also want the
/// per-window data (the CLI writes it as CSV).
#[derive(Debug, Clone)]
pub struct HInfEstimate {
    pub fit: ScalingFit,
    pub points: Vec<(usize, EntropyEstimate)>,
    pub aggregated: Vec<(f64, f64, f64)>,
}

/// End-to-end certification of a partition on a map: simulate, symbolize,
/// run the CTW finite-size protocol and fit the scaling ansatz.
pub fn estimate_h_inf(
    partition: &Partition,
    map: &MapSpec,
    dataset_size: usize,
    seed: u64,
) -> Result<ScalingFit> {
    Ok(estimate_h_inf_detailed(
        partition,
        map,
        dataset_size,
        &default_protocol_lengths(),
        DEFAULT_REPEATS,
        seed,
    )?
    .fit)
}

/// [`estimate_h_inf`] with explicit protocol parameters and full output.
pub fn estimate_h_inf_detailed(
    partition: &Partition,
    map: &MapSpec,
    dataset_size: usize,
    lengths: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<HInfEstimate> {
    let trajectory = sample_trajectory(map, dataset_size, DEFAULT_BURN_IN, seed)?;
    let symbols = symbolize(partition, &trajectory)?;
    drop(trajectory);
    let points = finite_size_protocol(&symbols, EstimatorKind::Ctw, lengths, repeats, seed)?;
    let aggregated = aggregate_by_length(&points);
    let fit = fit_scaling_ansatz(&aggregated)?;
    Ok(HInfEstimate { fit, points, aggregated })
}

/// Single fast CTW pass over one window; used to rank training trials
/// before spending the full protocol on the winner.
pub fn fast_ctw_estimate(symbols: &SymbolSequence, window_len: usize, seed: u64) -> Result<f64> {
    let len = window_len.min(symbols.len());
    let mut rng = stream(seed, "fast-ctw", 0);
    let start = sample_offset(&mut rng, symbols.len() - len);
    Ok(ctw_entropy_rate(&symbols.window(start, len)?)?.value_bits)
}
