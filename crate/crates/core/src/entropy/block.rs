//! Bias-corrected block entropy.
//!
//! `h(B) = Ĥ(B) − Ĥ(B−1)` where `Ĥ(B)` is the Grassberger-corrected plugin
//! entropy of length-B windows:
//!
//! `Ĥ = ln N − (1/N) Σ_i n_i G(n_i)` (nats),
//! `G(n) = ψ(n) + (−1)^n/2 · (ψ((n+1)/2) − ψ(n/2))`.
//!
//! `G` satisfies `G(1) = −γ − ln 2`, `G(2) = 2 − γ − ln 2` and
//! `G(n+2) = G(n) + 2/n`, which is what the small-`n` table below uses; the
//! digamma form takes over for large counts.

use std::collections::HashMap;

use crate::partitions::SymbolSequence;
use crate::{Error, Result};

use super::{EntropyEstimate, EstimatorKind};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const LN_2: f64 = std::f64::consts::LN_2;

/// Digamma via upward recurrence into the asymptotic series.
fn digamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut result = 0.0;
    while x < 16.0 {
        result -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli series: ln x - 1/(2x) - 1/(12x²) + 1/(120x⁴) - 1/(252x⁶) ...
    result + x.ln() - 0.5 * inv
        - inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 / 240.0)))
}

const G_TABLE_SIZE: usize = 4096;

fn g_table() -> &'static [f64; G_TABLE_SIZE] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<[f64; G_TABLE_SIZE]> = OnceLock::new();
    TABLE.get_or_init(|| {
        // G(2k+1) = G(2k) and G(2k+2) = G(2k) + 2/(2k+1)
        let mut t = [0.0f64; G_TABLE_SIZE];
        t[1] = -EULER_GAMMA - LN_2;
        if G_TABLE_SIZE > 2 {
            t[2] = 2.0 - EULER_GAMMA - LN_2;
        }
        let mut n = 2;
        while n + 2 < G_TABLE_SIZE {
            t[n + 1] = t[n];
            t[n + 2] = t[n] + 2.0 / (n + 1) as f64;
            n += 2;
        }
        if n + 1 < G_TABLE_SIZE {
            t[n + 1] = t[n];
        }
        t
    })
}

/// Grassberger's correction function for a count of `n`.
pub fn grassberger_g(n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if (n as usize) < G_TABLE_SIZE {
        return g_table()[n as usize];
    }
    let nf = n as f64;
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    digamma(nf) + 0.5 * sign * (digamma((nf + 1.0) / 2.0) - digamma(nf / 2.0))
}

/// Corrected plugin entropy (nats) of the length-`b` window distribution.
/// Returns `(entropy, distinct_blocks, window_count)`.
fn corrected_block_entropy(s: &SymbolSequence, b: usize, bits_per_sym: u32) -> (f64, usize, usize) {
    if b == 0 {
        return (0.0, 0, 0);
    }
    let syms = s.symbols();
    let n_windows = syms.len() + 1 - b;
    let mask: u64 = if (b as u32 * bits_per_sym) >= 64 {
        u64::MAX
    } else {
        (1u64 << (b as u32 * bits_per_sym)) - 1
    };
    let mut counts: HashMap<u64, u64> = HashMap::new();
    let mut key = 0u64;
    for (i, &sym) in syms.iter().enumerate() {
        key = ((key << bits_per_sym) | sym as u64) & mask;
        if i + 1 >= b {
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    let distinct = counts.len();
    let nf = n_windows as f64;
    let mut acc = 0.0;
    for &count in counts.values() {
        acc += count as f64 * grassberger_g(count);
    }
    (nf.ln() - acc / nf, distinct, n_windows)
}

/// Conditional block entropy `h(B) = Ĥ(B) − Ĥ(B−1)` in bits/symbol.
pub fn block_entropy_rate(s: &SymbolSequence, b: usize) -> Result<EntropyEstimate> {
    if b == 0 {
        return Err(Error::contract("block length must be >= 1"));
    }
    if s.len() < b + 1 {
        return Err(Error::contract(format!(
            "sequence of length {} too short for block length {b}",
            s.len()
        )));
    }
    let bits_per_sym = (s.alphabet_size() as u64).next_power_of_two().trailing_zeros().max(1);
    if b as u32 * bits_per_sym > 64 {
        return Err(Error::contract(format!(
            "block length {b} over alphabet {} exceeds the 64-bit window packing",
            s.alphabet_size()
        )));
    }
    let (h_b, distinct, windows) = corrected_block_entropy(s, b, bits_per_sym);
    let (h_prev, _, _) = corrected_block_entropy(s, b - 1, bits_per_sym);
    Ok(EntropyEstimate {
        value_bits: (h_b - h_prev) / LN_2,
        stderr_bits: 0.0,
        method: EstimatorKind::Block { b },
        n: s.len(),
        undersampled: distinct * 10 > windows,
    })
}
