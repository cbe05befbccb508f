//! Experiment runner: sequence-length sweeps with best-of-N trial selection,
//! reference-state sweeps, and the slow-annealing variant; each emits
//! deterministic CSV datasets.

use serde::{Deserialize, Serialize};

use crate::artifacts;
use crate::entropy::{
    estimate_h_inf_detailed, fast_ctw_estimate, log_spaced_lengths, ScalingFit,
};
use crate::exec;
use crate::maps::{lyapunov_spectrum, sample_trajectory, MapSpec, DEFAULT_BURN_IN};
use crate::partitions::{measurement_entropy, shift_coloring, symbolize, ColoredCloud, Partition};
use crate::rng::derive_seed;
use crate::{Error, Result};

use super::{train, StopReason, TrainerConfig};

/// Which figure-style dataset to produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Entropy-rate deviation versus training sequence length.
    Fig2 { sequence_lengths: Vec<usize> },
    /// Reference-index sweep at fixed L, exporting the best partition per
    /// reference index as a colored cloud.
    Fig3RefSweep { sequence_len: usize },
    /// Same sweep at half the annealing rate.
    Fig3SlowAnneal { sequence_len: usize },
}

/// Scale knobs shared by the experiments: desk reproduces the published
/// protocol, ci is the scaled-down variant that runs inside the test suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentScale {
    pub batch_size: usize,
    pub base_steps: usize,
    pub trials: usize,
    /// Window length of the fast CTW pass used to rank trials.
    pub fast_window: usize,
    /// Length of the shared evaluation trajectory.
    pub eval_pool: usize,
    /// Dataset size for the winner's full certification.
    pub certify_dataset: usize,
    pub certify_max_len: usize,
    pub certify_lengths: usize,
    pub certify_repeats: usize,
    /// Points per exported colored cloud.
    pub cloud_points: usize,
}

impl ExperimentScale {
    /// Published protocol: batch 2048, 20k steps, 20 trials, certification
    /// over 15 lengths in [2e3, 2e6] from 2×10⁷ points.
    pub fn desk() -> Self {
        ExperimentScale {
            batch_size: 2048,
            base_steps: 20_000,
            trials: 20,
            fast_window: 200_000,
            eval_pool: 1_000_000,
            certify_dataset: 20_000_000,
            certify_max_len: 2_000_000,
            certify_lengths: 15,
            certify_repeats: 5,
            cloud_points: 100_000,
        }
    }

    /// Test-suite scale: batch 512, 10k steps, 5 trials, certification over
    /// 12 lengths up to 10⁶ from 4×10⁶ points.
    pub fn ci() -> Self {
        ExperimentScale {
            batch_size: 512,
            base_steps: 10_000,
            trials: 5,
            fast_window: 200_000,
            eval_pool: 1_000_000,
            certify_dataset: 4_000_000,
            certify_max_len: 1_000_000,
            certify_lengths: 12,
            certify_repeats: 5,
            cloud_points: 50_000,
        }
    }
}

/// One training trial and its fast evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub sequence_len: usize,
    pub ref_index: usize,
    pub anneal_multiplier: f64,
    pub trial: usize,
    pub seed: u64,
    /// Step at which the MI stopping rule fired, if it did.
    pub stop_step: Option<usize>,
    pub steps_run: usize,
    pub h_u_bits: f64,
    pub h_inf_fast_bits: f64,
    /// `(h_KS - h_inf_fast) / h_KS`.
    pub frac_dev_fast: f64,
}

/// Full certification of the best trial at the largest sequence length.
#[derive(Debug, Clone)]
pub struct WinnerCertification {
    pub sequence_len: usize,
    pub trial: usize,
    pub fit: ScalingFit,
    pub frac_dev: f64,
    pub partition: Partition,
}

/// Best partition for one reference index of a Fig-3-style sweep.
#[derive(Debug, Clone)]
pub struct Fig3Panel {
    pub ref_index: usize,
    pub anneal_multiplier: f64,
    pub best_trial: TrialSummary,
    pub partition: Partition,
    pub cloud: ColoredCloud,
}

/// The collected experiment output plus CSV renderers.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub map: MapSpec,
    pub scale: ExperimentScale,
    pub seed: u64,
    pub h_ks: f64,
    pub trials: Vec<TrialSummary>,
    pub winner: Option<WinnerCertification>,
    pub panels: Vec<Fig3Panel>,
}

impl ExperimentResult {
    pub fn config_echo(&self) -> String {
        let mut echo = artifacts::ConfigEcho::new();
        echo.push("experiment", format!("{:?}", self.kind));
        echo.push("map", self.map);
        echo.push("seed", self.seed);
        echo.push("batch_size", self.scale.batch_size);
        echo.push("base_steps", self.scale.base_steps);
        echo.push("trials", self.scale.trials);
        echo.render()
    }

    /// Per-trial rows (the violin-plot dataset).
    pub fn trials_csv(&self) -> String {
        let mut out = artifacts::csv_header_comment(&self.config_echo());
        out.push('\n');
        out.push_str(
            "map,sequence_len,ref_index,anneal_multiplier,trial,seed,stop_step,steps_run,h_u_bits,h_inf_fast_bits,frac_dev_fast\n",
        );
        for t in &self.trials {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6}\n",
                self.map.name(),
                t.sequence_len,
                t.ref_index,
                t.anneal_multiplier,
                t.trial,
                t.seed,
                t.stop_step.map_or(-1i64, |s| s as i64),
                t.steps_run,
                t.h_u_bits,
                t.h_inf_fast_bits,
                t.frac_dev_fast,
            ));
        }
        out
    }

    /// Winner summary row, when a certification ran.
    pub fn summary_csv(&self) -> String {
        let mut out = artifacts::csv_header_comment(&self.config_echo());
        out.push('\n');
        out.push_str("map,h_ks_bits,sequence_len,trial,h_inf_bits,stderr_bits,c,gamma,frac_dev\n");
        if let Some(w) = &self.winner {
            out.push_str(&format!(
                "{},{:.6},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                self.map.name(),
                self.h_ks,
                w.sequence_len,
                w.trial,
                w.fit.h_inf,
                w.fit.stderr_h_inf,
                w.fit.c,
                w.fit.gamma,
                w.frac_dev,
            ));
        }
        out
    }

    /// Median of the fast fractional deviations at one sequence length.
    pub fn median_frac_dev(&self, sequence_len: usize) -> Option<f64> {
        let mut devs: Vec<f64> = self
            .trials
            .iter()
            .filter(|t| t.sequence_len == sequence_len)
            .map(|t| t.frac_dev_fast)
            .collect();
        if devs.is_empty() {
            return None;
        }
        devs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = devs.len();
        Some(if n % 2 == 1 { devs[n / 2] } else { 0.5 * (devs[n / 2 - 1] + devs[n / 2]) })
    }
}

fn run_trial(
    map: &MapSpec,
    scale: &ExperimentScale,
    sequence_len: usize,
    ref_index: usize,
    anneal_multiplier: f64,
    trial: usize,
    trial_seed: u64,
    eval: &crate::maps::Trajectory,
    h_ks: f64,
) -> Result<(TrialSummary, Partition)> {
    let mut config = TrainerConfig::new(*map, sequence_len, trial_seed);
    config.batch_size = scale.batch_size;
    config.base_steps = scale.base_steps;
    config.ref_index = ref_index;
    config.anneal_multiplier = anneal_multiplier;
    let run = train(config)?;
    let symbols = symbolize(&run.partition, eval)?;
    let h_u = measurement_entropy(&symbols)?;
    let h_fast = fast_ctw_estimate(&symbols, scale.fast_window, derive_seed(trial_seed, "fast-eval", 0))?;
    let summary = TrialSummary {
        sequence_len,
        ref_index,
        anneal_multiplier,
        trial,
        seed: trial_seed,
        stop_step: match run.stop_reason {
            StopReason::MiThreshold { step } => Some(step),
            StopReason::ScheduleEnd => None,
        },
        steps_run: run.curves.len(),
        h_u_bits: h_u,
        h_inf_fast_bits: h_fast,
        frac_dev_fast: (h_ks - h_fast) / h_ks,
    };
    Ok((summary, run.partition))
}

/// Run one experiment. All trial seeds derive from `seed`, trials run in
/// parallel, and results are assembled in trial-index order, so repeated
/// runs produce identical datasets.
pub fn reproduce_experiment(
    kind: ExperimentKind,
    map: &MapSpec,
    scale: &ExperimentScale,
    seed: u64,
) -> Result<ExperimentResult> {
    map.validate()?;
    let h_ks = lyapunov_spectrum(map, 1_000_000, derive_seed(seed, "h-ks-oracle", 0))?.h_ks;
    let eval = sample_trajectory(map, scale.eval_pool, DEFAULT_BURN_IN, derive_seed(seed, "eval-pool", 0))?;

    match kind {
        ExperimentKind::Fig2 { ref sequence_lengths } => {
            if sequence_lengths.is_empty() {
                return Err(Error::contract("fig2 needs at least one sequence length"));
            }
            let jobs: Vec<(usize, usize)> = sequence_lengths
                .iter()
                .flat_map(|&l| (0..scale.trials).map(move |t| (l, t)))
                .collect();
            let outcomes = exec::map_indexed(jobs.len(), |ji| {
                let (l, t) = jobs[ji];
                run_trial(
                    map,
                    scale,
                    l,
                    l / 2,
                    1.0,
                    t,
                    derive_seed(seed, "fig2-trial", ji as u64),
                    &eval,
                    h_ks,
                )
            });
            let mut trials = Vec::new();
            let mut partitions = Vec::new();
            for o in outcomes {
                let (summary, partition) = o?;
                trials.push(summary);
                partitions.push(partition);
            }
            // certify the best trial at the largest L with the full protocol
            let max_l = *sequence_lengths.iter().max().unwrap();
            let winner = trials
                .iter()
                .enumerate()
                .filter(|(_, t)| t.sequence_len == max_l)
                .max_by(|a, b| a.1.h_inf_fast_bits.partial_cmp(&b.1.h_inf_fast_bits).unwrap())
                .map(|(i, t)| (i, t.trial));
            let winner = match winner {
                Some((idx, trial)) => {
                    let detail = estimate_h_inf_detailed(
                        &partitions[idx],
                        map,
                        scale.certify_dataset,
                        &log_spaced_lengths(2_000, scale.certify_max_len, scale.certify_lengths),
                        scale.certify_repeats,
                        derive_seed(seed, "certify", idx as u64),
                    )?;
                    Some(WinnerCertification {
                        sequence_len: max_l,
                        trial,
                        frac_dev: (h_ks - detail.fit.h_inf) / h_ks,
                        fit: detail.fit,
                        partition: partitions[idx].clone(),
                    })
                }
                None => None,
            };
            Ok(ExperimentResult {
                kind,
                map: *map,
                scale: scale.clone(),
                seed,
                h_ks,
                trials,
                winner,
                panels: Vec::new(),
            })
        }
        ExperimentKind::Fig3RefSweep { sequence_len }
        | ExperimentKind::Fig3SlowAnneal { sequence_len } => {
            let anneal = match kind {
                ExperimentKind::Fig3SlowAnneal { .. } => 0.5,
                _ => 1.0,
            };
            let jobs: Vec<(usize, usize)> = (0..sequence_len)
                .flat_map(|r| (0..scale.trials).map(move |t| (r, t)))
                .collect();
            let outcomes = exec::map_indexed(jobs.len(), |ji| {
                let (r, t) = jobs[ji];
                run_trial(
                    map,
                    scale,
                    sequence_len,
                    r,
                    anneal,
                    t,
                    derive_seed(seed, "fig3-trial", ji as u64),
                    &eval,
                    h_ks,
                )
            });
            let mut trials = Vec::new();
            let mut partitions = Vec::new();
            for o in outcomes {
                let (summary, partition) = o?;
                trials.push(summary);
                partitions.push(partition);
            }
            let cloud_traj = sample_trajectory(
                map,
                scale.cloud_points,
                DEFAULT_BURN_IN,
                derive_seed(seed, "cloud", 0),
            )?;
            let mut panels = Vec::new();
            for r in 0..sequence_len {
                let (idx, best) = trials
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.ref_index == r)
                    .max_by(|a, b| {
                        a.1.h_inf_fast_bits.partial_cmp(&b.1.h_inf_fast_bits).unwrap()
                    })
                    .map(|(i, t)| (i, t.clone()))
                    .expect("every ref index has trials");
                let labels = symbolize(&partitions[idx], &cloud_traj)?;
                let cloud = shift_coloring(&cloud_traj, &labels, 0)?;
                panels.push(Fig3Panel {
                    ref_index: r,
                    anneal_multiplier: anneal,
                    best_trial: best,
                    partition: partitions[idx].clone(),
                    cloud,
                });
            }
            Ok(ExperimentResult {
                kind,
                map: *map,
                scale: scale.clone(),
                seed,
                h_ks,
                trials,
                winner: None,
                panels,
            })
        }
    }
}
