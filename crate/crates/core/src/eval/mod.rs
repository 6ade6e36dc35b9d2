//! End-to-end experiment runner and the statistics reported for it.

mod config;
mod episode;
mod report;
mod stats;

pub use config::{
    Attack, AttackSpec, Experiment, ExperimentConfig, VictimSpec, DEFAULT_EPISODES, DEFAULT_K,
};
pub use episode::{run_episode, EpisodeOutcome, EpisodeRecord};
pub use report::{
    aggregate_csv, is_random_label, mean_of_percentages, plot_data_csv, report_csv, summarize,
    write_report, AggregateRow, MetricsRow, MetricsSummary, ReportPaths, AGGREGATION_LABEL, BENIGN,
    BEST_RANDOM, CSV_COLUMNS,
};
pub use stats::{bootstrap_ci, iqm, mean, percent_change, DEFAULT_LEVEL, DEFAULT_RESAMPLES};

use rayon::prelude::*;

use crate::seed::derive_seed;
use crate::{Error, Result};

/// Environment seed of episode `episode`; identical for every attack and ε.
pub fn env_seed(master: u64, episode: usize) -> u64 {
    derive_seed(master, "env", 0, episode as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    /// Ordered by (benign first, then attack, ε index, episode).
    pub records: Vec<EpisodeRecord>,
    pub summary: MetricsSummary,
}

struct Task {
    attack: Option<usize>,
    eps_index: usize,
    episode: usize,
}

/// Runs the benign baseline and every (attack, ε) point. Episodes run on a
/// pool of `jobs` workers (all cores when `None`); results do not depend on it.
pub fn run_experiment(exp: &Experiment, jobs: Option<usize>) -> Result<ExperimentOutput> {
    if exp.episodes < 1 {
        return Err(Error::Config("episodes must be >= 1".into()));
    }
    let n = exp.env.n_agents;
    let mut tasks: Vec<Task> = (0..exp.episodes)
        .map(|episode| Task {
            attack: None,
            eps_index: 0,
            episode,
        })
        .collect();
    for a in 0..exp.attacks.len() {
        for eps_index in 0..exp.epsilons.len() {
            tasks.extend((0..exp.episodes).map(|episode| Task {
                attack: Some(a),
                eps_index,
                episode,
            }));
        }
    }
    let run = |t: &Task| -> Result<EpisodeRecord> {
        let (attack, label, epsilon, m) = match t.attack {
            None => (&Attack::None, BENIGN.to_string(), 0.0, 0),
            Some(a) => {
                let attack = &exp.attacks[a];
                (
                    attack,
                    attack.label(n),
                    exp.epsilons[t.eps_index],
                    attack.victim_count(n),
                )
            }
        };
        let seed = env_seed(exp.master_seed, t.episode);
        let attack_seed = derive_seed(
            exp.master_seed,
            &label,
            t.eps_index as u64,
            t.episode as u64,
        );
        let out = run_episode(exp, attack, epsilon, seed, attack_seed, false)?;
        Ok(EpisodeRecord {
            attack: label,
            epsilon,
            eps_index: t.eps_index,
            m,
            episode: t.episode,
            seed,
            attack_seed,
            master_seed: exp.master_seed,
            total_return: out.total_return,
            length: out.length,
            perturbation_norms: out.perturbation_norms,
            victims: out.victims,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    log::info!(
        "running {} episodes on {} worker(s)",
        tasks.len(),
        pool.current_num_threads()
    );
    let records = pool.install(|| tasks.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    let summary = summarize(&records, &exp.env.label())?;
    Ok(ExperimentOutput { records, summary })
}
