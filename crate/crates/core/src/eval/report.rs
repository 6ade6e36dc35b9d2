use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::episode::EpisodeRecord;
use super::stats::{bootstrap_ci, iqm, mean, percent_change, DEFAULT_LEVEL, DEFAULT_RESAMPLES};
use crate::io::{write_json, write_jsonl, write_text};
use crate::seed::derive_seed;
use crate::{Error, Result};

pub const BENIGN: &str = "benign";
pub const BEST_RANDOM: &str = "best_random";

pub const CSV_COLUMNS: [&str; 11] = [
    "attack",
    "epsilon",
    "m",
    "iqm",
    "ci_low",
    "ci_high",
    "drop_pct",
    "mean_len",
    "len_increase_pct",
    "episodes",
    "seed",
];

/// Aggregates for one (attack, ε) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub attack: String,
    pub epsilon: f64,
    pub m: usize,
    pub iqm: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Return change relative to the benign IQM, in percent (negative = drop).
    pub drop_pct: f64,
    pub mean_len: f64,
    pub len_increase_pct: f64,
    pub episodes: usize,
    /// Master seed of the experiment.
    pub seed: u64,
    /// For the synthetic best-random row: the noise kind it was taken from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_of: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub task: String,
    pub master_seed: u64,
    pub rows: Vec<MetricsRow>,
}

impl MetricsSummary {
    pub fn row(&self, attack: &str, epsilon: f64) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.attack == attack && r.epsilon == epsilon)
    }

    pub fn benign(&self) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.attack == BENIGN)
    }
}

pub fn is_random_label(label: &str) -> bool {
    label.starts_with("random_") || label == "ou"
}

/// Folds records (in their given order) into per-point metrics, adding a
/// best-random row per ε when two or more random baselines were run.
pub fn summarize(records: &[EpisodeRecord], task: &str) -> Result<MetricsSummary> {
    let mut groups: Vec<(&str, usize, Vec<&EpisodeRecord>)> = Vec::new();
    for r in records {
        match groups
            .iter_mut()
            .find(|(a, e, _)| *a == r.attack && *e == r.eps_index)
        {
            Some((_, _, g)) => g.push(r),
            None => groups.push((&r.attack, r.eps_index, vec![r])),
        }
    }
    let benign = groups
        .iter()
        .find(|(a, _, _)| *a == BENIGN)
        .ok_or_else(|| Error::contract("records contain no benign episodes"))?;
    let master_seed = benign.2[0].master_seed;
    let returns = |g: &[&EpisodeRecord]| g.iter().map(|r| r.total_return).collect::<Vec<_>>();
    let mean_len =
        |g: &[&EpisodeRecord]| mean(&g.iter().map(|r| r.length as f64).collect::<Vec<_>>());
    let benign_iqm = iqm(&returns(&benign.2))?;
    let benign_len = mean_len(&benign.2)?;

    let mut rows = Vec::with_capacity(groups.len());
    for (attack, eps_index, g) in &groups {
        let values = returns(g);
        let point = iqm(&values)?;
        let ci_seed = derive_seed(master_seed, &format!("ci/{attack}"), *eps_index as u64, 0);
        let (ci_low, ci_high) = bootstrap_ci(&values, DEFAULT_LEVEL, DEFAULT_RESAMPLES, ci_seed)?;
        let len = mean_len(g)?;
        rows.push(MetricsRow {
            attack: attack.to_string(),
            epsilon: g[0].epsilon,
            m: g[0].m,
            iqm: point,
            ci_low,
            ci_high,
            drop_pct: percent_change(point, benign_iqm),
            mean_len: len,
            len_increase_pct: percent_change(len, benign_len),
            episodes: g.len(),
            seed: master_seed,
            best_of: None,
        });
    }

    let random_kinds: BTreeSet<&str> = rows
        .iter()
        .map(|r| r.attack.as_str())
        .filter(|a| is_random_label(a))
        .collect();
    if random_kinds.len() >= 2 {
        let mut eps: Vec<f64> = rows
            .iter()
            .filter(|r| is_random_label(&r.attack))
            .map(|r| r.epsilon)
            .collect();
        eps.sort_by(f64::total_cmp);
        eps.dedup();
        let mut best_rows = Vec::new();
        for e in eps {
            let best = rows
                .iter()
                .filter(|r| is_random_label(&r.attack) && r.epsilon == e)
                .reduce(|best, r| if r.iqm < best.iqm { r } else { best })
                .expect("at least one random row");
            best_rows.push(MetricsRow {
                attack: BEST_RANDOM.into(),
                best_of: Some(best.attack.clone()),
                ..best.clone()
            });
        }
        rows.extend(best_rows);
    }
    Ok(MetricsSummary {
        task: task.to_string(),
        master_seed,
        rows,
    })
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::contract(format!("csv encoding: {e}"));
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(r).map_err(to_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::contract(format!("csv encoding: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// The fixed-column report table.
pub fn report_csv(summary: &MetricsSummary) -> Result<String> {
    let header: Vec<String> = CSV_COLUMNS.iter().map(|c| c.to_string()).collect();
    let rows: Vec<Vec<String>> = summary
        .rows
        .iter()
        .map(|r| {
            vec![
                r.attack.clone(),
                num(r.epsilon),
                r.m.to_string(),
                num(r.iqm),
                num(r.ci_low),
                num(r.ci_high),
                num(r.drop_pct),
                num(r.mean_len),
                num(r.len_increase_pct),
                r.episodes.to_string(),
                r.seed.to_string(),
            ]
        })
        .collect();
    csv_bytes(&header, &rows)
}

/// Wide table for plotting: one line per ε (benign values at ε = 0), and IQM
/// plus CI columns for every attack.
pub fn plot_data_csv(summary: &MetricsSummary) -> Result<String> {
    let mut attacks: Vec<&str> = Vec::new();
    for r in &summary.rows {
        if r.attack != BENIGN && !attacks.contains(&r.attack.as_str()) {
            attacks.push(&r.attack);
        }
    }
    let mut eps: Vec<f64> = summary
        .rows
        .iter()
        .filter(|r| r.attack != BENIGN)
        .map(|r| r.epsilon)
        .collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    let mut header = vec!["epsilon".to_string()];
    for a in &attacks {
        header.extend([
            format!("{a}_iqm"),
            format!("{a}_ci_low"),
            format!("{a}_ci_high"),
        ]);
    }
    let mut rows = Vec::new();
    if let Some(b) = summary.benign() {
        let mut line = vec![num(0.0)];
        for _ in &attacks {
            line.extend([num(b.iqm), num(b.ci_low), num(b.ci_high)]);
        }
        rows.push(line);
    }
    for e in eps {
        let mut line = vec![num(e)];
        for a in &attacks {
            match summary.row(a, e) {
                Some(r) => line.extend([num(r.iqm), num(r.ci_low), num(r.ci_high)]),
                None => line.extend([String::new(), String::new(), String::new()]),
            }
        }
        rows.push(line);
    }
    csv_bytes(&header, &rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub records: PathBuf,
    pub plot_data: PathBuf,
}

impl ReportPaths {
    pub fn in_dir(dir: &Path) -> Self {
        ReportPaths {
            csv: dir.join("report.csv"),
            json: dir.join("report.json"),
            records: dir.join("records.jsonl"),
            plot_data: dir.join("plot_data.csv"),
        }
    }
}

/// Writes `report.csv`, `report.json`, `records.jsonl` and `plot_data.csv`.
pub fn write_report(
    summary: &MetricsSummary,
    records: &[EpisodeRecord],
    dir: &Path,
) -> Result<ReportPaths> {
    let paths = ReportPaths::in_dir(dir);
    write_text(&paths.csv, &report_csv(summary)?)?;
    write_json(&paths.json, summary)?;
    write_jsonl(&paths.records, records)?;
    write_text(&paths.plot_data, &plot_data_csv(summary)?)?;
    Ok(paths)
}

/// Cross-task aggregate: the plain mean of per-task percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub attack: String,
    pub epsilon: f64,
    pub m: usize,
    pub mean_drop_pct: f64,
    pub mean_len_increase_pct: f64,
    pub tasks: usize,
}

pub const AGGREGATION_LABEL: &str = "mean_of_task_percentages";

pub fn mean_of_percentages(summaries: &[MetricsSummary]) -> Vec<AggregateRow> {
    let mut acc: Vec<(AggregateRow, f64, f64)> = Vec::new();
    for s in summaries {
        for r in &s.rows {
            let slot = acc
                .iter_mut()
                .find(|(a, _, _)| a.attack == r.attack && a.epsilon == r.epsilon && a.m == r.m);
            match slot {
                Some((a, drop, len)) => {
                    a.tasks += 1;
                    *drop += r.drop_pct;
                    *len += r.len_increase_pct;
                }
                None => acc.push((
                    AggregateRow {
                        attack: r.attack.clone(),
                        epsilon: r.epsilon,
                        m: r.m,
                        mean_drop_pct: 0.0,
                        mean_len_increase_pct: 0.0,
                        tasks: 1,
                    },
                    r.drop_pct,
                    r.len_increase_pct,
                )),
            }
        }
    }
    acc.into_iter()
        .map(|(mut a, drop, len)| {
            a.mean_drop_pct = drop / a.tasks as f64;
            a.mean_len_increase_pct = len / a.tasks as f64;
            a
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> Result<String> {
    let header: Vec<String> = [
        "aggregation",
        "attack",
        "epsilon",
        "m",
        "mean_drop_pct",
        "mean_len_increase_pct",
        "tasks",
    ]
    .iter()
    .map(|c| c.to_string())
    .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                AGGREGATION_LABEL.to_string(),
                r.attack.clone(),
                num(r.epsilon),
                r.m.to_string(),
                num(r.mean_drop_pct),
                num(r.mean_len_increase_pct),
                r.tasks.to_string(),
            ]
        })
        .collect();
    csv_bytes(&header, &body)
}
