//! Pipeline driver: collect benign observations, train the alignment network,
//! clone a neural victim, and run evaluation sweeps and ablations.

pub mod config;
pub mod error;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use misalign::attack::{collect_observations, train_align_model, DatasetMeta, ObservationDataset};
use misalign::eval::{
    aggregate_csv, mean_of_percentages, run_experiment, summarize, write_report, AttackSpec,
    EpisodeRecord, ExperimentConfig, MetricsSummary, ReportPaths, CSV_COLUMNS,
};
use misalign::io::{read_jsonl, write_json, write_text};
use misalign::policy::{accuracy, bc_train, collect_expert_pairs, ScriptedPolicy, Victim};

pub use config::{load_config, CliConfigFile, LoadedConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "misalign",
    version,
    about = "Black-box misalignment attacks on cooperative agents"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment JSON file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed of the stage being run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunOpts {
    /// Episodes per (attack, ε) point.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    DataSize,
    K,
    Victims,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::DataSize => "data_size",
            Axis::K => "k",
            Axis::Victims => "victims",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record benign joint observations.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Overrides `collection.T_c`.
        #[arg(long = "t-c")]
        t_c: Option<usize>,
    },
    /// Fit the alignment network on a collected dataset.
    TrainAlign {
        #[command(flatten)]
        common: Common,
        /// Dataset file (default: `<output_dir>/dataset.jsonl`).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Behaviour-clone the scripted team into a neural victim policy.
    ClonePolicy {
        #[command(flatten)]
        common: Common,
    },
    /// Run the configured attack sweep and write reports.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Sweep one ablation axis, one report per point plus a combined CSV.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunOpts,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated points replacing the axis defaults.
        #[arg(long, value_delimiter = ',')]
        points: Option<Vec<usize>>,
    },
    /// Re-render reports from raw episode records.
    Report {
        /// Config whose `output_dir` holds `records.jsonl`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Records files; several files also produce a cross-task aggregate.
        #[arg(long)]
        records: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Default ablation points.
pub fn default_points(axis: Axis, n_agents: usize) -> Vec<usize> {
    match axis {
        Axis::DataSize => vec![1000, 5000, 10000, 50000],
        Axis::K => vec![1, 5, 10],
        Axis::Victims => (1..=n_agents).rev().collect(),
    }
}

fn load(common: &Common) -> Result<LoadedConfig, CliError> {
    let mut cfg = load_config(&common.config)?;
    if let Some(out) = &common.out {
        cfg.file.output_dir = out.clone();
    }
    Ok(cfg)
}

/// Executes one subcommand and returns its stdout summary.
pub fn run(cli: Cli) -> Result<Value, CliError> {
    match cli.command {
        Command::Collect { common, t_c } => {
            let cfg = load(&common)?;
            collect(&cfg, t_c, common.seed, &cfg.dataset_path())
        }
        Command::TrainAlign { common, dataset } => {
            let cfg = load(&common)?;
            let dataset = dataset.unwrap_or_else(|| cfg.dataset_path());
            train(&cfg, &dataset, common.seed, &cfg.model_path())
        }
        Command::ClonePolicy { common } => clone_policy(&load(&common)?, common.seed),
        Command::Evaluate { common, run } => {
            let cfg = load(&common)?;
            let mut exp = cfg.experiment();
            apply_run_opts(&mut exp, &run, common.seed);
            let dir = cfg.output_dir().to_path_buf();
            let (summary, paths) = evaluate(&exp, run.jobs, &dir)?;
            Ok(json!({
                "report": paths.csv,
                "plot_data": paths.plot_data,
                "rows": summary.rows.len(),
            }))
        }
        Command::Ablate {
            common,
            run,
            axis,
            points,
        } => {
            let cfg = load(&common)?;
            let points = points.unwrap_or_else(|| default_points(axis, cfg.file.env.n_agents));
            ablate(&cfg, axis, &points, &run, common.seed)
        }
        Command::Report {
            config,
            records,
            out,
        } => report(config.as_deref(), records, out),
    }
}

fn apply_run_opts(exp: &mut ExperimentConfig, run: &RunOpts, seed: Option<u64>) {
    if let Some(e) = run.episodes {
        exp.episodes = e;
    }
    if let Some(s) = seed {
        exp.master_seed = s;
    }
}

pub fn collect(
    cfg: &LoadedConfig,
    t_c: Option<usize>,
    seed: Option<u64>,
    path: &Path,
) -> Result<Value, CliError> {
    let env = &cfg.file.env;
    let t_c = t_c.unwrap_or(cfg.file.collection.t_c);
    let seed = seed.unwrap_or(cfg.file.collection.seed);
    // Observations are always gathered from the unperturbed scripted team.
    let victim = Victim::Scripted(ScriptedPolicy::for_config(env));
    let ds = collect_observations(env, &victim, t_c, seed)?;
    ds.save(path, &DatasetMeta::describe(env, t_c, seed))?;
    log::info!(
        "collected {} joint observations into {}",
        ds.len(),
        path.display()
    );
    Ok(json!({ "dataset": path, "length": ds.len() }))
}

pub fn train(
    cfg: &LoadedConfig,
    dataset: &Path,
    seed: Option<u64>,
    model_path: &Path,
) -> Result<Value, CliError> {
    let env = &cfg.file.env;
    let (ds, meta) = ObservationDataset::load(dataset)?;
    if (ds.n, ds.d) != (env.n_agents, env.obs_dim()) {
        return Err(CliError::new(
            "contract_violation",
            format!(
                "dataset {} has (n, d) = ({}, {}) but the config describes ({}, {})",
                dataset.display(),
                ds.n,
                ds.d,
                env.n_agents,
                env.obs_dim()
            ),
        ));
    }
    if meta.env_config_digest != misalign::attack::config_digest(env) {
        log::warn!(
            "dataset {} was collected under a different environment config",
            dataset.display()
        );
    }
    let mut train_cfg = cfg.file.align_training.to_config();
    if let Some(s) = seed {
        train_cfg.seed = s;
    }
    let model = train_align_model(&ds, &train_cfg)?;
    write_json(model_path, &model)?;
    Ok(json!({ "model": model_path, "final_mse": model.final_loss, "epochs": model.epochs }))
}

pub fn clone_policy(cfg: &LoadedConfig, seed: Option<u64>) -> Result<Value, CliError> {
    let section = &cfg.file.policy_training;
    let mut bc = section.to_config();
    if let Some(s) = seed {
        bc.seed = s;
    }
    let mut pairs = collect_expert_pairs(&cfg.file.env, section.pairs, bc.seed)?;
    let held_out = pairs.split_off(pairs.len() - pairs.len() / 10);
    let (policy, report) = bc_train(&pairs, &bc)?;
    let held_out_accuracy = if held_out.is_empty() {
        None
    } else {
        Some(accuracy(&policy, &held_out)?)
    };
    let path = cfg.policy_path();
    write_json(&path, &policy)?;
    Ok(json!({
        "policy": path,
        "train_accuracy": report.train_accuracy,
        "held_out_accuracy": held_out_accuracy,
    }))
}

pub fn evaluate(
    exp: &ExperimentConfig,
    jobs: Option<usize>,
    dir: &Path,
) -> Result<(MetricsSummary, ReportPaths), CliError> {
    let resolved = exp.resolve()?;
    let out = run_experiment(&resolved, jobs)?;
    let paths = write_report(&out.summary, &out.records, dir)?;
    Ok((out.summary, paths))
}

fn set_model(spec: AttackSpec, path: &Path) -> AttackSpec {
    match spec {
        AttackSpec::Align { m, .. } => AttackSpec::Align {
            model: Some(path.to_path_buf()),
            m,
        },
        AttackSpec::TargetedHadamard { m, .. } => AttackSpec::TargetedHadamard {
            model: Some(path.to_path_buf()),
            m,
        },
        other => other,
    }
}

fn with_victims(spec: &AttackSpec, m: usize) -> Option<AttackSpec> {
    match spec {
        AttackSpec::Align { model, .. } => Some(AttackSpec::Align {
            model: model.clone(),
            m: Some(m),
        }),
        AttackSpec::Hadamard { .. } => Some(AttackSpec::Hadamard { m: Some(m) }),
        AttackSpec::TargetedHadamard { model, .. } => Some(AttackSpec::TargetedHadamard {
            model: model.clone(),
            m: Some(m),
        }),
        _ => None,
    }
}

/// Attacks of `exp` matching `keep`, or a plain Align attack when none match.
fn attacks_for_axis(
    exp: &ExperimentConfig,
    model: &Path,
    keep: impl Fn(&AttackSpec) -> bool,
) -> Vec<AttackSpec> {
    let picked: Vec<AttackSpec> = exp.attacks.iter().filter(|a| keep(a)).cloned().collect();
    if picked.is_empty() {
        vec![AttackSpec::Align {
            model: Some(model.to_path_buf()),
            m: None,
        }]
    } else {
        picked
    }
}

pub fn ablate(
    cfg: &LoadedConfig,
    axis: Axis,
    points: &[usize],
    run: &RunOpts,
    seed: Option<u64>,
) -> Result<Value, CliError> {
    if points.is_empty() {
        return Err(CliError::schema("ablation needs at least one point"));
    }
    let root = cfg.output_dir().join(format!("ablate-{}", axis.name()));
    let mut base = cfg.experiment();
    apply_run_opts(&mut base, run, seed);
    let default_model = cfg.model_path();
    let n = cfg.file.env.n_agents;
    let mut combined = Vec::new();
    for &point in points {
        let dir = root.join(format!("{}{point}", axis.name()));
        let mut exp = base.clone();
        match axis {
            Axis::DataSize => {
                let dataset = dir.join(config::DATASET_FILE);
                let model = dir.join(config::MODEL_FILE);
                collect(cfg, Some(point), None, &dataset)?;
                train(cfg, &dataset, None, &model)?;
                exp.attacks = attacks_for_axis(&base, &model, AttackSpec::needs_model)
                    .into_iter()
                    .map(|a| set_model(a, &model))
                    .collect();
            }
            Axis::K => {
                if point == 0 {
                    return Err(CliError::schema("K must be >= 1"));
                }
                exp.k = point;
                exp.attacks = attacks_for_axis(&base, &default_model, |a| {
                    matches!(a, AttackSpec::Align { .. } | AttackSpec::Whitebox)
                });
            }
            Axis::Victims => {
                if point == 0 || point > n {
                    return Err(CliError::schema(format!("m = {point} outside 1..={n}")));
                }
                exp.attacks =
                    attacks_for_axis(&base, &default_model, |a| with_victims(a, 1).is_some())
                        .iter()
                        .filter_map(|a| with_victims(a, point))
                        .collect();
            }
        }
        log::info!("ablation {} = {point}", axis.name());
        let (summary, _) = evaluate(&exp, run.jobs, &dir)?;
        combined.push((point, summary));
    }
    let mut csv = format!("axis,point,{}\n", CSV_COLUMNS.join(","));
    for (point, summary) in &combined {
        let body = misalign::eval::report_csv(summary)?;
        for line in body.lines().skip(1) {
            csv.push_str(&format!("{},{point},{line}\n", axis.name()));
        }
    }
    let path = root.join("combined.csv");
    write_text(&path, &csv)?;
    Ok(json!({ "combined": path, "points": points }))
}

pub fn report(
    config: Option<&Path>,
    mut records: Vec<PathBuf>,
    out: Option<PathBuf>,
) -> Result<Value, CliError> {
    let cfg = config.map(load_config).transpose()?;
    if records.is_empty() {
        match &cfg {
            Some(c) => records.push(c.output_dir().join("records.jsonl")),
            None => {
                return Err(CliError::new(
                    "usage",
                    "give --config or at least one --records file",
                ))
            }
        }
    }
    if records.len() > 1 && out.is_none() {
        return Err(CliError::new(
            "usage",
            "several --records files need --out for the aggregate",
        ));
    }
    let mut summaries = Vec::new();
    let mut written = Vec::new();
    for path in &records {
        let recs: Vec<EpisodeRecord> = read_jsonl(path)?;
        let parent = path.parent().unwrap_or(Path::new("."));
        let task = match (&cfg, records.len()) {
            (Some(c), 1) => c.file.env.label(),
            _ => parent
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        let summary = summarize(&recs, &task)?;
        let dir = match (&out, records.len()) {
            (Some(o), 1) => o.clone(),
            (Some(o), _) => o.join(&task),
            (None, _) => parent.to_path_buf(),
        };
        write_report(&summary, &recs, &dir)?;
        written.push(dir.join("report.csv"));
        summaries.push(summary);
    }
    let mut result = json!({ "reports": written });
    if summaries.len() > 1 {
        let path = out.expect("checked above").join("aggregate.csv");
        write_text(&path, &aggregate_csv(&mean_of_percentages(&summaries))?)?;
        result["aggregate"] = json!(path);
    }
    Ok(result)
}
