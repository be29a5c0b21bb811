use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{success_curve, summarize, ImageRecord, MetricsSummary};
use super::targets::{pick_target, GoalPolicy};
use crate::nn::Model;
use crate::oracle::{Expectation, LabelMode, Oracle, OracleError};
use crate::search::{
    bases_attack, hardlabel_attack, hardlabel_queryset, AttackError, AttackOutcome, SearchConfig,
};
use crate::zoo::{load_dataset, LabeledDataset, Zoo, ZooError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Zoo(#[from] ZooError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// True when the failure came from talking to a remote victim.
    pub fn is_transport(&self) -> bool {
        match self {
            HarnessError::Oracle(e) => is_transport(e),
            HarnessError::Attack(AttackError::Oracle { source, .. }) => is_transport(source),
            _ => false,
        }
    }
}

fn is_transport(e: &OracleError) -> bool {
    matches!(
        e,
        OracleError::Transport(_)
            | OracleError::Protocol(_)
            | OracleError::Rejected { .. }
            | OracleError::BudgetExhausted
    )
}

/// Where the victim lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum VictimSpec {
    /// A zoo member queried in-process.
    Model { id: String, mode: LabelMode },
    /// A served model.
    Remote { url: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Test images (`BDS1` file).
    pub dataset: PathBuf,
    pub manifest: PathBuf,
    pub surrogates: Vec<String>,
    pub victim: VictimSpec,
    /// Permits the victim to also appear among the surrogates.
    #[serde(default)]
    pub allow_victim_in_surrogates: bool,
    /// Whitebox stand-in victim used to build query sets for hard-label victims.
    #[serde(default)]
    pub surrogate_victim: Option<String>,
    pub goal: GoalPolicy,
    pub search: SearchConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Attack at most this many images, taken from the front of the dataset.
    #[serde(default)]
    pub max_images: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

/// Everything an experiment needs, already loaded.
pub struct Prepared {
    pub data: LabeledDataset,
    pub surrogates: Vec<Model>,
    pub surrogate_victim: Option<Model>,
    victim: PreparedVictim,
    mode: LabelMode,
}

enum PreparedVictim {
    Local(Model, LabelMode),
    Remote(String),
}

impl Prepared {
    fn oracle(&self) -> Result<Oracle, OracleError> {
        match &self.victim {
            PreparedVictim::Local(m, mode) => Ok(Oracle::local(m.clone(), *mode)),
            PreparedVictim::Remote(url) => Oracle::connect(url, &Expectation::default()),
        }
    }
}

/// Loads and cross-checks everything named by the config. No attack runs
/// until this succeeds.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    cfg.search
        .validate()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    if cfg.surrogates.is_empty() {
        return Err(HarnessError::Config("no surrogates listed".into()));
    }
    let zoo = Zoo::load(&cfg.manifest)?;
    for id in &cfg.surrogates {
        if zoo.get(id).is_none() {
            return Err(HarnessError::Config(format!(
                "surrogate {id:?} is not in the manifest"
            )));
        }
    }
    let surrogates = zoo.select(&cfg.surrogates)?;
    let data = load_dataset(&cfg.dataset)?;
    let victim = match &cfg.victim {
        VictimSpec::Model { id, mode } => {
            let m = zoo.get(id).ok_or_else(|| {
                HarnessError::Config(format!("victim {id:?} is not in the manifest"))
            })?;
            if !cfg.allow_victim_in_surrogates && cfg.surrogates.contains(id) {
                return Err(HarnessError::Config(format!(
                    "victim {id:?} is also a surrogate"
                )));
            }
            PreparedVictim::Local(m.clone(), *mode)
        }
        VictimSpec::Remote { url } => PreparedVictim::Remote(url.clone()),
    };
    let surrogate_victim = match &cfg.surrogate_victim {
        Some(id) => Some(zoo.get(id).cloned().ok_or_else(|| {
            HarnessError::Config(format!("surrogate victim {id:?} is not in the manifest"))
        })?),
        None => None,
    };
    let mut prepared = Prepared {
        data,
        surrogates,
        surrogate_victim,
        victim,
        mode: LabelMode::Soft,
    };
    let oracle = prepared.oracle()?;
    let meta = oracle.meta().clone();
    prepared.mode = meta.mode;
    let input_shape = prepared.surrogates[0].input_shape().to_vec();
    if prepared
        .surrogates
        .iter()
        .any(|m| m.input_shape() != input_shape.as_slice())
        || meta.input_shape != input_shape
    {
        return Err(HarnessError::Config(
            "surrogates and victim disagree on input shape".into(),
        ));
    }
    if let Some(first) = prepared.data.images.first() {
        if first.shape() != input_shape.as_slice() {
            return Err(HarnessError::Config(format!(
                "dataset images are {:?}, models expect {input_shape:?}",
                first.shape()
            )));
        }
    }
    if meta.num_classes != prepared.data.num_classes
        || prepared
            .surrogates
            .iter()
            .any(|m| m.num_classes() != meta.num_classes)
    {
        return Err(HarnessError::Config(
            "class counts differ between victim, surrogates and dataset".into(),
        ));
    }
    if let GoalPolicy::Provided { target } = cfg.goal {
        if target >= meta.num_classes {
            return Err(HarnessError::Config(format!(
                "target {target} out of range"
            )));
        }
    }
    if meta.mode == LabelMode::Hard {
        if cfg.goal.needs_logits() {
            return Err(HarnessError::Config(
                "easiest/hardest targets need logits but the victim is hard-label".into(),
            ));
        }
        if prepared.surrogate_victim.is_none() {
            return Err(HarnessError::Config(
                "a hard-label victim needs `surrogate_victim`".into(),
            ));
        }
    }
    Ok(prepared)
}

/// One image's attack, with the outcome kept for logging.
#[derive(Debug, Clone)]
pub struct ImageRun {
    pub record: ImageRecord,
    pub outcome: AttackOutcome,
}

/// Attacks one image. Returns `None` for images the victim already gets
/// wrong or that the goal policy skips. The clean probe query is not
/// charged to the attack.
pub fn attack_image(
    prepared: &Prepared,
    cfg: &ExperimentConfig,
    image_index: usize,
) -> Result<Option<ImageRun>, HarnessError> {
    let x = &prepared.data.images[image_index];
    let y = prepared.data.labels[image_index];
    let mut oracle = prepared.oracle()?;
    let clean = oracle.query(x, None)?;
    if clean.label() != y {
        return Ok(None);
    }
    let Some(goal) = pick_target(
        clean.logits(),
        prepared.data.num_classes,
        y,
        cfg.goal,
        cfg.seed,
        image_index,
    ) else {
        return Ok(None);
    };
    let outcome = match prepared.mode {
        LabelMode::Soft => bases_attack(x, &goal, &mut oracle, &prepared.surrogates, &cfg.search)?,
        LabelMode::Hard => {
            let stand_in = prepared
                .surrogate_victim
                .as_ref()
                .expect("checked in prepare");
            let set = hardlabel_queryset(x, &goal, stand_in, &prepared.surrogates, &cfg.search)?;
            hardlabel_attack(x, &goal, &set, &mut oracle)?
        }
    };
    Ok(Some(ImageRun {
        record: ImageRecord {
            image_index,
            true_label: y,
            target: (goal.mode == crate::loss::GoalMode::Targeted).then_some(goal.label),
            success: outcome.success,
            queries: outcome.queries,
        },
        outcome,
    }))
}

/// Attacks every eligible image and writes, under `output_dir`:
/// `logs/image_NNNN.csv` per attacked image, `success_curve.csv` and
/// `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsSummary, HarnessError> {
    let prepared = prepare(cfg)?;
    let runs = run_prepared(&prepared, cfg)?;
    write_artifacts(&cfg.output_dir, &runs, cfg.search.max_queries)
}

/// Runs the attacks without touching the disk. Images are processed in
/// parallel; results come back in image order.
pub fn run_prepared(
    prepared: &Prepared,
    cfg: &ExperimentConfig,
) -> Result<Vec<ImageRun>, HarnessError> {
    let n = cfg
        .max_images
        .unwrap_or(usize::MAX)
        .min(prepared.data.len());
    let results: Vec<Result<Option<ImageRun>, HarnessError>> = (0..n)
        .into_par_iter()
        .map(|i| attack_image(prepared, cfg, i))
        .collect();
    let mut runs = Vec::new();
    for r in results {
        if let Some(run) = r? {
            runs.push(run);
        }
    }
    Ok(runs)
}

pub fn write_artifacts(
    dir: &Path,
    runs: &[ImageRun],
    max_queries: usize,
) -> Result<MetricsSummary, HarnessError> {
    let logs = dir.join("logs");
    fs::create_dir_all(&logs)?;
    for run in runs {
        let file = fs::File::create(logs.join(format!("image_{:04}.csv", run.record.image_index)))?;
        run.outcome.write_csv(std::io::BufWriter::new(file))?;
    }
    let records: Vec<ImageRecord> = runs.iter().map(|r| r.record.clone()).collect();
    let mut w = csv::Writer::from_path(dir.join("success_curve.csv"))?;
    w.write_record(["q", "success_fraction"])?;
    for (q, f) in success_curve(&records, max_queries).iter().enumerate() {
        w.write_record([(q + 1).to_string(), format!("{f}")])?;
    }
    w.flush()?;
    let summary = summarize(&records, max_queries);
    write_summary(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn write_summary(path: &Path, summary: &MetricsSummary) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Rebuilds records from a directory of per-image query logs written by
/// [`run_experiment`]. Labels are not stored in the logs and come back as 0.
pub fn records_from_logs(dir: &Path) -> Result<Vec<ImageRecord>, HarnessError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut out = Vec::with_capacity(files.len());
    for (n, path) in files.iter().enumerate() {
        let image_index = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.strip_prefix("image_"))
            .and_then(|s| s.parse().ok())
            .unwrap_or(n);
        let mut reader = csv::Reader::from_path(path)?;
        let mut queries = 0;
        let mut success = false;
        for row in reader.records() {
            let row = row?;
            queries += 1;
            if row.get(4) == Some("1") {
                success = true;
            }
        }
        out.push(ImageRecord {
            image_index,
            true_label: 0,
            target: None,
            success,
            queries,
        });
    }
    Ok(out)
}
