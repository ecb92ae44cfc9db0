//! Config-file loading and flag merging. Precedence is flags over
//! config file over built-in defaults, field by field.

use crate::Failure;
use dapper::data::{Dataset, SplitSpec, SynthSpec};
use dapper::pipeline::{ExperimentConfig, Learner, Treatment};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<DatasetSection>,
    pub experiment: Option<ExperimentSection>,
    pub split: Option<SplitSection>,
}

/// Either a CSV path or a synthetic generator spec (`rows` present).
#[derive(Debug, Default, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: Option<PathBuf>,
    pub label_column: Option<String>,
    pub positive_label: Option<String>,
    pub rows: Option<usize>,
    pub features: Option<usize>,
    pub minority_frac: Option<f64>,
    pub separation: Option<f64>,
    pub seed: Option<u64>,
    /// Feature multiplier applied after generation.
    pub scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub label_rate: Option<f64>,
    pub rates: Option<Vec<f64>>,
    pub learner: Option<String>,
    pub treatment: Option<String>,
    pub imbalance_threshold: Option<f64>,
    pub n_trials: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train_frac: Option<f64>,
    pub val_frac: Option<f64>,
    pub test_frac: Option<f64>,
    pub seed: Option<u64>,
}

pub fn load_file(path: Option<&Path>) -> Result<FileConfig, Failure> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| Failure::config(format!("malformed config {}: {e}", path.display())))
}

/// Shared experiment flags; `None` means "fall through to the config
/// file, then to the default".
#[derive(Debug, Default, clap::Args)]
pub struct ExperimentFlags {
    /// TOML config file; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset CSV (one column per feature plus a label column).
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Label column name [default: label]
    #[arg(long, value_name = "NAME")]
    pub label_column: Option<String>,
    /// Label value treated as the positive class [default: 1]
    #[arg(long, value_name = "VALUE")]
    pub positive_label: Option<String>,
    /// Fraction of training labels kept visible, in (0, 1]
    #[arg(long, value_name = "RATE")]
    pub label_rate: Option<f64>,
    /// Pseudo-labeler: propagation | spreading [default: spreading]
    #[arg(long, value_name = "NAME")]
    pub learner: Option<String>,
    /// Treatment: default | optimized_ssl_only | dapper [default: dapper]
    #[arg(long, value_name = "NAME")]
    pub treatment: Option<String>,
    /// Minority fraction below which rebalancing fires, in (0, 1)
    #[arg(long, value_name = "T")]
    pub threshold: Option<f64>,
    /// Optimizer budget for tuned treatments
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
    /// Master seed for masking, tuning, and model fitting
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
    /// Training fraction of the stratified split [default: 0.64]
    #[arg(long, value_name = "FRAC")]
    pub train_frac: Option<f64>,
    /// Validation fraction [default: 0.16]
    #[arg(long, value_name = "FRAC")]
    pub val_frac: Option<f64>,
    /// Test fraction [default: 0.20]
    #[arg(long, value_name = "FRAC")]
    pub test_frac: Option<f64>,
    /// Split shuffle seed [default: 0]
    #[arg(long, value_name = "SEED")]
    pub split_seed: Option<u64>,
}

/// Fully merged invocation: the data, the cell config, and a
/// serializable snapshot of where everything came from.
pub struct Resolved {
    pub dataset: Dataset,
    pub cfg: ExperimentConfig,
    pub rates: Option<Vec<f64>>,
    pub snapshot: serde_json::Value,
}

pub fn resolve(flags: &ExperimentFlags) -> Result<Resolved, Failure> {
    let file = load_file(flags.config.as_deref())?;
    let dataset_section = file.dataset.clone().unwrap_or_default();
    let experiment = file.experiment.unwrap_or_default();
    let split_section = file.split.unwrap_or_default();

    let defaults = SplitSpec::default();
    let split = SplitSpec {
        train_frac: flags.train_frac.or(split_section.train_frac).unwrap_or(defaults.train_frac),
        val_frac: flags.val_frac.or(split_section.val_frac).unwrap_or(defaults.val_frac),
        test_frac: flags.test_frac.or(split_section.test_frac).unwrap_or(defaults.test_frac),
        seed: flags.split_seed.or(split_section.seed).unwrap_or(defaults.seed),
    };

    let learner: Learner = flags
        .learner
        .as_deref()
        .or(experiment.learner.as_deref())
        .map(|s| s.parse().map_err(Failure::config))
        .transpose()?
        .unwrap_or(Learner::Spreading);
    let treatment: Treatment = flags
        .treatment
        .as_deref()
        .or(experiment.treatment.as_deref())
        .map(|s| s.parse().map_err(Failure::config))
        .transpose()?
        .unwrap_or(Treatment::Dapper);

    let cfg = ExperimentConfig {
        split,
        label_rate: flags.label_rate.or(experiment.label_rate).unwrap_or(0.5),
        learner,
        treatment,
        imbalance_threshold: flags.threshold.or(experiment.imbalance_threshold).unwrap_or(0.30),
        n_trials: flags.trials.or(experiment.n_trials).unwrap_or(100),
        seed: flags.seed.or(experiment.seed).unwrap_or(0),
    };

    let (dataset, source) = load_dataset(flags, &dataset_section)?;
    let snapshot = serde_json::json!({
        "dataset": source,
        "experiment": cfg,
        "rates": experiment.rates,
    });
    Ok(Resolved { dataset, cfg, rates: experiment.rates, snapshot })
}

fn load_dataset(
    flags: &ExperimentFlags,
    section: &DatasetSection,
) -> Result<(Dataset, serde_json::Value), Failure> {
    let label_column =
        flags.label_column.as_deref().or(section.label_column.as_deref()).unwrap_or("label");
    let positive_label =
        flags.positive_label.as_deref().or(section.positive_label.as_deref()).unwrap_or("1");

    if let Some(path) = flags.data.as_deref().or(section.path.as_deref()) {
        let ds = Dataset::load_csv(path, label_column, positive_label)
            .map_err(|e| Failure::runtime(format!("loading {}: {e}", path.display())))?;
        let source = serde_json::json!({
            "path": path.display().to_string(),
            "label_column": label_column,
            "positive_label": positive_label,
        });
        return Ok((ds, source));
    }
    if let Some(rows) = section.rows {
        let spec = SynthSpec {
            rows,
            features: section.features.unwrap_or(12),
            minority_frac: section.minority_frac.unwrap_or(0.25),
            separation: section.separation.unwrap_or(4.0),
            seed: section.seed.unwrap_or(0),
        };
        let ds = synthetic_scaled(&spec, section.scale.unwrap_or(1.0)).map_err(Failure::config)?;
        let source = serde_json::json!({
            "synthetic": spec,
            "scale": section.scale.unwrap_or(1.0),
        });
        return Ok((ds, source));
    }
    Err(Failure::config(
        "no dataset source: pass --data FILE or a [dataset] config section".to_string(),
    ))
}

pub fn synthetic_scaled(spec: &SynthSpec, scale: f64) -> Result<Dataset, String> {
    let ds = Dataset::synthetic(spec).map_err(|e| e.to_string())?;
    if scale == 1.0 {
        return Ok(ds);
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(format!("scale {scale} must be a positive finite number"));
    }
    Dataset::new(ds.features() * scale, ds.labels().to_vec()).map_err(|e| e.to_string())
}

/// Parses `start:stop:step` (inclusive, step sign must point at stop)
/// or a comma-separated list.
pub fn parse_rates(text: &str) -> Result<Vec<f64>, Failure> {
    let bad = |msg: String| Failure::config(format!("--rates {text:?}: {msg}"));
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:step".to_string()));
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(e.to_string()))?;
        let (start, stop, step) = (nums[0], nums[1], nums[2]);
        if step == 0.0 || !step.is_finite() {
            return Err(bad("step must be nonzero".to_string()));
        }
        if (stop - start) * step < 0.0 {
            return Err(bad("step points away from stop".to_string()));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        let rates = (0..count).map(|i| ((start + step * i as f64) * 1e9).round() / 1e9).collect();
        return Ok(rates);
    }
    let rates: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| bad(e.to_string()))?;
    if rates.is_empty() {
        return Err(bad("no rates given".to_string()));
    }
    Ok(rates)
}

/// Expands `--treatments`/`--learners` into the run list; `all` and
/// `both` are the full cross product.
pub fn parse_combos(
    treatments: &str,
    learners: &str,
) -> Result<Vec<(Treatment, Learner)>, Failure> {
    let treatment_list: Vec<Treatment> = if treatments.eq_ignore_ascii_case("all") {
        Treatment::all().to_vec()
    } else {
        treatments
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(Failure::config)?
    };
    let learner_list: Vec<Learner> = if learners.eq_ignore_ascii_case("both") {
        Learner::all().to_vec()
    } else {
        learners
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(Failure::config)?
    };
    let mut combos = Vec::new();
    for &t in &treatment_list {
        for &l in &learner_list {
            combos.push((t, l));
        }
    }
    if combos.is_empty() {
        return Err(Failure::config("no treatment/learner combinations".to_string()));
    }
    Ok(combos)
}
