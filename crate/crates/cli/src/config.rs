//! Experiment configuration: TOML with `include`, strict keys, stable hash.

use anyhow::{bail, Context, Result};
use faithkit::explain::ImportanceMeasure;
use faithkit::faith::ExplainTarget;
use faithkit::model::{MaskingMode, ValidationMode};
use faithkit::selfcheck::{GenerationParams, VariationKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

const DELTA_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_experiment")]
    pub experiment: String,
    /// Root seed; every stream is derived from it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Replicate seeds. Defaults to `[seed]`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub synthetic: SyntheticSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default = "default_measures", deserialize_with = "strict_measures")]
    pub measures: Vec<ImportanceMeasure>,
    #[serde(default)]
    pub fmm: FmmSection,
    #[serde(default)]
    pub roar: RoarSection,
    #[serde(default)]
    pub masf: MasfSection,
    #[serde(default)]
    pub selfcheck: SelfCheckSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_experiment() -> String {
    "experiment".into()
}

fn default_seed() -> u64 {
    2024
}

fn default_delta() -> f64 {
    0.1
}

fn default_measures() -> Vec<ImportanceMeasure> {
    vec![ImportanceMeasure::Random]
}

/// Rejects keys a measure does not use; serde ignores extra keys on unit
/// variants of tagged enums.
fn strict_measures<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<ImportanceMeasure>, D::Error> {
    use serde::de::Error;
    let raw = Vec::<toml::Table>::deserialize(d)?;
    raw.into_iter()
        .map(|table| {
            let m = ImportanceMeasure::deserialize(toml::Value::Table(table.clone())).map_err(D::Error::custom)?;
            let used = toml::Table::try_from(&m).map_err(D::Error::custom)?;
            match table.keys().find(|k| !used.contains_key(*k)) {
                Some(k) => Err(D::Error::custom(format!("unknown field `{k}` for measure {}", m.name()))),
                None => Ok(m),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub n_train: usize,
    pub n_test: usize,
    pub l2: f64,
    /// Accuracy tolerance of the validation checks.
    pub tolerance: f64,
    /// Features the worst case may remove while staying within tolerance.
    pub worst_case_levels: usize,
    pub time_budget_secs: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            n_train: 4096,
            n_test: 4096,
            l2: 1e-4,
            tolerance: 0.02,
            worst_case_levels: 12,
            time_budget_secs: 60.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSection {
    /// Generated keyword-sentiment toy.
    Keyword { n: usize, seq_len: usize },
    /// Dataset file in the toolkit's JSON-lines format.
    File { path: PathBuf },
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection::Keyword { n: 2000, seq_len: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Attention,
    LinearToken,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { kind: ModelKind::Attention, dim: 8 }
    }
}

/// Training hyper-parameters; the seed comes from the replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub masking: MaskingMode,
    pub validation: ValidationMode,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 0.5,
            epochs: 10,
            batch_size: 16,
            masking: MaskingMode::MaskedFineTuning,
            validation: ValidationMode::Dual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FmmSection {
    pub target: ExplainTarget,
    /// Also train without masking and test its masked inputs.
    pub ablation: bool,
    /// Test observations used for curves; all when absent.
    pub eval_limit: Option<usize>,
    pub alpha: f64,
    pub confidence: f64,
    pub resamples: usize,
}

impl Default for FmmSection {
    fn default() -> Self {
        FmmSection {
            target: ExplainTarget::Gold,
            ablation: true,
            eval_limit: Some(200),
            alpha: 0.05,
            confidence: 0.95,
            resamples: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoarSection {
    pub target: ExplainTarget,
    pub one_shot: bool,
    pub recursive: bool,
}

impl Default for RoarSection {
    fn default() -> Self {
        RoarSection { target: ExplainTarget::Gold, one_shot: true, recursive: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MasfSection {
    pub checkpoint: Option<PathBuf>,
    /// Calibration file read by `masf-score`; defaults to the one written by `masf-calibrate`.
    pub calibration: Option<PathBuf>,
    pub calibration_split: SplitName,
    pub score_split: SplitName,
    /// Random masking ratios applied before scoring.
    pub mask_ratios: Vec<f64>,
    pub alpha: f64,
}

impl Default for MasfSection {
    fn default() -> Self {
        MasfSection {
            checkpoint: None,
            calibration: None,
            calibration_split: SplitName::Validation,
            score_split: SplitName::Test,
            mask_ratios: vec![0.0, 0.5, 1.0],
            alpha: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendSection {
    Mock {
        script: PathBuf,
    },
    Http {
        url: String,
        #[serde(default = "default_attempts")]
        attempts: usize,
    },
}

fn default_attempts() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfCheckSection {
    pub examples: Option<PathBuf>,
    pub backend: Option<BackendSection>,
    pub kinds: Vec<VariationKind>,
    pub strict_unknown: bool,
    pub generation: GenerationParams,
}

impl Default for SelfCheckSection {
    fn default() -> Self {
        SelfCheckSection {
            examples: None,
            backend: None,
            kinds: VariationKind::ALL.to_vec(),
            strict_unknown: false,
            generation: GenerationParams::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file, resolving includes relative to the including file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut stack = Vec::new();
        let table = load_table(path, &mut stack)?;
        let mut cfg: ExperimentConfig =
            toml::Value::Table(table).try_into().with_context(|| format!("invalid config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(out) = cfg.out.take() {
            cfg.out = Some(cfg.resolve(&out));
        }
        Ok(cfg)
    }

    /// Resolves a config-relative path.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.as_ref().is_some_and(Vec::is_empty) {
            bail!("seeds must not be empty");
        }
        let steps = 1.0 / self.delta;
        if !(self.delta > 0.0 && self.delta <= 1.0) || (steps - steps.round()).abs() > DELTA_TOL {
            bail!("delta {} must divide 1", self.delta);
        }
        if self.measures.is_empty() {
            bail!("at least one importance measure is required");
        }
        if self.workers == Some(0) {
            bail!("workers must be positive");
        }
        for (name, a) in
            [("fmm.alpha", self.fmm.alpha), ("masf.alpha", self.masf.alpha), ("fmm.confidence", self.fmm.confidence)]
        {
            if !(a > 0.0 && a < 1.0) {
                bail!("{name} = {a} must lie in (0, 1)");
            }
        }
        if self.masf.mask_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            bail!("masf.mask_ratios must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn replicate_seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.seed])
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// SHA-256 of the canonical JSON of everything that affects results.
    /// The output directory and worker count are excluded.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out = None;
        canon.workers = None;
        let json = serde_json::to_string(&canon).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}

fn load_table(path: &Path, stack: &mut Vec<PathBuf>) -> Result<toml::Table> {
    let canonical = path.canonicalize().with_context(|| format!("cannot open config {}", path.display()))?;
    if stack.contains(&canonical) {
        bail!("include cycle through {}", path.display());
    }
    stack.push(canonical);
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut table: toml::Table = text.parse().with_context(|| format!("cannot parse {}", path.display()))?;
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(toml::Value::String(s)) => vec![s],
        Some(toml::Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s),
                other => bail!("include entries must be strings, found {other}"),
            })
            .collect::<Result<_>>()?,
        Some(other) => bail!("include must be a string or list of strings, found {other}"),
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let mut merged = toml::Table::new();
    for inc in includes {
        let mut inner = load_table(&base.join(&inc), stack)?;
        rebase_paths(&mut inner, Path::new(&inc).parent().unwrap_or(Path::new("")));
        merge(&mut merged, inner);
    }
    merge(&mut merged, table);
    stack.pop();
    Ok(merged)
}

/// Path-valued keys, as (section, key).
const PATH_KEYS: [(&str, &str); 6] = [
    ("", "out"),
    ("dataset", "path"),
    ("masf", "checkpoint"),
    ("masf", "calibration"),
    ("selfcheck", "examples"),
    ("backend", "script"),
];

/// Makes relative paths of an included file relative to the includer.
fn rebase_paths(table: &mut toml::Table, include_dir: &Path) {
    let rebase = |v: &mut toml::Value| {
        if let toml::Value::String(s) = v {
            if Path::new(s.as_str()).is_relative() {
                *s = include_dir.join(s.as_str()).to_string_lossy().into_owned();
            }
        }
    };
    for (section, key) in PATH_KEYS {
        let target = match section {
            "" => Some(&mut *table),
            "backend" => table
                .get_mut("selfcheck")
                .and_then(toml::Value::as_table_mut)
                .and_then(|t| t.get_mut("backend"))
                .and_then(toml::Value::as_table_mut),
            s => table.get_mut(s).and_then(toml::Value::as_table_mut),
        };
        if let Some(v) = target.and_then(|t| t.get_mut(key)) {
            rebase(v);
        }
    }
}

/// Deep merge; values in `over` win, tables merge key by key.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
