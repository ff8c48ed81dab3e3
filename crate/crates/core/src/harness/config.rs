//! Experiment configuration: strict TOML schema with defaults, validation,
//! and a canonical fingerprint.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prf::mix2;
use crate::watermark::{SchemeConfig, SchemeKind, WatermarkKey};
use crate::Scalar;

/// Environment variable overriding `watermark.secret`.
pub const SECRET_ENV_VAR: &str = "WMLAB_SECRET";

fn default_vocab_cap() -> usize {
    5000
}
fn default_gamma() -> Scalar {
    0.25
}
fn default_delta() -> Scalar {
    2.0
}
fn default_exp_key_length() -> usize {
    256
}
fn default_num_synonym_classes() -> usize {
    16
}
fn default_prompt_len() -> usize {
    16
}
fn default_completion_len() -> usize {
    200
}
fn default_train_per_class() -> usize {
    500
}
fn default_test_per_class() -> usize {
    100
}
fn default_epochs() -> usize {
    300
}
fn default_learning_rate() -> Scalar {
    0.5
}
fn default_l2() -> Scalar {
    1e-3
}
fn default_curve_sizes() -> Vec<usize> {
    vec![50, 100, 250, 500]
}
fn default_z_threshold() -> Scalar {
    crate::detector::DEFAULT_Z_THRESHOLD
}
fn default_alpha() -> Scalar {
    crate::detector::DEFAULT_ALPHA
}
fn default_permutations() -> usize {
    crate::detector::DEFAULT_PERMUTATIONS
}
fn default_sample_len() -> usize {
    200
}
fn default_tpr_samples() -> usize {
    1000
}
fn default_fpr_samples() -> usize {
    10_000
}
fn default_exp_fpr_samples() -> usize {
    500
}
fn default_flag_rate_threshold() -> Scalar {
    0.25
}
fn default_attack_text_len() -> usize {
    60
}
fn default_texts_per_cell() -> usize {
    40
}
fn default_edit_rate() -> Scalar {
    0.3
}
fn default_paraphrase_rate() -> Scalar {
    0.5
}
fn default_window() -> usize {
    8
}
fn default_perplexity_budget() -> Scalar {
    2.0
}
fn default_bucket_size() -> usize {
    4
}
fn default_query_counts() -> Vec<usize> {
    vec![50, 200, 1000]
}
fn default_paired_seeds() -> usize {
    20
}
fn default_probes() -> usize {
    20
}
fn default_stealing_delta() -> Scalar {
    4.0
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_ppl_texts() -> usize {
    50
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub dir: PathBuf,
    #[serde(default = "default_vocab_cap")]
    pub vocab_cap: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    /// Shard file name inside `corpus.dir`.
    pub shard: String,
    pub order: usize,
    pub smoothing: Scalar,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub name: String,
    pub kind: SchemeKind,
    #[serde(default = "default_gamma")]
    pub gamma: Scalar,
    #[serde(default = "default_delta")]
    pub delta: Scalar,
    /// Defaults to 1 for KGW, 0 otherwise.
    #[serde(default)]
    pub context_width: Option<usize>,
    #[serde(default = "default_exp_key_length")]
    pub exp_key_length: usize,
    #[serde(default)]
    pub exp_random_shift: bool,
    #[serde(default = "default_num_synonym_classes")]
    pub num_synonym_classes: usize,
}

impl SchemeSpec {
    /// Concrete scheme config; the key is derived from the experiment secret
    /// and the scheme name so distinct schemes never share keys.
    pub fn to_config(&self, secret: u64) -> SchemeConfig {
        let mut cfg = SchemeConfig::new(
            self.kind,
            WatermarkKey(mix2(secret, crate::prf::hash_ids(&name_ids(&self.name)))),
        );
        cfg.gamma = self.gamma;
        cfg.delta = self.delta;
        if let Some(h) = self.context_width {
            cfg.context_width = h;
        }
        cfg.exp_key_length = self.exp_key_length;
        cfg.exp_random_shift = self.exp_random_shift;
        cfg.num_synonym_classes = self.num_synonym_classes;
        cfg
    }
}

fn name_ids(name: &str) -> Vec<u32> {
    name.bytes().map(u32::from).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub name: String,
    pub kind: crate::attacks::AttackKind,
    #[serde(default = "default_edit_rate")]
    pub edit_rate: Scalar,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_perplexity_budget")]
    pub perplexity_budget: Scalar,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkSection {
    /// Root secret all scheme keys derive from. Overridden by the
    /// `WMLAB_SECRET` environment variable. Never echoed to reports.
    pub secret: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default = "default_prompt_len")]
    pub prompt_len: usize,
    #[serde(default = "default_completion_len")]
    pub completion_len: usize,
    #[serde(default = "default_train_per_class")]
    pub train_per_class: usize,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: Scalar,
    #[serde(default = "default_l2")]
    pub l2: Scalar,
    #[serde(default = "default_curve_sizes")]
    pub learning_curve_sizes: Vec<usize>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    #[serde(default = "default_z_threshold")]
    pub z_threshold: Scalar,
    #[serde(default = "default_alpha")]
    pub alpha: Scalar,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_sample_len")]
    pub sample_len: usize,
    #[serde(default = "default_tpr_samples")]
    pub tpr_samples: usize,
    #[serde(default = "default_fpr_samples")]
    pub fpr_samples: usize,
    #[serde(default = "default_exp_fpr_samples")]
    pub exp_fpr_samples: usize,
    #[serde(default = "default_flag_rate_threshold")]
    pub flag_rate_threshold: Scalar,
    #[serde(default = "default_ppl_texts")]
    pub ppl_texts: usize,
}

impl Default for DetectionSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackEvalSection {
    #[serde(default = "default_attack_text_len")]
    pub text_len: usize,
    #[serde(default = "default_texts_per_cell")]
    pub texts_per_cell: usize,
}

impl Default for AttackEvalSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StealingSection {
    /// Victim model id.
    pub victim: String,
    #[serde(default = "default_stealing_delta")]
    pub delta: Scalar,
    #[serde(default = "default_query_counts")]
    pub query_counts: Vec<usize>,
    #[serde(default = "default_paired_seeds")]
    pub paired_seeds: usize,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_sample_len")]
    pub probe_len: usize,
    #[serde(default = "default_sample_len")]
    pub completion_len: usize,
    pub surrogate_order: usize,
    pub surrogate_smoothing: Scalar,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynonymSection {
    #[serde(default = "default_bucket_size")]
    pub bucket_size: usize,
}

impl Default for SynonymSection {
    fn default() -> Self {
        Self {
            bucket_size: default_bucket_size(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_out_dir")]
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub corpus: CorpusSection,
    pub models: Vec<ModelSpec>,
    pub watermark: WatermarkSection,
    pub schemes: Vec<SchemeSpec>,
    pub attacks: Vec<AttackSpec>,
    /// Scenario letters to run, e.g. ["A", "B", "C"].
    pub scenarios: Vec<String>,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default)]
    pub attack_eval: AttackEvalSection,
    pub stealing: Option<StealingSection>,
    #[serde(default)]
    pub synonyms: SynonymSection,
}

/// Suggests the closest expected key for an unknown-field error, so typos
/// like "gama" point at "gamma".
fn with_suggestion(msg: &str) -> String {
    let names: Vec<&str> = msg
        .split('`')
        .skip(1)
        .step_by(2)
        .collect();
    if msg.contains("unknown field") && names.len() >= 2 {
        let unknown = names[0];
        if let Some(best) = names[1..]
            .iter()
            .min_by_key(|c| strsim::levenshtein(unknown, c))
        {
            if strsim::levenshtein(unknown, best) <= 3 {
                return format!("{msg}; did you mean `{best}`?");
            }
        }
    }
    msg.to_string()
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(with_suggestion(&e.to_string())))?;
    if let Ok(v) = std::env::var(SECRET_ENV_VAR) {
        let secret = v
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("{SECRET_ENV_VAR} must be an unsigned integer")))?;
        cfg.watermark.secret = secret;
    }
    // Paths in the config resolve relative to the config file.
    if let Some(base) = path.parent() {
        if cfg.corpus.dir.is_relative() {
            cfg.corpus.dir = base.join(&cfg.corpus.dir);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
    }
    validate_config(&cfg)?;
    Ok(cfg)
}

pub fn validate_config(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("seeds must be nonempty".into()));
    }
    if cfg.models.len() < 2 {
        return Err(Error::Config("need at least 2 models".into()));
    }
    let mut ids = HashSet::new();
    for m in &cfg.models {
        if !ids.insert(&m.id) {
            return Err(Error::Config(format!("duplicate model id {}", m.id)));
        }
        if m.order == 0 {
            return Err(Error::Config(format!("model {}: order must be >= 1", m.id)));
        }
        if m.smoothing <= 0.0 {
            return Err(Error::Config(format!(
                "model {}: smoothing must be > 0",
                m.id
            )));
        }
        let shard = cfg.corpus.dir.join(&m.shard);
        if !shard.exists() {
            return Err(Error::Config(format!(
                "model {}: shard file {} does not exist",
                m.id,
                shard.display()
            )));
        }
    }
    let mut names = HashSet::new();
    for s in &cfg.schemes {
        if !names.insert(&s.name) {
            return Err(Error::Config(format!("duplicate scheme name {}", s.name)));
        }
        if !(s.gamma > 0.0 && s.gamma < 1.0) {
            return Err(Error::Config(format!(
                "scheme {}: gamma must lie in (0,1), got {}",
                s.name, s.gamma
            )));
        }
        s.to_config(cfg.watermark.secret)
            .validate()
            .map_err(|e| Error::Config(format!("scheme {}: {e}", s.name)))?;
    }
    let mut attack_names = HashSet::new();
    for a in &cfg.attacks {
        if !attack_names.insert(&a.name) {
            return Err(Error::Config(format!("duplicate attack name {}", a.name)));
        }
        crate::attacks::AttackConfig {
            kind: a.kind,
            edit_rate: a.edit_rate,
            window: a.window,
            perplexity_budget: a.perplexity_budget,
            rng_seed: 0,
        }
        .validate()
        .map_err(|e| Error::Config(format!("attack {}: {e}", a.name)))?;
    }
    for s in &cfg.scenarios {
        if !matches!(s.as_str(), "A" | "B" | "C") {
            return Err(Error::Config(format!(
                "unknown scenario {s:?}; expected A, B, or C"
            )));
        }
    }
    if let Some(st) = &cfg.stealing {
        if !cfg.models.iter().any(|m| m.id == st.victim) {
            return Err(Error::Config(format!(
                "stealing.victim {} is not a configured model",
                st.victim
            )));
        }
        if st.query_counts.is_empty() || st.paired_seeds == 0 {
            return Err(Error::Config(
                "stealing needs query_counts and paired_seeds".into(),
            ));
        }
    }
    if cfg.dataset.train_per_class == 0 || cfg.dataset.test_per_class == 0 {
        return Err(Error::Config("dataset sizes must be >= 1".into()));
    }
    Ok(())
}

/// Default attack specs: one per implemented attack at its default strength.
pub fn default_attack_specs() -> Vec<AttackSpec> {
    use crate::attacks::AttackKind;
    vec![
        AttackSpec {
            name: "substitution".into(),
            kind: AttackKind::Substitution,
            edit_rate: default_edit_rate(),
            window: default_window(),
            perplexity_budget: default_perplexity_budget(),
        },
        AttackSpec {
            name: "paraphrase".into(),
            kind: AttackKind::Paraphrase,
            edit_rate: default_paraphrase_rate(),
            window: default_window(),
            perplexity_budget: default_perplexity_budget(),
        },
        AttackSpec {
            name: "removal".into(),
            kind: AttackKind::Removal,
            edit_rate: 0.0,
            window: default_window(),
            perplexity_budget: default_perplexity_budget(),
        },
    ]
}
