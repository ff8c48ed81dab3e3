//! Scenario runner for the attribution experiments: A = no model
//! watermarked, B = exactly one, C = all. Outputs are generated per model,
//! featurized, split, and scored with the logistic classifier.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{NGramModel, TokenSequence};
use crate::prf::mix3;
use crate::synonyms::SynonymTable;
use crate::watermark::{watermarked_generate, SchemeConfig};
use crate::Scalar;

use super::features::{extract_features_batch, FeatureRegistry};
use super::logreg::{train_classifier, LabeledDataset};
use super::metrics::{evaluate, EvalMetrics};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    A,
    B,
    C,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::A => "A",
            Scenario::B => "B",
            Scenario::C => "C",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    /// Candidate model ids; class label order.
    pub models: Vec<String>,
    /// Which of them generate watermarked: A none, B exactly one, C all.
    pub watermarked_models: Vec<String>,
    pub scheme: Option<SchemeConfig>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.models.len() < 2 {
            return Err(Error::InvalidParameter(
                "scenario needs at least 2 candidate models".into(),
            ));
        }
        for w in &self.watermarked_models {
            if !self.models.contains(w) {
                return Err(Error::InvalidParameter(format!(
                    "watermarked model {w} is not a candidate model"
                )));
            }
        }
        let n_wm = self.watermarked_models.len();
        let ok = match self.scenario {
            Scenario::A => n_wm == 0 && self.scheme.is_none(),
            Scenario::B => n_wm == 1 && self.scheme.is_some(),
            Scenario::C => n_wm == self.models.len() && self.scheme.is_some(),
        };
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "scenario {} requires {} watermarked models, got {n_wm}",
                self.scenario.name(),
                match self.scenario {
                    Scenario::A => "no".to_string(),
                    Scenario::B => "exactly one".to_string(),
                    Scenario::C => format!("all {}", self.models.len()),
                },
            )));
        }
        if let Some(s) = &self.scheme {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub prompt_len: usize,
    pub completion_len: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub epochs: usize,
    pub learning_rate: Scalar,
    pub l2: Scalar,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            prompt_len: 16,
            completion_len: 200,
            train_per_class: 500,
            test_per_class: 100,
            epochs: 300,
            learning_rate: 0.5,
            l2: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub metrics: EvalMetrics,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub feature_layout: Vec<String>,
}

struct GeneratedData {
    train: LabeledDataset,
    test: LabeledDataset,
    layout: Vec<String>,
}

/// Per-model watermark keys are derived from the configured key so each
/// watermarked model carries its own detectable signal.
fn derived_scheme(base: &SchemeConfig, model_index: usize) -> SchemeConfig {
    let mut s = *base;
    s.key = base.key.derive(model_index as u64);
    s
}

fn generate_datasets(
    spec: &ScenarioSpec,
    models: &[NGramModel],
    prompts: &[TokenSequence],
    table: Option<&SynonymTable>,
    params: &ScenarioParams,
    rng_seed: u64,
) -> Result<GeneratedData> {
    spec.validate()?;
    if prompts.is_empty() {
        return Err(Error::InvalidInput("empty prompt pool".into()));
    }
    let resolved: Vec<&NGramModel> = spec
        .models
        .iter()
        .map(|id| {
            models
                .iter()
                .find(|m| m.model_id() == id)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown model id {id}")))
        })
        .collect::<Result<_>>()?;
    let owned: Vec<NGramModel> = resolved.iter().map(|&m| m.clone()).collect();

    let schemes: Vec<(String, SchemeConfig)> = match &spec.scheme {
        Some(base) => spec
            .models
            .iter()
            .enumerate()
            .map(|(i, id)| (format!("{}@{id}", base.kind.name()), derived_scheme(base, i)))
            .collect(),
        None => vec![],
    };
    let registry = FeatureRegistry::new(&owned, schemes, table)?;

    let per_class = params.train_per_class + params.test_per_class;
    let jobs: Vec<(usize, usize)> = (0..spec.models.len())
        .flat_map(|mi| (0..per_class).map(move |j| (mi, j)))
        .collect();
    let texts: Vec<TokenSequence> = jobs
        .par_iter()
        .map(|&(mi, j)| {
            let model = resolved[mi];
            let seed = mix3(rng_seed, mi as u64, j as u64);
            let prompt = &prompts[(mix3(rng_seed ^ 0x9e37, mi as u64, j as u64)
                % prompts.len() as u64) as usize];
            let prompt = TokenSequence::external(
                prompt.ids.iter().take(params.prompt_len).copied().collect(),
            );
            if spec.watermarked_models.contains(&spec.models[mi]) {
                let scheme = derived_scheme(spec.scheme.as_ref().unwrap(), mi);
                watermarked_generate(model, &prompt, &scheme, params.completion_len, seed, table)
            } else {
                Ok(model.generate(
                    &prompt,
                    params.completion_len,
                    crate::lm::Sampler::Multinomial,
                    seed,
                ))
            }
        })
        .collect::<Result<_>>()?;
    let features = extract_features_batch(&texts, &registry)?;

    let mut train = LabeledDataset {
        features: vec![],
        labels: vec![],
        class_labels: spec.models.clone(),
    };
    let mut test = LabeledDataset {
        features: vec![],
        labels: vec![],
        class_labels: spec.models.clone(),
    };
    for ((mi, j), f) in jobs.into_iter().zip(features) {
        let target = if j < params.train_per_class { &mut train } else { &mut test };
        target.features.push(f);
        target.labels.push(mi);
    }
    Ok(GeneratedData {
        train,
        test,
        layout: registry.layout(),
    })
}

pub fn run_scenario(
    spec: &ScenarioSpec,
    models: &[NGramModel],
    prompts: &[TokenSequence],
    table: Option<&SynonymTable>,
    params: &ScenarioParams,
    rng_seed: u64,
) -> Result<ScenarioOutcome> {
    let data = generate_datasets(spec, models, prompts, table, params, rng_seed)?;
    let model = train_classifier(
        &data.train,
        params.epochs,
        params.learning_rate,
        params.l2,
        rng_seed,
    )?;
    let metrics = evaluate(&model, &data.test)?;
    Ok(ScenarioOutcome {
        metrics,
        train_per_class: params.train_per_class,
        test_per_class: params.test_per_class,
        feature_layout: data.layout,
    })
}

/// Macro F1 as a function of per-class training-set size. Data is generated
/// once at the largest size; smaller points train on a prefix, so the curve
/// isolates the effect of training volume.
pub fn learning_curve(
    spec: &ScenarioSpec,
    models: &[NGramModel],
    prompts: &[TokenSequence],
    table: Option<&SynonymTable>,
    params: &ScenarioParams,
    sizes: &[usize],
    rng_seed: u64,
) -> Result<Vec<(usize, Scalar)>> {
    if sizes.is_empty() {
        return Err(Error::InvalidParameter("empty size list".into()));
    }
    let max = *sizes.iter().max().unwrap();
    let mut full = *params;
    full.train_per_class = max;
    let data = generate_datasets(spec, models, prompts, table, &full, rng_seed)?;
    let num_classes = spec.models.len();
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size > max || size == 0 {
            return Err(Error::InvalidParameter(format!("bad curve size {size}")));
        }
        // Train rows are grouped per class in generation order.
        let mut subset = LabeledDataset {
            features: vec![],
            labels: vec![],
            class_labels: data.train.class_labels.clone(),
        };
        for c in 0..num_classes {
            let start = c * max;
            subset
                .features
                .extend_from_slice(&data.train.features[start..start + size]);
            subset.labels.extend(std::iter::repeat(c).take(size));
        }
        let model = train_classifier(
            &subset,
            params.epochs,
            params.learning_rate,
            params.l2,
            rng_seed,
        )?;
        out.push((size, evaluate(&model, &data.test)?.macro_f1));
    }
    Ok(out)
}
