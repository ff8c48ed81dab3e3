//! Cross-model source attribution: hand-built features over generated text,
//! a multinomial logistic regression trained from scratch, and the three
//! evaluation scenarios (no watermark, one model watermarked, all models
//! watermarked).

mod features;
mod logreg;
mod metrics;
mod scenario;

pub use features::{extract_features, extract_features_batch, FeatureRegistry, FeatureVector};
pub use logreg::{loss_and_gradient, train_classifier, ClassifierModel, LabeledDataset};
pub use metrics::{evaluate, evaluate_labels, f1_change, EvalMetrics};
pub use scenario::{
    learning_curve, run_scenario, Scenario, ScenarioOutcome, ScenarioParams, ScenarioSpec,
};
