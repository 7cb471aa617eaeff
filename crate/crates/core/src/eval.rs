//! Evaluation harness: support-weighted metrics and k-fold experiments.
//!
//! Experiments run stratified k-fold cross-validation: each fold's
//! demonstration pool is built strictly from that fold's training split,
//! and a hard leakage check rejects any prediction whose demonstrations
//! mention a test tree. Per-fold confusion matrices are pooled for the
//! headline metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Backend;
use crate::config::{Ablation, PipelineConfig};
use crate::decider::{predict, DeciderError, DemonstrationPool, Prediction};
use crate::prompts::PromptSet;
use crate::seeds::derive_seed;
use crate::tree::{kfold_split, Dataset, TreeError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Decider(#[from] DeciderError),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("reports have different class counts: {0} vs {1}")]
    ClassMismatch(usize, usize),
    #[error("label index {index} out of range for {classes} classes")]
    BadLabelIndex { index: usize, classes: usize },
    #[error(
        "demonstration leak: prediction for test tree {tree_id:?} used demonstration {demo_id:?} from the test split"
    )]
    DemonstrationLeak { tree_id: String, demo_id: String },
    #[error("no tree was predicted successfully")]
    NothingPredicted,
}

/// Gold-by-predicted counts; `counts[gold][pred]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        assert!(classes >= 2, "need at least two classes");
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn record(&mut self, gold: usize, pred: usize) -> Result<(), EvalError> {
        let classes = self.counts.len();
        if gold >= classes || pred >= classes {
            return Err(EvalError::BadLabelIndex {
                index: gold.max(pred),
                classes,
            });
        }
        self.counts[gold][pred] += 1;
        Ok(())
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        if counts.len() < 2 || counts.iter().any(|row| row.len() != counts.len()) {
            return Err(EvalError::EmptyMatrix);
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Element-wise sum; both matrices must share the class count.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), EvalError> {
        if self.classes() != other.classes() {
            return Err(EvalError::ClassMismatch(self.classes(), other.classes()));
        }
        for (mine, theirs) in self.counts.iter_mut().zip(other.counts.iter()) {
            for (a, b) in mine.iter_mut().zip(theirs.iter()) {
                *a += b;
            }
        }
        Ok(())
    }
}

/// Per-class precision/recall/F1 with the class's gold count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy plus support-weighted precision/recall/F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub labels: Vec<String>,
    pub total: u64,
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
}

/// Support-weighted metrics from a confusion matrix. Classes nobody
/// predicted get precision 0; classes with no gold examples get recall 0
/// and weight 0. Weighted recall always equals accuracy.
pub fn weighted_metrics(
    matrix: &ConfusionMatrix,
    labels: &[String],
) -> Result<MetricReport, EvalError> {
    let classes = matrix.classes();
    assert_eq!(labels.len(), classes, "one label per class");
    let total = matrix.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let counts = matrix.counts();
    let mut per_class = Vec::with_capacity(classes);
    let mut correct = 0u64;
    for c in 0..classes {
        let support: u64 = counts[c].iter().sum();
        let predicted: u64 = counts.iter().map(|row| row[c]).sum();
        let hits = counts[c][c];
        correct += hits;
        let precision = if predicted == 0 {
            0.0
        } else {
            hits as f64 / predicted as f64
        };
        let recall = if support == 0 {
            0.0
        } else {
            hits as f64 / support as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            label: labels[c].clone(),
            support,
            precision,
            recall,
            f1,
        });
    }
    let weight_sum = total as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class
            .iter()
            .map(|m| m.support as f64 * f(m))
            .sum::<f64>()
            / weight_sum
    };
    Ok(MetricReport {
        labels: labels.to_vec(),
        total,
        accuracy: correct as f64 / total as f64,
        weighted_precision: weighted(|m| m.precision),
        weighted_recall: weighted(|m| m.recall),
        weighted_f1: weighted(|m| m.f1),
        per_class,
        confusion: matrix.counts().to_vec(),
    })
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "n = {}", self.total)?;
        writeln!(f, "accuracy           {:.4}", self.accuracy)?;
        writeln!(f, "weighted precision {:.4}", self.weighted_precision)?;
        writeln!(f, "weighted recall    {:.4}", self.weighted_recall)?;
        writeln!(f, "weighted f1        {:.4}", self.weighted_f1)?;
        writeln!(f, "class      support  precision  recall   f1")?;
        for m in &self.per_class {
            writeln!(
                f,
                "{:<10} {:>7}  {:>9.4}  {:>6.4}  {:>6.4}",
                m.label, m.support, m.precision, m.recall, m.f1
            )?;
        }
        Ok(())
    }
}

/// Metric deltas `other - base`, for ablation comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportComparison {
    pub accuracy_delta: f64,
    pub weighted_precision_delta: f64,
    pub weighted_recall_delta: f64,
    pub weighted_f1_delta: f64,
    pub per_class_f1_delta: Vec<(String, f64)>,
}

pub fn compare_reports(
    base: &MetricReport,
    other: &MetricReport,
) -> Result<ReportComparison, EvalError> {
    if base.per_class.len() != other.per_class.len() {
        return Err(EvalError::ClassMismatch(
            base.per_class.len(),
            other.per_class.len(),
        ));
    }
    Ok(ReportComparison {
        accuracy_delta: other.accuracy - base.accuracy,
        weighted_precision_delta: other.weighted_precision - base.weighted_precision,
        weighted_recall_delta: other.weighted_recall - base.weighted_recall,
        weighted_f1_delta: other.weighted_f1 - base.weighted_f1,
        per_class_f1_delta: base
            .per_class
            .iter()
            .zip(other.per_class.iter())
            .map(|(b, o)| (b.label.clone(), o.f1 - b.f1))
            .collect(),
    })
}

impl std::fmt::Display for ReportComparison {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "accuracy           {:+.4}", self.accuracy_delta)?;
        writeln!(f, "weighted precision {:+.4}", self.weighted_precision_delta)?;
        writeln!(f, "weighted recall    {:+.4}", self.weighted_recall_delta)?;
        writeln!(f, "weighted f1        {:+.4}", self.weighted_f1_delta)?;
        for (label, delta) in &self.per_class_f1_delta {
            writeln!(f, "f1[{label}]            {delta:+.4}")?;
        }
        Ok(())
    }
}

/// One fold's predictions and metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_tree_ids: Vec<String>,
    pub test_tree_ids: Vec<String>,
    pub predictions: Vec<Prediction>,
    pub metrics: MetricReport,
}

/// Full cross-validation outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub ablation: Ablation,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub pooled: MetricReport,
    /// (tree id, error) for trees skipped under the skip policy.
    pub incomplete: Vec<(String, String)>,
}

/// Run stratified k-fold cross-validation of the configured pipeline
/// variant over a fully labeled dataset.
///
/// Per-tree failures abort the experiment unless
/// `config.skip_failed_trees` is set, in which case the tree is recorded
/// as incomplete and excluded from the metrics.
pub fn run_experiment(
    backend: &dyn Backend,
    prompts: &PromptSet,
    config: &PipelineConfig,
    dataset: &Dataset,
    seed: u64,
) -> Result<ExperimentReport, EvalError> {
    let labels: Vec<String> = dataset.label_set.labels().to_vec();
    let folds = kfold_split(dataset, config.folds, derive_seed(seed, "folds"))?;
    let needs_pool = matches!(config.ablation, Ablation::Full | Ablation::AnalystOnly);

    let mut fold_reports = Vec::with_capacity(folds.len());
    let mut incomplete = Vec::new();
    let mut pooled_matrix = ConfusionMatrix::new(labels.len());

    for (fold_index, (train, test)) in folds.iter().enumerate() {
        let pool = if needs_pool {
            Some(DemonstrationPool::build(backend, config, train)?)
        } else {
            None
        };
        let train_ids: std::collections::HashSet<&str> =
            train.trees.iter().map(|t| t.id.as_str()).collect();

        let mut matrix = ConfusionMatrix::new(labels.len());
        let mut predictions = Vec::with_capacity(test.trees.len());
        for tree in &test.trees {
            let prediction = match predict(backend, prompts, config, tree, pool.as_ref(), seed) {
                Ok(p) => p,
                Err(e) if config.skip_failed_trees => {
                    log::warn!("tree {}: marking incomplete: {e}", tree.id);
                    incomplete.push((tree.id.clone(), e.to_string()));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            // Leakage guard: graded examples must come from the training
            // split alone.
            for demo_id in &prediction.provenance.demonstrations {
                if !train_ids.contains(demo_id.as_str()) {
                    return Err(EvalError::DemonstrationLeak {
                        tree_id: tree.id.clone(),
                        demo_id: demo_id.clone(),
                    });
                }
            }
            let gold = tree.gold_label.expect("kfold_split requires labels");
            matrix.record(gold, prediction.label_index)?;
            predictions.push(prediction);
        }
        if predictions.is_empty() {
            log::warn!("fold {fold_index}: no successful predictions");
        }
        pooled_matrix.merge(&matrix)?;
        let metrics = if matrix.total() == 0 {
            // Keep the report shape even for an all-skipped fold.
            MetricReport {
                labels: labels.clone(),
                total: 0,
                accuracy: 0.0,
                weighted_precision: 0.0,
                weighted_recall: 0.0,
                weighted_f1: 0.0,
                per_class: Vec::new(),
                confusion: matrix.counts().to_vec(),
            }
        } else {
            weighted_metrics(&matrix, &labels)?
        };
        fold_reports.push(FoldReport {
            fold: fold_index,
            train_tree_ids: train.trees.iter().map(|t| t.id.clone()).collect(),
            test_tree_ids: test.trees.iter().map(|t| t.id.clone()).collect(),
            predictions,
            metrics,
        });
    }

    if pooled_matrix.total() == 0 {
        return Err(EvalError::NothingPredicted);
    }
    let pooled = weighted_metrics(&pooled_matrix, &labels)?;
    Ok(ExperimentReport {
        ablation: config.ablation,
        seed,
        folds: fold_reports,
        pooled,
        incomplete,
    })
}
