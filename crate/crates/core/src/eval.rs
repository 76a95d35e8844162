//! Accuracy tables: confusion matrices, per-class and macro accuracy,
//! grouped (per-environment) averages and convergence comparison.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::error::{DeduceError, Result};
use crate::fusion::{predict_all, ModelBundle, ModelKind, Prediction};
use crate::linear::TrainReport;
use crate::types::{ClassSet, FrameRecord, SceneLabel};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub class_set: ClassSet,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    /// `None` for classes with no frames.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Unweighted mean over classes that occur.
    pub average: f64,
    /// Frame-weighted accuracy; reported only.
    pub micro: f64,
    pub n_frames: u64,
}

impl EvalResult {
    /// Builds the confusion matrix and accuracies from `(truth, predicted)` pairs.
    pub fn from_pairs(class_set: &ClassSet, pairs: impl IntoIterator<Item = (SceneLabel, SceneLabel)>) -> Result<Self> {
        let k = class_set.len();
        let mut confusion = vec![vec![0u64; k]; k];
        for (t, p) in pairs {
            if t.0 >= k || p.0 >= k {
                return Err(DeduceError::InvalidConfig(format!("label outside class set ({t}, {p})")));
            }
            confusion[t.0][p.0] += 1;
        }
        Ok(Self::from_confusion(class_set.clone(), confusion))
    }

    pub fn from_confusion(class_set: ClassSet, confusion: Vec<Vec<u64>>) -> Self {
        let per_class_accuracy: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let total: u64 = row.iter().sum();
                (total > 0).then(|| row[i] as f64 / total as f64)
            })
            .collect();
        let present: Vec<f64> = per_class_accuracy.iter().flatten().copied().collect();
        let average = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        let n_frames: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
        let micro = if n_frames == 0 {
            0.0
        } else {
            correct as f64 / n_frames as f64
        };
        EvalResult {
            class_set,
            confusion,
            per_class_accuracy,
            average,
            micro,
            n_frames,
        }
    }

    pub fn accuracy(&self, label: SceneLabel) -> Option<f64> {
        self.per_class_accuracy[label.0]
    }

    pub fn row_sum(&self, label: SceneLabel) -> u64 {
        self.confusion[label.0].iter().sum()
    }
}

fn truths(frames: &[FrameRecord]) -> Result<Vec<SceneLabel>> {
    frames
        .iter()
        .map(|f| f.truth.ok_or_else(|| DeduceError::MissingTruth(f.frame_id.clone())))
        .collect()
}

/// Scores already computed predictions against frame truth.
pub fn score(frames: &[FrameRecord], predictions: &[Prediction], class_set: &ClassSet) -> Result<EvalResult> {
    let truth = truths(frames)?;
    if predictions.len() != truth.len() {
        return Err(DeduceError::DimensionMismatch {
            expected: truth.len(),
            found: predictions.len(),
        });
    }
    EvalResult::from_pairs(class_set, truth.into_iter().zip(predictions.iter().map(|p| p.label)))
}

/// Runs `model` on every frame and scores it.
pub fn evaluate(frames: &[FrameRecord], model: ModelKind, bundle: &ModelBundle) -> Result<EvalResult> {
    truths(frames)?;
    let class_set = bundle.class_set(model)?.clone();
    let predictions = predict_all(frames, model, bundle)?;
    score(frames, &predictions, &class_set)
}

/// Per-group results plus cross-group averages.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedEval {
    pub groups: Vec<(String, EvalResult)>,
    /// Per-scene mean over the groups in which that scene occurs.
    pub per_scene_average: Vec<Option<f64>>,
    /// Mean of the group macro averages.
    pub grand_average: f64,
}

/// Scores precomputed per-group results.
pub fn aggregate_groups(groups: Vec<(String, EvalResult)>) -> Result<GroupedEval> {
    let first = groups.first().ok_or_else(|| DeduceError::Empty("no groups".into()))?;
    let k = first.1.class_set.len();
    let mut per_scene_average = Vec::with_capacity(k);
    for c in 0..k {
        let accs: Vec<f64> = groups.iter().filter_map(|(_, r)| r.per_class_accuracy[c]).collect();
        per_scene_average.push((!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64));
    }
    let grand_average = groups.iter().map(|(_, r)| r.average).sum::<f64>() / groups.len() as f64;
    Ok(GroupedEval {
        groups,
        per_scene_average,
        grand_average,
    })
}

/// Evaluates each group independently.
pub fn grouped_evaluate(
    groups: &[(String, Vec<FrameRecord>)],
    model: ModelKind,
    bundle: &ModelBundle,
) -> Result<GroupedEval> {
    if groups.is_empty() {
        return Err(DeduceError::Empty("no groups".into()));
    }
    let mut results = Vec::with_capacity(groups.len());
    for (key, frames) in groups {
        if frames.is_empty() {
            return Err(DeduceError::Empty(format!("group `{key}` has no frames")));
        }
        results.push((key.clone(), evaluate(frames, model, bundle)?));
    }
    aggregate_groups(results)
}

/// Groups frames by the part of `frame_id` before the first `/`.
pub fn group_by_prefix(frames: Vec<FrameRecord>) -> Vec<(String, Vec<FrameRecord>)> {
    let mut groups: Vec<(String, Vec<FrameRecord>)> = Vec::new();
    for f in frames {
        let key = f.frame_id.split_once('/').map_or("", |(k, _)| k).to_string();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(f),
            None => groups.push((key, vec![f])),
        }
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Faster {
    First,
    Second,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvergenceComparison {
    /// Epochs to reach the target, `None` for never.
    pub epochs_a: Option<usize>,
    pub epochs_b: Option<usize>,
    pub faster: Faster,
}

impl ConvergenceComparison {
    /// Epoch advantage of the faster model when both reach the target.
    pub fn margin(&self) -> Option<usize> {
        Some(self.epochs_a?.abs_diff(self.epochs_b?))
    }
}

fn rank(a: Option<usize>, b: Option<usize>) -> Faster {
    let ord = match (a, b) {
        (Some(x), Some(y)) => x.cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    match ord {
        Ordering::Less => Faster::First,
        Ordering::Greater => Faster::Second,
        Ordering::Equal => Faster::Tie,
    }
}

/// Epochs each report needed to first reach `target_acc`.
pub fn compare_convergence(a: &TrainReport, b: &TrainReport, target_acc: f64) -> ConvergenceComparison {
    let (epochs_a, epochs_b) = (a.epochs_to_reach(target_acc), b.epochs_to_reach(target_acc));
    ConvergenceComparison {
        epochs_a,
        epochs_b,
        faster: rank(epochs_a, epochs_b),
    }
}

/// Like [`compare_convergence`] but each report is measured against
/// `fraction` of its own final accuracy.
pub fn compare_relative_convergence(a: &TrainReport, b: &TrainReport, fraction: f64) -> ConvergenceComparison {
    let reach = |r: &TrainReport| r.final_accuracy().and_then(|f| r.epochs_to_reach(fraction * f));
    let (epochs_a, epochs_b) = (reach(a), reach(b));
    ConvergenceComparison {
        epochs_a,
        epochs_b,
        faster: rank(epochs_a, epochs_b),
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |a| format!("{:.1}", a * 100.0))
}

/// Aligned text table: one row per scene plus `avg`, one column per result.
pub fn render_table(columns: &[(String, &EvalResult)]) -> String {
    let Some((_, first)) = columns.first() else {
        return String::new();
    };
    let class_set = &first.class_set;
    let name_w = class_set.names().iter().map(String::len).max().unwrap_or(5).max(5);
    let col_w = columns.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:<name_w$}", "scene");
    for (name, _) in columns {
        let _ = write!(out, "  {name:>col_w$}");
    }
    out.push('\n');
    for label in class_set.labels() {
        let _ = write!(out, "{:<name_w$}", class_set.name(label));
        for (_, r) in columns {
            let _ = write!(out, "  {:>col_w$}", pct(r.accuracy(label)));
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<name_w$}", "avg");
    for (_, r) in columns {
        let _ = write!(out, "  {:>col_w$}", pct(Some(r.average)));
    }
    out.push('\n');
    out
}

/// CSV with the same layout as [`render_table`]; empty cells for absent classes.
pub fn table_csv(columns: &[(String, &EvalResult)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let enc = |e: csv::Error| DeduceError::Encode(e.to_string());
    let mut header = vec!["scene".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.clone()));
    w.write_record(&header).map_err(enc)?;
    if let Some((_, first)) = columns.first() {
        for label in first.class_set.labels() {
            let mut row = vec![first.class_set.name(label).to_string()];
            row.extend(columns.iter().map(|(_, r)| r.accuracy(label).map_or(String::new(), |a| a.to_string())));
            w.write_record(&row).map_err(enc)?;
        }
        let mut row = vec!["avg".to_string()];
        row.extend(columns.iter().map(|(_, r)| r.average.to_string()));
        w.write_record(&row).map_err(enc)?;
    }
    let bytes = w.into_inner().map_err(|e| DeduceError::Encode(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Table with one column per group, an `avg` column of per-scene averages and a grand-average row.
pub fn render_grouped(g: &GroupedEval) -> String {
    let columns: Vec<(String, &EvalResult)> = g.groups.iter().map(|(k, r)| (k.clone(), r)).collect();
    let mut text = render_table(&columns);
    let class_set = &g.groups[0].1.class_set;
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[0].push_str(&format!("  {:>6}", "avg"));
    for (i, label) in class_set.labels().enumerate() {
        lines[i + 1].push_str(&format!("  {:>6}", pct(g.per_scene_average[label.0])));
    }
    let last = lines.len() - 1;
    lines[last].push_str(&format!("  {:>6}", pct(Some(g.grand_average))));
    text = lines.join("\n");
    text.push('\n');
    text
}
