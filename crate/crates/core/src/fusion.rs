//! The five place-categorization models and the N-best fallback.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::attention::{blob_to_logits, classify_attn, pool};
use crate::codebook::{classify_objects, Codebook, DEFAULT_MIN_CONF};
use crate::error::{DeduceError, Result};
use crate::linear::{concat_features, Dataset, LinearHead, Sample};
use crate::types::{softmax, ClassSet, FrameRecord, Posterior, SceneLabel};

/// N-best threshold tuned on Places.
pub const THRESHOLD_PLACES: f64 = 0.5;
/// N-best threshold tuned on SUN.
pub const THRESHOLD_SUN: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    SceneOnly,
    ObjectOnly,
    SceneAttention,
    Combined,
    NBest,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::SceneOnly,
        ModelKind::ObjectOnly,
        ModelKind::SceneAttention,
        ModelKind::Combined,
        ModelKind::NBest,
    ];

    /// Short name used on the command line.
    pub fn cli_name(self) -> &'static str {
        match self {
            ModelKind::SceneOnly => "scene",
            ModelKind::ObjectOnly => "object",
            ModelKind::SceneAttention => "attention",
            ModelKind::Combined => "combined",
            ModelKind::NBest => "nbest",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::SceneOnly => "scene_only",
            ModelKind::ObjectOnly => "object_only",
            ModelKind::SceneAttention => "scene_attention",
            ModelKind::Combined => "combined",
            ModelKind::NBest => "n_best",
        })
    }
}

impl FromStr for ModelKind {
    type Err = DeduceError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "scene" | "scene_only" => ModelKind::SceneOnly,
            "object" | "objects" | "object_only" => ModelKind::ObjectOnly,
            "attention" | "attn" | "scene_attention" => ModelKind::SceneAttention,
            "combined" | "comb" => ModelKind::Combined,
            "nbest" | "n_best" => ModelKind::NBest,
            other => return Err(DeduceError::InvalidConfig(format!("unknown model `{other}`"))),
        })
    }
}

/// Which evidence produced a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Scene,
    Objects,
    Fused,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Scene => "scene",
            Source::Objects => "objects",
            Source::Fused => "fused",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: SceneLabel,
    pub posterior: Posterior,
    pub source: Source,
    pub model: ModelKind,
}

#[derive(Debug, Clone, Copy)]
pub struct NBestConfig<'a> {
    pub threshold: f64,
    pub codebook: &'a Codebook,
    pub min_conf: f64,
}

/// Scene classifier first; landmarks are consulted only when its top
/// posterior falls below the threshold. The object vote then replaces the
/// scene posterior. Without landmarks the scene guess stands.
pub fn predict_n_best(frame: &FrameRecord, scene_head: &LinearHead, cfg: &NBestConfig<'_>) -> Result<Prediction> {
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(DeduceError::InvalidConfig(format!(
            "N-best threshold {} outside [0,1]",
            cfg.threshold
        )));
    }
    let p = scene_head.forward(&frame.scene_feature)?;
    let scene = |p: Posterior| Prediction {
        label: p.argmax(),
        posterior: p,
        source: Source::Scene,
        model: ModelKind::NBest,
    };
    if p.max() >= cfg.threshold {
        return Ok(scene(p));
    }
    let vote = classify_objects(&frame.detections, cfg.codebook, cfg.min_conf);
    if vote.found_landmark() {
        Ok(Prediction {
            label: vote.label,
            posterior: vote.posterior,
            source: Source::Objects,
            model: ModelKind::NBest,
        })
    } else {
        Ok(scene(p))
    }
}

/// Model assets; each model uses a subset.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub scene_head: Option<LinearHead>,
    pub combined_head: Option<LinearHead>,
    pub attention_head: Option<LinearHead>,
    pub codebook: Option<Codebook>,
    pub threshold: f64,
    pub min_conf: f64,
}

impl Default for ModelBundle {
    fn default() -> Self {
        ModelBundle {
            scene_head: None,
            combined_head: None,
            attention_head: None,
            codebook: None,
            threshold: THRESHOLD_PLACES,
            min_conf: DEFAULT_MIN_CONF,
        }
    }
}

impl ModelBundle {
    fn need<'a, T>(asset: &'a Option<T>, model: ModelKind, name: &str) -> Result<&'a T> {
        asset.as_ref().ok_or_else(|| DeduceError::MissingAsset {
            model: model.to_string(),
            asset: name.to_string(),
        })
    }

    /// Class set shared by the assets `model` uses.
    pub fn class_set(&self, model: ModelKind) -> Result<&ClassSet> {
        Ok(match model {
            ModelKind::SceneOnly => Self::need(&self.scene_head, model, "scene_head")?.class_set(),
            ModelKind::ObjectOnly => Self::need(&self.codebook, model, "codebook")?.class_set(),
            ModelKind::SceneAttention => Self::need(&self.attention_head, model, "attention_head")?.class_set(),
            ModelKind::Combined => Self::need(&self.combined_head, model, "combined_head")?.class_set(),
            ModelKind::NBest => {
                let head = Self::need(&self.scene_head, model, "scene_head")?;
                let cb = Self::need(&self.codebook, model, "codebook")?;
                if head.class_set() != cb.class_set() {
                    return Err(DeduceError::InvalidConfig(
                        "scene head and codebook use different class sets".into(),
                    ));
                }
                head.class_set()
            }
        })
    }

    /// Checks that every asset `model` needs is present.
    pub fn check(&self, model: ModelKind) -> Result<()> {
        self.class_set(model).map(|_| ())
    }
}

/// Runs one model on one frame.
pub fn predict(frame: &FrameRecord, model: ModelKind, bundle: &ModelBundle) -> Result<Prediction> {
    match model {
        ModelKind::SceneOnly => {
            let head = ModelBundle::need(&bundle.scene_head, model, "scene_head")?;
            let posterior = head.forward(&frame.scene_feature)?;
            Ok(Prediction {
                label: posterior.argmax(),
                posterior,
                source: Source::Scene,
                model,
            })
        }
        ModelKind::ObjectOnly => {
            let cb = ModelBundle::need(&bundle.codebook, model, "codebook")?;
            let vote = classify_objects(&frame.detections, cb, bundle.min_conf);
            Ok(Prediction {
                label: vote.label,
                posterior: vote.posterior,
                source: Source::Objects,
                model,
            })
        }
        ModelKind::SceneAttention => {
            let head = ModelBundle::need(&bundle.attention_head, model, "attention_head")?;
            let blob = frame
                .feature_blob
                .as_ref()
                .ok_or_else(|| DeduceError::MissingBlob(frame.frame_id.clone()))?;
            let posterior = softmax(&blob_to_logits(blob, head)?)?;
            Ok(Prediction {
                label: posterior.argmax(),
                posterior,
                source: Source::Scene,
                model,
            })
        }
        ModelKind::Combined => {
            let head = ModelBundle::need(&bundle.combined_head, model, "combined_head")?;
            let x = concat_features(&frame.scene_feature, &frame.detections, bundle.min_conf);
            let posterior = head.forward(&x)?;
            Ok(Prediction {
                label: posterior.argmax(),
                posterior,
                source: Source::Fused,
                model,
            })
        }
        ModelKind::NBest => {
            let head = ModelBundle::need(&bundle.scene_head, model, "scene_head")?;
            let codebook = ModelBundle::need(&bundle.codebook, model, "codebook")?;
            predict_n_best(
                frame,
                head,
                &NBestConfig {
                    threshold: bundle.threshold,
                    codebook,
                    min_conf: bundle.min_conf,
                },
            )
        }
    }
}

/// Predicts every frame in parallel; output order matches input order.
pub fn predict_all(frames: &[FrameRecord], model: ModelKind, bundle: &ModelBundle) -> Result<Vec<Prediction>> {
    bundle.check(model)?;
    frames.par_iter().map(|f| predict(f, model, bundle)).collect()
}

/// Attention-model prediction together with its heatmap.
pub fn predict_with_heatmap(
    frame: &FrameRecord,
    bundle: &ModelBundle,
) -> Result<(Prediction, crate::attention::Heatmap)> {
    let model = ModelKind::SceneAttention;
    let head = ModelBundle::need(&bundle.attention_head, model, "attention_head")?;
    let blob = frame
        .feature_blob
        .as_ref()
        .ok_or_else(|| DeduceError::MissingBlob(frame.frame_id.clone()))?;
    let size = (frame.image_size.0 as usize, frame.image_size.1 as usize);
    let (label, posterior, heatmap) = classify_attn(blob, head, size)?;
    Ok((
        Prediction {
            label,
            posterior,
            source: Source::Scene,
            model,
        },
        heatmap,
    ))
}

/// Training samples for one of the trainable models: scene features for
/// `SceneOnly`, scene ⊕ object one-hot for `Combined`, pooled blobs for
/// `SceneAttention`. Every frame needs a truth label.
pub fn training_set(frames: &[FrameRecord], model: ModelKind, class_set: &ClassSet, min_conf: f64) -> Result<Dataset> {
    let features = |f: &FrameRecord| -> Result<Vec<f64>> {
        match model {
            ModelKind::SceneOnly => Ok(f.scene_feature.clone()),
            ModelKind::Combined => Ok(concat_features(&f.scene_feature, &f.detections, min_conf)),
            ModelKind::SceneAttention => f
                .feature_blob
                .as_ref()
                .map(pool)
                .ok_or_else(|| DeduceError::MissingBlob(f.frame_id.clone())),
            ModelKind::ObjectOnly | ModelKind::NBest => {
                Err(DeduceError::InvalidConfig(format!("{model} has no trainable head")))
            }
        }
    };
    let samples = frames
        .iter()
        .map(|f| {
            let label = f.truth.ok_or_else(|| DeduceError::MissingTruth(f.frame_id.clone()))?;
            Ok(Sample {
                features: features(f)?,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(class_set.clone(), samples)
}
