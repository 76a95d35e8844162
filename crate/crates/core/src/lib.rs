//! Place categorization from scene features and object detections.
//!
//! Five models share one dispatcher ([`fusion::predict`]):
//!
//! * scene-only: softmax linear head over a scene feature vector
//! * object-only: landmark voting through a [`codebook::Codebook`]
//! * scene+attention: pooled feature blob plus a class activation heatmap
//! * combined: linear head over the scene feature concatenated with an
//!   80-way object indicator
//! * N-best: scene head, falling back to landmarks below a confidence threshold
//!
//! Training ([`linear`]), evaluation ([`eval`]), synthetic data with an exact
//! Bayes posterior ([`synth`]) and semantic map rendering ([`semmap`]) sit
//! around it. All inputs arrive as line-delimited manifests ([`manifest`]).

pub mod attention;
pub mod codebook;
pub mod error;
mod fields;
pub mod eval;
pub mod fusion;
pub mod linear;
pub mod manifest;
pub mod raster;
pub mod semmap;
pub mod synth;
pub mod types;

pub use codebook::{classify_objects, default_codebook, Codebook};
pub use error::{DeduceError, Result};
pub use fusion::{predict, ModelBundle, ModelKind, Prediction, Source};
pub use linear::{LinearHead, TrainConfig, TrainReport};
pub use manifest::{load_manifest, parse_manifest, read_manifest, Manifest, ManifestHeader};
pub use types::{
    softmax, Blob, ClassSet, Detection, FrameRecord, ObjectClass, Pose, Posterior, Provenance, SceneLabel,
};
