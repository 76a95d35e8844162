//! Shared domain types: class vocabularies, detections, frames and posteriors.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{DeduceError, Result};

/// Bounding-box slack allowed past the unit square.
pub const BBOX_EPS: f64 = 1e-6;

/// Default scene feature width (ResNet-18 penultimate layer).
pub const DEFAULT_FEATURE_DIM: usize = 512;

/// Default image size in pixels.
pub const DEFAULT_IMAGE_SIZE: (u32, u32) = (224, 224);

/// The MS-COCO detector vocabulary, in canonical category order.
pub const COCO_CLASSES: [&str; 80] = [
    "person",
    "bicycle",
    "car",
    "motorcycle",
    "airplane",
    "bus",
    "train",
    "truck",
    "boat",
    "traffic light",
    "fire hydrant",
    "stop sign",
    "parking meter",
    "bench",
    "bird",
    "cat",
    "dog",
    "horse",
    "sheep",
    "cow",
    "elephant",
    "bear",
    "zebra",
    "giraffe",
    "backpack",
    "umbrella",
    "handbag",
    "tie",
    "suitcase",
    "frisbee",
    "skis",
    "snowboard",
    "sports ball",
    "kite",
    "baseball bat",
    "baseball glove",
    "skateboard",
    "surfboard",
    "tennis racket",
    "bottle",
    "wine glass",
    "cup",
    "fork",
    "knife",
    "spoon",
    "bowl",
    "banana",
    "apple",
    "sandwich",
    "orange",
    "broccoli",
    "carrot",
    "hot dog",
    "pizza",
    "donut",
    "cake",
    "chair",
    "couch",
    "potted plant",
    "bed",
    "dining table",
    "toilet",
    "tv",
    "laptop",
    "mouse",
    "remote",
    "keyboard",
    "cell phone",
    "microwave",
    "oven",
    "toaster",
    "sink",
    "refrigerator",
    "book",
    "clock",
    "vase",
    "scissors",
    "teddy bear",
    "hair drier",
    "toothbrush",
];

/// Number of detector object classes.
pub const NUM_OBJECTS: usize = COCO_CLASSES.len();

/// Index of a scene class inside its [`ClassSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SceneLabel(pub usize);

impl SceneLabel {
    pub fn id(self) -> usize {
        self.0
    }
}

impl fmt::Display for SceneLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Ordered, duplicate-free list of scene names. Label ids index into it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassSet {
    names: Vec<String>,
}

impl ClassSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(DeduceError::InvalidClassSet(format!(
                "need at least 2 classes, got {}",
                names.len()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(DeduceError::InvalidClassSet("empty class name".into()));
            }
            if names[..i].contains(name) {
                return Err(DeduceError::InvalidClassSet(format!("duplicate class `{name}`")));
            }
        }
        Ok(ClassSet { names })
    }

    /// The seven home scenes, alphabetical.
    pub fn home7() -> Self {
        ClassSet {
            names: [
                "bathroom",
                "bedroom",
                "corridor",
                "dining_room",
                "kitchen",
                "living_room",
                "office",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }

    /// The five office-floor scenes used for the robot mapping runs.
    pub fn office5() -> Self {
        ClassSet {
            names: ["conference_room", "corridor", "kitchen", "living_room", "office"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    /// Looks up a built-in set by name (`home7` or `office5`).
    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "home7" => Some(Self::home7()),
            "office5" => Some(Self::office5()),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, label: SceneLabel) -> &str {
        &self.names[label.0]
    }

    pub fn get(&self, name: &str) -> Option<SceneLabel> {
        self.names.iter().position(|n| n == name).map(SceneLabel)
    }

    /// Like [`ClassSet::get`] but reports an unknown-scene error.
    pub fn resolve(&self, name: &str) -> Result<SceneLabel> {
        self.get(name).ok_or_else(|| DeduceError::UnknownScene {
            name: name.to_string(),
            known: self.names.join(", "),
        })
    }

    pub fn labels(&self) -> impl Iterator<Item = SceneLabel> + '_ {
        (0..self.names.len()).map(SceneLabel)
    }
}

/// One of the 80 detector categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectClass(u8);

impl ObjectClass {
    pub fn new(id: usize) -> Option<Self> {
        (id < NUM_OBJECTS).then_some(ObjectClass(id as u8))
    }

    pub fn from_name(name: &str) -> Result<Self> {
        COCO_CLASSES
            .iter()
            .position(|n| *n == name)
            .map(|i| ObjectClass(i as u8))
            .ok_or_else(|| DeduceError::UnknownObject(name.to_string()))
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        COCO_CLASSES[self.0 as usize]
    }

    pub fn all() -> impl Iterator<Item = ObjectClass> {
        (0..NUM_OBJECTS as u8).map(ObjectClass)
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A detector output in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub object: ObjectClass,
    pub confidence: f64,
    /// (x, y, w, h), each in [0, 1].
    pub bbox: [f64; 4],
}

impl Detection {
    pub fn new(object: ObjectClass, confidence: f64, bbox: [f64; 4]) -> Result<Self> {
        let d = Detection {
            object,
            confidence,
            bbox,
        };
        d.validate()?;
        Ok(d)
    }

    /// Detection with a full-frame box; handy for fixtures.
    pub fn full_frame(name: &str, confidence: f64) -> Result<Self> {
        Self::new(ObjectClass::from_name(name)?, confidence, [0.0, 0.0, 1.0, 1.0])
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(DeduceError::InvalidConfig(format!(
                "detection confidence {} outside [0,1]",
                self.confidence
            )));
        }
        let [x, y, w, h] = self.bbox;
        if self.bbox.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DeduceError::InvalidConfig(format!(
                "bbox {:?} has a coordinate outside [0,1]",
                self.bbox
            )));
        }
        if x + w > 1.0 + BBOX_EPS || y + h > 1.0 + BBOX_EPS {
            return Err(DeduceError::InvalidConfig(format!(
                "bbox {:?} extends past the image",
                self.bbox
            )));
        }
        Ok(())
    }
}

/// Robot pose at capture time: meters and seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

/// Spatial activation tensor, channel-major `(C, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Blob {
    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let [channels, height, width] = shape;
        if channels == 0 || height == 0 || width == 0 {
            return Err(DeduceError::Shape(format!("blob shape {shape:?} has a zero extent")));
        }
        if data.len() != channels * height * width {
            return Err(DeduceError::Shape(format!(
                "blob shape {shape:?} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DeduceError::NonFinite("feature_blob".into()));
        }
        Ok(Blob {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        let [c, h, w] = shape;
        Blob {
            channels: c,
            height: h,
            width: w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[(c * self.height + h) * self.width + w]
    }

    pub fn set(&mut self, c: usize, h: usize, w: usize, value: f64) {
        self.data[(c * self.height + h) * self.width + w] = value;
    }

    /// The `H x W` plane of channel `c`, row-major.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// One perception sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: String,
    pub scene_feature: Vec<f64>,
    pub feature_blob: Option<Blob>,
    pub detections: Vec<Detection>,
    pub truth: Option<SceneLabel>,
    pub pose: Option<Pose>,
    /// (width, height) in pixels.
    pub image_size: (u32, u32),
}

impl FrameRecord {
    pub fn new(frame_id: impl Into<String>, scene_feature: Vec<f64>) -> Self {
        FrameRecord {
            frame_id: frame_id.into(),
            scene_feature,
            feature_blob: None,
            detections: Vec::new(),
            truth: None,
            pose: None,
            image_size: DEFAULT_IMAGE_SIZE,
        }
    }
}

/// Normalized probability vector over a class set.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior(Vec<f64>);

impl Posterior {
    /// Tolerance on the sum-to-one check.
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(DeduceError::Empty("posterior".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(DeduceError::InvalidConfig(format!(
                "posterior entries must lie in [0,1]: {values:?}"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(DeduceError::InvalidConfig(format!("posterior sums to {sum}")));
        }
        Ok(Posterior(values))
    }

    pub fn one_hot(len: usize, label: SceneLabel) -> Self {
        let mut v = vec![0.0; len];
        v[label.0] = 1.0;
        Posterior(v)
    }

    pub fn uniform(len: usize) -> Self {
        Posterior(vec![1.0 / len as f64; len])
    }

    /// Normalizes non-negative weights with a positive total.
    pub(crate) fn from_weights(weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        Posterior(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, label: SceneLabel) -> f64 {
        self.0[label.0]
    }

    /// Most probable class; ties go to the lower id.
    pub fn argmax(&self) -> SceneLabel {
        SceneLabel(argmax(&self.0))
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Index of the largest entry, first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Posterior> {
    if logits.is_empty() {
        return Err(DeduceError::Empty("logits".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(DeduceError::NonFinite("logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Posterior(exps.into_iter().map(|e| e / total).collect()))
}

/// Origin of an output file: tool version, seed and a digest of the run configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(seed: Option<u64>, config_hash: impl Into<String>) -> Self {
        Provenance {
            tool: format!("deduce {}", env!("CARGO_PKG_VERSION")),
            seed,
            config_hash: config_hash.into(),
        }
    }

    /// Single-line rendering for comment headers.
    pub fn comment_line(&self) -> String {
        match self.seed {
            Some(seed) => format!("{} seed={} config={}", self.tool, seed, self.config_hash),
            None => format!("{} seed=none config={}", self.tool, self.config_hash),
        }
    }
}
