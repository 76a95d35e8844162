//! Seeded synthetic perception data with an exact Bayes posterior.
//!
//! Each scene class draws its scene feature from an isotropic Gaussian and
//! each object independently with a per-class probability; present objects
//! get a confidence uniform in the class's range and a random valid box.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Map, Value};

use crate::error::{DeduceError, Result};
use crate::fields::{self, Ctx};
use crate::manifest::{Manifest, ManifestHeader};
use crate::types::{
    Blob, ClassSet, Detection, FrameRecord, ObjectClass, Pose, Posterior, SceneLabel, DEFAULT_FEATURE_DIM,
    NUM_OBJECTS,
};

/// Generative parameters of one scene class.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub feature_mean: Vec<f64>,
    pub feature_sigma: f64,
    pub object_probs: BTreeMap<ObjectClass, f64>,
    pub conf_range: (f64, f64),
}

impl SceneModel {
    pub fn object_prob(&self, object: ObjectClass) -> f64 {
        self.object_probs.get(&object).copied().unwrap_or(0.0)
    }
}

/// Per-class generative models over one class set.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModelSet {
    pub class_set: ClassSet,
    pub feature_dim: usize,
    /// When set, frames carry rank-1 `(C, H, W)` blobs.
    pub blob_shape: Option<[usize; 3]>,
    pub classes: Vec<SceneModel>,
}

/// Distance between any two class means, in units of sigma, for the built-in presets.
pub const PRESET_SEPARATION: f64 = 3.5;
/// Per-dimension feature noise of the built-in presets. Small enough that the
/// default learning rate stays stable on 512-d inputs.
pub const PRESET_SIGMA: f64 = 0.07;
const STRAY_LANDMARK: f64 = 0.02;
const STRAY_CONTEXT: f64 = 0.05;

/// `(scene, landmark objects, context objects)` with per-object occurrence probabilities.
type Preset<'a> = (&'a str, &'a [(&'a str, f64)], &'a [(&'a str, f64)]);

const CLUTTER: [(&str, f64); 4] = [("person", 0.3), ("chair", 0.35), ("cup", 0.15), ("book", 0.15)];

impl SceneModelSet {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DeduceError::InvalidConfig(m));
        if self.classes.len() != self.class_set.len() {
            return bad(format!(
                "{} class models for {} classes",
                self.classes.len(),
                self.class_set.len()
            ));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if let Some(shape) = self.blob_shape {
            if shape.contains(&0) {
                return bad("blob_shape has a zero extent".into());
            }
        }
        for (label, m) in self.class_set.labels().zip(&self.classes) {
            let name = self.class_set.name(label);
            if m.feature_mean.len() != self.feature_dim {
                return bad(format!("{name}: mean has {} entries", m.feature_mean.len()));
            }
            if m.feature_mean.iter().any(|v| !v.is_finite()) {
                return bad(format!("{name}: non-finite mean"));
            }
            if !(m.feature_sigma.is_finite() && m.feature_sigma > 0.0) {
                return bad(format!("{name}: sigma must be positive"));
            }
            if m.object_probs.values().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("{name}: object probability outside [0,1]"));
            }
            let (lo, hi) = m.conf_range;
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad(format!("{name}: conf_range must satisfy 0 <= lo <= hi <= 1"));
            }
        }
        Ok(())
    }

    /// Home preset: class means on the coordinate axes, landmark objects tied to the
    /// codebook, plus context objects that the codebook ignores.
    pub fn home7() -> Self {
        let classes: [Preset; 7] = [
            ("bathroom", &[("toilet", 0.6), ("sink", 0.55)], &[("toothbrush", 0.8), ("hair drier", 0.4)]),
            ("bedroom", &[("bed", 0.85)], &[("teddy bear", 0.55), ("clock", 0.5)]),
            ("corridor", &[], &[("backpack", 0.5), ("handbag", 0.5), ("umbrella", 0.3)]),
            (
                "dining_room",
                &[("dining table", 0.65), ("wine glass", 0.3), ("bowl", 0.35)],
                &[("fork", 0.7), ("knife", 0.65), ("spoon", 0.55)],
            ),
            (
                "kitchen",
                &[("oven", 0.45), ("microwave", 0.4), ("refrigerator", 0.45)],
                &[("bottle", 0.7), ("banana", 0.5)],
            ),
            ("living_room", &[("couch", 0.6), ("vase", 0.3)], &[("remote", 0.7), ("potted plant", 0.65)]),
            (
                "office",
                &[("tv", 0.35), ("laptop", 0.45), ("keyboard", 0.4), ("mouse", 0.3)],
                &[("cell phone", 0.65), ("scissors", 0.3)],
            ),
        ];
        Self::axis_preset(ClassSet::home7(), &classes)
    }

    /// Office-floor preset matching the shipped office codebook config.
    pub fn office5() -> Self {
        let classes: [Preset; 5] = [
            ("conference_room", &[("dining table", 0.6), ("clock", 0.3)], &[("bottle", 0.65), ("remote", 0.5)]),
            ("corridor", &[], &[("backpack", 0.5), ("umbrella", 0.4)]),
            (
                "kitchen",
                &[("microwave", 0.5), ("refrigerator", 0.5), ("sink", 0.4)],
                &[("banana", 0.5), ("spoon", 0.55)],
            ),
            ("living_room", &[("couch", 0.7), ("potted plant", 0.35)], &[("vase", 0.55), ("cat", 0.3)]),
            (
                "office",
                &[("laptop", 0.5), ("keyboard", 0.45), ("mouse", 0.35), ("tv", 0.3)],
                &[("cell phone", 0.65), ("scissors", 0.4)],
            ),
        ];
        Self::axis_preset(ClassSet::office5(), &classes)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "home7" => Some(Self::home7()),
            "office5" => Some(Self::office5()),
            _ => None,
        }
    }

    fn axis_preset(class_set: ClassSet, presets: &[Preset]) -> Self {
        let dim = DEFAULT_FEATURE_DIM;
        let scale = PRESET_SEPARATION * PRESET_SIGMA / std::f64::consts::SQRT_2;
        let id = |o: &str| ObjectClass::from_name(o).expect("coco name");
        let classes = presets
            .iter()
            .enumerate()
            .map(|(k, (name, own, context))| {
                debug_assert_eq!(class_set.get(name), Some(SceneLabel(k)));
                let mut mean = vec![0.0; dim];
                mean[k] = scale;
                let mut probs = BTreeMap::new();
                for (o, p) in CLUTTER {
                    probs.insert(id(o), p);
                }
                for (_, l, c) in presets {
                    for (o, _) in l.iter() {
                        probs.insert(id(o), STRAY_LANDMARK);
                    }
                    for (o, _) in c.iter() {
                        probs.insert(id(o), STRAY_CONTEXT);
                    }
                }
                for (o, p) in own.iter().chain(context.iter()) {
                    probs.insert(id(o), *p);
                }
                SceneModel {
                    feature_mean: mean,
                    feature_sigma: PRESET_SIGMA,
                    object_probs: probs,
                    conf_range: (0.3, 1.0),
                }
            })
            .collect();
        SceneModelSet {
            class_set,
            feature_dim: dim,
            blob_shape: None,
            classes,
        }
    }

    pub fn model(&self, label: SceneLabel) -> &SceneModel {
        &self.classes[label.0]
    }

    /// Preset file text. Means are written sparsely as `{"index": value}`.
    pub fn to_preset_string(&self) -> String {
        let mut classes = Map::new();
        for (label, m) in self.class_set.labels().zip(&self.classes) {
            let mean: Map<String, Value> = m
                .feature_mean
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i.to_string(), fields::num(*v)))
                .collect();
            let probs: Map<String, Value> = m
                .object_probs
                .iter()
                .map(|(o, p)| (o.name().to_string(), fields::num(*p)))
                .collect();
            classes.insert(
                self.class_set.name(label).to_string(),
                json!({
                    "mean": mean,
                    "sigma": fields::num(m.feature_sigma),
                    "object_probs": probs,
                    "conf_range": [fields::num(m.conf_range.0), fields::num(m.conf_range.1)],
                }),
            );
        }
        serde_json::to_string_pretty(&json!({
            "class_set": self.class_set.names(),
            "feature_dim": self.feature_dim,
            "blob_shape": self.blob_shape,
            "classes": classes,
        }))
        .expect("preset serializes")
    }

    /// Parses a preset file. `mean` may be a dense array or a sparse `{"index": value}` object.
    pub fn from_preset_str(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| DeduceError::schema(1, "<preset>", e.to_string()))?;
        let ctx = Ctx::new(1, &root, "<preset>")?;
        ctx.deny_unknown(&["class_set", "feature_dim", "blob_shape", "classes"])?;
        let class_set = ClassSet::new(ctx.string_array("class_set")?)?;
        let feature_dim = ctx.usize("feature_dim")?;
        if feature_dim == 0 || feature_dim > 1 << 20 {
            return Err(ctx.err("feature_dim", "out of range"));
        }
        let blob_shape = match ctx.optional("blob_shape") {
            None => None,
            Some(v) => {
                let dims: Option<Vec<usize>> = v.as_array().map(|a| a.iter().filter_map(fields::as_usize).collect());
                match dims.as_deref() {
                    Some([c, h, w]) if *c > 0 && *h > 0 && *w > 0 && c * h * w <= 1 << 24 => Some([*c, *h, *w]),
                    _ => return Err(ctx.err("blob_shape", "expected [C,H,W] with positive integers")),
                }
            }
        };
        let classes_v = ctx
            .required("classes")?
            .as_object()
            .ok_or_else(|| ctx.err("classes", "expected an object keyed by scene"))?;
        for key in classes_v.keys() {
            class_set.resolve(key)?;
        }
        let mut classes = Vec::with_capacity(class_set.len());
        for name in class_set.names() {
            let field = format!("classes.{name}");
            let v = classes_v
                .get(name)
                .ok_or_else(|| DeduceError::schema(1, &field, "missing class"))?;
            let c = Ctx::new(1, v, &field)?;
            c.deny_unknown(&["mean", "sigma", "object_probs", "conf_range"])?;
            let mean_v = c.required("mean")?;
            let feature_mean = match mean_v {
                Value::Array(_) => fields::f64_array(mean_v, &format!("{field}.mean"), 1)?,
                Value::Object(sparse) => {
                    let mut mean = vec![0.0; feature_dim];
                    for (k, x) in sparse {
                        let i: usize = k
                            .parse()
                            .ok()
                            .filter(|i| *i < feature_dim)
                            .ok_or_else(|| DeduceError::schema(1, format!("{field}.mean.{k}"), "bad index"))?;
                        mean[i] = fields::finite(x)
                            .ok_or_else(|| DeduceError::schema(1, format!("{field}.mean.{k}"), "expected a finite number"))?;
                    }
                    mean
                }
                _ => return Err(DeduceError::schema(1, format!("{field}.mean"), "expected array or object")),
            };
            let feature_sigma = c.f64("sigma")?;
            let mut object_probs = BTreeMap::new();
            if let Some(pv) = c.optional("object_probs") {
                let obj = pv
                    .as_object()
                    .ok_or_else(|| DeduceError::schema(1, format!("{field}.object_probs"), "expected an object"))?;
                for (o, p) in obj {
                    let object = ObjectClass::from_name(o)?;
                    let p = fields::finite(p).ok_or_else(|| {
                        DeduceError::schema(1, format!("{field}.object_probs.{o}"), "expected a finite number")
                    })?;
                    object_probs.insert(object, p);
                }
            }
            let range = c.f64_array("conf_range")?;
            let conf_range = match range.as_slice() {
                [lo, hi] => (*lo, *hi),
                _ => return Err(DeduceError::schema(1, format!("{field}.conf_range"), "expected [lo, hi]")),
            };
            classes.push(SceneModel {
                feature_mean,
                feature_sigma,
                object_probs,
                conf_range,
            });
        }
        let set = SceneModelSet {
            class_set,
            feature_dim,
            blob_shape,
            classes,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DeduceError::io(path, e))?;
        Self::from_preset_str(&text)
    }
}

/// Draws one frame of class `label`.
fn draw_frame(models: &SceneModelSet, label: SceneLabel, frame_id: String, rng: &mut ChaCha8Rng) -> FrameRecord {
    let m = models.model(label);
    let noise = Normal::new(0.0, m.feature_sigma).expect("sigma validated");
    let scene_feature: Vec<f64> = m.feature_mean.iter().map(|mu| mu + noise.sample(rng)).collect();

    let mut detections = Vec::new();
    for object in ObjectClass::all() {
        let p = m.object_prob(object);
        if p > 0.0 && rng.random_bool(p) {
            let (lo, hi) = m.conf_range;
            let confidence = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let w = rng.random_range(0.05..=1.0);
            let h = rng.random_range(0.05..=1.0);
            let x = rng.random_range(0.0..=1.0 - w);
            let y = rng.random_range(0.0..=1.0 - h);
            detections.push(Detection {
                object,
                confidence,
                bbox: [x, y, w, h],
            });
        }
    }

    let feature_blob = models.blob_shape.map(|shape| rank_one_blob(models, label, shape, rng));

    FrameRecord {
        frame_id,
        scene_feature,
        feature_blob,
        detections,
        truth: Some(label),
        pose: None,
        image_size: crate::types::DEFAULT_IMAGE_SIZE,
    }
}

/// `blob[c][h][w] = u[c] · s[h][w]` with `u` a noisy class prototype and `s` a
/// Gaussian bump at a random cell, scaled so that its spatial mean is 1.
fn rank_one_blob(models: &SceneModelSet, label: SceneLabel, shape: [usize; 3], rng: &mut ChaCha8Rng) -> Blob {
    let [c, h, w] = shape;
    let m = models.model(label);
    let noise = Normal::new(0.0, m.feature_sigma).expect("sigma validated");
    let k = models.class_set.len();
    let gain = PRESET_SEPARATION * m.feature_sigma / std::f64::consts::SQRT_2;
    let u: Vec<f64> = (0..c)
        .map(|ci| if ci % k == label.0 { gain } else { 0.0 } + noise.sample(rng))
        .collect();
    let (cy, cx) = (rng.random_range(0..h), rng.random_range(0..w));
    let spread = (h.max(w) as f64 / 8.0).max(0.75);
    let bump: Vec<f64> = (0..h)
        .flat_map(|y| {
            (0..w).map(move |x| {
                let d2 = (y as f64 - cy as f64).powi(2) + (x as f64 - cx as f64).powi(2);
                (-d2 / (2.0 * spread * spread)).exp()
            })
        })
        .collect();
    let total: f64 = bump.iter().sum();
    let n = (h * w) as f64;
    let mut data = Vec::with_capacity(c * h * w);
    for uc in &u {
        data.extend(bump.iter().map(|b| uc * b * n / total));
    }
    Blob::new(shape, data).expect("finite blob")
}

fn header_for(models: &SceneModelSet) -> ManifestHeader {
    let mut header = ManifestHeader::new(models.class_set.clone(), models.feature_dim);
    header.blob_shape = models.blob_shape;
    header
}

/// `n_per_class` frames per class, class-major, deterministic in `seed`.
pub fn generate(models: &SceneModelSet, n_per_class: usize, seed: u64) -> Result<Manifest> {
    models.validate()?;
    if n_per_class == 0 {
        return Err(DeduceError::InvalidConfig("n_per_class must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = Manifest::new(header_for(models));
    for label in models.class_set.labels() {
        let name = models.class_set.name(label);
        for i in 0..n_per_class {
            let frame = draw_frame(models, label, format!("{name}_{i:05}"), &mut rng);
            manifest.frames.push(frame);
        }
    }
    Ok(manifest)
}

/// A straight walk through consecutive rooms along +x.
#[derive(Debug, Clone, PartialEq)]
pub struct Walk {
    /// Room classes in visiting order.
    pub rooms: Vec<SceneLabel>,
    pub room_length: f64,
    pub poses_per_room: usize,
    /// Seconds between poses.
    pub dt: f64,
}

impl Walk {
    /// Pose `i` of the walk and the room it lies in.
    pub fn pose(&self, i: usize) -> (Pose, SceneLabel) {
        let room = i / self.poses_per_room;
        let step = self.room_length / self.poses_per_room as f64;
        let x = (i as f64 + 0.5) * step;
        let y = 0.5 * (x * 0.7).sin();
        (Pose { x, y, t: i as f64 * self.dt }, self.rooms[room])
    }

    pub fn len(&self) -> usize {
        self.rooms.len() * self.poses_per_room
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Posed frames along `walk`, each drawn from the class of the room it is in.
pub fn generate_walk(models: &SceneModelSet, walk: &Walk, seed: u64) -> Result<Manifest> {
    models.validate()?;
    if walk.is_empty() || !(walk.room_length > 0.0) || !(walk.dt >= 0.0) {
        return Err(DeduceError::InvalidConfig("walk needs rooms, poses and a positive room length".into()));
    }
    if let Some(bad) = walk.rooms.iter().find(|r| r.0 >= models.class_set.len()) {
        return Err(DeduceError::InvalidConfig(format!("room label {bad} outside class set")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = Manifest::new(header_for(models));
    for i in 0..walk.len() {
        let (pose, label) = walk.pose(i);
        let mut frame = draw_frame(models, label, format!("walk_{i:05}"), &mut rng);
        frame.pose = Some(pose);
        manifest.frames.push(frame);
    }
    Ok(manifest)
}

/// Log-density of a frame under one class (up to terms shared by all classes).
fn class_log_likelihood(m: &SceneModel, frame: &FrameRecord) -> f64 {
    let s2 = m.feature_sigma * m.feature_sigma;
    let sq: f64 = frame
        .scene_feature
        .iter()
        .zip(&m.feature_mean)
        .map(|(x, mu)| (x - mu) * (x - mu))
        .sum();
    let mut ll = -sq / (2.0 * s2) - frame.scene_feature.len() as f64 * m.feature_sigma.ln();

    let mut present: [Option<f64>; NUM_OBJECTS] = [None; NUM_OBJECTS];
    for d in &frame.detections {
        present[d.object.id()] = Some(d.confidence);
    }
    let (lo, hi) = m.conf_range;
    for object in ObjectClass::all() {
        let p = m.object_prob(object);
        match present[object.id()] {
            Some(conf) => {
                ll += p.ln();
                ll += if hi > lo {
                    if (lo..=hi).contains(&conf) {
                        -(hi - lo).ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                } else if conf == lo {
                    0.0
                } else {
                    f64::NEG_INFINITY
                };
            }
            None => ll += (1.0 - p).ln(),
        }
    }
    ll
}

/// Exact class posterior under the generative model with equal priors.
pub fn bayes_oracle(models: &SceneModelSet, frame: &FrameRecord) -> Posterior {
    let lls: Vec<f64> = models.classes.iter().map(|m| class_log_likelihood(m, frame)).collect();
    let max = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Posterior::uniform(lls.len());
    }
    let weights: Vec<f64> = lls.iter().map(|l| (l - max).exp()).collect();
    Posterior::from_weights(weights)
}
