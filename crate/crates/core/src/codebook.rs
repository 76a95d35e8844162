//! Landmark-object codebook and the object-only scene classifier.
//!
//! Each landmark object belongs to exactly one scene. Frames in which no
//! landmark survives the confidence filter are assigned the absence label
//! (corridor for the home class set).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::Deserialize;

use crate::error::{DeduceError, Result};
use crate::types::{ClassSet, Detection, ObjectClass, Posterior, SceneLabel};

/// Key of the absence rule in codebook config files.
pub const ABSENCE_KEY: &str = "absence";

/// Default detection confidence floor for landmark votes.
pub const DEFAULT_MIN_CONF: f64 = 0.5;

/// Top landmark objects per home scene.
const HOME7_LANDMARKS: [(&str, &str); 15] = [
    ("toilet", "bathroom"),
    ("sink", "bathroom"),
    ("bed", "bedroom"),
    ("dining table", "dining_room"),
    ("wine glass", "dining_room"),
    ("bowl", "dining_room"),
    ("oven", "kitchen"),
    ("microwave", "kitchen"),
    ("refrigerator", "kitchen"),
    ("couch", "living_room"),
    ("vase", "living_room"),
    ("tv", "office"),
    ("laptop", "office"),
    ("keyboard", "office"),
    ("mouse", "office"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    class_set: ClassSet,
    entries: BTreeMap<ObjectClass, SceneLabel>,
    absence: SceneLabel,
}

/// The home codebook over [`ClassSet::home7`], absence → corridor.
pub fn default_codebook() -> Codebook {
    let pairs: Vec<(String, String)> = HOME7_LANDMARKS
        .iter()
        .map(|(o, s)| (o.to_string(), s.to_string()))
        .collect();
    Codebook::from_pairs(ClassSet::home7(), pairs, "corridor").expect("built-in codebook is valid")
}

impl Codebook {
    /// Builds a codebook from (object, scene) name pairs, enforcing that every
    /// object appears once and every scene belongs to `class_set`.
    pub fn from_pairs(
        class_set: ClassSet,
        pairs: impl IntoIterator<Item = (String, String)>,
        absence: &str,
    ) -> Result<Self> {
        let absence = class_set
            .get(absence)
            .ok_or_else(|| DeduceError::InvalidCodebook(format!("absence label `{absence}` not in class set")))?;
        let mut entries = BTreeMap::new();
        for (object, scene) in pairs {
            let obj = ObjectClass::from_name(&object)
                .map_err(|_| DeduceError::InvalidCodebook(format!("unknown object `{object}`")))?;
            let label = class_set.get(&scene).ok_or_else(|| {
                DeduceError::InvalidCodebook(format!("scene `{scene}` for `{object}` not in class set"))
            })?;
            if entries.insert(obj, label).is_some() {
                return Err(DeduceError::InvalidCodebook(format!(
                    "object `{object}` is associated with more than one entry"
                )));
            }
        }
        Ok(Codebook {
            class_set,
            entries,
            absence,
        })
    }

    /// Parses a config of the form `{"toilet": "bathroom", ..., "absence": "corridor"}`.
    ///
    /// Duplicate keys are rejected rather than silently overwritten.
    pub fn from_config_str(text: &str, class_set: &ClassSet) -> Result<Self> {
        let OrderedPairs(pairs) = serde_json::from_str(text)
            .map_err(|e| DeduceError::InvalidCodebook(e.to_string()))?;
        let mut absence = None;
        let mut entries = Vec::with_capacity(pairs.len());
        for (k, v) in pairs {
            if k == ABSENCE_KEY {
                if absence.replace(v).is_some() {
                    return Err(DeduceError::InvalidCodebook("duplicate `absence` key".into()));
                }
            } else {
                entries.push((k, v));
            }
        }
        let absence =
            absence.ok_or_else(|| DeduceError::InvalidCodebook("missing `absence` key".into()))?;
        Self::from_pairs(class_set.clone(), entries, &absence)
    }

    pub fn load(path: impl AsRef<Path>, class_set: &ClassSet) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DeduceError::io(path, e))?;
        Self::from_config_str(&text, class_set)
    }

    /// Config text, entries sorted by object id, absence last.
    pub fn to_config_string(&self) -> String {
        let mut obj = serde_json::Map::new();
        for (o, s) in &self.entries {
            obj.insert(o.name().to_string(), self.class_set.name(*s).into());
        }
        obj.insert(ABSENCE_KEY.into(), self.class_set.name(self.absence).into());
        serde_json::to_string_pretty(&obj).expect("codebook serializes")
    }

    pub fn class_set(&self) -> &ClassSet {
        &self.class_set
    }

    pub fn absence_label(&self) -> SceneLabel {
        self.absence
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, object: ObjectClass) -> Option<SceneLabel> {
        self.entries.get(&object).copied()
    }

    /// Looks up an object by detector name.
    pub fn lookup(&self, name: &str) -> Option<SceneLabel> {
        ObjectClass::from_name(name).ok().and_then(|o| self.get(o))
    }

    pub fn entries(&self) -> impl Iterator<Item = (ObjectClass, SceneLabel)> + '_ {
        self.entries.iter().map(|(o, s)| (*o, *s))
    }
}

/// Result of landmark voting.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectVote {
    pub label: SceneLabel,
    pub posterior: Posterior,
    /// Number of surviving detections that matched a codebook entry.
    pub landmarks: usize,
}

impl ObjectVote {
    pub fn found_landmark(&self) -> bool {
        self.landmarks > 0
    }
}

/// Classifies a frame from its detections alone.
///
/// Each detection with confidence ≥ `min_conf` and a codebook entry votes for
/// its scene with weight equal to its confidence. The posterior is the vote
/// weights normalized over scenes; the label is its argmax (lower id on ties).
/// With no weighted vote, the absence label wins with a one-hot posterior.
pub fn classify_objects(detections: &[Detection], cb: &Codebook, min_conf: f64) -> ObjectVote {
    let k = cb.class_set.len();
    let mut votes: Vec<(SceneLabel, f64)> = detections
        .iter()
        .filter(|d| d.confidence >= min_conf)
        .filter_map(|d| cb.get(d.object).map(|s| (s, d.confidence)))
        .collect();
    let landmarks = votes.len();
    // Fixed summation order keeps the result independent of detection order.
    votes.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut weights = vec![0.0; k];
    for (s, w) in &votes {
        weights[s.0] += w;
    }
    if weights.iter().sum::<f64>() > 0.0 {
        let posterior = Posterior::from_weights(weights);
        ObjectVote {
            label: posterior.argmax(),
            posterior,
            landmarks,
        }
    } else {
        ObjectVote {
            label: cb.absence,
            posterior: Posterior::one_hot(k, cb.absence),
            landmarks,
        }
    }
}

/// JSON object read as an ordered list of pairs so duplicate keys can be detected.
struct OrderedPairs(Vec<(String, String)>);

impl<'de> Deserialize<'de> for OrderedPairs {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        struct PairVisitor;
        impl<'de> Visitor<'de> for PairVisitor {
            type Value = OrderedPairs;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object mapping object names to scene names")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut pairs = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    pairs.push((k, v));
                }
                Ok(OrderedPairs(pairs))
            }
        }
        de.deserialize_map(PairVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(name: &str, conf: f64) -> Detection {
        Detection::full_frame(name, conf).unwrap()
    }

    fn scene(name: &str) -> SceneLabel {
        ClassSet::home7().get(name).unwrap()
    }

    #[test]
    fn table_lookups() {
        let cb = default_codebook();
        assert_eq!(cb.lookup("bed"), Some(scene("bedroom")));
        assert_eq!(cb.lookup("mouse"), Some(scene("office")));
        assert_eq!(cb.lookup("person"), None);
        assert_eq!(cb.len(), 15);
        assert_eq!(cb.absence_label(), scene("corridor"));
    }

    #[test]
    fn no_detections_means_corridor() {
        let v = classify_objects(&[], &default_codebook(), 0.5);
        assert_eq!(v.label, scene("corridor"));
        assert_eq!(v.posterior, Posterior::one_hot(7, scene("corridor")));
        assert!(!v.found_landmark());
    }

    #[test]
    fn single_bed_is_bedroom() {
        let v = classify_objects(&[det("bed", 0.9)], &default_codebook(), 0.5);
        assert_eq!(v.label, scene("bedroom"));
        assert_eq!(v.posterior, Posterior::one_hot(7, scene("bedroom")));
    }

    #[test]
    fn confidence_weighted_votes() {
        let dets = [det("sink", 0.6), det("oven", 0.5), det("microwave", 0.4)];
        let v = classify_objects(&dets, &default_codebook(), 0.0);
        assert_eq!(v.label, scene("kitchen"));
        assert!((v.posterior.get(scene("bathroom")) - 0.4).abs() < 1e-12);
        assert!((v.posterior.get(scene("kitchen")) - 0.6).abs() < 1e-12);
        assert_eq!(v.landmarks, 3);
    }

    #[test]
    fn low_confidence_detections_are_discarded() {
        let v = classify_objects(&[det("bed", 0.3)], &default_codebook(), 0.5);
        assert_eq!(v.label, scene("corridor"));
    }

    #[test]
    fn ties_go_to_lower_scene_id() {
        let v = classify_objects(&[det("tv", 0.7), det("bed", 0.7)], &default_codebook(), 0.5);
        assert_eq!(v.label, scene("bedroom"));
    }

    #[test]
    fn config_round_trip_and_rejections() {
        let cb = default_codebook();
        let text = cb.to_config_string();
        assert_eq!(Codebook::from_config_str(&text, &ClassSet::home7()).unwrap(), cb);

        let dup = r#"{"bed":"bedroom","bed":"office","absence":"corridor"}"#;
        assert!(Codebook::from_config_str(dup, &ClassSet::home7()).is_err());
        let outside = r#"{"bed":"ballroom","absence":"corridor"}"#;
        assert!(Codebook::from_config_str(outside, &ClassSet::home7()).is_err());
        let no_absence = r#"{"bed":"bedroom"}"#;
        assert!(Codebook::from_config_str(no_absence, &ClassSet::home7()).is_err());
        let office = r#"{"laptop":"office","oven":"kitchen","absence":"corridor"}"#;
        let cb = Codebook::from_config_str(office, &ClassSet::office5()).unwrap();
        assert_eq!(cb.lookup("oven"), ClassSet::office5().get("kitchen"));
    }
}
