//! Line-delimited manifest files: one header record followed by frame records.
//!
//! ```text
//! {"type":"header","class_set":[...],"feature_dim":512,"blob_shape":[C,H,W]|null}
//! {"type":"frame","frame_id":"f0","scene_feature":[...],"feature_blob":null,
//!  "detections":[{"name":"bed","confidence":0.9,"bbox":[x,y,w,h]}],
//!  "truth":"bedroom","pose":[x,y,t],"image_size":[224,224]}
//! ```
//!
//! Floats are written in shortest round-trip form, so `parse(save(m)) == m`.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{DeduceError, Result};
use crate::fields::{self, num, num_array, Ctx};
use crate::types::{
    Blob, ClassSet, Detection, FrameRecord, ObjectClass, Pose, Provenance, DEFAULT_FEATURE_DIM,
    DEFAULT_IMAGE_SIZE,
};

const HEADER_FIELDS: [&str; 5] = ["type", "class_set", "feature_dim", "blob_shape", "provenance"];
const FRAME_FIELDS: [&str; 8] = [
    "type",
    "frame_id",
    "scene_feature",
    "feature_blob",
    "detections",
    "truth",
    "pose",
    "image_size",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestHeader {
    pub class_set: ClassSet,
    pub feature_dim: usize,
    pub blob_shape: Option<[usize; 3]>,
    pub provenance: Option<Provenance>,
    /// Producer-specific keys (e.g. backbone checkpoint ids), preserved verbatim.
    pub extra: Map<String, Value>,
}

impl ManifestHeader {
    pub fn new(class_set: ClassSet, feature_dim: usize) -> Self {
        ManifestHeader {
            class_set,
            feature_dim,
            blob_shape: None,
            provenance: None,
            extra: Map::new(),
        }
    }
}

impl Default for ManifestHeader {
    fn default() -> Self {
        Self::new(ClassSet::home7(), DEFAULT_FEATURE_DIM)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub frames: Vec<FrameRecord>,
}

impl Manifest {
    pub fn new(header: ManifestHeader) -> Self {
        Manifest {
            header,
            frames: Vec::new(),
        }
    }

    pub fn class_set(&self) -> &ClassSet {
        &self.header.class_set
    }

    /// Serializes the manifest to its line-delimited text form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&header_value(&self.header).to_string());
        out.push('\n');
        for frame in &self.frames {
            out.push_str(&frame_value(frame, &self.header.class_set).to_string());
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(self.to_text().as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| DeduceError::io(path, e))
    }
}

/// Reads and validates a manifest, requiring its header class set to equal `class_set`.
pub fn load_manifest(path: impl AsRef<Path>, class_set: &ClassSet) -> Result<Manifest> {
    let manifest = read_manifest(path)?;
    if manifest.header.class_set != *class_set {
        return Err(DeduceError::schema(
            1,
            "class_set",
            format!(
                "manifest declares [{}], expected [{}]",
                manifest.header.class_set.names().join(", "),
                class_set.names().join(", ")
            ),
        ));
    }
    Ok(manifest)
}

/// Reads and validates a manifest using the class set declared in its header.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DeduceError::io(path, e))?;
    parse_manifest(&text)
}

/// Parses manifest text. Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut header: Option<ManifestHeader> = None;
    let mut frames = Vec::new();
    let mut last_t: Option<f64> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw)
            .map_err(|e| DeduceError::schema(line, "<record>", e.to_string()))?;
        let ctx = Ctx::new(line, &value, "<record>")?;
        match ctx.str("type")? {
            "header" => {
                if header.is_some() {
                    return Err(ctx.err("type", "duplicate header record"));
                }
                if !frames.is_empty() {
                    return Err(ctx.err("type", "header must precede frames"));
                }
                header = Some(parse_header(ctx)?);
            }
            "frame" => {
                let Some(h) = header.as_ref() else {
                    return Err(ctx.err("type", "frame record before header"));
                };
                let frame = parse_frame(ctx, h)?;
                if let Some(pose) = frame.pose {
                    if let Some(prev) = last_t {
                        if pose.t < prev {
                            return Err(ctx.err(
                                "pose",
                                format!("timestamp {} decreases (previous {prev})", pose.t),
                            ));
                        }
                    }
                    last_t = Some(pose.t);
                }
                frames.push(frame);
            }
            other => return Err(ctx.err("type", format!("unknown record type `{other}`"))),
        }
    }

    let header = header.ok_or_else(|| DeduceError::schema(1, "type", "missing header record"))?;
    Ok(Manifest { header, frames })
}

fn parse_header(ctx: Ctx<'_>) -> Result<ManifestHeader> {
    let names = ctx.string_array("class_set")?;
    let class_set =
        ClassSet::new(names).map_err(|e| ctx.err("class_set", e.to_string()))?;
    let feature_dim = match ctx.optional("feature_dim") {
        None => DEFAULT_FEATURE_DIM,
        Some(v) => fields::as_usize(v)
            .filter(|d| *d > 0)
            .ok_or_else(|| ctx.err("feature_dim", "expected a positive integer"))?,
    };
    let blob_shape = match ctx.optional("blob_shape") {
        None => None,
        Some(v) => Some(parse_shape(v).ok_or_else(|| {
            ctx.err("blob_shape", "expected [C,H,W] with positive integers")
        })?),
    };
    let provenance = match ctx.optional("provenance") {
        None => None,
        Some(v) => Some(
            serde_json::from_value::<Provenance>(v.clone())
                .map_err(|e| ctx.err("provenance", e.to_string()))?,
        ),
    };
    let extra = ctx
        .obj
        .iter()
        .filter(|(k, _)| !HEADER_FIELDS.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Ok(ManifestHeader {
        class_set,
        feature_dim,
        blob_shape,
        provenance,
        extra,
    })
}

fn parse_shape(v: &Value) -> Option<[usize; 3]> {
    let arr = v.as_array()?;
    if arr.len() != 3 {
        return None;
    }
    let mut shape = [0usize; 3];
    for (s, x) in shape.iter_mut().zip(arr) {
        *s = fields::as_usize(x).filter(|n| *n > 0)?;
    }
    // Guard against absurd allocations from hostile headers.
    shape
        .iter()
        .try_fold(1usize, |acc, s| acc.checked_mul(*s))
        .filter(|n| *n <= 1 << 28)?;
    Some(shape)
}

fn parse_frame(ctx: Ctx<'_>, header: &ManifestHeader) -> Result<FrameRecord> {
    ctx.deny_unknown(&FRAME_FIELDS)?;
    let frame_id = ctx.str("frame_id")?.to_string();

    let scene_feature = ctx.f64_array("scene_feature")?;
    if scene_feature.len() != header.feature_dim {
        return Err(DeduceError::FeatureDimension {
            frame_id,
            expected: header.feature_dim,
            found: scene_feature.len(),
        });
    }

    let feature_blob = match ctx.optional("feature_blob") {
        None => None,
        Some(v) => {
            let Some(shape) = header.blob_shape else {
                return Err(ctx.err("feature_blob", "header declares no blob_shape"));
            };
            Some(parse_blob(v, shape, ctx.line)?)
        }
    };

    let detections = match ctx.optional("detections") {
        None => Vec::new(),
        Some(v) => {
            let arr = v
                .as_array()
                .ok_or_else(|| ctx.err("detections", "expected an array"))?;
            arr.iter()
                .enumerate()
                .map(|(i, d)| parse_detection(d, i, ctx.line))
                .collect::<Result<Vec<_>>>()?
        }
    };

    let truth = match ctx.optional("truth") {
        None => None,
        Some(v) => {
            let name = v.as_str().ok_or_else(|| ctx.err("truth", "expected a string"))?;
            Some(header.class_set.resolve(name)?)
        }
    };

    let pose = match ctx.optional("pose") {
        None => None,
        Some(v) => {
            let p = fields::f64_array(v, "pose", ctx.line)?;
            if p.len() != 3 {
                return Err(ctx.err("pose", "expected [x, y, t]"));
            }
            Some(Pose {
                x: p[0],
                y: p[1],
                t: p[2],
            })
        }
    };

    let image_size = match ctx.optional("image_size") {
        None => DEFAULT_IMAGE_SIZE,
        Some(v) => {
            let arr = v.as_array().filter(|a| a.len() == 2);
            let dims = arr.and_then(|a| {
                let w = a[0].as_u64().and_then(|n| u32::try_from(n).ok())?;
                let h = a[1].as_u64().and_then(|n| u32::try_from(n).ok())?;
                (w > 0 && h > 0).then_some((w, h))
            });
            dims.ok_or_else(|| ctx.err("image_size", "expected [width, height] in pixels"))?
        }
    };

    Ok(FrameRecord {
        frame_id,
        scene_feature,
        feature_blob,
        detections,
        truth,
        pose,
        image_size,
    })
}

fn parse_detection(v: &Value, i: usize, line: usize) -> Result<Detection> {
    let field = |f: &str| format!("detections[{i}].{f}");
    let obj = v
        .as_object()
        .ok_or_else(|| DeduceError::schema(line, format!("detections[{i}]"), "expected an object"))?;
    for key in obj.keys() {
        if !["name", "confidence", "bbox"].contains(&key.as_str()) {
            return Err(DeduceError::schema(line, field(key), "unknown field"));
        }
    }
    let name = obj
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| DeduceError::schema(line, field("name"), "expected a string"))?;
    let object = ObjectClass::from_name(name)
        .map_err(|e| DeduceError::schema(line, field("name"), e.to_string()))?;
    let confidence = obj
        .get("confidence")
        .and_then(fields::finite)
        .ok_or_else(|| DeduceError::schema(line, field("confidence"), "expected a finite number"))?;
    let bbox_v = obj
        .get("bbox")
        .ok_or_else(|| DeduceError::schema(line, field("bbox"), "missing field"))?;
    let bbox = fields::f64_array(bbox_v, &field("bbox"), line)?;
    let bbox: [f64; 4] = bbox
        .try_into()
        .map_err(|_| DeduceError::schema(line, field("bbox"), "expected [x, y, w, h]"))?;
    let det = Detection {
        object,
        confidence,
        bbox,
    };
    det.validate()
        .map_err(|e| DeduceError::schema(line, format!("detections[{i}]"), e.to_string()))?;
    Ok(det)
}

fn parse_blob(v: &Value, shape: [usize; 3], line: usize) -> Result<Blob> {
    let [c, h, w] = shape;
    let bad = |msg: String| DeduceError::schema(line, "feature_blob", msg);
    let planes = v.as_array().ok_or_else(|| bad("expected a nested array".into()))?;
    if planes.len() != c {
        return Err(bad(format!("expected {c} channels, got {}", planes.len())));
    }
    let mut data = Vec::with_capacity((c * h * w).min(1 << 16));
    for (ci, plane) in planes.iter().enumerate() {
        let rows = plane
            .as_array()
            .filter(|r| r.len() == h)
            .ok_or_else(|| bad(format!("channel {ci} must have {h} rows")))?;
        for (hi, row) in rows.iter().enumerate() {
            let row = fields::f64_array(row, &format!("feature_blob[{ci}][{hi}]"), line)?;
            if row.len() != w {
                return Err(bad(format!("row [{ci}][{hi}] must have {w} columns")));
            }
            data.extend(row);
        }
    }
    Blob::new(shape, data)
}

fn header_value(h: &ManifestHeader) -> Value {
    let mut obj = Map::new();
    obj.insert("type".into(), json!("header"));
    obj.insert("class_set".into(), json!(h.class_set.names()));
    obj.insert("feature_dim".into(), json!(h.feature_dim));
    obj.insert(
        "blob_shape".into(),
        h.blob_shape.map_or(Value::Null, |s| json!(s)),
    );
    if let Some(p) = &h.provenance {
        obj.insert("provenance".into(), serde_json::to_value(p).expect("provenance"));
    }
    for (k, v) in &h.extra {
        obj.insert(k.clone(), v.clone());
    }
    Value::Object(obj)
}

fn frame_value(f: &FrameRecord, class_set: &ClassSet) -> Value {
    let blob = f.feature_blob.as_ref().map_or(Value::Null, |b| {
        let [c, h, _] = b.shape();
        Value::Array(
            (0..c)
                .map(|ci| {
                    Value::Array(
                        (0..h)
                            .map(|hi| {
                                let plane = b.channel(ci);
                                num_array(&plane[hi * b.width()..(hi + 1) * b.width()])
                            })
                            .collect(),
                    )
                })
                .collect(),
        )
    });
    let detections: Vec<Value> = f
        .detections
        .iter()
        .map(|d| {
            json!({
                "name": d.object.name(),
                "confidence": num(d.confidence),
                "bbox": num_array(&d.bbox),
            })
        })
        .collect();
    json!({
        "type": "frame",
        "frame_id": f.frame_id,
        "scene_feature": num_array(&f.scene_feature),
        "feature_blob": blob,
        "detections": detections,
        "truth": f.truth.map(|t| class_set.name(t)),
        "pose": f.pose.map(|p| num_array(&[p.x, p.y, p.t])),
        "image_size": [f.image_size.0, f.image_size.1],
    })
}
