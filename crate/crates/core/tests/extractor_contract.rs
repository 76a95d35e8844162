//! Manifests written by the offline feature extractor, checked against the
//! loader. The fixture mirrors what the extractor emits for three images.

use std::path::PathBuf;

use deduce_core::codebook::{classify_objects, default_codebook, DEFAULT_MIN_CONF};
use deduce_core::types::ClassSet;
use deduce_core::{load_manifest, parse_manifest};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/extracted_3.mf")
}

#[test]
fn extractor_output_loads_without_errors() {
    let m = load_manifest(fixture(), &ClassSet::home7()).unwrap();
    let ids: Vec<&str> = m.frames.iter().map(|f| f.frame_id.as_str()).collect();
    assert_eq!(ids, ["frames/0001.jpg", "frames/0002.jpg", "frames/0003.jpg"]);
    assert_eq!(m.header.blob_shape, Some([2, 2, 2]));
    assert!(m.frames.iter().all(|f| f.truth.is_none() && f.feature_blob.is_some()));
    assert_eq!(m.frames[0].image_size, (640, 480));
}

#[test]
fn empty_detection_lists_survive_and_mean_corridor() {
    let m = load_manifest(fixture(), &ClassSet::home7()).unwrap();
    let empty = &m.frames[1];
    assert!(empty.detections.is_empty());
    let text = m.to_text();
    assert!(text.lines().nth(2).unwrap().contains("\"detections\":[]"));
    let vote = classify_objects(&empty.detections, &default_codebook(), DEFAULT_MIN_CONF);
    assert_eq!(m.class_set().name(vote.label), "corridor");
}

#[test]
fn checkpoint_ids_in_the_header_are_kept() {
    let m = load_manifest(fixture(), &ClassSet::home7()).unwrap();
    assert_eq!(m.header.extra["scene_checkpoint"], "wideresnet18_places365");
    assert_eq!(m.header.extra["detector_checkpoint"], "yolov3_coco");
    assert_eq!(parse_manifest(&m.to_text()).unwrap(), m);
}

#[test]
fn detections_outside_the_coco_vocabulary_are_rejected() {
    let text = std::fs::read_to_string(fixture()).unwrap().replace("\"toilet\"", "\"bidet\"");
    let err = parse_manifest(&text).unwrap_err().to_string();
    assert!(err.contains("bidet"), "{err}");
    assert!(err.contains("line 4"), "{err}");
}
