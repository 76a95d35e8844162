use std::path::PathBuf;

use deduce_core::codebook::{classify_objects, Codebook};
use deduce_core::fusion::{training_set, ModelKind};
use deduce_core::linear::{train, TrainConfig};
use deduce_core::manifest::{load_manifest, read_manifest};
use deduce_core::synth::{generate, SceneModelSet};
use deduce_core::types::{ClassSet, Detection, Provenance};
use deduce_core::{DeduceError, LinearHead};

fn repo_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

#[test]
fn shipped_office_codebook_loads() {
    let cs = ClassSet::office5();
    let cb = Codebook::load(repo_file("configs/office5.codebook.json"), &cs).unwrap();
    assert_eq!(cb.len(), 11);
    assert_eq!(cs.name(cb.absence_label()), "corridor");
    let vote = classify_objects(&[Detection::full_frame("clock", 0.8).unwrap()], &cb, 0.5);
    assert_eq!(cs.name(vote.label), "conference_room");
    // The shipped file is already in canonical form.
    let text = std::fs::read_to_string(repo_file("configs/office5.codebook.json")).unwrap();
    assert_eq!(cb.to_config_string(), text.trim_end());
}

#[test]
fn codebook_rejects_duplicates_and_strangers() {
    let cs = ClassSet::home7();
    let dup = r#"{"bed": "bedroom", "bed": "kitchen", "absence": "corridor"}"#;
    assert!(Codebook::from_config_str(dup, &cs).is_err());
    let unknown_scene = r#"{"bed": "ballroom", "absence": "corridor"}"#;
    let err = Codebook::from_config_str(unknown_scene, &cs).unwrap_err();
    assert!(matches!(err, DeduceError::InvalidCodebook(_)) && err.to_string().contains("ballroom"), "{err}");
    let unknown_object = r#"{"unicorn": "bedroom", "absence": "corridor"}"#;
    assert!(Codebook::from_config_str(unknown_object, &cs).is_err());
}

#[test]
fn manifests_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.mf");
    let mut models = SceneModelSet::office5();
    models.blob_shape = Some([10, 4, 4]);
    let m = generate(&models, 3, 12).unwrap();
    m.save(&path).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), m);
    assert_eq!(load_manifest(&path, &ClassSet::office5()).unwrap(), m);
    let err = load_manifest(&path, &ClassSet::home7()).unwrap_err();
    assert!(err.to_string().contains("class_set"), "{err}");
}

#[test]
fn missing_files_name_their_path() {
    let err = read_manifest("/nonexistent/frames.mf").unwrap_err().to_string();
    assert!(err.contains("/nonexistent/frames.mf"), "{err}");
}

#[test]
fn trained_heads_round_trip_through_checkpoints() {
    let m = generate(&SceneModelSet::home7(), 10, 4).unwrap();
    let cs = m.class_set().clone();
    let data = training_set(&m.frames, ModelKind::Combined, &cs, 0.5).unwrap();
    let (mut head, _) = train(&data, &TrainConfig::combined_schedule(4)).unwrap();
    head.provenance = Some(Provenance::new(Some(4), "abc123"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("combined.head");
    head.save(&path).unwrap();
    let back = LinearHead::load(&path).unwrap();
    assert_eq!(back, head);
    for s in data.samples().iter().take(5) {
        assert_eq!(back.forward(&s.features).unwrap(), head.forward(&s.features).unwrap());
    }
}

#[test]
fn truncated_checkpoints_are_rejected() {
    let cs = ClassSet::new(["a", "b", "c"]).unwrap();
    let head = LinearHead::from_parts(cs, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0.1, 0.2, 0.3]).unwrap();
    let text = head.to_checkpoint();
    let lines: Vec<&str> = text.lines().collect();
    let truncated = lines[..lines.len() - 1].join("\n");
    assert!(LinearHead::from_checkpoint(&truncated).is_err());
    let wrong_row = text.replacen("[3.0,4.0]", "[3.0]", 1);
    assert!(LinearHead::from_checkpoint(&wrong_row).is_err());
}

#[test]
fn training_needs_truth_labels() {
    let mut m = generate(&SceneModelSet::home7(), 2, 1).unwrap();
    m.frames[3].truth = None;
    let id = m.frames[3].frame_id.clone();
    match training_set(&m.frames, ModelKind::SceneOnly, m.class_set(), 0.5) {
        Err(DeduceError::MissingTruth(f)) => assert_eq!(f, id),
        other => panic!("unexpected {other:?}"),
    }
    assert!(training_set(&m.frames, ModelKind::SceneAttention, m.class_set(), 0.5).is_err());
}
