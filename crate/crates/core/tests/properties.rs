use deduce_core::attention::{activation_map, classify_attn, blob_to_logits, upsample_bilinear, CamTarget};
use deduce_core::codebook::{classify_objects, default_codebook};
use deduce_core::eval::EvalResult;
use deduce_core::fusion::{predict, predict_n_best, ModelBundle, ModelKind, NBestConfig, Source};
use deduce_core::linear::{analytic_gradient, Gradient, Sample, SgdMomentum};
use deduce_core::manifest::{parse_manifest, Manifest, ManifestHeader};
use deduce_core::semmap::{
    decode_cells, rasterize, render, smooth_sequence, Palette, RasterConfig, RenderOptions,
};
use deduce_core::types::{
    softmax, Blob, ClassSet, Detection, FrameRecord, ObjectClass, Pose, SceneLabel, NUM_OBJECTS,
};
use deduce_core::LinearHead;
use proptest::prelude::*;
use proptest::sample::subsequence;

fn home() -> ClassSet {
    ClassSet::home7()
}

fn finite(range: f64) -> impl Strategy<Value = f64> {
    -range..range
}

fn detection() -> impl Strategy<Value = Detection> {
    (0..NUM_OBJECTS, 0.0..=1.0f64, 0.0..0.5f64, 0.0..0.5f64, 0.01..0.5f64, 0.01..0.5f64).prop_map(
        |(o, conf, x, y, w, h)| Detection {
            object: ObjectClass::new(o).unwrap(),
            confidence: conf,
            bbox: [x, y, w, h],
        },
    )
}

fn head(k: usize, d: usize) -> impl Strategy<Value = LinearHead> {
    (
        prop::collection::vec(finite(2.0), k * d),
        prop::collection::vec(finite(2.0), k),
    )
        .prop_map(move |(w, b)| {
            let cs = ClassSet::new((0..k).map(|i| format!("c{i}"))).unwrap();
            LinearHead::from_parts(cs, d, w, b).unwrap()
        })
}

fn blob(c: usize, h: usize, w: usize) -> impl Strategy<Value = Blob> {
    prop::collection::vec(finite(4.0), c * h * w).prop_map(move |v| Blob::new([c, h, w], v).unwrap())
}

fn frame(d: usize, with_blob: Option<[usize; 3]>) -> impl Strategy<Value = FrameRecord> {
    let blob_s = match with_blob {
        Some([c, h, w]) => blob(c, h, w).prop_map(Some).boxed(),
        None => Just(None).boxed(),
    };
    (
        "[a-z0-9_/]{1,12}",
        prop::collection::vec(finite(1e3), d),
        blob_s,
        prop::collection::vec(detection(), 0..6),
        prop::option::of(0..7usize),
        prop::option::of((finite(100.0), finite(100.0))),
        (1u32..4000, 1u32..4000),
    )
        .prop_map(|(id, feat, blob, dets, truth, pose, size)| FrameRecord {
            frame_id: id,
            scene_feature: feat,
            feature_blob: blob,
            detections: dets,
            truth: truth.map(SceneLabel),
            pose: pose.map(|(x, y)| Pose { x, y, t: 0.0 }),
            image_size: size,
        })
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(finite(700.0), 1..12)) {
        let p = softmax(&logits).unwrap();
        let sum: f64 = p.values().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(p.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn softmax_ignores_constant_shifts(logits in prop::collection::vec(finite(50.0), 1..12), shift in finite(100.0)) {
        let a = softmax(&logits).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let b = softmax(&shifted).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn manifest_text_round_trips(
        frames in prop::collection::vec(frame(6, Some([2, 3, 2])), 0..5),
        extra in prop::option::of("[a-z]{1,8}"),
    ) {
        let mut header = ManifestHeader::new(home(), 6);
        header.blob_shape = Some([2, 3, 2]);
        if let Some(v) = extra {
            header.extra.insert("backbone".into(), v.into());
        }
        // Timestamps must be non-decreasing across posed frames.
        let frames: Vec<FrameRecord> = frames
            .into_iter()
            .enumerate()
            .map(|(i, mut f)| {
                if let Some(p) = f.pose.as_mut() {
                    p.t = i as f64 * 0.5;
                }
                f
            })
            .collect();
        let m = Manifest { header, frames };
        let back = parse_manifest(&m.to_text()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn object_vote_ignores_detection_order(dets in prop::collection::vec(detection(), 0..12), seed in any::<u64>()) {
        let cb = default_codebook();
        let a = classify_objects(&dets, &cb, 0.5);
        let mut shuffled = dets.clone();
        let n = shuffled.len();
        if n > 1 {
            for i in 0..n {
                shuffled.swap(i, (seed as usize).wrapping_add(i * 7) % n);
            }
        }
        prop_assert_eq!(classify_objects(&shuffled, &cb, 0.5), a);
    }

    #[test]
    fn unmapped_objects_never_vote(dets in prop::collection::vec(detection(), 0..12)) {
        let cb = default_codebook();
        let mapped: Vec<Detection> = dets.iter().filter(|d| cb.get(d.object).is_some()).cloned().collect();
        prop_assert_eq!(classify_objects(&dets, &cb, 0.4), classify_objects(&mapped, &cb, 0.4));
    }

    #[test]
    fn vote_label_is_scale_free(dets in prop::collection::vec(detection(), 1..10), scale in 0.1..1.0f64) {
        // Scaling every confidence (with the cutoff) preserves the winning scene.
        let cb = default_codebook();
        let scaled: Vec<Detection> = dets.iter().map(|d| Detection { confidence: d.confidence * scale, ..d.clone() }).collect();
        let a = classify_objects(&dets, &cb, 0.3);
        let b = classify_objects(&scaled, &cb, 0.3 * scale);
        prop_assert_eq!(a.landmarks, b.landmarks);
        if a.found_landmark() {
            for (x, y) in a.posterior.values().iter().zip(b.posterior.values()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        } else {
            prop_assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn heatmaps_stay_in_unit_range(
        (b, h, out) in (1usize..6, 1usize..8, 1usize..8).prop_flat_map(|(c, hh, ww)| {
            (blob(c, hh, ww), head(3, c), (ww..ww * 4 + 3, hh..hh * 4 + 3))
        }),
    ) {
        let map = activation_map(&b, &h, CamTarget::Argmax, out).unwrap();
        prop_assert_eq!((map.width(), map.height()), out);
        prop_assert!(map.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn heatmaps_ignore_positive_blob_scale(
        (b, h) in (1usize..5, 2usize..6, 2usize..6).prop_flat_map(|(c, hh, ww)| (blob(c, hh, ww), head(4, c))),
        scale in 0.01..100.0f64,
    ) {
        let scaled = Blob::new(b.shape(), b.as_slice().iter().map(|v| v * scale).collect()).unwrap();
        let target = CamTarget::Label(SceneLabel(1));
        let out = (b.width() * 2, b.height() * 2);
        let m1 = activation_map(&b, &h, target, out).unwrap();
        let m2 = activation_map(&scaled, &h, target, out).unwrap();
        for (x, y) in m1.values().iter().zip(m2.values()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn attention_label_is_logit_argmax(
        (b, h) in (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(c, hh, ww)| (blob(c, hh, ww), head(5, c))),
    ) {
        let (label, post, _) = classify_attn(&b, &h, (b.width(), b.height())).unwrap();
        let logits = blob_to_logits(&b, &h).unwrap();
        prop_assert_eq!(label.0, deduce_core::types::argmax(&logits));
        prop_assert_eq!(label, post.argmax());
    }

    #[test]
    fn bilinear_upsampling_is_exact_on_ramps(
        (w, h) in (2usize..10, 2usize..10),
        (a, b, c) in (finite(3.0), finite(3.0), finite(3.0)),
        scale in 1usize..5,
    ) {
        let src: Vec<f64> = (0..h).flat_map(|y| (0..w).map(move |x| a * x as f64 + b * y as f64 + c)).collect();
        let (ow, oh) = ((w - 1) * scale + 1 + scale, (h - 1) * scale + 1);
        let out = upsample_bilinear(&src, w, h, ow, oh);
        for y in 0..oh {
            for x in 0..ow {
                let sx = x as f64 * (w - 1) as f64 / (ow - 1) as f64;
                let sy = y as f64 * (h - 1) as f64 / (oh - 1).max(1) as f64;
                prop_assert!((out[y * ow + x] - (a * sx + b * sy + c)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn prediction_label_matches_posterior(
        f in frame(4, None),
        scene in head(7, 4),
        threshold in 0.0..=1.0f64,
    ) {
        let cs = home();
        let scene = LinearHead::from_parts(cs, 4, scene.weights().to_vec(), scene.bias().to_vec()).unwrap();
        let bundle = ModelBundle {
            scene_head: Some(scene),
            codebook: Some(default_codebook()),
            threshold,
            ..ModelBundle::default()
        };
        for model in [ModelKind::SceneOnly, ModelKind::ObjectOnly, ModelKind::NBest] {
            let p = predict(&f, model, &bundle).unwrap();
            prop_assert_eq!(p.label, p.posterior.argmax());
            prop_assert_eq!(p.model, model);
            prop_assert_eq!(&predict(&f, model, &bundle).unwrap(), &p);
        }
    }

    #[test]
    fn raising_the_threshold_only_moves_frames_to_objects(
        f in frame(4, None),
        scene in head(7, 4),
        (t1, t2) in (0.0..=1.0f64, 0.0..=1.0f64),
    ) {
        let scene = LinearHead::from_parts(home(), 4, scene.weights().to_vec(), scene.bias().to_vec()).unwrap();
        let cb = default_codebook();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let at = |t| predict_n_best(&f, &scene, &NBestConfig { threshold: t, codebook: &cb, min_conf: 0.5 }).unwrap();
        if at(lo).source == Source::Objects {
            prop_assert_eq!(at(hi).source, Source::Objects);
        }
    }

    #[test]
    fn confusion_ignores_pair_order(pairs in prop::collection::vec((0..7usize, 0..7usize), 1..200)) {
        let to = |v: &[(usize, usize)]| v.iter().map(|&(t, p)| (SceneLabel(t), SceneLabel(p))).collect::<Vec<_>>();
        let a = EvalResult::from_pairs(&home(), to(&pairs)).unwrap();
        let mut rev = pairs.clone();
        rev.reverse();
        prop_assert_eq!(EvalResult::from_pairs(&home(), to(&rev)).unwrap(), a.clone());
        // Duplicating every frame leaves all rates unchanged.
        let doubled: Vec<(usize, usize)> = pairs.iter().chain(&pairs).copied().collect();
        let d = EvalResult::from_pairs(&home(), to(&doubled)).unwrap();
        prop_assert_eq!(d.per_class_accuracy, a.per_class_accuracy);
        prop_assert!((d.average - a.average).abs() < 1e-12);
    }

    #[test]
    fn smoothing_only_uses_labels_from_the_window(
        labels in prop::collection::vec(0..5usize, 1..60),
        half in 0usize..5,
    ) {
        let seq: Vec<SceneLabel> = labels.into_iter().map(SceneLabel).collect();
        let window = 2 * half + 1;
        let out = smooth_sequence(&seq, window).unwrap();
        prop_assert_eq!(out.len(), seq.len());
        for (i, l) in out.iter().enumerate() {
            let win = &seq[i.saturating_sub(half)..(i + half + 1).min(seq.len())];
            prop_assert!(win.contains(l));
        }
    }

    #[test]
    fn rasterization_ignores_frame_order(
        posed in prop::collection::vec(((finite(5.0), finite(5.0)), 0..7usize), 1..40),
        picks in subsequence((0..40usize).collect::<Vec<_>>(), 0..40),
    ) {
        let items: Vec<(Pose, SceneLabel)> = posed
            .iter()
            .enumerate()
            .map(|(i, ((x, y), l))| (Pose { x: *x, y: *y, t: i as f64 }, SceneLabel(*l)))
            .collect();
        let mut reordered = items.clone();
        for (i, p) in picks.iter().enumerate() {
            let n = reordered.len();
            reordered.swap(i % n, p % n);
        }
        let cfg = RasterConfig { resolution: 0.25, stamp_radius: 0.5 };
        prop_assert_eq!(rasterize(&items, 7, &cfg).unwrap(), rasterize(&reordered, 7, &cfg).unwrap());
    }

    #[test]
    fn rendered_maps_decode_to_their_cells(
        posed in prop::collection::vec(((finite(3.0), finite(3.0)), 0..7usize), 1..25),
        cell_px in 1usize..5,
    ) {
        let items: Vec<(Pose, SceneLabel)> = posed
            .iter()
            .map(|((x, y), l)| (Pose { x: *x, y: *y, t: 0.0 }, SceneLabel(*l)))
            .collect();
        let grid = rasterize(&items, 7, &RasterConfig { resolution: 0.5, stamp_radius: 0.5 }).unwrap();
        let palette = Palette::default_for(&home());
        let img = render(&grid, &palette, &RenderOptions { cell_px, legend: true }).unwrap();
        let cells = decode_cells(&img, grid.width(), grid.height(), cell_px, &palette);
        for (row, line) in cells.iter().enumerate() {
            for (col, got) in line.iter().enumerate() {
                prop_assert_eq!(*got, grid.cell(col, row).label);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_finite_differences(
        (h, batch) in (2usize..6, 1usize..6).prop_flat_map(|(k, d)| {
            let sample = (prop::collection::vec(finite(2.0), d), 0..k)
                .prop_map(|(features, l)| Sample { features, label: SceneLabel(l) });
            (head(k, d), prop::collection::vec(sample, 1..6))
        }),
    ) {
        let g = analytic_gradient(&h, &batch).unwrap();
        let loss = |h: &LinearHead| -> f64 {
            batch
                .iter()
                .map(|s| -h.forward(&s.features).unwrap().get(s.label).ln())
                .sum::<f64>()
                / batch.len() as f64
        };
        let eps = 1e-5;
        for i in 0..h.weights().len() {
            let (mut hp, mut hm) = (h.clone(), h.clone());
            hp.weights_mut()[i] += eps;
            hm.weights_mut()[i] -= eps;
            let num = (loss(&hp) - loss(&hm)) / (2.0 * eps);
            prop_assert!((num - g.weights[i]).abs() <= 1e-6 * (1.0 + num.abs()));
        }
    }

    #[test]
    fn weight_decay_alone_shrinks_the_head(
        h in head(3, 4),
        lambda in 1e-4..0.5f64,
        lr in 1e-3..1.0f64,
    ) {
        prop_assume!(h.squared_norm() > 0.0);
        let mut h2 = h.clone();
        let mut opt = SgdMomentum::new(&h2, 0.9, lambda);
        let zero = Gradient { weights: vec![0.0; 12], bias: vec![0.0; 3] };
        opt.step(&mut h2, &zero, lr);
        prop_assert!(h2.squared_norm() < h.squared_norm());
    }
}
