use proptest::prelude::*;
use tetrapod::dataset::{
    augment, coverage_filter, make_control_set, AnnotatedKeypoint, AnnotationSample, AugmentParams, AugmentRanges,
    DatasetError, SourceDocument,
};
use tetrapod::skeleton::{KeypointName, NUM_KEYPOINTS};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() }
}

/// Builds a document with the first `annotated` slots filled on a small lattice.
fn document(species: &str, annotated: usize, size: [u32; 2]) -> String {
    let mut kp = serde_json::Map::new();
    for (i, name) in KeypointName::ALL.iter().enumerate() {
        let value = if i < annotated {
            let u = 0.2 * size[0] as f64 + 0.6 * size[0] as f64 * (i % 6) as f64 / 5.0;
            let v = 0.25 * size[1] as f64 + 0.5 * size[1] as f64 * (i / 6) as f64 / 2.0;
            serde_json::json!([u, v])
        } else {
            serde_json::Value::Null
        };
        kp.insert(name.as_str().to_string(), value);
    }
    serde_json::json!({ "image_size": size, "species": species, "keypoints": kp }).to_string()
}

fn arb_sample() -> impl Strategy<Value = AnnotationSample> {
    (
        16u32..400,
        16u32..400,
        prop::collection::vec((any::<bool>(), 0.0f64..1.0, 0.0f64..1.0), NUM_KEYPOINTS),
    )
        .prop_map(|(w, h, slots)| {
            let mut keypoints = [AnnotatedKeypoint { u: 0.0, v: 0.0, annotated: false }; NUM_KEYPOINTS];
            for (k, (on, fu, fv)) in keypoints.iter_mut().zip(slots) {
                *k = AnnotatedKeypoint { u: fu * w as f64, v: fv * h as f64, annotated: on };
            }
            AnnotationSample { width: w, height: h, keypoints, species: "dog".into() }
        })
}

fn arb_params() -> impl Strategy<Value = AugmentParams> {
    (-180.0f64..180.0, -50.0f64..50.0, -50.0f64..50.0, 0.2f64..3.0)
        .prop_map(|(rotation, tx, ty, scale)| AugmentParams { rotation, translation: [tx, ty], scale })
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn coverage_is_monotone_in_threshold(s in arb_sample(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if coverage_filter(&s, hi) {
            prop_assert!(coverage_filter(&s, lo));
        }
    }

    #[test]
    fn coverage_is_monotone_in_annotations(s in arb_sample(), slot in 0usize..NUM_KEYPOINTS, t in 0.0f64..1.0) {
        let mut more = s.clone();
        more.keypoints[slot].annotated = true;
        if coverage_filter(&s, t) {
            prop_assert!(coverage_filter(&more, t));
        }
    }

    #[test]
    fn inverse_restores_surviving_keypoints(s in arb_sample(), p in arb_params()) {
        let forward = augment(&s, &p);
        let back = augment(&forward, &p.inverse());
        for ((orig, fwd), bk) in s.keypoints.iter().zip(&forward.keypoints).zip(&back.keypoints) {
            if fwd.annotated && bk.annotated {
                prop_assert!((orig.u - bk.u).abs() < 1e-6 && (orig.v - bk.v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn augmentation_never_invents_annotations(s in arb_sample(), p in arb_params()) {
        let out = augment(&s, &p);
        prop_assert_eq!((out.width, out.height), (s.width, s.height));
        for (a, b) in s.keypoints.iter().zip(&out.keypoints) {
            prop_assert!(!b.annotated || a.annotated);
            if b.annotated {
                prop_assert!(b.u >= 0.0 && b.u < s.width as f64 && b.v >= 0.0 && b.v < s.height as f64);
            }
        }
    }
}

#[test]
fn inverse_is_exact_on_a_known_map() {
    let p = AugmentParams { rotation: 90.0, translation: [3.0, -2.0], scale: 2.0 };
    // (u, v) = (11, 10) about (10, 10): offset (1, 0) scaled to (2, 0), turned to (0, 2), then shifted
    let (u, v) = p.apply((10.0, 10.0), 11.0, 10.0);
    assert!((u - 13.0).abs() < 1e-12 && (v - 10.0).abs() < 1e-12);
    let (u0, v0) = p.inverse().apply((10.0, 10.0), u, v);
    assert!((u0 - 11.0).abs() < 1e-12 && (v0 - 10.0).abs() < 1e-12);
}

#[test]
fn documents_need_every_slot_and_known_names() {
    let good = document("cat", 18, [64, 64]);
    assert_eq!(AnnotationSample::from_json(&good).unwrap().annotated_count(), 18);
    let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
    v["keypoints"].as_object_mut().unwrap().remove("nose");
    assert!(matches!(AnnotationSample::from_json(&v.to_string()), Err(DatasetError::MissingSlot(n)) if n == "nose"));
    let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
    v["keypoints"]["left_ear"] = serde_json::json!([1.0, 2.0]);
    assert!(AnnotationSample::from_json(&v.to_string()).is_err());
    assert!(AnnotationSample::from_json("{not json").is_err());
}

#[test]
fn control_set_counts_and_determinism() {
    let mut docs = Vec::new();
    for i in 0..12 {
        let species = ["cat", "dog", "horse"][i % 3];
        // cats keep 18 slots, dogs 12 and horses 6
        let annotated = 18 - 6 * (i % 3);
        docs.push(SourceDocument { id: format!("s{i}"), text: document(species, annotated, [64, 48]) });
    }
    docs.push(SourceDocument { id: "broken".into(), text: "[]".into() });
    let ranges = AugmentRanges::default();
    let (kept, report) = make_control_set(&docs, 0.5, &ranges, 7).unwrap();
    assert_eq!((report.total, report.kept, report.rejected), (13, 8, 4));
    assert_eq!(report.errors.len(), 1);
    assert_eq!(report.errors[0].id, "broken");
    assert_eq!((report.per_species["cat"].kept, report.per_species["cat"].rejected), (4, 0));
    assert_eq!((report.per_species["dog"].kept, report.per_species["dog"].rejected), (4, 0));
    assert_eq!((report.per_species["horse"].kept, report.per_species["horse"].rejected), (0, 4));
    let ids: Vec<&str> = kept.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["s0", "s1", "s3", "s4", "s6", "s7", "s9", "s10"]);
    for s in &kept {
        assert_eq!((s.image.width, s.image.height), (64, 48));
    }

    let (again, report2) = make_control_set(&docs, 0.5, &ranges, 7).unwrap();
    assert_eq!(report, report2);
    for (a, b) in kept.iter().zip(&again) {
        assert_eq!(a.params, b.params);
        assert_eq!(a.image, b.image);
    }
    let (other, _) = make_control_set(&docs, 0.5, &ranges, 8).unwrap();
    assert!(kept.iter().zip(&other).any(|(a, b)| a.params != b.params));
}

#[test]
fn identity_ranges_draw_the_identity() {
    let ranges = AugmentRanges { rotation: [0.0, 0.0], translation: [0.0, 0.0], scale: [1.0, 1.0] };
    let docs = [SourceDocument { id: "a".into(), text: document("dog", 18, [32, 32]) }];
    let (kept, _) = make_control_set(&docs, 1.0, &ranges, 1).unwrap();
    assert_eq!(kept[0].params, AugmentParams::IDENTITY);
    let bad = AugmentRanges { scale: [0.0, 1.0], ..ranges };
    assert!(matches!(make_control_set(&docs, 1.0, &bad, 1), Err(DatasetError::InvalidRange("scale"))));
}
