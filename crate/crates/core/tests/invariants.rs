//! Property tests for invariants that hold for any input, not just the
//! hand-picked cases in the unit tests.

use hoiprior::aggregation::aggregate;
use hoiprior::body::{basis_weights, canonical_pose, BodyMesh, PELVIS};
use hoiprior::camera::PerspectiveCam;
use hoiprior::dataset::{Mask, ViewSample};
use hoiprior::filtering::{
    dedup_record, filter_record, BBox, DetectionRecord, FilterProfile, FilterThresholds, Instance,
    Keypoint, PERSON,
};
use hoiprior::grid::{decode_chor, encode_chor, FieldKind, GridSpec, OccupancyField};
use hoiprior::mesh::{marching_cubes_with, McConfig};
use hoiprior::pap::{
    average_precision, average_precision_with, threshold_image, ApMode, Interpolation, PrCurve,
    PrPoint,
};
use hoiprior::skinning::{deweight_alpha, SpaceTag, WeightField};
use hoiprior::Vec3;
use proptest::prelude::*;

const CATEGORY: &str = "ball";

fn instance() -> impl Strategy<Value = Instance> {
    (
        prop_oneof![Just(PERSON), Just(CATEGORY), Just("cup")],
        prop_oneof![0.5f64..1.0, Just(0.98), Just(0.99)],
        0.0f64..500.0,
        0.0f64..400.0,
        5.0f64..200.0,
        5.0f64..200.0,
    )
        .prop_map(|(cat, confidence, x, y, w, h)| Instance {
            category: cat.into(),
            confidence,
            bbox: BBox::new(x, y, (x + w).min(640.0), (y + h).min(480.0)),
            mask: None,
        })
}

fn record() -> impl Strategy<Value = DetectionRecord> {
    (
        prop::collection::vec(instance(), 0..7),
        prop::collection::vec((0.0f64..640.0, 0.0f64..480.0, 0.5f64..1.0), 17),
        any::<bool>(),
    )
        .prop_map(|(instances, kps, has_kps)| DetectionRecord {
            image_id: "x".into(),
            width: 640,
            height: 480,
            instances,
            keypoints: if has_kps {
                kps.into_iter()
                    .map(|(x, y, confidence)| Keypoint { x, y, confidence })
                    .collect()
            } else {
                Vec::new()
            },
        })
}

fn profile() -> impl Strategy<Value = FilterThresholds> {
    prop_oneof![Just(FilterProfile::Default), Just(FilterProfile::Eval)]
        .prop_map(FilterThresholds::profile)
}

fn sorted(mut v: Vec<Instance>) -> Vec<Instance> {
    v.sort_by(|a, b| {
        (a.category.as_str(), a.confidence, a.bbox.x_min, a.bbox.y_min)
            .partial_cmp(&(b.category.as_str(), b.confidence, b.bbox.x_min, b.bbox.y_min))
            .unwrap()
    });
    v
}

fn pr_points() -> impl Strategy<Value = Vec<PrPoint>> {
    prop::collection::vec(
        (prop::option::weighted(0.8, 0.0f64..=1.0), 0.0f64..=1.0),
        1..40,
    )
    .prop_map(|pts| {
        pts.into_iter()
            .map(|(precision, recall)| PrPoint { precision, recall })
            .collect()
    })
}

fn small_grid() -> GridSpec {
    GridSpec::new(10, Vec3::zeros(), 1.0).unwrap()
}

fn disk_mask(cx: f64, cy: f64, r: f64) -> Mask {
    Mask::from_fn(24, 24, |x, y| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        dx * dx + dy * dy <= r * r
    })
}

fn views_strategy() -> impl Strategy<Value = Vec<ViewSample>> {
    prop::collection::vec(
        (0.0f64..std::f64::consts::TAU, 0.1f64..1.0, 4.0f64..20.0, 4.0f64..20.0, 2.0f64..9.0),
        1..7,
    )
    .prop_map(|vs| {
        vs.into_iter()
            .enumerate()
            .map(|(i, (az, score, cx, cy, r))| {
                let eye = Vec3::new(3.0 * az.sin(), 0.5, 3.0 * az.cos());
                ViewSample {
                    id: i as u32,
                    camera: PerspectiveCam::look_at(eye, Vec3::zeros(), Vec3::y(), 30.0, 24, 24)
                        .unwrap(),
                    pose: canonical_pose(),
                    score,
                    prompt: "p".into(),
                    object_mask: disk_mask(cx, cy, r),
                    human_mask: None,
                }
            })
            .collect()
    })
}

fn blobs() -> impl Strategy<Value = OccupancyField> {
    prop::collection::vec(
        (-0.5f64..0.5, -0.5f64..0.5, -0.5f64..0.5, 0.15f64..0.4),
        1..4,
    )
    .prop_map(|bs| {
        OccupancyField::from_fn(GridSpec::new(14, Vec3::zeros(), 1.0).unwrap(), move |p| {
            bs.iter()
                .map(|&(x, y, z, s)| {
                    (-(p - Vec3::new(x, y, z)).norm_squared() / (2.0 * s * s)).exp()
                })
                .fold(0.0, f64::max)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn dedup_is_idempotent(r in record(), th in profile()) {
        let once = dedup_record(&r, CATEGORY, &th);
        let twice = dedup_record(&once, CATEGORY, &th);
        prop_assert_eq!(sorted(once.instances), sorted(twice.instances));
    }

    #[test]
    fn dedup_never_adds_or_touches_other_categories(r in record(), th in profile()) {
        let d = dedup_record(&r, CATEGORY, &th);
        prop_assert!(d.instances.len() <= r.instances.len());
        let others = |x: &DetectionRecord| sorted(
            x.instances.iter().filter(|i| i.category == "cup").cloned().collect());
        prop_assert_eq!(others(&d), others(&r));
    }

    #[test]
    fn filter_ignores_instance_order(r in record(), th in profile(), seed in any::<u64>()) {
        let mut shuffled = r.clone();
        let n = shuffled.instances.len();
        if n > 1 {
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.instances.swap(i, (s >> 33) as usize % (i + 1));
            }
        }
        prop_assert_eq!(
            filter_record(&r, CATEGORY, &th),
            filter_record(&shuffled, CATEGORY, &th)
        );
    }

    #[test]
    fn strict_never_beats_vanilla(points in pr_points()) {
        let ts: Vec<f64> = (1..=points.len()).map(|i| i as f64 / points.len() as f64).collect();
        let curve = PrCurve::from_points(&ts, &points);
        for interp in [Interpolation::AllPoint, Interpolation::ElevenPoint] {
            let v = average_precision_with(&curve, ApMode::Vanilla, interp);
            let s = average_precision_with(&curve, ApMode::Strict, interp);
            prop_assert!(s <= v + 1e-12, "strict {} vanilla {}", s, v);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        if points.iter().all(|p| p.precision.is_some()) {
            prop_assert_eq!(
                average_precision(&curve, ApMode::Strict),
                average_precision(&curve, ApMode::Vanilla)
            );
        }
    }

    #[test]
    fn thresholded_masks_shrink_as_threshold_rises(
        img in prop::collection::vec(0.0f64..=1.0, 48),
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let m_lo = threshold_image(&img, 8, 6, lo);
        let m_hi = threshold_image(&img, 8, 6, hi);
        for (h, l) in m_hi.data.iter().zip(&m_lo.data) {
            prop_assert!(!h || *l);
        }
    }

    #[test]
    fn deweight_factor_is_a_decreasing_fraction(
        d1 in 0.0f64..2.0,
        d2 in 0.0f64..2.0,
        tau in 0.1f64..1.5,
        s in 0.05f64..2.0,
    ) {
        let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let (an, af) = (deweight_alpha(near, tau, s), deweight_alpha(far, tau, s));
        prop_assert!((0.0..=1.0).contains(&an) && (0.0..=1.0).contains(&af));
        prop_assert!(af <= an + 1e-15);
        if far >= tau {
            prop_assert_eq!(af, 0.0);
        }
    }

    #[test]
    fn chor_round_trips_at_f32_precision(values in prop::collection::vec(-1e6f64..1e6, 27)) {
        let spec = GridSpec::new(3, Vec3::new(0.1, -0.2, 0.3), 0.7).unwrap();
        let bytes = encode_chor(&spec, FieldKind::Scalar, &values);
        let (spec2, kind, back) = decode_chor(&bytes).unwrap();
        prop_assert!(spec2.approx_eq(&spec));
        prop_assert_eq!(spec2.resolution, 3);
        prop_assert_eq!(kind, FieldKind::Scalar);
        let stored: Vec<f64> = values.iter().map(|&v| v as f32 as f64).collect();
        prop_assert_eq!(&back, &stored);
        prop_assert_eq!(encode_chor(&spec2, kind, &back), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn aggregation_stays_in_unit_range_and_ignores_view_order(views in views_strategy()) {
        let spec = small_grid();
        let weights = WeightField::uniform(spec, basis_weights(PELVIS), SpaceTag::Canonical);
        let body = BodyMesh::default();
        let bones = hoiprior::aggregation::view_bones(&body, &views).unwrap();
        let field = aggregate(&views, &weights, &bones, &spec).unwrap();
        for v in &field.values {
            prop_assert!((0.0..=1.0).contains(v), "{}", v);
        }
        let mut rev = views.clone();
        rev.reverse();
        let rev_bones = hoiprior::aggregation::view_bones(&body, &rev).unwrap();
        let again = aggregate(&rev, &weights, &rev_bones, &spec).unwrap();
        prop_assert_eq!(field.values, again.values);
    }

    #[test]
    fn single_view_aggregation_is_binary(mut views in views_strategy()) {
        views.truncate(1);
        let spec = small_grid();
        let weights = WeightField::uniform(spec, basis_weights(PELVIS), SpaceTag::Canonical);
        let bones = hoiprior::aggregation::view_bones(&BodyMesh::default(), &views).unwrap();
        let field = aggregate(&views, &weights, &bones, &spec).unwrap();
        for v in &field.values {
            prop_assert!(*v == 0.0 || *v == 1.0);
        }
    }

    #[test]
    fn enclosed_volume_shrinks_as_iso_rises(field in blobs(), a in 0.1f64..0.9, b in 0.1f64..0.9) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mesh = |iso| marching_cubes_with(&field, &McConfig { iso, clamp_boundary: true }).unwrap();
        let (m_lo, m_hi) = (mesh(lo), mesh(hi));
        prop_assert!(m_lo.is_closed() && m_hi.is_closed());
        let voxel = field.spec.voxel_size().powi(3);
        prop_assert!(
            m_hi.signed_volume() <= m_lo.signed_volume() + 1e-3 * voxel,
            "iso {} -> {}, iso {} -> {}", lo, m_lo.signed_volume(), hi, m_hi.signed_volume()
        );
    }
}
