use cadenet_core::cape::{alpha_for_severity, FilterConfig};
use cadenet_core::eval::{flag, parse_voc, write_voc, ClassMap, Counts, Flag};
use cadenet_core::geometry::{hungarian, iou, nms, BBox, Detection, Stream};
use cadenet_core::imaging::Raster;
use cadenet_core::ktt::{injection_lag, smooth_confidence};
use cadenet_core::pee::entropy_map;
use cadenet_core::slot::slot;
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..200.0f64, 0.0..200.0f64, 1.0..80.0f64, 1.0..80.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn int_bbox() -> impl Strategy<Value = BBox> {
    (0u32..300, 0u32..300, 1u32..100, 1u32..100)
        .prop_map(|(x, y, w, h)| BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap())
}

fn detection() -> impl Strategy<Value = Detection> {
    (bbox(), 0u32..3, 0.0..=1.0f64).prop_map(|(b, c, conf)| Detection::new(b, c, conf, Stream::Safety))
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nms_survivors_are_separated_and_stable(dets in prop::collection::vec(detection(), 0..12), th in 0.05..0.95f64) {
        let kept = nms(&dets, th);
        for (i, a) in kept.iter().enumerate() {
            prop_assert!(dets.contains(a));
            for b in &kept[i + 1..] {
                prop_assert!(a.class_id != b.class_id || iou(&a.bbox, &b.bbox) <= th);
                prop_assert!(a.score >= b.score);
            }
        }
        prop_assert_eq!(nms(&kept, th), kept);
    }

    #[test]
    fn hungarian_is_a_matching_no_worse_than_diagonal(
        cost in (1usize..7, 1usize..7).prop_flat_map(|(r, c)| prop::collection::vec(prop::collection::vec(0.0..100.0f64, c), r))
    ) {
        let pairs = hungarian(&cost);
        let (rows, cols) = (cost.len(), cost[0].len());
        prop_assert_eq!(pairs.len(), rows.min(cols));
        let mut seen_r = vec![false; rows];
        let mut seen_c = vec![false; cols];
        for &(i, j) in &pairs {
            prop_assert!(!seen_r[i] && !seen_c[j]);
            seen_r[i] = true;
            seen_c[j] = true;
        }
        let total: f64 = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
        let diagonal: f64 = (0..rows.min(cols)).map(|i| cost[i][i]).sum();
        prop_assert!(total <= diagonal + 1e-9);
    }

    #[test]
    fn f1_lies_between_precision_and_recall(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
        let c = Counts { tp, fp, fn_ };
        let (p, r, f) = (c.precision(), c.recall(), c.f1());
        prop_assert!(f <= p.max(r) + 1e-12);
        prop_assert!(f >= p.min(r) - 1e-12);
    }

    #[test]
    fn flag_respects_deadband(d in -1.0..1.0f64) {
        let expected = if d.abs() < 0.01 { Flag::F0 } else if d > 0.0 { Flag::F1 } else { Flag::F2 };
        prop_assert_eq!(flag(d), expected);
    }

    #[test]
    fn smoothing_and_alpha_stay_in_range(prev in 0.0..=1.0f64, new in 0.0..=1.0f64, s in -1.0..2.0f64) {
        let c = smooth_confidence(prev, new);
        prop_assert!(c >= prev.min(new) - 1e-12 && c <= prev.max(new) + 1e-12);
        let a = alpha_for_severity(s);
        prop_assert!((0.5..=0.9).contains(&a));
    }

    #[test]
    fn injection_lag_covers_elapsed_time(elapsed in 0.001..5000.0f64, period in 1.0..100.0f64) {
        let k = injection_lag(elapsed, period) as f64;
        prop_assert!(k * period >= elapsed - 1e-6);
        prop_assert!((k - 1.0) * period < elapsed);
    }

    #[test]
    fn reliability_is_bounded(w in 1usize..50, h in 1usize..50, seed in any::<u64>()) {
        let data = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
        let map = entropy_map(&Raster::new(w, h, 1, data).unwrap()).unwrap();
        prop_assert!(map.grid().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(map.grid().len(), w.div_ceil(16) * h.div_ceil(16));
    }

    #[test]
    fn voc_round_trips_known_classes(boxes in prop::collection::vec((prop::sample::select(vec![0u32, 1, 2, 3, 5, 7]), int_bbox()), 0..8)) {
        let classes = ClassMap::default();
        let xml = write_voc("x.png", 400, 400, &boxes, &classes);
        let ann = parse_voc(&xml, &classes).unwrap();
        prop_assert_eq!(ann.boxes, boxes);
        prop_assert!(ann.skipped.is_empty());
    }

    #[test]
    fn numeric_fields_round_trip(
        radius in 1i64..10, clip in 0.5..8.0f64, d in prop::sample::select(vec![3i64, 5, 7, 9]),
        sigma in 1.0..100.0f64, kernel in prop::sample::select(vec![3i64, 7, 15, 31]), pct in 0.0001..0.05f64,
    ) {
        let mut cfg = FilterConfig::default();
        cfg.rain.inpaint_radius = radius;
        cfg.rain.clahe_clip = clip;
        cfg.rain.bilateral_d = d;
        cfg.rain.bilateral_sigma = sigma;
        cfg.fog.dcp_kernel = kernel;
        cfg.fog.atm_pct = pct;
        cfg.snow.clahe_clip = clip * 0.5;
        prop_assert_eq!(FilterConfig::from_numeric_fields(cfg.numeric_fields()), cfg);
    }

    #[test]
    fn slot_reader_sees_the_last_publish(values in prop::collection::vec(any::<u32>(), 1..40)) {
        let (mut w, mut r) = slot::<u32>();
        prop_assert_eq!(r.latest(), None);
        for v in &values {
            w.publish(*v);
        }
        prop_assert_eq!(r.take_new(), values.last());
        prop_assert_eq!(r.take_new(), None);
        prop_assert_eq!(r.latest(), values.last());
    }
}
