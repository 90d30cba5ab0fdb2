//! Property tests over the invariants that hold for arbitrary inputs.

use lmbreak::attack::project_linf;
use lmbreak::extractor::decode_landmarks;
use lmbreak::faces::render_heatmap_targets;
use lmbreak::landmarks::{LandmarkSet, Schema};
use lmbreak::metrics::{nme, ssim};
use lmbreak::tensor::Tensor;
use proptest::prelude::*;

fn tensor_strategy(c: usize, h: usize, w: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(lo..hi, c * h * w)
        .prop_map(move |data| Tensor::from_vec(c, h, w, data))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Projection output always sits inside both the ε-ball and [0, 255],
    /// and projecting twice changes nothing.
    #[test]
    fn projection_is_a_clamp_and_idempotent(
        origin in tensor_strategy(1, 4, 4, 0.0, 255.0),
        delta in proptest::collection::vec(-80.0..80.0f64, 16),
        eps in 0.0..30.0f64,
    ) {
        let mut cand = origin.clone();
        for (v, d) in cand.data_mut().iter_mut().zip(&delta) {
            *v += d;
        }
        let p = project_linf(&cand, &origin, eps);
        prop_assert!(p.linf_dev(&origin) <= eps + 1e-12);
        prop_assert!(p.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
        let pp = project_linf(&p, &origin, eps);
        prop_assert_eq!(p, pp);
    }

    /// NME is invariant under a common translation of both landmark sets.
    #[test]
    fn nme_translation_invariance(
        jitter in proptest::collection::vec(-8.0..8.0f64, 26),
        dx in -20.0..20.0f64,
        dy in -20.0..20.0f64,
    ) {
        let schema = Schema::standard13();
        let gt_coords: Vec<[f64; 2]> = (0..13)
            .map(|i| [30.0 + 5.0 * i as f64, 40.0 + 3.0 * (i % 5) as f64])
            .collect();
        let gt = LandmarkSet::new(schema.clone(), gt_coords.clone()).unwrap();
        let pred_coords: Vec<[f64; 2]> = gt_coords
            .iter()
            .enumerate()
            .map(|(i, p)| [p[0] + jitter[2 * i], p[1] + jitter[2 * i + 1]])
            .collect();
        let pred = LandmarkSet::new(schema, pred_coords).unwrap();
        let base = nme(&pred, &gt).unwrap();
        let moved = nme(&pred.translated(dx, dy), &gt.translated(dx, dy)).unwrap();
        prop_assert!((base - moved).abs() < 1e-12);
    }

    /// Rendered heat-map targets peak at exactly 1.0 on the landmark's grid
    /// cell, and decoding recovers the landmark within stride/2 + 1 px.
    /// Coordinates stay within the map's cell coverage (< 125.9 at stride 4:
    /// anything closer to the edge rounds to a nonexistent 33rd cell and is
    /// legitimately clamp-flagged).
    #[test]
    fn heatmap_targets_and_decode_round_trip(
        xs in proptest::collection::vec(0.0..125.9f64, 13),
        ys in proptest::collection::vec(0.0..125.9f64, 13),
        sigma in 0.8..3.0f64,
    ) {
        let schema = Schema::standard13();
        let coords: Vec<[f64; 2]> = xs.iter().zip(&ys).map(|(&x, &y)| [x, y]).collect();
        let lms = LandmarkSet::new(schema.clone(), coords).unwrap();
        let (maps, clamped) = render_heatmap_targets(&lms, (32, 32), sigma, 4).unwrap();
        prop_assert!(clamped.iter().all(|c| !c));
        for i in 0..13 {
            let m = maps.map(i);
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (j, &v) in m.iter().enumerate() {
                if v > best {
                    best = v;
                    arg = j;
                }
            }
            prop_assert_eq!(best, 1.0);
            let cell_x = (lms.coords()[i][0] / 4.0).round() as usize;
            let cell_y = (lms.coords()[i][1] / 4.0).round() as usize;
            prop_assert_eq!((arg % 32, arg / 32), (cell_x, cell_y));
        }
        let decoded = decode_landmarks(&maps, (128, 128), schema).unwrap();
        for (d, g) in decoded.coords().iter().zip(lms.coords()) {
            prop_assert!((d[0] - g[0]).abs() <= 3.0);
            prop_assert!((d[1] - g[1]).abs() <= 3.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// SSIM stays within [-1, 1] and only reaches 1 for identical inputs
    /// (interior differences).
    #[test]
    fn ssim_bounds_hold(
        a in tensor_strategy(1, 16, 16, 0.0, 255.0),
        noise in proptest::collection::vec(-50.0..50.0f64, 256),
    ) {
        let s_self = ssim(&a, &a).unwrap();
        prop_assert_eq!(s_self, 1.0);
        let mut b = a.clone();
        let mut changed = false;
        for (v, n) in b.data_mut().iter_mut().zip(&noise) {
            let nv = (*v + n).clamp(0.0, 255.0);
            changed |= nv != *v;
            *v = nv;
        }
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        if changed {
            prop_assert!(s < 1.0 - 1e-9);
        }
    }

    /// Dataset splits are disjoint, exhaustive and deterministic.
    #[test]
    fn split_partition_property(n in 20usize..60, seed in 0u64..500) {
        let ds = lmbreak::faces::DatasetHandle::generate(n, 7, (128, 128));
        let (tr, va, te) = ds.split((0.6, 0.2, 0.2), seed).unwrap();
        let (tr2, ..) = ds.split((0.6, 0.2, 0.2), seed).unwrap();
        prop_assert_eq!(tr.records[0].id.clone(), tr2.records[0].id.clone());
        let mut ids: Vec<&String> = tr
            .records
            .iter()
            .chain(&va.records)
            .chain(&te.records)
            .map(|r| &r.id)
            .collect();
        let total = ids.len();
        prop_assert_eq!(total, n);
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
    }
}
