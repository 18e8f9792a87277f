use proptest::prelude::*;
use skflow_core::metric::{apply_warp, warp_objective};
use skflow_core::{skorokhod_distance_bound, skorokhod_distance_exact, CadlagPath, TimeWarp};

fn step_path() -> impl Strategy<Value = CadlagPath> {
    (
        -2.0f64..2.0,
        prop::collection::btree_set(1u32..1000, 0..5),
        prop::collection::vec(-2.0f64..2.0, 5),
    )
        .prop_map(|(x0, ticks, vals)| {
            let mut prev = x0;
            let steps: Vec<(f64, f64)> = ticks
                .into_iter()
                .zip(vals)
                .map(|(t, v)| {
                    let v = if v == prev { v + 0.5 } else { v };
                    prev = v;
                    (t as f64 / 1000.0, v)
                })
                .collect();
            CadlagPath::scalar_step(1.0, x0, &steps).unwrap()
        })
}

fn affine_path() -> impl Strategy<Value = CadlagPath> {
    (
        prop::collection::btree_set(1u32..100, 0..6),
        prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 7),
        -2.0f64..2.0,
    )
        .prop_map(|(cuts, vals, term)| {
            let mut times = vec![0.0];
            times.extend(cuts.into_iter().map(|c| c as f64 / 100.0));
            times.push(1.0);
            let n = times.len() - 1;
            let starts = vals[..n].iter().map(|v| v.0).collect();
            let ends = vals[..n].iter().map(|v| v.1).collect();
            CadlagPath::new(1, times, starts, ends, vec![term]).unwrap()
        })
}

fn warp() -> impl Strategy<Value = TimeWarp> {
    prop::collection::btree_set(1u32..100, 0..4)
        .prop_flat_map(|knots| {
            let k = knots.len();
            (Just(knots), prop::collection::btree_set(1u32..100, k..=k))
        })
        .prop_map(|(a, b)| {
            let mut knots = vec![0.0];
            knots.extend(a.into_iter().map(|x| x as f64 / 100.0));
            knots.push(1.0);
            let mut images = vec![0.0];
            images.extend(b.into_iter().map(|x| x as f64 / 100.0));
            images.push(1.0);
            TimeWarp::new(knots, images).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_lossless(p in affine_path()) {
        let back = CadlagPath::from_csv_str(&p.to_csv_string()).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn left_limit_matches_the_segment_end(p in affine_path()) {
        let bp = p.breakpoints().to_vec();
        for k in 0..p.segment_count() {
            prop_assert_eq!(p.left_limit(bp[k + 1]).unwrap()[0], p.segment_end(k)[0]);
            let mid = 0.5 * (bp[k] + bp[k + 1]);
            prop_assert_eq!(p.left_limit(mid).unwrap(), p.eval(mid).unwrap());
        }
    }

    #[test]
    fn stopping_freezes_the_path(p in affine_path(), t in 0.0f64..1.0, s in 0.0f64..1.0) {
        let q = p.stop_at(t).unwrap();
        let at = p.eval(t).unwrap();
        if s < t {
            prop_assert!((q.eval(s).unwrap()[0] - p.eval(s).unwrap()[0]).abs() <= 1e-12);
        } else {
            prop_assert_eq!(q.eval(s).unwrap(), at.clone());
        }
        prop_assert_eq!(q.terminal(), &at[..]);
    }

    #[test]
    fn sup_distance_is_a_metric(x in affine_path(), y in affine_path(), z in affine_path()) {
        let dxy = x.sup_distance(&y).unwrap();
        prop_assert_eq!(x.sup_distance(&x).unwrap(), 0.0);
        prop_assert_eq!(dxy, y.sup_distance(&x).unwrap());
        prop_assert!(x.sup_distance(&z).unwrap() <= dxy + y.sup_distance(&z).unwrap() + 1e-12);
    }

    #[test]
    fn sup_distance_dominates_grid_samples(x in affine_path(), y in affine_path()) {
        let d = x.sup_distance(&y).unwrap();
        for i in 0..=200 {
            let t = i as f64 / 200.0;
            prop_assert!((x.eval(t).unwrap()[0] - y.eval(t).unwrap()[0]).abs() <= d + 1e-12);
        }
    }

    #[test]
    fn exact_distance_axioms(x in step_path(), y in step_path(), z in step_path()) {
        let dxy = skorokhod_distance_exact(&x, &y).unwrap();
        prop_assert_eq!(skorokhod_distance_exact(&x, &x).unwrap(), 0.0);
        prop_assert!((dxy - skorokhod_distance_exact(&y, &x).unwrap()).abs() <= 1e-12);
        let dxz = skorokhod_distance_exact(&x, &z).unwrap();
        let dyz = skorokhod_distance_exact(&y, &z).unwrap();
        prop_assert!(dxz <= dxy + dyz + 1e-9);
        prop_assert!(dxy <= x.sup_distance(&y).unwrap());
    }

    #[test]
    fn exact_distance_is_within_the_bound(x in step_path(), y in step_path()) {
        let d = skorokhod_distance_exact(&x, &y).unwrap();
        let b = skorokhod_distance_bound(&x, &y, 1, 0.05).unwrap();
        prop_assert!(b.lower <= d + 1e-12 && d <= b.upper + 1e-12);
    }

    #[test]
    fn warping_a_path_costs_at_most_the_warp(x in step_path(), w in warp()) {
        let y = apply_warp(&x, &w).unwrap();
        prop_assert!(skorokhod_distance_exact(&x, &y).unwrap() <= w.norm() + 1e-12);
        prop_assert!(warp_objective(&y, &x, &w).unwrap() <= w.norm() + 1e-12);
    }

    #[test]
    fn warp_inverse_composes_to_identity(w in warp(), t in 0.0f64..1.0) {
        let id = w.compose(&w.inverse()).unwrap();
        prop_assert!((id.eval(t).unwrap() - t).abs() <= 1e-12);
        prop_assert!((w.inverse().norm() - w.norm()).abs() <= 1e-12);
    }

    #[test]
    fn stopped_paths_are_close(x in step_path(), t in 0.0f64..0.9, h in 0.0f64..0.1) {
        let tk = t + h;
        let d = skorokhod_distance_exact(&x.stop_at(t).unwrap(), &x.stop_at(tk).unwrap()).unwrap();
        let at = x.eval(t).unwrap()[0];
        let bound = x
            .jumps()
            .iter()
            .filter(|j| j.0 > t && j.0 <= tk)
            .map(|j| (x.eval(j.0).unwrap()[0] - at).abs())
            .fold(0.0, f64::max);
        prop_assert!(d <= bound);
    }
}
