//! Property tests for the interval layer: inclusion, tightness,
//! monotonicity under widening, and degenerate reduction to real
//! arithmetic.

use intact_core::interval::{
    linear_map_bounds, vertex_enumeration_bounds, Hypercube, Interval,
};
use intact_core::Mat;
use proptest::prelude::*;

fn interval_strategy() -> impl Strategy<Value = Interval> {
    (-50.0f64..50.0, 0.0f64..30.0).prop_map(|(lo, w)| Interval::new(lo, lo + w).unwrap())
}

/// Interval avoiding zero, for division.
fn nonzero_interval_strategy() -> impl Strategy<Value = Interval> {
    (0.5f64..20.0, 0.0f64..10.0, any::<bool>()).prop_map(|(lo, w, neg)| {
        if neg {
            Interval::new(-(lo + w), -lo).unwrap()
        } else {
            Interval::new(lo, lo + w).unwrap()
        }
    })
}

fn sample_in(iv: Interval, t: f64) -> f64 {
    iv.lo() + (iv.hi() - iv.lo()) * t
}

proptest! {
    // 100 cases x 100 interior samples = 10^4 inclusion checks per op.
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn inclusion_add_sub_mul(a in interval_strategy(), b in interval_strategy()) {
        let sum = a.add(&b);
        let diff = a.sub(&b);
        let prod = a.mul(&b);
        for i in 0..10 {
            for j in 0..10 {
                let x = sample_in(a, i as f64 / 9.0);
                let y = sample_in(b, j as f64 / 9.0);
                prop_assert!(sum.contains(x + y));
                prop_assert!(diff.contains(x - y));
                // one rounding of slack: x*y may land an ulp outside the
                // endpoint product
                let p = x * y;
                prop_assert!(prod.lo() - 1e-9 <= p && p <= prod.hi() + 1e-9);
            }
        }
    }

    #[test]
    fn inclusion_div(a in interval_strategy(), b in nonzero_interval_strategy()) {
        let quot = a.div(&b).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let x = sample_in(a, i as f64 / 9.0);
                let y = sample_in(b, j as f64 / 9.0);
                let q = x / y;
                prop_assert!(quot.lo() - 1e-9 <= q && q <= quot.hi() + 1e-9);
            }
        }
    }

    #[test]
    fn inclusion_linear_map_bounds(
        seed in any::<u64>(),
        d in 1usize..8,
        n in 1usize..5,
    ) {
        let mut s = seed | 1;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s as f64 / u64::MAX as f64) * 4.0 - 2.0
        };
        let w = Mat::from_vec(n, d, (0..n * d).map(|_| next()).collect());
        let db: Vec<f64> = (0..n).map(|_| next()).collect();
        let lo: Vec<f64> = (0..d).map(|_| next()).collect();
        let hi: Vec<f64> = lo.iter().map(|&l| l + next().abs()).collect();
        let hc = Hypercube::new(lo.clone(), hi.clone()).unwrap();
        let bounds = linear_map_bounds(&w, &db, &hc).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = lo
                .iter()
                .zip(&hi)
                .map(|(&l, &h)| l + (h - l) * (next() * 0.25 + 0.5))
                .collect();
            for i in 0..n {
                let y: f64 = w.row(i).iter().zip(&x).map(|(wj, xj)| wj * xj).sum::<f64>() + db[i];
                prop_assert!(bounds.lo()[i] - 1e-9 <= y && y <= bounds.hi()[i] + 1e-9);
            }
        }
    }

    #[test]
    fn tightness_matches_vertex_enumeration(
        seed in any::<u64>(),
        d in 1usize..=10,
    ) {
        let mut s = seed | 1;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s as f64 / u64::MAX as f64) * 6.0 - 3.0
        };
        let w: Vec<f64> = (0..d).map(|_| next()).collect();
        let b = next();
        let lo: Vec<f64> = (0..d).map(|_| next()).collect();
        let hi: Vec<f64> = lo.iter().map(|&l| l + next().abs()).collect();
        let hc = Hypercube::new(lo.clone(), hi.clone()).unwrap();
        let bounds = linear_map_bounds(&Mat::from_vec(1, d, w.clone()), &[b], &hc).unwrap();
        let (vmin, vmax) = vertex_enumeration_bounds(&w, b, &lo, &hi);
        prop_assert!((bounds.lo()[0] - vmin).abs() < 1e-9);
        prop_assert!((bounds.hi()[0] - vmax).abs() < 1e-9);
    }

    #[test]
    fn widening_never_narrows(
        a in interval_strategy(),
        b in interval_strategy(),
        grow in 0.0f64..5.0,
    ) {
        let wide = Interval::new(a.lo() - grow, a.hi() + grow).unwrap();
        prop_assert!(wide.add(&b).contains_interval(&a.add(&b)));
        prop_assert!(wide.sub(&b).contains_interval(&a.sub(&b)));
        prop_assert!(b.sub(&wide).contains_interval(&b.sub(&a)));
        prop_assert!(wide.mul(&b).contains_interval(&a.mul(&b)));
    }

    #[test]
    fn degenerate_ops_reduce_to_reals(x in -40.0f64..40.0, y in -40.0f64..40.0) {
        let a = Interval::point(x).unwrap();
        let b = Interval::point(y).unwrap();
        let close = |iv: Interval, v: f64| (iv.lo() - v).abs() < 1e-12 && (iv.hi() - v).abs() < 1e-12;
        prop_assert!(close(a.add(&b), x + y));
        prop_assert!(close(a.sub(&b), x - y));
        prop_assert!(close(a.mul(&b), x * y));
        if y.abs() > 0.5 {
            prop_assert!(close(a.div(&b).unwrap(), x / y));
        }
    }

    #[test]
    fn self_subtraction_doubles_width(a in interval_strategy()) {
        let d = a.sub(&a);
        prop_assert_eq!(d.width(), 2.0 * a.width());
        prop_assert_eq!(d.lo(), -d.hi());
    }
}
