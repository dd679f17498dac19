mod common;

use chainsfm::geometry::Segment2;
use chainsfm::scale::{
    coplanar_scale_ratio, quadratic_angle_minimizer, trifocal_line_ratio, trifocal_point_ratio, CoplanarPairHypothesis,
    LineMatch2V, LineTriplet, PointTriplet,
};
use chainsfm::{ScaleConfig, ScaleError, TripletFrame, Vec3};
use common::oracle::grid_minimum;
use common::{random_triplet, rng, unit_vector};
use proptest::prelude::*;
use rand::Rng;

fn reversed(tf: &TripletFrame) -> TripletFrame {
    TripletFrame::new(tf.rel23.inverse(), tf.rel21).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn coplanar_ratio_recovers_truth(seed in any::<u64>()) {
        let mut g = rng(seed);
        let t = random_triplet(&mut g);
        let Some(h) = t.coplanar_pair(&mut g) else { return Ok(()) };
        match coplanar_scale_ratio(&h, &t.frame, &ScaleConfig::default()) {
            Ok(r) => prop_assert!((r / t.ratio - 1.0).abs() < 1e-7, "{} vs {}", r, t.ratio),
            Err(ScaleError::DegenerateConfiguration(_)) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn trifocal_ratios_recover_truth(seed in any::<u64>()) {
        let mut g = rng(seed);
        let t = random_triplet(&mut g);
        let cfg = ScaleConfig::default();
        let r = trifocal_point_ratio(&t.point_triplet(&mut g), &t.frame, &cfg).unwrap();
        prop_assert!((r / t.ratio - 1.0).abs() < 1e-7, "{} vs {}", r, t.ratio);
        if let Some(lt) = t.line_triplet(&mut g) {
            match trifocal_line_ratio(&lt, &t.frame, &cfg) {
                Ok(r) => prop_assert!((r / t.ratio - 1.0).abs() < 1e-7, "{} vs {}", r, t.ratio),
                // a line inside an epipolar plane has no usable back-projection
                Err(ScaleError::DegenerateConfiguration(_) | ScaleError::DegenerateMinimizer | ScaleError::Geometry(_)) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }

    #[test]
    fn reversing_the_triplet_inverts_the_ratio(seed in any::<u64>()) {
        let mut g = rng(seed);
        let t = random_triplet(&mut g);
        let cfg = ScaleConfig::default();
        let back = reversed(&t.frame);
        let p = t.point_triplet(&mut g);
        let q = PointTriplet::new([p.pixels[2], p.pixels[1], p.pixels[0]], &[t.k; 3], [0; 3]);
        let (a, b) = (trifocal_point_ratio(&p, &t.frame, &cfg).unwrap(), trifocal_point_ratio(&q, &back, &cfg).unwrap());
        prop_assert!((a * b - 1.0).abs() < 1e-7);
        if let Some(h) = t.coplanar_pair(&mut g) {
            let swapped = CoplanarPairHypothesis {
                la: LineMatch2V { first: h.lb.second, second: h.lb.first, ids: [1, 1] },
                lb: LineMatch2V { first: h.la.second, second: h.la.first, ids: [0, 0] },
            };
            if let (Ok(a), Ok(b)) = (coplanar_scale_ratio(&h, &t.frame, &cfg), coplanar_scale_ratio(&swapped, &back, &cfg)) {
                prop_assert!((a * b - 1.0).abs() < 1e-7, "{} {}", a, b);
            }
        }
    }

    #[test]
    fn endpoints_do_not_matter(seed in any::<u64>(), s in -2.0f64..2.0, e in -2.0f64..2.0) {
        let mut g = rng(seed);
        let t = random_triplet(&mut g);
        let slide = |seg: &Segment2| {
            let dir = seg.b - seg.a;
            Segment2::with_line(seg.a + dir * s, seg.b + dir * (1.0 + e + 2.5), seg.line, &t.k, seg.image).unwrap()
        };
        let cfg = ScaleConfig::default();
        if let Some(h) = t.coplanar_pair(&mut g) {
            let moved = CoplanarPairHypothesis {
                la: LineMatch2V { first: slide(&h.la.first), second: slide(&h.la.second), ids: h.la.ids },
                lb: LineMatch2V { first: slide(&h.lb.first), second: slide(&h.lb.second), ids: h.lb.ids },
            };
            let (a, b) = (coplanar_scale_ratio(&h, &t.frame, &cfg), coplanar_scale_ratio(&moved, &t.frame, &cfg));
            prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }
        if let Some(lt) = t.line_triplet(&mut g) {
            let moved = LineTriplet { segments: lt.segments.map(|x| slide(&x)), ids: lt.ids };
            let (a, b) = (trifocal_line_ratio(&lt, &t.frame, &cfg), trifocal_line_ratio(&moved, &t.frame, &cfg));
            prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }
    }

    #[test]
    fn minimizer_beats_grid(seed in any::<u64>()) {
        let mut g = rng(seed);
        let [u, v, w] = [0; 3].map(|_| unit_vector(&mut g) * g.random_range(0.1..10.0));
        let (grid, step, _) = grid_minimum(&u, &v, &w, 100_000);
        match quadratic_angle_minimizer(&u, &v, &w, 0.0) {
            Ok(l) => prop_assert!(chainsfm::scale::angle_objective(&u, &v, &w, l) <= grid + step),
            Err(_) => {
                let limit = u.cross(&w).norm() / (u.norm() * w.norm());
                prop_assert!(grid >= limit - step);
            }
        }
    }
}

#[test]
fn minimizer_known_instance() {
    // v + λw is parallel to u at λ = 2
    let (u, v, w) = (Vec3::new(1.0, 2.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0));
    let l = quadratic_angle_minimizer(&u, &v, &w, 1.0).unwrap();
    assert!((l - 2.0).abs() < 1e-12);
    assert!(matches!(quadratic_angle_minimizer(&w, &v, &w, 1.0), Err(ScaleError::DegenerateMinimizer)));
}
