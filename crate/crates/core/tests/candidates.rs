use std::collections::{BTreeMap, BTreeSet};

use chainsfm::geometry::{undirected_angle_deg, PARALLEL_FLOOR_DEG};
use chainsfm::robust::{build_candidates, TripletFeatures};
use chainsfm::{generate, OverlapMode, SceneSpec, TripletFrame, Vec3};

/// Brute-force coplanar pairs as camera-1/2/2/3 segment ids.
fn brute_force_pairs(f: &TripletFeatures, tf: &TripletFrame, neighbors: usize, floor_deg: f64) -> BTreeSet<[usize; 4]> {
    let (m12, m23) = (&f.line_matches[0], &f.line_matches[1]);
    let s2 = &f.segments[1];
    let closest = |seg: usize, side: &[(usize, usize)], key: fn(&(usize, usize)) -> usize| -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = (0..side.len())
            .filter(|&j| key(&side[j]) != seg)
            .map(|j| {
                let o = &s2[key(&side[j])];
                let me = &s2[seg];
                let d = [me.a, me.b].iter().flat_map(|p| [(p - o.a).norm(), (p - o.b).norm()]).fold(f64::INFINITY, f64::min);
                (d, j)
            })
            .collect();
        all.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        all.truncate(neighbors);
        all.into_iter().map(|x| x.1).collect()
    };
    let mut ij = BTreeSet::new();
    for (i, m) in m12.iter().enumerate() {
        ij.extend(closest(m.1, m23, |x| x.0).into_iter().map(|j| (i, j)));
    }
    for (j, m) in m23.iter().enumerate() {
        ij.extend(closest(m.0, m12, |x| x.1).into_iter().map(|i| (i, j)));
    }
    let r = tf.rotations();
    let direction = |view_a: usize, sa: usize, view_b: usize, sb: usize| -> Option<Vec3> {
        let na = r[view_a].inverse() * f.segments[view_a][sa].line.as_vector();
        let nb = r[view_b].inverse() * f.segments[view_b][sb].line.as_vector();
        let d = na.cross(&nb);
        (d.norm() >= PARALLEL_FLOOR_DEG.to_radians().sin()).then_some(d)
    };
    ij.into_iter()
        .filter_map(|(i, j)| {
            let (a1, a2) = m12[i];
            let (b2, b3) = m23[j];
            let da = direction(0, a1, 1, a2)?;
            let db = direction(1, b2, 2, b3)?;
            (undirected_angle_deg(&da, &db) >= floor_deg).then_some([a1, a2, b2, b3])
        })
        .collect()
}

#[test]
fn candidates_match_brute_force() {
    for (seed, outliers, neighbors) in [(0, 0.0, 10), (1, 0.3, 10), (2, 0.3, 3), (3, 0.1, 25)] {
        let spec = SceneSpec { seed, cameras: 4, noise_px: 0.5, outlier_fraction: outliers, ..SceneSpec::default() };
        let (d, _) = generate(&spec).unwrap();
        for cams in d.triplets() {
            let tf = d.triplet_frame(cams).unwrap();
            let f = d.triplet_features(cams).unwrap();
            let c = build_candidates(&f, &tf, neighbors, 15.0);

            let got: BTreeSet<[usize; 4]> = c.coplanar.iter().map(|h| [h.la.ids[0], h.la.ids[1], h.lb.ids[0], h.lb.ids[1]]).collect();
            assert_eq!(got.len(), c.coplanar.len(), "duplicate pairs");
            assert_eq!(got, brute_force_pairs(&f, &tf, neighbors, 15.0), "seed {seed} {cams:?}");
            for h in &c.coplanar {
                assert_ne!(h.la.ids[1], h.lb.ids[0]);
            }

            let n_se2: BTreeSet<usize> = f.line_matches[0].iter().map(|m| m.1).chain(f.line_matches[1].iter().map(|m| m.0)).collect();
            assert_eq!(c.n_se2, n_se2.len());
            for (h, &(a, b)) in c.coplanar.iter().zip(&c.coplanar_slots) {
                assert_eq!((c.coplanar_lines[a], c.coplanar_lines[b]), (h.la.ids[1], h.lb.ids[0]));
            }

            // trifocal tracks: one per pair of matches meeting at a camera-2 feature
            let mut per_line: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
            f.line_matches[0].iter().for_each(|m| per_line.entry(m.1).or_default().0 += 1);
            f.line_matches[1].iter().for_each(|m| per_line.entry(m.0).or_default().1 += 1);
            assert_eq!(c.tri_lines.len(), per_line.values().map(|(a, b)| a * b).sum::<usize>());
            assert_eq!(c.n_se, c.tri_lines.len());
            let mut per_point: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
            f.point_matches[0].iter().for_each(|m| per_point.entry(m.1).or_default().0 += 1);
            f.point_matches[1].iter().for_each(|m| per_point.entry(m.0).or_default().1 += 1);
            assert_eq!(c.tri_points.len(), per_point.values().map(|(a, b)| a * b).sum::<usize>());
        }
    }
}

#[test]
fn overlap_modes_empty_the_right_families() {
    let cases = [
        (OverlapMode::RemoveTrifocalPoints, false, true),
        (OverlapMode::RemoveTrifocalLines, true, false),
        (OverlapMode::BifocalOnly, false, false),
    ];
    for (overlap, points, lines) in cases {
        let (d, _) = generate(&SceneSpec { cameras: 4, overlap, ..SceneSpec::default() }).unwrap();
        for cams in d.triplets() {
            let c = build_candidates(&d.triplet_features(cams).unwrap(), &d.triplet_frame(cams).unwrap(), 10, 15.0);
            assert_eq!(!c.tri_points.is_empty(), points, "{overlap:?}");
            assert_eq!(!c.tri_lines.is_empty(), lines, "{overlap:?}");
            assert!(!c.coplanar.is_empty());
        }
    }
}

#[test]
fn restriction_keeps_counts_consistent() {
    let (d, _) = generate(&SceneSpec { cameras: 3, ..SceneSpec::default() }).unwrap();
    let cams = d.triplets()[0];
    let c = build_candidates(&d.triplet_features(cams).unwrap(), &d.triplet_frame(cams).unwrap(), 10, 15.0);
    let only = c.restricted(true, false, false);
    assert_eq!((only.n_pt, only.n_se, only.tri_points.len(), only.tri_lines.len()), (0, 0, 0, 0));
    assert_eq!(only.coplanar.len(), c.coplanar.len());
    assert!(c.restricted(false, false, false).is_empty());
}
