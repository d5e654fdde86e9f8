mod common;

use arelink::geom::{
    centroid, convex_hull, knn_units, min_distance, queen_contiguous, DistanceMetric, DEFAULT_CONTIGUITY_TOL,
};
use arelink::{load_areas, AreaUnit, Areas, GeomError, Point, Polygon};
use proptest::prelude::*;

use common::rectangles;

// Oracle segment distance: crossing test, else the four endpoint projections.
fn oracle_point_seg(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn oracle_seg_seg(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> f64 {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return 0.0;
    }
    oracle_point_seg(a, c, d)
        .min(oracle_point_seg(b, c, d))
        .min(oracle_point_seg(c, a, b))
        .min(oracle_point_seg(d, a, b))
}

fn rect_segments(r: (f64, f64, f64, f64)) -> Vec<((f64, f64), (f64, f64))> {
    let (x0, y0, x1, y1) = r;
    let p = [(x0, y0), (x0, y1), (x1, y1), (x1, y0)];
    (0..4).map(|i| (p[i], p[(i + 1) % 4])).collect()
}

fn oracle_rect_distance(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    // overlapping interiors
    if a.0 < b.2 && b.0 < a.2 && a.1 < b.3 && b.1 < a.3 {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (p, q) in rect_segments(a) {
        for (r, s) in rect_segments(b) {
            best = best.min(oracle_seg_seg(p, q, r, s));
        }
    }
    best
}

fn unit(name: &str, r: (f64, f64, f64, f64)) -> AreaUnit<f64> {
    AreaUnit::new(name, vec![Polygon::rect(r.0, r.1, r.2, r.3)])
}

fn rect_strategy() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (-20i32..20, -20i32..20, 1i32..8, 1i32..8).prop_map(|(x, y, w, h)| {
        let (x, y) = (x as f64 * 0.5, y as f64 * 0.5);
        (x, y, x + w as f64 * 0.5, y + h as f64 * 0.5)
    })
}

#[test]
fn fixture_loads_in_file_order() {
    let c = rectangles();
    assert_eq!(c.names(), ["Rect1", "Rect2", "Rect3", "Rect4", "Rect5"]);
    let b = c.bbox().unwrap();
    assert_eq!((b.min.x, b.min.y, b.max.x, b.max.y), (0.0, 0.0, 6.0, 4.0));
}

#[test]
fn fixture_distances() {
    let c = rectangles();
    let d = |a: &str, b: &str| min_distance(c.by_name(a).unwrap(), c.by_name(b).unwrap());
    assert!((d("Rect2", "Rect4") - 1.0).abs() < 1e-12);
    assert!((d("Rect3", "Rect5") - 0.2).abs() < 1e-12);
    assert_eq!(d("Rect1", "Rect2"), 0.0);
    let q = |a: &str, b: &str| {
        queen_contiguous(c.by_name(a).unwrap(), c.by_name(b).unwrap(), DEFAULT_CONTIGUITY_TOL)
    };
    assert!(q("Rect1", "Rect2"));
    assert!(q("Rect1", "Rect3"));
    assert!(!q("Rect1", "Rect4"));
}

#[test]
fn load_errors_name_the_offenders() {
    let dup = br#"{"type":"FeatureCollection","features":[
        {"type":"Feature","properties":{"name":"A"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]]]}},
        {"type":"Feature","properties":{"name":"A"},"geometry":{"type":"Polygon","coordinates":[[[2,0],[3,0],[3,1],[2,0]]]}}]}"#;
    assert!(matches!(load_areas::<f64>(dup, "name"), Err(GeomError::DuplicateNames { names }) if names == ["A"]));
    let point = br#"{"type":"FeatureCollection","features":[
        {"type":"Feature","properties":{"name":"A"},"geometry":{"type":"Point","coordinates":[0,0]}}]}"#;
    assert!(matches!(load_areas::<f64>(point, "name"), Err(GeomError::NonAreal { index: 0, .. })));
    let empty = br#"{"type":"FeatureCollection","features":[]}"#;
    assert!(load_areas::<f64>(empty, "name").unwrap().is_empty());
}

#[test]
fn f32_geometry_agrees_with_f64() {
    let c32: arelink::Areas32 = load_areas(common::RECTANGLES, "name").unwrap();
    let d = min_distance(c32.by_name("Rect3").unwrap(), c32.by_name("Rect5").unwrap());
    assert!((d - 0.2f32).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn min_distance_matches_brute_force(a in rect_strategy(), b in rect_strategy()) {
        let (ua, ub) = (unit("a", a), unit("b", b));
        let got = min_distance(&ua, &ub);
        let want = oracle_rect_distance(a, b);
        prop_assert!((got - want).abs() < 1e-9, "got {got} want {want}");
        prop_assert_eq!(got, min_distance(&ub, &ua));
        prop_assert_eq!(queen_contiguous(&ua, &ub, DEFAULT_CONTIGUITY_TOL), want <= DEFAULT_CONTIGUITY_TOL);
    }

    #[test]
    fn nested_unit_has_zero_distance(a in rect_strategy()) {
        let outer = unit("o", (a.0 - 1.0, a.1 - 1.0, a.2 + 1.0, a.3 + 1.0));
        prop_assert_eq!(min_distance(&outer, &unit("i", a)), 0.0);
    }

    #[test]
    fn rectangle_centroid_is_its_centre(a in rect_strategy()) {
        let c = centroid(&unit("a", a)).unwrap();
        prop_assert!((c.x - (a.0 + a.2) / 2.0).abs() < 1e-9);
        prop_assert!((c.y - (a.1 + a.3) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn knn_matches_sorted_brute_force(rects in prop::collection::vec(rect_strategy(), 3..10), k in 1usize..3) {
        let units: Vec<_> = rects.iter().enumerate().map(|(i, r)| unit(&format!("u{i}"), *r)).collect();
        let coll = Areas::new("name", units).unwrap();
        let got = knn_units(&coll, "u0", k, DistanceMetric::Boundary).unwrap();
        let mut cand: Vec<(usize, f64)> = (1..rects.len()).map(|j| (j, oracle_rect_distance(rects[0], rects[j]))).collect();
        cand.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap().then(x.0.cmp(&y.0)));
        let want: Vec<String> = cand.iter().take(k).map(|(j, _)| format!("u{j}")).collect();
        // ties within numerical noise may swap; compare distances instead of names then
        let dist_of = |n: &str| {
            let j: usize = n[1..].parse().unwrap();
            oracle_rect_distance(rects[0], rects[j])
        };
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((dist_of(g) - dist_of(w)).abs() < 1e-9);
        }
        prop_assert_eq!(got.len(), want.len());
    }

    #[test]
    fn convex_hull_matches_gift_wrapping(pts in prop::collection::vec((-50i32..50, -50i32..50), 3..40)) {
        let points: Vec<Point<f64>> = pts.iter().map(|&(x, y)| Point::new(x as f64, y as f64)).collect();
        let hull = convex_hull(&points);
        let distinct: Vec<(f64, f64)> = {
            let mut v: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup();
            v
        };
        let mut want = Vec::new();
        if distinct.len() >= 3 {
            // Jarvis march from the lowest-leftmost point
            let start = *distinct.iter().min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap())).unwrap();
            let mut cur = start;
            loop {
                want.push(cur);
                let mut next = if distinct[0] == cur { distinct[1] } else { distinct[0] };
                for &c in &distinct {
                    if c == cur { continue; }
                    let o = orient(cur, next, c);
                    let farther = (c.0 - cur.0).powi(2) + (c.1 - cur.1).powi(2) > (next.0 - cur.0).powi(2) + (next.1 - cur.1).powi(2);
                    if o < 0.0 || (o == 0.0 && farther) { next = c; }
                }
                cur = next;
                if cur == start || want.len() > distinct.len() { break; }
            }
        }
        let mut got: Vec<(f64, f64)> = hull.iter().map(|p| (p.x, p.y)).collect();
        if got.len() > 1 && got.first() == got.last() { got.pop(); }
        // area equality is orientation- and start-independent
        let area = |v: &[(f64, f64)]| {
            let n = v.len();
            (0..n).map(|i| v[i].0 * v[(i + 1) % n].1 - v[(i + 1) % n].0 * v[i].1).sum::<f64>().abs() / 2.0
        };
        if want.len() >= 3 {
            prop_assert!((area(&got) - area(&want)).abs() < 1e-9);
            let mut g = got.clone(); g.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut w = want.clone(); w.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert_eq!(g, w);
        }
    }
}
