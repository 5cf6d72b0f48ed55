//! Planar convex hull (Andrew's monotone chain).

use crate::geometry::Point;

fn cross(o: &Point, a: &Point, b: &Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise hull vertices starting from the lowest-x (then lowest-y)
/// point. Collinear points, including hull-edge interiors, are dropped, so a
/// collinear input yields its two extreme endpoints and coincident input a
/// single point.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Shoelace area of a simple polygon given in order.
pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let n = poly.len();
    0.5 * (0..n)
        .map(|k| {
            let (a, b) = (&poly[k], &poly[(k + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
}

/// True when the points lie on (or near) a line: hull area small relative
/// to the squared diameter.
pub fn is_degenerate(points: &[Point], area_ratio: f64) -> bool {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return true;
    }
    let diam2 = hull
        .iter()
        .flat_map(|a| hull.iter().map(move |b| (a - b).norm_squared()))
        .fold(0.0, f64::max);
    polygon_area(&hull) <= area_ratio * diam2
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn square_with_center() {
        let h = convex_hull(&[p(0.0, 0.0), p(1.0, 1.0), p(0.5, 0.5), p(1.0, 0.0), p(0.0, 1.0)]);
        assert_eq!(h, vec![p(0.0, 0.0), p(1.0, 0.0), p(1.0, 1.0), p(0.0, 1.0)]);
        assert_eq!(polygon_area(&h), 1.0);
    }

    #[test]
    fn triangle() {
        let h = convex_hull(&[p(2.0, 0.0), p(0.0, 0.0), p(1.0, 3.0)]);
        assert_eq!(h.len(), 3);
        assert!(polygon_area(&h) > 0.0);
    }

    #[test]
    fn collinear_gives_endpoints() {
        let pts: Vec<Point> = (0..5).map(|k| p(k as f64, 2.0 * k as f64)).collect();
        assert_eq!(convex_hull(&pts), vec![p(0.0, 0.0), p(4.0, 8.0)]);
        assert!(is_degenerate(&pts, 1e-3));
        assert!(!is_degenerate(&[p(0.0, 0.0), p(1.0, 0.0), p(0.0, 1.0)], 1e-3));
    }

    #[test]
    fn single_and_repeated_points() {
        assert_eq!(convex_hull(&[p(1.0, 1.0)]), vec![p(1.0, 1.0)]);
        assert_eq!(convex_hull(&[p(1.0, 1.0), p(1.0, 1.0)]), vec![p(1.0, 1.0)]);
    }

    proptest! {
        #[test]
        fn hull_contains_all_points(pts in proptest::collection::vec((-10i32..10, -10i32..10), 3..30)) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| p(x as f64, y as f64)).collect();
            let h = convex_hull(&pts);
            if h.len() >= 3 {
                prop_assert!(polygon_area(&h) > 0.0);
                for q in &pts {
                    for k in 0..h.len() {
                        prop_assert!(cross(&h[k], &h[(k + 1) % h.len()], q) >= 0.0);
                    }
                }
            }
        }
    }
}
