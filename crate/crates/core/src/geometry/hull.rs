//! Convex hulls of point clouds in one and two dimensions.

/// Counter-clockwise hull vertices (Andrew's monotone chain). Collinear
/// points on edges are dropped.
pub fn hull_2d(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
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

/// Signed distance from `x` to the boundary of a counter-clockwise convex
/// polygon: positive inside, negative outside (distance to the nearest
/// supporting line, which is exact inside).
pub fn polygon_inner_distance(hull: &[[f64; 2]], x: &[f64]) -> f64 {
    let m = hull.len();
    if m < 3 {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for i in 0..m {
        let a = hull[i];
        let b = hull[(i + 1) % m];
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let len = (ex * ex + ey * ey).sqrt();
        // Inward normal of a CCW edge is (-ey, ex).
        let d = ((x[0] - a[0]) * (-ey) + (x[1] - a[1]) * ex) / len;
        best = best.min(d);
    }
    best
}

pub fn polygon_diameter(hull: &[[f64; 2]]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in hull.iter().enumerate() {
        for b in &hull[i + 1..] {
            d = d.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
        }
    }
    d
}
