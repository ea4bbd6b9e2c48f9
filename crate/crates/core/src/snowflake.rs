//! Polygonal approximations of the Koch snowflake domain.
//!
//! The depth-`k` polygon is the base equilateral triangle together with the
//! outward bumps added on every edge in the first `k` refinement steps. All
//! the bumps grown on an edge `ab` stay inside the triangle `(a, apex, b)`
//! with base angles of 30 degrees, which lets membership recurse only into
//! edges whose bounding triangle contains the query point.

use crate::geom::rotate2;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Default refinement depth used by the cutout models.
pub const DEFAULT_DEPTH: u32 = 8;

type P = [f64; 2];

/// Vertices of the base triangle for a snowflake of diameter 1 centered at the
/// origin (counterclockwise). The snowflake's diameter equals twice the
/// circumradius of its base triangle.
fn base_triangle() -> [P; 3] {
    let r = 0.5;
    let angles = [90.0_f64, 210.0, 330.0];
    angles.map(|a| {
        let t = a.to_radians();
        [r * t.cos(), r * t.sin()]
    })
}

#[inline]
fn cross(o: P, a: P, b: P) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Closed triangle test, orientation agnostic.
#[inline]
fn in_triangle(x: P, a: P, b: P, c: P) -> bool {
    let d1 = cross(a, b, x);
    let d2 = cross(b, c, x);
    let d3 = cross(c, a, x);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

/// Points of the middle-third bump on the counterclockwise edge `a -> b`.
#[inline]
fn bump(a: P, b: P) -> (P, P, P) {
    let d = [b[0] - a[0], b[1] - a[1]];
    let p = [a[0] + d[0] / 3.0, a[1] + d[1] / 3.0];
    let q = [a[0] + 2.0 * d[0] / 3.0, a[1] + 2.0 * d[1] / 3.0];
    // outward normal of a CCW edge points to its right; |d| * sqrt(3)/6 is the
    // height of the equilateral triangle on the middle third
    let apex = [
        0.5 * (a[0] + b[0]) + d[1] * SQRT3 / 6.0,
        0.5 * (a[1] + b[1]) - d[0] * SQRT3 / 6.0,
    ];
    (p, apex, q)
}

fn in_edge_region(x: P, a: P, b: P, depth: u32) -> bool {
    if depth == 0 {
        return false;
    }
    let (p, apex, q) = bump(a, b);
    if !in_triangle(x, a, apex, b) {
        return false;
    }
    if in_triangle(x, p, apex, q) {
        return true;
    }
    in_edge_region(x, a, p, depth - 1)
        || in_edge_region(x, p, apex, depth - 1)
        || in_edge_region(x, apex, q, depth - 1)
        || in_edge_region(x, q, b, depth - 1)
}

/// Membership of `x` in the depth-level snowflake polygon with the given
/// center and diameter, rotated counterclockwise by `rotation` radians.
pub fn point_in_snowflake_rotated(x: P, center: P, diameter: f64, depth: u32, rotation: f64) -> bool {
    let mut local = [(x[0] - center[0]) / diameter, (x[1] - center[1]) / diameter];
    if local[0] * local[0] + local[1] * local[1] > 0.25 {
        return false;
    }
    if rotation != 0.0 {
        local = rotate2(local, -rotation);
    }
    let [a, b, c] = base_triangle();
    if in_triangle(local, a, b, c) {
        return true;
    }
    in_edge_region(local, a, b, depth) || in_edge_region(local, b, c, depth) || in_edge_region(local, c, a, depth)
}

pub fn point_in_snowflake(x: P, center: P, diameter: f64, depth: u32) -> bool {
    point_in_snowflake_rotated(x, center, diameter, depth, 0.0)
}

/// Counterclockwise vertex list of the diameter-1 polygon (3 * 4^depth vertices).
pub fn snowflake_polygon(depth: u32) -> Vec<P> {
    let [a, b, c] = base_triangle();
    let mut verts = vec![a, b, c];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(verts.len() * 4);
        for i in 0..verts.len() {
            let (s, e) = (verts[i], verts[(i + 1) % verts.len()]);
            let (p, apex, q) = bump(s, e);
            next.extend_from_slice(&[s, p, apex, q]);
        }
        verts = next;
    }
    verts
}

/// Shoelace area of a closed polygon.
pub fn polygon_area(verts: &[P]) -> f64 {
    let n = verts.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (verts[i], verts[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice.abs()
}

/// Area of the depth-level polygon with diameter 1.
pub fn snowflake_area(depth: u32) -> f64 {
    if depth <= 10 {
        polygon_area(&snowflake_polygon(depth))
    } else {
        // each level adds 3 * 4^(j-1) triangles of area A0 / 9^j
        let a0 = 3.0 * SQRT3 / 16.0;
        let mut area = a0;
        for j in 1..=depth {
            area += a0 * 3.0 * 4f64.powi(j as i32 - 1) / 9f64.powi(j as i32);
        }
        area
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Exact area of the limiting snowflake with diameter 1: (8/5) * A0.
    const LIMIT_AREA: f64 = 0.519_615_242_270_663_2;

    #[test]
    fn center_always_inside() {
        for depth in 0..10 {
            assert!(point_in_snowflake([0.3, -0.2], [0.3, -0.2], 0.7, depth));
        }
    }

    #[test]
    fn far_points_outside() {
        assert!(!point_in_snowflake([1.01, 0.0], [0.0, 0.0], 1.0, 8));
        assert!(!point_in_snowflake([0.0, 0.51], [0.0, 0.0], 1.0, 8));
    }

    #[test]
    fn star_tips_only_after_first_refinement() {
        // tip of the bump on the bottom edge sits on the circumcircle
        let tip = [0.0, -0.5 + 1e-9];
        assert!(!point_in_snowflake(tip, [0.0, 0.0], 1.0, 0));
        assert!(point_in_snowflake(tip, [0.0, 0.0], 1.0, 1));
    }

    #[test]
    fn polygon_area_matches_series() {
        for depth in 0..=6 {
            let direct = polygon_area(&snowflake_polygon(depth));
            let a0 = 3.0 * SQRT3 / 16.0;
            let series: f64 = a0
                + (1..=depth)
                    .map(|j| a0 * 3.0 * 4f64.powi(j as i32 - 1) / 9f64.powi(j as i32))
                    .sum::<f64>();
            assert_relative_eq!(direct, series, epsilon = 1e-12);
        }
        assert_relative_eq!(snowflake_area(30), LIMIT_AREA, epsilon = 1e-10);
    }

    #[test]
    fn rasterized_area_depth8_vs_depth12() {
        // self-consistency of the membership test at two resolutions
        let n = 1024;
        let count = |depth| {
            let mut hits = 0usize;
            for i in 0..n {
                for j in 0..n {
                    let x = [-0.5 + (i as f64 + 0.5) / n as f64, -0.5 + (j as f64 + 0.5) / n as f64];
                    if point_in_snowflake(x, [0.0, 0.0], 1.0, depth) {
                        hits += 1;
                    }
                }
            }
            hits as f64 / (n * n) as f64
        };
        let (a8, a12) = (count(8), count(12));
        assert!((a8 - a12).abs() / a12 < 0.01, "{a8} vs {a12}");
        assert!((a12 - LIMIT_AREA).abs() < 2e-3, "{a12}");
    }

    #[test]
    fn membership_agrees_with_polygon_area() {
        let n = 512;
        let depth = 4;
        let mut hits = 0usize;
        for i in 0..n {
            for j in 0..n {
                let x = [-0.5 + (i as f64 + 0.5) / n as f64, -0.5 + (j as f64 + 0.5) / n as f64];
                if point_in_snowflake(x, [0.0, 0.0], 1.0, depth) {
                    hits += 1;
                }
            }
        }
        let raster = hits as f64 / (n * n) as f64;
        assert!((raster - snowflake_area(depth)).abs() < 3e-3);
    }

    #[test]
    fn rotation_by_120_degrees_is_a_symmetry() {
        let x = [0.11, 0.37];
        let a = point_in_snowflake_rotated(x, [0.0, 0.0], 1.0, 6, 0.0);
        let b = point_in_snowflake_rotated(x, [0.0, 0.0], 1.0, 6, 2.0 * std::f64::consts::PI / 3.0);
        assert_eq!(a, b);
    }
}
