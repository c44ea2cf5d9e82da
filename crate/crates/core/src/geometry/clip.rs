//! Half-space clipping of radical-plane polygons. Supports the dual and
//! alpha graph constructions.

use glam::DVec3;

use super::{radical_plane, Aabb, PowerSite};

/// Clips a convex polygon against `{x : g . x <= h}` (Sutherland-Hodgman).
/// Winding is preserved.
fn clip_halfspace(poly: &[DVec3], g: DVec3, h: f64) -> Vec<DVec3> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let fa = g.dot(a) - h;
        let fb = g.dot(b) - h;
        if fa <= 0.0 {
            out.push(a);
            if fb > 0.0 {
                out.push(a + (fa / (fa - fb)) * (b - a));
            }
        } else if fb <= 0.0 {
            out.push(a + (fa / (fa - fb)) * (b - a));
        }
    }
    out
}

/// Area of a planar convex polygon embedded in 3D.
pub(crate) fn polygon_area(poly: &[DVec3]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let origin = poly[0];
    let mut acc = DVec3::ZERO;
    for i in 1..poly.len() - 1 {
        acc += (poly[i] - origin).cross(poly[i + 1] - origin);
    }
    0.5 * acc.length()
}

/// The face shared by cells `i` and `j`: their radical plane clipped to the
/// box and to `i`'s halfspace against every other site. `None` when the
/// polygon degenerates below three vertices.
///
/// Clipping against `i`'s halfspaces suffices: on the radical plane the
/// powers of `i` and `j` agree, so `j`'s halfspaces cut the same polygon.
pub fn face_polygon(i: usize, j: usize, sites: &[PowerSite], world_box: &Aabb) -> Option<Vec<DVec3>> {
    let plane = radical_plane(&sites[i], &sites[j]).ok()?;
    let n = plane.normal;
    let n_hat = n.normalize();

    // Seed rectangle on the plane, large enough to cover any box section.
    let bc = world_box.center();
    let c0 = bc - (plane.eval(bc) / (2.0 * n.length_squared())) * n;
    let (u, v) = plane_basis(n_hat);
    let ext = world_box.diagonal().max(1e-12);
    let mut poly = vec![
        c0 - ext * u - ext * v,
        c0 + ext * u - ext * v,
        c0 + ext * u + ext * v,
        c0 - ext * u + ext * v,
    ];

    // Box faces.
    for axis in 0..3 {
        let mut g = DVec3::ZERO;
        g[axis] = 1.0;
        poly = clip_halfspace(&poly, g, world_box.max[axis]);
        if poly.len() < 3 {
            return None;
        }
        poly = clip_halfspace(&poly, -g, -world_box.min[axis]);
        if poly.len() < 3 {
            return None;
        }
    }

    // Halfspaces of i against every other site k: pow_i <= pow_k.
    for k in 0..sites.len() {
        if k == i || k == j {
            continue;
        }
        let pk = match radical_plane(&sites[i], &sites[k]) {
            Ok(p) => p,
            Err(_) => continue,
        };
        poly = clip_halfspace(&poly, 2.0 * pk.normal, pk.offset);
        if poly.len() < 3 {
            return None;
        }
    }
    Some(poly)
}

/// Penetration below this fraction of the squared radius counts as a miss.
/// Keeps grazing contacts (exactly tangent spheres, whose shared point has
/// zero measure and cannot affect rendering) out of the graph on whichever
/// side of the tie floating point lands.
pub(crate) const BALL_MEET_EPS: f64 = 1e-10;

/// Whether the polygon cuts into the open ball of `site` by more than the
/// margin above.
pub(crate) fn polygon_meets_ball(poly: &[DVec3], site: &PowerSite) -> bool {
    if poly.len() < 3 {
        return false;
    }
    // The polygon is planar; work with the disk the ball cuts from its plane.
    let n_hat = (poly[1] - poly[0]).cross(poly[2] - poly[0]).normalize();
    let signed = (site.position - poly[0]).dot(n_hat);
    let rho2 = site.radius * site.radius - signed * signed - BALL_MEET_EPS * site.radius * site.radius;
    if rho2 <= 0.0 {
        return false;
    }
    let center = site.position - signed * n_hat;
    point_polygon_distance_sq(center, poly, n_hat) < rho2
}

/// Squared distance within the plane from `p` (already on the plane) to the
/// convex polygon; zero when inside.
fn point_polygon_distance_sq(p: DVec3, poly: &[DVec3], n_hat: DVec3) -> f64 {
    let n = poly.len();
    let mut pos = false;
    let mut neg = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let s = (b - a).cross(p - a).dot(n_hat);
        if s > 0.0 {
            pos = true;
        }
        if s < 0.0 {
            neg = true;
        }
    }
    if !(pos && neg) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let ab = b - a;
        let t = ((p - a).dot(ab) / ab.length_squared()).clamp(0.0, 1.0);
        best = best.min((p - (a + t * ab)).length_squared());
    }
    best
}

/// Any orthonormal pair spanning the plane with normal `n_hat`.
fn plane_basis(n_hat: DVec3) -> (DVec3, DVec3) {
    let helper = if n_hat.x.abs() < 0.9 { DVec3::X } else { DVec3::Y };
    let u = n_hat.cross(helper).normalize();
    let v = n_hat.cross(u);
    (u, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_square_by_halfplane() {
        let square = vec![
            DVec3::new(0.0, 0.0, 0.0),
            DVec3::new(2.0, 0.0, 0.0),
            DVec3::new(2.0, 2.0, 0.0),
            DVec3::new(0.0, 2.0, 0.0),
        ];
        let clipped = clip_halfspace(&square, DVec3::X, 1.0);
        assert_eq!(clipped.len(), 4);
        assert!((polygon_area(&clipped) - 2.0).abs() < 1e-12);
        let gone = clip_halfspace(&square, DVec3::X, -1.0);
        assert!(gone.len() < 3);
    }

    #[test]
    fn face_polygon_two_sites_is_box_section() {
        let sites = [
            PowerSite::new(DVec3::new(-1.0, 0.0, 0.0), 1.0),
            PowerSite::new(DVec3::new(1.0, 0.0, 0.0), 1.0),
        ];
        let bb = Aabb::new(DVec3::splat(-2.0), DVec3::splat(2.0));
        let poly = face_polygon(0, 1, &sites, &bb).unwrap();
        // Section of the box by the plane x = 0: a 4 x 4 square.
        assert!((polygon_area(&poly) - 16.0).abs() < 1e-9);
        for p in &poly {
            assert!(p.x.abs() < 1e-9);
        }
    }

    #[test]
    fn disk_polygon_intersection() {
        let square = vec![
            DVec3::new(0.0, 0.0, 0.0),
            DVec3::new(1.0, 0.0, 0.0),
            DVec3::new(1.0, 1.0, 0.0),
            DVec3::new(0.0, 1.0, 0.0),
        ];
        // Ball centered above the square, touching its plane inside.
        assert!(polygon_meets_ball(&square, &PowerSite::new(DVec3::new(0.5, 0.5, 0.3), 0.5)));
        // Ball whose disk misses the square laterally.
        assert!(!polygon_meets_ball(&square, &PowerSite::new(DVec3::new(3.0, 0.5, 0.0), 0.5)));
        // Ball too far off the plane.
        assert!(!polygon_meets_ball(&square, &PowerSite::new(DVec3::new(0.5, 0.5, 2.0), 0.5)));
        // Ball outside but whose disk clips a corner.
        assert!(polygon_meets_ball(&square, &PowerSite::new(DVec3::new(1.2, 1.2, 0.0), 0.4)));
    }
}
