//! Power-diagram geometry: sites, radical planes, adjacency graphs and
//! per-cell ray intervals.
//!
//! Conventions used throughout:
//! - A site is a sphere `(p, r)`; its power distance at `x` is
//!   `|x - p|^2 - r^2`.
//! - The radical plane between sites `a` and `b` is stored as
//!   `{x : 2 x . normal = offset}` with `normal = p_b - p_a`. Points with
//!   `2 x . normal < offset` lie on the `a` side. The offset uses the
//!   midpoint form `(p_a + p_b) . normal + r_a^2 - r_b^2`, which is exactly
//!   `|p_b|^2 - |p_a|^2 + r_a^2 - r_b^2` in real arithmetic but loses less
//!   precision for sites far from the origin.
//! - Ray intervals are half-open in spirit: an interval is empty iff
//!   `t_out <= t_in`.

mod clip;

use glam::DVec3;

use crate::error::FoamError;

pub use clip::face_polygon;

/// Weighted site of the power diagram.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PowerSite {
    pub position: DVec3,
    pub radius: f64,
}

impl PowerSite {
    pub fn new(position: DVec3, radius: f64) -> Self {
        PowerSite { position, radius }
    }

    pub fn power_distance(&self, x: DVec3) -> f64 {
        power_distance(x, self)
    }
}

/// `|x - p|^2 - r^2`. Negative inside the sphere, zero on it.
pub fn power_distance(x: DVec3, site: &PowerSite) -> f64 {
    (x - site.position).length_squared() - site.radius * site.radius
}

/// Locus of equal power distance between two sites: `{x : 2 x . normal = offset}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadicalPlane {
    /// `p_b - p_a`; not normalized.
    pub normal: DVec3,
    pub offset: f64,
}

impl RadicalPlane {
    /// `pow_a(x) - pow_b(x)`; negative on the `a` side.
    pub fn eval(&self, x: DVec3) -> f64 {
        2.0 * x.dot(self.normal) - self.offset
    }
}

pub fn radical_plane(a: &PowerSite, b: &PowerSite) -> Result<RadicalPlane, FoamError> {
    let normal = b.position - a.position;
    if normal == DVec3::ZERO {
        return Err(FoamError::CoincidentSites { a: 0, b: 0 });
    }
    let offset = (a.position + b.position).dot(normal) + a.radius * a.radius - b.radius * b.radius;
    Ok(RadicalPlane { normal, offset })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: DVec3,
    /// Unit length; `t` along the ray is world distance.
    pub dir: DVec3,
}

impl Ray {
    pub fn new(origin: DVec3, dir: DVec3) -> Self {
        Ray { origin, dir: dir.normalize() }
    }

    pub fn at(&self, t: f64) -> DVec3 {
        self.origin + t * self.dir
    }
}

/// Parameter interval along a ray. Empty iff `t_out <= t_in`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayInterval {
    pub t_in: f64,
    pub t_out: f64,
}

impl RayInterval {
    pub const EMPTY: RayInterval = RayInterval { t_in: 0.0, t_out: 0.0 };

    pub fn new(t_in: f64, t_out: f64) -> Self {
        RayInterval { t_in, t_out }
    }

    pub fn is_empty(&self) -> bool {
        self.t_out <= self.t_in
    }

    pub fn length(&self) -> f64 {
        (self.t_out - self.t_in).max(0.0)
    }
}

/// Axis-aligned box; used both as the diagram's clipping region and for
/// ray entry tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: DVec3,
    pub max: DVec3,
}

impl Aabb {
    pub fn new(min: DVec3, max: DVec3) -> Self {
        Aabb { min, max }
    }

    /// Tight box around the union of the sites' spheres.
    pub fn from_spheres(sites: &[PowerSite]) -> Self {
        let mut min = DVec3::splat(f64::INFINITY);
        let mut max = DVec3::splat(f64::NEG_INFINITY);
        for s in sites {
            min = min.min(s.position - DVec3::splat(s.radius));
            max = max.max(s.position + DVec3::splat(s.radius));
        }
        Aabb { min, max }
    }

    /// Scales the half extents about the center.
    pub fn expanded(&self, factor: f64) -> Self {
        let c = self.center();
        let h = 0.5 * (self.max - self.min) * factor;
        Aabb { min: c - h, max: c + h }
    }

    pub fn center(&self) -> DVec3 {
        0.5 * (self.min + self.max)
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).length()
    }

    pub fn contains(&self, x: DVec3) -> bool {
        x.cmpge(self.min).all() && x.cmple(self.max).all()
    }

    /// Slab test. The returned interval may start negative; callers clamp.
    pub fn ray_range(&self, ray: &Ray) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for axis in 0..3 {
            let o = ray.origin[axis];
            let d = ray.dir[axis];
            if d.abs() < 1e-300 {
                if o < self.min[axis] || o > self.max[axis] {
                    return None;
                }
            } else {
                let inv = 1.0 / d;
                let mut a = (self.min[axis] - o) * inv;
                let mut b = (self.max[axis] - o) * inv;
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                t0 = t0.max(a);
                t1 = t1.min(b);
                if t1 < t0 {
                    return None;
                }
            }
        }
        Some((t0, t1))
    }
}

/// Undirected graph over site indices with sorted per-node neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyGraph {
    neighbors: Vec<Vec<u32>>,
}

impl AdjacencyGraph {
    pub fn new(n: usize) -> Self {
        AdjacencyGraph { neighbors: vec![Vec::new(); n] }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut g = AdjacencyGraph::new(n);
        for (i, j) in edges {
            g.insert(i, j);
        }
        g
    }

    /// Inserts the undirected edge `(i, j)`; duplicates are ignored.
    pub fn insert(&mut self, i: u32, j: u32) {
        assert_ne!(i, j, "self loops are not allowed");
        for (a, b) in [(i, j), (j, i)] {
            let list = &mut self.neighbors[a as usize];
            if let Err(pos) = list.binary_search(&b) {
                list.insert(pos, b);
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, i: u32, j: u32) -> bool {
        self.neighbors[i as usize].binary_search(&j).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(|l| l.len()).sum::<usize>() / 2
    }

    /// Unordered edges with `i < j`, ascending.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.neighbors.iter().enumerate().flat_map(|(i, list)| {
            let i = i as u32;
            list.iter().copied().filter(move |&j| i < j).map(move |j| (i, j))
        })
    }

    pub fn is_subgraph_of(&self, other: &AdjacencyGraph) -> bool {
        self.node_count() == other.node_count()
            && self.edges().all(|(i, j)| other.has_edge(i, j))
    }
}

/// Edge iff the spheres overlap in an open set: `|p_i - p_j| < r_i + r_j`.
/// Tangent spheres are not connected.
pub fn cech_complex(sites: &[PowerSite]) -> AdjacencyGraph {
    let mut g = AdjacencyGraph::new(sites.len());
    for i in 0..sites.len() {
        for j in (i + 1)..sites.len() {
            let d2 = (sites[i].position - sites[j].position).length_squared();
            let rr = sites[i].radius + sites[j].radius;
            if d2 < rr * rr {
                g.insert(i as u32, j as u32);
            }
        }
    }
    g
}

/// Fraction of the squared box diagonal below which a clipped face is
/// treated as numerically absent.
pub const FACE_AREA_EPS: f64 = 1e-10;

/// Edge iff the two cells share a face of positive area inside `world_box`.
///
/// Built by brute force: for each pair the radical plane is clipped against
/// the box and against the halfspaces of every other site. O(n^3), which is
/// fine at the scale this crate targets.
pub fn power_dual(sites: &[PowerSite], world_box: &Aabb) -> AdjacencyGraph {
    let diag = world_box.diagonal();
    let area_eps = FACE_AREA_EPS * diag * diag;
    let mut g = AdjacencyGraph::new(sites.len());
    for i in 0..sites.len() {
        for j in (i + 1)..sites.len() {
            if let Some(poly) = clip::face_polygon(i, j, sites, world_box) {
                if clip::polygon_area(&poly) > area_eps {
                    g.insert(i as u32, j as u32);
                }
            }
        }
    }
    g
}

/// Restriction of the dual to edges whose shared face cuts into the open
/// ball of either endpoint. A subgraph of both the dual and the Cech graph;
/// grazing contact is excluded on both so the subset survives exactly
/// tangent spheres.
pub fn alpha_complex(sites: &[PowerSite], world_box: &Aabb, dual: &AdjacencyGraph) -> AdjacencyGraph {
    let mut g = AdjacencyGraph::new(sites.len());
    for (i, j) in dual.edges() {
        let poly = match clip::face_polygon(i as usize, j as usize, sites, world_box) {
            Some(p) => p,
            None => continue,
        };
        if clip::polygon_meets_ball(&poly, &sites[i as usize])
            || clip::polygon_meets_ball(&poly, &sites[j as usize])
        {
            g.insert(i, j);
        }
    }
    g
}

/// Index of the cell containing `x`: the site of minimal power distance,
/// lowest index on ties.
pub fn locate_cell(x: DVec3, sites: &[PowerSite]) -> Result<usize, FoamError> {
    if sites.is_empty() {
        return Err(FoamError::EmptyScene);
    }
    let mut best = 0;
    let mut best_pow = power_distance(x, &sites[0]);
    for (i, s) in sites.iter().enumerate().skip(1) {
        let p = power_distance(x, s);
        if p < best_pow {
            best = i;
            best_pow = p;
        }
    }
    Ok(best)
}

/// Interval along `ray` where the point is inside cell `cell`'s sphere and
/// on `cell`'s side of every listed neighbor's radical plane, clamped to
/// `t >= 0`. Returns an empty interval when the ray misses.
///
/// Passing a superset of the true dual neighbors (for example the Cech
/// neighbors) does not change the result inside the sphere: a site whose
/// cell wins against `cell` at a point of the sphere must itself contain
/// that point, so every binding constraint comes from an overlapping
/// sphere.
pub fn cell_interval(ray: &Ray, cell: usize, sites: &[PowerSite], neighbors: &[u32]) -> RayInterval {
    cell_interval_traced(ray, cell, sites, neighbors).0
}

/// Which constraint produced an endpoint of `cell_interval`. `Start` is
/// the clamp to t >= 0 (ray origin inside the cell).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalSource {
    Sphere,
    Neighbor(u32),
    Start,
}

/// `cell_interval` plus the provenance of both endpoints (for
/// backpropagation through the binding constraint). Sources are
/// meaningless for an empty result.
pub fn cell_interval_traced(
    ray: &Ray,
    cell: usize,
    sites: &[PowerSite],
    neighbors: &[u32],
) -> (RayInterval, IntervalSource, IntervalSource) {
    const EMPTY: (RayInterval, IntervalSource, IntervalSource) =
        (RayInterval::EMPTY, IntervalSource::Sphere, IntervalSource::Sphere);
    let site = &sites[cell];
    let oc = ray.origin - site.position;
    let b = oc.dot(ray.dir);
    let c = oc.length_squared() - site.radius * site.radius;
    let disc = b * b - c;
    if disc <= 0.0 {
        return EMPTY;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    let (mut lo, mut lo_src) = if t0 >= 0.0 {
        (t0, IntervalSource::Sphere)
    } else {
        (0.0, IntervalSource::Start)
    };
    let mut hi = -b + sq;
    let mut hi_src = IntervalSource::Sphere;
    for &j in neighbors {
        let other = &sites[j as usize];
        let delta = other.position - site.position;
        let rhs = (site.position + other.position).dot(delta) + site.radius * site.radius
            - other.radius * other.radius;
        // Constraint: 2 (o + t d) . delta <= rhs.
        let a_t = 2.0 * ray.dir.dot(delta);
        let b_t = rhs - 2.0 * ray.origin.dot(delta);
        if a_t > 0.0 {
            let t = b_t / a_t;
            if t < hi {
                hi = t;
                hi_src = IntervalSource::Neighbor(j);
            }
        } else if a_t < 0.0 {
            let t = b_t / a_t;
            if t > lo {
                lo = t;
                lo_src = IntervalSource::Neighbor(j);
            }
        } else if b_t < 0.0 {
            return EMPTY;
        }
        if hi <= lo {
            return EMPTY;
        }
    }
    if hi <= lo {
        EMPTY
    } else {
        (RayInterval::new(lo, hi), lo_src, hi_src)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn site(p: [f64; 3], r: f64) -> PowerSite {
        PowerSite::new(DVec3::from_array(p), r)
    }

    #[test]
    fn power_distance_inside_outside_boundary() {
        assert_eq!(power_distance(DVec3::new(1.0, 1.0, 1.0), &site([0.0; 3], 2.0)), -1.0);
        assert_eq!(power_distance(DVec3::new(3.0, 4.0, 0.0), &site([0.0; 3], 0.0)), 25.0);
        assert_eq!(power_distance(DVec3::new(2.0, 0.0, 0.0), &site([0.0; 3], 2.0)), 0.0);
    }

    #[test]
    fn radical_plane_equal_radii_bisects() {
        let p = radical_plane(&site([-1.0, 0.0, 0.0], 1.0), &site([1.0, 0.0, 0.0], 1.0)).unwrap();
        // Plane x = 0.
        assert_eq!(p.eval(DVec3::new(0.0, 3.0, -7.0)), 0.0);
        assert!(p.eval(DVec3::new(-0.1, 0.0, 0.0)) < 0.0);
        assert!(p.eval(DVec3::new(0.1, 0.0, 0.0)) > 0.0);
    }

    #[test]
    fn radical_plane_shifts_toward_lighter_site() {
        let a = site([0.0; 3], 2.0);
        let b = site([4.0, 0.0, 0.0], 0.0);
        let p = radical_plane(&a, &b).unwrap();
        // Plane x = 2.5, past the midpoint toward the weightless site.
        assert_eq!(p.eval(DVec3::new(2.5, 1.0, -1.0)), 0.0);
        // Swapping the arguments describes the same plane.
        let q = radical_plane(&b, &a).unwrap();
        assert_eq!(q.eval(DVec3::new(2.5, -2.0, 0.5)), 0.0);
        assert!(p.eval(DVec3::new(2.0, 0.0, 0.0)) < 0.0 && q.eval(DVec3::new(2.0, 0.0, 0.0)) > 0.0);
    }

    #[test]
    fn radical_plane_coincident_sites_rejected() {
        assert!(radical_plane(&site([1.0, 2.0, 3.0], 0.5), &site([1.0, 2.0, 3.0], 0.7)).is_err());
    }

    #[test]
    fn radical_plane_points_have_equal_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = site(
                [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
                rng.gen_range(0.0..3.0),
            );
            let b = site(
                [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
                rng.gen_range(0.0..3.0),
            );
            if (a.position - b.position).length() < 1e-3 {
                continue;
            }
            let plane = radical_plane(&a, &b).unwrap();
            // Project a random point onto the plane, then compare powers.
            let x = DVec3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            );
            let n = plane.normal;
            let x_on = x - (plane.eval(x) / (2.0 * n.length_squared())) * n;
            let pa = power_distance(x_on, &a);
            let pb = power_distance(x_on, &b);
            let scale = pa.abs().max(pb.abs()).max(1.0);
            assert!(
                (pa - pb).abs() <= 1e-9 * scale,
                "pow mismatch on plane: {pa} vs {pb}"
            );
        }
    }

    #[test]
    fn cech_strict_overlap() {
        let near = [site([0.0; 3], 1.0), site([1.9, 0.0, 0.0], 1.0)];
        assert!(cech_complex(&near).has_edge(0, 1));
        let tangent = [site([0.0; 3], 1.0), site([2.0, 0.0, 0.0], 1.0)];
        assert!(!cech_complex(&tangent).has_edge(0, 1));
        let apart = [site([0.0; 3], 1.0), site([2.1, 0.0, 0.0], 1.0)];
        assert_eq!(cech_complex(&apart).edge_count(), 0);
    }

    #[test]
    fn adjacency_graph_basics() {
        let mut g = AdjacencyGraph::new(4);
        g.insert(2, 0);
        g.insert(0, 3);
        g.insert(2, 0);
        assert_eq!(g.neighbors(0), &[2, 3]);
        assert_eq!(g.neighbors(2), &[0]);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 2), (0, 3)]);
        assert!(g.has_edge(3, 0));
        assert!(!g.has_edge(1, 2));
    }

    #[test]
    fn power_dual_two_sites() {
        let sites = [site([0.0; 3], 1.2), site([1.0, 0.0, 0.0], 1.2)];
        let bb = Aabb::from_spheres(&sites).expanded(3.0);
        let g = power_dual(&sites, &bb);
        assert_eq!(g.edge_count(), 1);
        assert!(g.has_edge(0, 1));
    }

    #[test]
    fn power_dual_tetrahedron_is_complete() {
        let sites = [
            site([0.0, 0.0, 0.0], 1.0),
            site([1.0, 0.0, 0.0], 1.0),
            site([0.5, 0.9, 0.0], 1.0),
            site([0.5, 0.3, 0.8], 1.0),
        ];
        let bb = Aabb::from_spheres(&sites).expanded(3.0);
        let g = power_dual(&sites, &bb);
        assert_eq!(g.edge_count(), 6);
    }

    #[test]
    fn power_dual_collinear_is_a_path() {
        let sites = [site([0.0; 3], 1.0), site([10.0, 0.0, 0.0], 1.0), site([20.0, 0.0, 0.0], 1.0)];
        let bb = Aabb::from_spheres(&sites).expanded(3.0);
        let g = power_dual(&sites, &bb);
        assert!(g.has_edge(0, 1));
        assert!(g.has_edge(1, 2));
        assert!(!g.has_edge(0, 2));
    }

    #[test]
    fn alpha_requires_face_near_ball() {
        // Overlapping spheres: the shared face passes through the lens.
        let close = [site([0.0; 3], 1.0), site([1.5, 0.0, 0.0], 1.0)];
        let bb = Aabb::from_spheres(&close).expanded(3.0);
        let dual = power_dual(&close, &bb);
        let alpha = alpha_complex(&close, &bb, &dual);
        assert!(alpha.has_edge(0, 1));

        // Far apart: the dual edge exists but the face misses both balls.
        let far = [site([0.0; 3], 1.0), site([10.0, 0.0, 0.0], 1.0)];
        let bb = Aabb::from_spheres(&far).expanded(3.0);
        let dual = power_dual(&far, &bb);
        assert!(dual.has_edge(0, 1));
        let alpha = alpha_complex(&far, &bb, &dual);
        assert_eq!(alpha.edge_count(), 0);
    }

    fn random_sites(rng: &mut ChaCha8Rng, n: usize) -> Vec<PowerSite> {
        (0..n)
            .map(|_| {
                site(
                    [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                    rng.gen_range(0.1..0.9),
                )
            })
            .collect()
    }

    #[test]
    fn alpha_is_subgraph_of_dual_and_cech() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let sites = random_sites(&mut rng, 24);
            let bb = Aabb::from_spheres(&sites).expanded(3.0);
            let dual = power_dual(&sites, &bb);
            let cech = cech_complex(&sites);
            let alpha = alpha_complex(&sites, &bb, &dual);
            assert!(alpha.is_subgraph_of(&dual));
            assert!(alpha.is_subgraph_of(&cech));
        }
    }

    #[test]
    fn locate_cell_picks_min_power_lowest_index() {
        let sites = [site([-1.0, 0.0, 0.0], 1.0), site([1.0, 0.0, 0.0], 1.0)];
        assert_eq!(locate_cell(DVec3::ZERO, &sites).unwrap(), 0);
        assert_eq!(locate_cell(DVec3::new(0.2, 0.0, 0.0), &sites).unwrap(), 1);
        assert!(locate_cell(DVec3::ZERO, &[]).is_err());
    }

    #[test]
    fn cell_interval_chord() {
        let sites = [site([0.0; 3], 1.0)];
        let ray = Ray::new(DVec3::new(-2.0, 0.0, 0.0), DVec3::X);
        let iv = cell_interval(&ray, 0, &sites, &[]);
        assert!((iv.t_in - 1.0).abs() < 1e-12 && (iv.t_out - 3.0).abs() < 1e-12);
        assert!((iv.length() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cell_interval_miss_and_origin_inside() {
        let sites = [site([0.0; 3], 1.0)];
        let miss = Ray::new(DVec3::new(-2.0, 5.0, 0.0), DVec3::X);
        assert!(cell_interval(&miss, 0, &sites, &[]).is_empty());
        let inside = Ray::new(DVec3::ZERO, DVec3::X);
        let iv = cell_interval(&inside, 0, &sites, &[]);
        assert!((iv.t_in - 0.0).abs() < 1e-12 && (iv.t_out - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cell_interval_neighbor_clip() {
        let sites = [site([0.0; 3], 1.2), site([1.0, 0.0, 0.0], 1.2)];
        let ray = Ray::new(DVec3::new(-3.0, 0.0, 0.0), DVec3::X);
        let iv = cell_interval(&ray, 0, &sites, &[1]);
        // Sphere chord [1.8, 4.2] cut by the plane x = 0.5 at t = 3.5.
        assert!((iv.t_in - 1.8).abs() < 1e-12);
        assert!((iv.t_out - 3.5).abs() < 1e-12);
    }

    #[test]
    fn cell_interval_matches_sampled_argmin() {
        // Compare against a brute-force scan: a fine ray march classifying
        // each point by sphere membership and power argmin.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sites = random_sites(&mut rng, 12);
        let bb = Aabb::from_spheres(&sites).expanded(3.0);
        let dual = power_dual(&sites, &bb);
        let dt = 1e-4;
        for _ in 0..40 {
            let o = DVec3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let d = DVec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if d.length() < 1e-3 {
                continue;
            }
            let ray = Ray::new(o, d);
            for cell in 0..sites.len() {
                let iv = cell_interval(&ray, cell, &sites, dual.neighbors(cell));
                // Sampled occupancy: t where the point lies in the sphere and
                // the cell wins the power argmin.
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                let steps = (8.0 / dt) as usize;
                for k in 0..steps {
                    let t = k as f64 * dt;
                    let x = ray.at(t);
                    if power_distance(x, &sites[cell]) <= 0.0
                        && locate_cell(x, &sites).unwrap() == cell
                    {
                        lo = lo.min(t);
                        hi = hi.max(t);
                    }
                }
                if lo.is_infinite() {
                    assert!(
                        iv.is_empty() || iv.length() < 2.0 * dt,
                        "interval {iv:?} but sampling found nothing"
                    );
                } else {
                    assert!(!iv.is_empty(), "sampling found [{lo}, {hi}] but interval empty");
                    assert!((iv.t_in - lo).abs() <= 2.0 * dt, "t_in {} vs sampled {}", iv.t_in, lo);
                    assert!((iv.t_out - hi).abs() <= 2.0 * dt, "t_out {} vs sampled {}", iv.t_out, hi);
                }
            }
        }
    }

    #[test]
    fn cech_neighbors_give_same_interval_as_dual() {
        // Supersets of the dual neighbors must not change the interval, and
        // with identical per-plane arithmetic they match bitwise.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let sites = random_sites(&mut rng, 20);
            let bb = Aabb::from_spheres(&sites).expanded(3.0);
            let dual = power_dual(&sites, &bb);
            let cech = cech_complex(&sites);
            for _ in 0..50 {
                let o = DVec3::new(
                    rng.gen_range(-4.0..4.0),
                    rng.gen_range(-4.0..4.0),
                    rng.gen_range(-4.0..4.0),
                );
                let d = DVec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if d.length() < 1e-3 {
                    continue;
                }
                let ray = Ray::new(o, d);
                for cell in 0..sites.len() {
                    let a = cell_interval(&ray, cell, &sites, dual.neighbors(cell));
                    let b = cell_interval(&ray, cell, &sites, cech.neighbors(cell));
                    assert_eq!(a, b, "cell {cell}");
                }
            }
        }
    }

    #[test]
    fn aabb_ray_range() {
        let bb = Aabb::new(DVec3::splat(-1.0), DVec3::splat(1.0));
        let ray = Ray::new(DVec3::new(-3.0, 0.0, 0.0), DVec3::X);
        let (t0, t1) = bb.ray_range(&ray).unwrap();
        assert!((t0 - 2.0).abs() < 1e-12 && (t1 - 4.0).abs() < 1e-12);
        let miss = Ray::new(DVec3::new(-3.0, 2.0, 0.0), DVec3::X);
        assert!(bb.ray_range(&miss).is_none());
    }
}
