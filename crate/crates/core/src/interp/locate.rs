//! Point location by visibility walk with an exhaustive fallback.
//!
//! Containment is measured as a signed distance to each triangle edge, so a
//! point within `eps` of an edge counts as inside. When several triangles
//! qualify the lowest index wins, making the walk agree with a linear scan.

use crate::mesh::{distance, Point, TriMesh};

/// Relative factor applied to the bounding-box diagonal to get the location tolerance.
pub const LOC_EPSILON_FACTOR: f64 = 1e-9;
/// Relative factor for the largest outside distance that is snapped back onto the boundary.
pub const SNAP_FACTOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLocation {
    pub triangle: usize,
    pub barycentric: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("point ({x}, {y}) lies outside the mesh")]
pub struct Outside {
    pub x: f64,
    pub y: f64,
}

/// Barycentric coordinates of `p` in triangle `t` and its signed distances to the three edges.
///
/// `dist[i]` is the distance to the edge opposite local vertex `i`, positive inside.
fn barycentric(mesh: &TriMesh, t: usize, p: Point) -> ([f64; 3], [f64; 3]) {
    let [a, b, c] = mesh.triangle_points(t);
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (p[1] - a[1]) * (c[0] - a[0])) / det;
    let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])) / det;
    let l0 = 1.0 - l1 - l2;
    let lam = [l0, l1, l2];
    let edge_len = [distance(b, c), distance(c, a), distance(a, b)];
    let dist = [0, 1, 2].map(|i| lam[i] * det / edge_len[i]);
    (lam, dist)
}

/// Stateful locator that seeds each walk with the previous hit.
#[derive(Debug, Clone)]
pub struct Locator<'m> {
    mesh: &'m TriMesh,
    eps: f64,
    snap: f64,
    seed: usize,
}

impl<'m> Locator<'m> {
    pub fn new(mesh: &'m TriMesh) -> Self {
        let diag = mesh.bbox_diagonal();
        Locator {
            mesh,
            eps: LOC_EPSILON_FACTOR * diag,
            snap: SNAP_FACTOR * diag,
            seed: 0,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    fn contains(&self, t: usize, p: Point) -> Option<[f64; 3]> {
        let (lam, dist) = barycentric(self.mesh, t, p);
        dist.iter().all(|&d| d >= -self.eps).then_some(lam)
    }

    /// Linear scan: the lowest-index triangle containing `p` within the tolerance.
    pub fn locate_exhaustive(&self, p: Point) -> Option<PointLocation> {
        (0..self.mesh.n_triangles()).find_map(|t| {
            self.contains(t, p).map(|barycentric| PointLocation {
                triangle: t,
                barycentric,
            })
        })
    }

    fn walk(&self, p: Point) -> Option<usize> {
        let mut t = self.seed.min(self.mesh.n_triangles().saturating_sub(1));
        for _ in 0..self.mesh.n_triangles() {
            let (_, dist) = barycentric(self.mesh, t, p);
            let (worst, &d) = dist
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("three distances");
            if d >= -self.eps {
                return Some(t);
            }
            // The edge opposite local vertex `worst` joins local vertices worst+1 and worst+2.
            t = self.mesh.triangle_neighbors(t)[(worst + 1) % 3]?;
        }
        None
    }

    /// Locates `p` without boundary snapping.
    pub fn locate_strict(&mut self, p: Point) -> Option<PointLocation> {
        let found = match self.walk(p) {
            Some(t) => {
                let (lam, dist) = barycentric(self.mesh, t, p);
                if dist.iter().all(|&d| d > self.eps) {
                    Some(PointLocation {
                        triangle: t,
                        barycentric: lam,
                    })
                } else {
                    // Near an edge or vertex: any other candidate shares a vertex with `t`.
                    let mut cands: Vec<usize> = self
                        .mesh
                        .triangle(t)
                        .iter()
                        .flat_map(|&v| self.mesh.vertex_triangles(v).iter().copied())
                        .collect();
                    cands.sort_unstable();
                    cands.dedup();
                    cands.into_iter().find_map(|c| {
                        self.contains(c, p).map(|barycentric| PointLocation {
                            triangle: c,
                            barycentric,
                        })
                    })
                }
            }
            None => self.locate_exhaustive(p),
        };
        if let Some(loc) = found {
            self.seed = loc.triangle;
        }
        found
    }

    /// Locates `p`, snapping points marginally outside onto the nearest boundary facet.
    pub fn locate(&mut self, p: Point) -> Result<PointLocation, Outside> {
        if let Some(loc) = self.locate_strict(p) {
            return Ok(loc);
        }
        let (q, d) = self
            .nearest_boundary_point(p)
            .ok_or(Outside { x: p[0], y: p[1] })?;
        if d <= self.snap {
            log::warn!(
                "snapping point ({}, {}) onto the boundary (distance {d:e})",
                p[0],
                p[1]
            );
            if let Some(loc) = self.locate_strict(q) {
                return Ok(loc);
            }
        }
        Err(Outside { x: p[0], y: p[1] })
    }

    fn nearest_boundary_point(&self, p: Point) -> Option<(Point, f64)> {
        self.mesh
            .facets()
            .iter()
            .map(|f| {
                let (a, b) = (
                    self.mesh.vertex(f.vertices[0]),
                    self.mesh.vertex(f.vertices[1]),
                );
                let ab = [b[0] - a[0], b[1] - a[1]];
                let len2 = ab[0] * ab[0] + ab[1] * ab[1];
                let s = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
                let q = [a[0] + s * ab[0], a[1] + s * ab[1]];
                (q, distance(p, q))
            })
            .min_by(|x, y| x.1.total_cmp(&y.1))
    }
}

/// One-shot location; see [`Locator::locate`].
pub fn locate(mesh: &TriMesh, p: Point) -> Result<PointLocation, Outside> {
    Locator::new(mesh).locate(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::gen_channel_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn centroid_has_equal_weights() {
        let m = gen_channel_mesh(4, 4, 1.0, 1.0).unwrap();
        for t in [0, 5, 17] {
            let loc = locate(&m, m.centroid(t)).unwrap();
            assert_eq!(loc.triangle, t);
            for l in loc.barycentric {
                assert!((l - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vertex_has_unit_weight() {
        let m = gen_channel_mesh(4, 4, 1.0, 1.0).unwrap();
        for v in 0..m.n_vertices() {
            let loc = locate(&m, m.vertex(v)).unwrap();
            let tri = m.triangle(loc.triangle);
            let k = tri.iter().position(|&u| u == v).unwrap();
            assert!((loc.barycentric[k] - 1.0).abs() < 1e-12);
            assert_eq!(loc.triangle, *m.vertex_triangles(v).iter().min().unwrap());
        }
    }

    #[test]
    fn outside_point_rejected_and_near_point_snapped() {
        let m = gen_channel_mesh(4, 4, 1.0, 1.0).unwrap();
        assert!(locate(&m, [1.5, 0.5]).is_err());
        let loc = locate(&m, [1.0 + 1e-8, 0.4]).unwrap();
        let s: f64 = loc.barycentric.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn walk_agrees_with_scan() {
        let m = gen_channel_mesh(9, 7, 2.0, 1.0).unwrap();
        let m = m
            .remove_vertex(m.interior_vertices().nth(11).unwrap())
            .unwrap()
            .smooth(50)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut loc = Locator::new(&m);
        for _ in 0..1000 {
            let p = [rng.random_range(0.0..2.0), rng.random_range(0.0..1.0)];
            let a = loc.locate_strict(p).map(|l| l.triangle);
            let b = loc.locate_exhaustive(p).map(|l| l.triangle);
            assert_eq!(a, b);
        }
    }
}
