//! Interior vertex removal: the star of the vertex is deleted and the cavity
//! polygon is refilled by ear clipping, then improved with Delaunay flips
//! restricted to the cavity diagonals.

use super::{orient2d, BoundaryFacet, MeshError, Point, TriMesh};

impl TriMesh {
    /// Removes interior vertex `v` and retriangulates its cavity.
    ///
    /// The result has one vertex, three edges and two triangles fewer than
    /// `self`. Vertex indices above `v` shift down by one; stable ids are kept.
    pub fn remove_vertex(&self, v: usize) -> Result<TriMesh, MeshError> {
        if v >= self.n_vertices() {
            return Err(MeshError::VertexOutOfRange(v));
        }
        let tag = self.tag(v);
        if tag.is_boundary() {
            return Err(MeshError::NotRemovable { vertex: v, tag });
        }
        let ring = self.link_polygon(v)?;
        let eps = self.area_epsilon();
        let mut fill = ear_clip(&self.vertices, &ring, eps)?;
        delaunay_flip(&self.vertices, &mut fill, eps);

        let star = self.vertex_triangles(v);
        let remap = |u: usize| if u > v { u - 1 } else { u };
        let mut triangles: Vec<[usize; 3]> = self
            .triangles
            .iter()
            .enumerate()
            .filter(|(t, _)| !star.contains(t))
            .map(|(_, tri)| tri.map(remap))
            .collect();
        triangles.extend(fill.iter().map(|tri| tri.map(remap)));

        let mut vertices = self.vertices.clone();
        vertices.remove(v);
        let mut ids = self.ids.clone();
        ids.remove(v);
        let facets = self
            .facets
            .iter()
            .map(|f| BoundaryFacet {
                vertices: f.vertices.map(remap),
                tag: f.tag,
            })
            .collect();
        TriMesh::from_parts_unchecked(vertices, ids, triangles, facets)
            .map_err(|e| MeshError::broken(format!("retriangulated cavity is inconsistent: {e}")))
    }

    /// Counter-clockwise cycle of the 1-ring of an interior vertex.
    fn link_polygon(&self, v: usize) -> Result<Vec<usize>, MeshError> {
        let star = self.vertex_triangles(v);
        let mut next = std::collections::HashMap::with_capacity(star.len());
        for &t in star {
            let tri = self.triangles[t];
            let k = tri
                .iter()
                .position(|&u| u == v)
                .expect("star triangle contains vertex");
            next.insert(tri[(k + 1) % 3], tri[(k + 2) % 3]);
        }
        let start = *next
            .keys()
            .min()
            .ok_or_else(|| MeshError::broken("isolated vertex"))?;
        let mut ring = Vec::with_capacity(star.len());
        let mut cur = start;
        loop {
            ring.push(cur);
            cur = *next
                .get(&cur)
                .ok_or_else(|| MeshError::broken(format!("open star around vertex {v}")))?;
            if cur == start {
                break;
            }
            if ring.len() > star.len() {
                return Err(MeshError::broken(format!(
                    "star of vertex {v} is not a simple cycle"
                )));
            }
        }
        if ring.len() != star.len() {
            return Err(MeshError::broken(format!(
                "star of vertex {v} is not a simple cycle"
            )));
        }
        Ok(ring)
    }
}

fn min_angle(a: Point, b: Point, c: Point) -> f64 {
    let ang = |p: Point, q: Point, r: Point| {
        let u = [q[0] - p[0], q[1] - p[1]];
        let w = [r[0] - p[0], r[1] - p[1]];
        let cross = u[0] * w[1] - u[1] * w[0];
        let dot = u[0] * w[0] + u[1] * w[1];
        cross.abs().atan2(dot)
    };
    ang(a, b, c).min(ang(b, c, a)).min(ang(c, a, b))
}

/// Closed-triangle containment, used to reject ears that swallow other ring vertices.
fn in_closed_triangle(a: Point, b: Point, c: Point, p: Point, eps: f64) -> bool {
    orient2d(a, b, p) >= -eps && orient2d(b, c, p) >= -eps && orient2d(c, a, p) >= -eps
}

/// Triangulates a simple counter-clockwise polygon without Steiner points.
///
/// At each stage the ear with the largest minimum angle is clipped (lowest
/// position on ties), so the output is deterministic.
pub(crate) fn ear_clip(
    vertices: &[Point],
    ring: &[usize],
    area_eps: f64,
) -> Result<Vec<[usize; 3]>, MeshError> {
    let mut poly = ring.to_vec();
    let mut out = Vec::with_capacity(ring.len().saturating_sub(2));
    let twice_eps = 2.0 * area_eps;
    while poly.len() > 3 {
        let n = poly.len();
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            let (ip, inx) = ((i + n - 1) % n, (i + 1) % n);
            let (a, b, c) = (vertices[poly[ip]], vertices[poly[i]], vertices[poly[inx]]);
            if orient2d(a, b, c) <= twice_eps {
                continue;
            }
            let blocked = (0..n).filter(|&j| j != ip && j != i && j != inx).any(|j| {
                let p = vertices[poly[j]];
                p != a && p != c && in_closed_triangle(a, b, c, p, 0.0)
            });
            if blocked {
                continue;
            }
            let q = min_angle(a, b, c);
            if best.is_none_or(|(_, bq)| q > bq) {
                best = Some((i, q));
            }
        }
        let (i, _) = best.ok_or_else(|| {
            MeshError::broken(format!("no valid ear in a {}-vertex cavity", poly.len()))
        })?;
        let n = poly.len();
        out.push([poly[(i + n - 1) % n], poly[i], poly[(i + 1) % n]]);
        poly.remove(i);
    }
    if poly.len() == 3 {
        if orient2d(vertices[poly[0]], vertices[poly[1]], vertices[poly[2]]) <= twice_eps {
            return Err(MeshError::broken("last cavity triangle is degenerate"));
        }
        out.push([poly[0], poly[1], poly[2]]);
    }
    Ok(out)
}

/// `> 0` when `d` lies strictly inside the circumcircle of counter-clockwise `abc`.
fn in_circle(a: Point, b: Point, c: Point, d: Point) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

/// Lawson flips on edges shared by two triangles of `tris`.
///
/// Only diagonals internal to the cavity are candidates, so the cavity
/// boundary (and everything outside it) is untouched.
pub(crate) fn delaunay_flip(vertices: &[Point], tris: &mut [[usize; 3]], area_eps: f64) {
    let max_passes = 4 * tris.len() * tris.len() + 4;
    for _ in 0..max_passes {
        let mut flipped = false;
        'search: for i in 0..tris.len() {
            for k in 0..3 {
                let (a, b, c) = (tris[i][k], tris[i][(k + 1) % 3], tris[i][(k + 2) % 3]);
                let Some((j, d)) = tris.iter().enumerate().skip(i + 1).find_map(|(j, t)| {
                    (0..3).find_map(|m| {
                        (t[m] == b && t[(m + 1) % 3] == a).then(|| (j, t[(m + 2) % 3]))
                    })
                }) else {
                    continue;
                };
                let (pa, pb, pc, pd) = (vertices[a], vertices[b], vertices[c], vertices[d]);
                let scale = [pa, pb, pc, pd]
                    .iter()
                    .flat_map(|p| [(p[0] - pd[0]).abs(), (p[1] - pd[1]).abs()])
                    .fold(0.0, f64::max);
                // Cocircular quads (common on structured grids) are left alone.
                if in_circle(pa, pb, pc, pd) <= 1e-10 * scale.powi(4) {
                    continue;
                }
                let twice_eps = 2.0 * area_eps;
                if orient2d(pa, pd, pc) <= twice_eps || orient2d(pd, pb, pc) <= twice_eps {
                    continue;
                }
                tris[i] = [a, d, c];
                tris[j] = [d, b, c];
                flipped = true;
                break 'search;
            }
        }
        if !flipped {
            return;
        }
    }
}
