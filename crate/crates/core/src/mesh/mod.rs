//! Triangular meshes with tagged boundaries.
//!
//! A [`TriMesh`] is an immutable value: every editing operation
//! ([`TriMesh::remove_vertex`], [`TriMesh::smooth`]) returns a new mesh.
//! Connectivity (vertex stars, edges, triangle neighbours) is derived from the
//! triangle list at construction time and never edited in place.

mod cavity;
mod generate;
pub mod msh;
mod smooth;

pub use smooth::max_displacement;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{gen_channel_mesh, gen_obstacle_channel_mesh, ObstacleCells};

pub type Point = [f64; 2];

/// Relative factor applied to the bounding-box area to obtain the smallest
/// admissible triangle area.
pub const AREA_EPSILON_FACTOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    Airfoil,
    Inlet,
    Outlet,
    Wall,
    Interior,
}

impl BoundaryTag {
    pub fn is_boundary(self) -> bool {
        self != BoundaryTag::Interior
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BoundaryTag::Airfoil => "airfoil",
            BoundaryTag::Inlet => "inlet",
            BoundaryTag::Outlet => "outlet",
            BoundaryTag::Wall => "wall",
            BoundaryTag::Interior => "interior",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryFacet {
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
}

/// Why a mesh edit produced an unusable mesh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrokenMesh {
    pub reason: String,
}

impl fmt::Display for BrokenMesh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "broken mesh: {}", self.reason)
    }
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: unsupported element type {element_type}")]
    UnknownElementType { line: usize, element_type: u32 },
    #[error("line {line}: physical tag {tag} is not mapped to a boundary tag")]
    UnknownPhysicalTag { line: usize, tag: i64 },
    #[error("triangle {0} has zero or near-zero area")]
    DegenerateTriangle(usize),
    #[error("boundary facet {facet} ({a}, {b}) does not lie on exactly one triangle")]
    DanglingFacet { facet: usize, a: usize, b: usize },
    #[error("boundary edge ({0}, {1}) carries no boundary facet")]
    UntaggedBoundaryEdge(usize, usize),
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
    #[error("vertex index {0} out of range")]
    VertexOutOfRange(usize),
    #[error("vertex {vertex} is a {tag} vertex and cannot be removed")]
    NotRemovable { vertex: usize, tag: BoundaryTag },
    #[error("{0}")]
    Broken(BrokenMesh),
    #[error("mesh invariant violated: {0}")]
    Invariant(String),
}

impl MeshError {
    pub fn broken(reason: impl Into<String>) -> Self {
        MeshError::Broken(BrokenMesh {
            reason: reason.into(),
        })
    }

    pub fn is_broken(&self) -> bool {
        matches!(self, MeshError::Broken(_))
    }
}

/// Twice the signed area of the triangle `abc`; positive when counter-clockwise.
#[inline]
pub fn orient2d(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Edge-derived connectivity, rebuilt whenever the triangle list changes.
#[derive(Debug, Clone, PartialEq)]
struct Topology {
    vertex_triangles: Vec<Vec<usize>>,
    vertex_neighbors: Vec<Vec<usize>>,
    /// Sorted unique edges `(a, b)` with `a < b`.
    edges: Vec<[usize; 2]>,
    /// `triangle_edges[t][k]` is the edge between local vertices `k` and `k + 1`.
    triangle_edges: Vec<[usize; 3]>,
    /// Triangle across local edge `k`, if any.
    triangle_neighbors: Vec<[Option<usize>; 3]>,
    edge_triangles: Vec<[Option<usize>; 2]>,
    edge_lookup: HashMap<(usize, usize), usize>,
}

impl Topology {
    fn build(n_vertices: usize, triangles: &[[usize; 3]]) -> Result<Self, MeshError> {
        let mut vertex_triangles = vec![Vec::new(); n_vertices];
        let mut raw: Vec<[usize; 2]> = Vec::with_capacity(triangles.len() * 3);
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if a >= n_vertices {
                    return Err(MeshError::VertexOutOfRange(a));
                }
                vertex_triangles[a].push(t);
                raw.push(if a < b { [a, b] } else { [b, a] });
            }
        }
        raw.sort_unstable();
        raw.dedup();
        let edges = raw;
        let edge_lookup: HashMap<(usize, usize), usize> = edges
            .iter()
            .enumerate()
            .map(|(i, e)| ((e[0], e[1]), i))
            .collect();

        let mut edge_triangles = vec![[None, None]; edges.len()];
        let mut triangle_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut te = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = if a < b { (a, b) } else { (b, a) };
                let e = edge_lookup[&key];
                te[k] = e;
                let slot = &mut edge_triangles[e];
                if slot[0].is_none() {
                    slot[0] = Some(t);
                } else if slot[1].is_none() {
                    slot[1] = Some(t);
                } else {
                    return Err(MeshError::NonManifoldEdge(key.0, key.1));
                }
            }
            triangle_edges.push(te);
        }
        let triangle_neighbors = triangle_edges
            .iter()
            .enumerate()
            .map(|(t, te)| {
                let mut n = [None; 3];
                for k in 0..3 {
                    let [t0, t1] = edge_triangles[te[k]];
                    n[k] = if t0 == Some(t) { t1 } else { t0 };
                }
                n
            })
            .collect();

        let mut vertex_neighbors = vec![Vec::new(); n_vertices];
        for e in &edges {
            vertex_neighbors[e[0]].push(e[1]);
            vertex_neighbors[e[1]].push(e[0]);
        }
        for nb in &mut vertex_neighbors {
            nb.sort_unstable();
        }
        Ok(Topology {
            vertex_triangles,
            vertex_neighbors,
            edges,
            triangle_edges,
            triangle_neighbors,
            edge_triangles,
            edge_lookup,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point>,
    /// Stable identifiers that survive vertex removal (MSH node id minus one).
    ids: Vec<usize>,
    triangles: Vec<[usize; 3]>,
    facets: Vec<BoundaryFacet>,
    tags: Vec<BoundaryTag>,
    topo: Topology,
}

impl TriMesh {
    /// Builds a mesh, reorienting clockwise triangles and checking every invariant.
    pub fn new(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        facets: Vec<BoundaryFacet>,
    ) -> Result<Self, MeshError> {
        let ids = (0..vertices.len()).collect();
        Self::with_ids(vertices, ids, triangles, facets)
    }

    pub fn with_ids(
        vertices: Vec<Point>,
        ids: Vec<usize>,
        mut triangles: Vec<[usize; 3]>,
        facets: Vec<BoundaryFacet>,
    ) -> Result<Self, MeshError> {
        if ids.len() != vertices.len() {
            return Err(MeshError::Invariant(format!(
                "{} ids for {} vertices",
                ids.len(),
                vertices.len()
            )));
        }
        let n = vertices.len();
        let eps = area_epsilon_of(&vertices);
        for (t, tri) in triangles.iter_mut().enumerate() {
            if let Some(&v) = tri.iter().find(|&&v| v >= n) {
                return Err(MeshError::VertexOutOfRange(v));
            }
            let a2 = orient2d(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if a2.abs() * 0.5 <= eps {
                return Err(MeshError::DegenerateTriangle(t));
            }
            if a2 < 0.0 {
                tri.swap(1, 2);
            }
        }
        for f in &facets {
            if let Some(&v) = f.vertices.iter().find(|&&v| v >= n) {
                return Err(MeshError::VertexOutOfRange(v));
            }
        }
        let mesh = Self::from_parts_unchecked(vertices, ids, triangles, facets)?;
        mesh.check_invariants()?;
        Ok(mesh)
    }

    /// Assembles a mesh from already-oriented parts, deriving tags and topology only.
    fn from_parts_unchecked(
        vertices: Vec<Point>,
        ids: Vec<usize>,
        triangles: Vec<[usize; 3]>,
        facets: Vec<BoundaryFacet>,
    ) -> Result<Self, MeshError> {
        let topo = Topology::build(vertices.len(), &triangles)?;
        let tags = derive_tags(vertices.len(), &facets);
        Ok(TriMesh {
            vertices,
            ids,
            triangles,
            facets,
            tags,
            topo,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.topo.edges.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }

    pub fn facets(&self) -> &[BoundaryFacet] {
        &self.facets
    }

    pub fn tags(&self) -> &[BoundaryTag] {
        &self.tags
    }

    pub fn tag(&self, v: usize) -> BoundaryTag {
        self.tags[v]
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.topo.edges
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.topo.edge_lookup.get(&key).copied()
    }

    pub fn edge_triangles(&self, e: usize) -> [Option<usize>; 2] {
        self.topo.edge_triangles[e]
    }

    /// Edge indices of triangle `t`; entry `k` joins local vertices `k` and `k + 1`.
    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.topo.triangle_edges[t]
    }

    /// Neighbouring triangle across local edge `k` of triangle `t`.
    pub fn triangle_neighbors(&self, t: usize) -> [Option<usize>; 3] {
        self.topo.triangle_neighbors[t]
    }

    pub fn vertex_triangles(&self, v: usize) -> &[usize] {
        &self.topo.vertex_triangles[v]
    }

    /// Sorted 1-ring of `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.topo.vertex_neighbors[v]
    }

    pub fn interior_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.vertices.len()).filter(move |&v| !self.tags[v].is_boundary())
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        0.5 * orient2d(a, b, c)
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangle_points(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        bounding_box(&self.vertices)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
    }

    /// Smallest admissible triangle area: a fixed fraction of the bounding-box area.
    pub fn area_epsilon(&self) -> f64 {
        area_epsilon_of(&self.vertices)
    }

    pub fn mean_edge_length(&self) -> f64 {
        let sum: f64 = self
            .topo
            .edges
            .iter()
            .map(|&[a, b]| distance(self.vertices[a], self.vertices[b]))
            .sum();
        sum / self.topo.edges.len().max(1) as f64
    }

    pub fn max_edge_length(&self) -> f64 {
        self.topo
            .edges
            .iter()
            .map(|&[a, b]| distance(self.vertices[a], self.vertices[b]))
            .fold(0.0, f64::max)
    }

    /// Number of closed boundary loops.
    pub fn boundary_loops(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        let mut on_boundary = vec![false; self.vertices.len()];
        for f in &self.facets {
            let [a, b] = f.vertices;
            on_boundary[a] = true;
            on_boundary[b] = true;
            union(&mut parent, a, b);
        }
        (0..self.vertices.len())
            .filter(|&v| on_boundary[v] && find(&mut parent, v) == v)
            .count()
    }

    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        for &[a, b] in &self.topo.edges {
            union(&mut parent, a, b);
        }
        (0..self.vertices.len())
            .filter(|&v| find(&mut parent, v) == v)
            .count()
    }

    /// `V - E + F` counting triangles only.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.topo.edges.len() as i64 + self.triangles.len() as i64
    }

    /// Verifies every structural invariant of the mesh.
    pub fn check_invariants(&self) -> Result<(), MeshError> {
        let n = self.vertices.len();
        let eps = self.area_epsilon();
        for t in 0..self.triangles.len() {
            if self.signed_area(t) <= eps {
                return Err(MeshError::DegenerateTriangle(t));
            }
        }
        let mut facet_edges = HashMap::new();
        for (i, f) in self.facets.iter().enumerate() {
            let [a, b] = f.vertices;
            let e = self
                .edge_index(a, b)
                .ok_or(MeshError::DanglingFacet { facet: i, a, b })?;
            let [_, t1] = self.topo.edge_triangles[e];
            if t1.is_some() || facet_edges.insert(e, i).is_some() {
                return Err(MeshError::DanglingFacet { facet: i, a, b });
            }
        }
        for (e, &[a, b]) in self.topo.edges.iter().enumerate() {
            let [_, t1] = self.topo.edge_triangles[e];
            if t1.is_none() && !facet_edges.contains_key(&e) {
                return Err(MeshError::UntaggedBoundaryEdge(a, b));
            }
        }
        // Interior edges must be traversed in opposite directions by their two triangles.
        let mut directed = HashMap::with_capacity(self.triangles.len() * 3);
        for tri in &self.triangles {
            for k in 0..3 {
                if directed.insert((tri[k], tri[(k + 1) % 3]), ()).is_some() {
                    return Err(MeshError::Invariant(format!(
                        "edge ({}, {}) traversed twice in the same direction",
                        tri[k],
                        tri[(k + 1) % 3]
                    )));
                }
            }
        }
        let rebuilt = Topology::build(n, &self.triangles)?;
        if rebuilt != self.topo {
            return Err(MeshError::Invariant("adjacency out of date".into()));
        }
        if derive_tags(n, &self.facets) != self.tags {
            return Err(MeshError::Invariant("vertex tags out of date".into()));
        }
        if let Some(v) = (0..n).find(|&v| self.topo.vertex_triangles[v].is_empty()) {
            return Err(MeshError::Invariant(format!(
                "vertex {v} belongs to no triangle"
            )));
        }
        let expected = 2 * self.connected_components() as i64 - self.boundary_loops() as i64;
        if self.euler_characteristic() != expected {
            return Err(MeshError::Invariant(format!(
                "Euler characteristic {} but components/loops imply {}",
                self.euler_characteristic(),
                expected
            )));
        }
        Ok(())
    }

    /// Returns a copy with vertex coordinates replaced; connectivity is kept.
    pub(crate) fn with_vertices(&self, vertices: Vec<Point>) -> TriMesh {
        TriMesh {
            vertices,
            ..self.clone()
        }
    }
}

fn derive_tags(n: usize, facets: &[BoundaryFacet]) -> Vec<BoundaryTag> {
    let mut tags = vec![BoundaryTag::Interior; n];
    for f in facets {
        for &v in &f.vertices {
            // Corners shared by two boundary kinds take the lowest-ordered tag.
            tags[v] = tags[v].min(f.tag);
        }
    }
    tags
}

fn bounding_box(vertices: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in vertices {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    (lo, hi)
}

fn area_epsilon_of(vertices: &[Point]) -> f64 {
    if vertices.is_empty() {
        return 0.0;
    }
    let (lo, hi) = bounding_box(vertices);
    AREA_EPSILON_FACTOR * (hi[0] - lo[0]) * (hi[1] - lo[1])
}

#[inline]
pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn find(parent: &mut [usize], mut v: usize) -> usize {
    while parent[v] != v {
        parent[v] = parent[parent[v]];
        v = parent[v];
    }
    v
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}
