//! Structured fixture meshes.
//!
//! The "crossed" pattern splits every grid cell into four triangles around a
//! cell-centre vertex, so an `nx × ny` point grid yields
//! `nx·ny + (nx−1)(ny−1)` vertices and `4(nx−1)(ny−1)` triangles.

use std::collections::HashSet;

use super::{BoundaryFacet, BoundaryTag, MeshError, Point, TriMesh};

/// Block of grid cells `[i0, i1) × [j0, j1)` cut out of a channel as a rigid body.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObstacleCells {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl ObstacleCells {
    fn contains_cell(&self, i: usize, j: usize) -> bool {
        (self.i0..self.i1).contains(&i) && (self.j0..self.j1).contains(&j)
    }

    /// Grid point strictly inside the block.
    fn swallows_point(&self, i: usize, j: usize) -> bool {
        i > self.i0 && i < self.i1 && j > self.j0 && j < self.j1
    }
}

/// Crossed-triangle rectangle `[0, length] × [0, height]` sampled on `nx × ny` grid points.
///
/// Tags: inlet at `x = 0`, outlet at `x = length`, wall at `y = 0` and `y = height`.
pub fn gen_channel_mesh(
    nx: usize,
    ny: usize,
    length: f64,
    height: f64,
) -> Result<TriMesh, MeshError> {
    build(nx, ny, length, height, None)
}

/// Channel with a rectangular body; the body perimeter is tagged [`BoundaryTag::Airfoil`].
pub fn gen_obstacle_channel_mesh(
    nx: usize,
    ny: usize,
    length: f64,
    height: f64,
    obstacle: ObstacleCells,
) -> Result<TriMesh, MeshError> {
    if obstacle.i0 == 0
        || obstacle.j0 == 0
        || obstacle.i1 >= nx - 1
        || obstacle.j1 >= ny - 1
        || obstacle.i0 >= obstacle.i1
        || obstacle.j0 >= obstacle.j1
    {
        return Err(MeshError::Invariant(format!(
            "obstacle {obstacle:?} must be a non-empty block strictly inside the {nx}×{ny} grid"
        )));
    }
    build(nx, ny, length, height, Some(obstacle))
}

fn build(
    nx: usize,
    ny: usize,
    length: f64,
    height: f64,
    obstacle: Option<ObstacleCells>,
) -> Result<TriMesh, MeshError> {
    if nx < 2 || ny < 2 {
        return Err(MeshError::Invariant(format!(
            "grid needs at least 2×2 points, got {nx}×{ny}"
        )));
    }
    if !(length > 0.0 && height > 0.0) {
        return Err(MeshError::Invariant(
            "channel extents must be positive".into(),
        ));
    }
    let dx = length / (nx - 1) as f64;
    let dy = height / (ny - 1) as f64;
    let cell_removed = |i: usize, j: usize| obstacle.is_some_and(|o| o.contains_cell(i, j));
    let point_removed = |i: usize, j: usize| obstacle.is_some_and(|o| o.swallows_point(i, j));

    let mut vertices: Vec<Point> = Vec::new();
    let mut grid = vec![usize::MAX; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            if !point_removed(i, j) {
                grid[j * nx + i] = vertices.len();
                vertices.push([i as f64 * dx, j as f64 * dy]);
            }
        }
    }
    let mut triangles = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            if cell_removed(i, j) {
                continue;
            }
            let c = vertices.len();
            vertices.push([(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy]);
            let g = |a: usize, b: usize| grid[b * nx + a];
            let (v00, v10, v11, v01) = (g(i, j), g(i + 1, j), g(i + 1, j + 1), g(i, j + 1));
            triangles.extend([[v00, v10, c], [v10, v11, c], [v11, v01, c], [v01, v00, c]]);
        }
    }

    let mut facets = Vec::new();
    let g = |a: usize, b: usize| grid[b * nx + a];
    for i in 0..nx - 1 {
        facets.push(BoundaryFacet {
            vertices: [g(i, 0), g(i + 1, 0)],
            tag: BoundaryTag::Wall,
        });
    }
    for j in 0..ny - 1 {
        facets.push(BoundaryFacet {
            vertices: [g(nx - 1, j), g(nx - 1, j + 1)],
            tag: BoundaryTag::Outlet,
        });
    }
    for i in (0..nx - 1).rev() {
        facets.push(BoundaryFacet {
            vertices: [g(i + 1, ny - 1), g(i, ny - 1)],
            tag: BoundaryTag::Wall,
        });
    }
    for j in (0..ny - 1).rev() {
        facets.push(BoundaryFacet {
            vertices: [g(0, j + 1), g(0, j)],
            tag: BoundaryTag::Inlet,
        });
    }
    if let Some(o) = obstacle {
        let mut seen = HashSet::new();
        let mut body = |a: usize, b: usize| {
            if seen.insert((a.min(b), a.max(b))) {
                facets.push(BoundaryFacet {
                    vertices: [a, b],
                    tag: BoundaryTag::Airfoil,
                });
            }
        };
        for i in o.i0..o.i1 {
            body(g(i, o.j0), g(i + 1, o.j0));
            body(g(i, o.j1), g(i + 1, o.j1));
        }
        for j in o.j0..o.j1 {
            body(g(o.i0, j), g(o.i0, j + 1));
            body(g(o.i1, j), g(o.i1, j + 1));
        }
    }
    TriMesh::new(vertices, triangles, facets)
}
