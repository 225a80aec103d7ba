//! Flow snapshots as Lagrange finite-element functions and their transfer
//! between meshes.
//!
//! Velocity is P1 (vertex DOFs) or P2 (vertex DOFs followed by one DOF per
//! edge midpoint, in the mesh's sorted edge order). Pressure is always P1.

pub mod io;
mod locate;

use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{Point, TriMesh};

pub use locate::{locate, Locator, Outside, PointLocation, LOC_EPSILON_FACTOR, SNAP_FACTOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum VelocityOrder {
    P1,
    P2,
}

impl VelocityOrder {
    pub fn as_u32(self) -> u32 {
        match self {
            VelocityOrder::P1 => 1,
            VelocityOrder::P2 => 2,
        }
    }

    pub fn n_dofs(self, mesh: &TriMesh) -> usize {
        match self {
            VelocityOrder::P1 => mesh.n_vertices(),
            VelocityOrder::P2 => mesh.n_vertices() + mesh.n_edges(),
        }
    }
}

impl TryFrom<u32> for VelocityOrder {
    type Error = String;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(VelocityOrder::P1),
            2 => Ok(VelocityOrder::P2),
            other => Err(format!("velocity order must be 1 or 2, got {other}")),
        }
    }
}

impl From<VelocityOrder> for u32 {
    fn from(o: VelocityOrder) -> u32 {
        o.as_u32()
    }
}

#[derive(Debug, Error)]
pub enum InterpError {
    #[error("broken interpolation: {0}")]
    Outside(#[from] Outside),
    #[error("snapshot set does not belong to this mesh")]
    MeshMismatch,
    #[error("invalid snapshot set: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("snapshot file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Ux,
    Uy,
    P,
}

/// Snapshots bound to one mesh (identified by a fingerprint of its geometry and connectivity).
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    order: VelocityOrder,
    mesh_key: u64,
    snapshots: Vec<Snapshot>,
}

/// Fingerprint of coordinates and triangles.
pub fn mesh_key(mesh: &TriMesh) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for p in mesh.vertices() {
        p[0].to_bits().hash(&mut h);
        p[1].to_bits().hash(&mut h);
    }
    mesh.triangles().hash(&mut h);
    h.finish()
}

/// Points carrying velocity DOFs: vertices, then (P2) edge midpoints in edge order.
pub fn velocity_dof_points(mesh: &TriMesh, order: VelocityOrder) -> Vec<Point> {
    let mut pts = mesh.vertices().to_vec();
    if order == VelocityOrder::P2 {
        pts.extend(mesh.edges().iter().map(|&[a, b]| {
            let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
            [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0]
        }));
    }
    pts
}

impl SnapshotSet {
    pub fn new(
        mesh: &TriMesh,
        order: VelocityOrder,
        snapshots: Vec<Snapshot>,
    ) -> Result<Self, InterpError> {
        if snapshots.is_empty() {
            return Err(InterpError::Invalid(
                "at least one snapshot is required".into(),
            ));
        }
        let nv = order.n_dofs(mesh);
        let np = mesh.n_vertices();
        for (k, s) in snapshots.iter().enumerate() {
            if s.ux.len() != nv || s.uy.len() != nv || s.p.len() != np {
                return Err(InterpError::Invalid(format!(
                    "snapshot {k}: expected {nv} velocity and {np} pressure values, got {}/{}/{}",
                    s.ux.len(),
                    s.uy.len(),
                    s.p.len()
                )));
            }
        }
        Ok(SnapshotSet {
            order,
            mesh_key: mesh_key(mesh),
            snapshots,
        })
    }

    /// Samples `field(snapshot, point) -> (ux, uy, p)` at every DOF point.
    pub fn from_fn(
        mesh: &TriMesh,
        order: VelocityOrder,
        n_snapshots: usize,
        field: impl Fn(usize, Point) -> (f64, f64, f64),
    ) -> Result<Self, InterpError> {
        let vpts = velocity_dof_points(mesh, order);
        let snapshots = (0..n_snapshots)
            .map(|k| {
                let (ux, uy): (Vec<f64>, Vec<f64>) = vpts
                    .iter()
                    .map(|&q| {
                        let (u, v, _) = field(k, q);
                        (u, v)
                    })
                    .unzip();
                let p = mesh.vertices().iter().map(|&q| field(k, q).2).collect();
                Snapshot { ux, uy, p }
            })
            .collect();
        Self::new(mesh, order, snapshots)
    }

    pub fn order(&self) -> VelocityOrder {
        self.order
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn snapshot(&self, k: usize) -> &Snapshot {
        &self.snapshots[k]
    }

    pub fn belongs_to(&self, mesh: &TriMesh) -> bool {
        self.mesh_key == mesh_key(mesh)
            && self.snapshots[0].p.len() == mesh.n_vertices()
            && self.snapshots[0].ux.len() == self.order.n_dofs(mesh)
    }

    pub fn check_mesh(&self, mesh: &TriMesh) -> Result<(), InterpError> {
        if self.belongs_to(mesh) {
            Ok(())
        } else {
            Err(InterpError::MeshMismatch)
        }
    }

    /// Scales every value by `c`.
    pub fn scaled(&self, c: f64) -> SnapshotSet {
        let scale = |v: &[f64]| v.iter().map(|x| x * c).collect();
        SnapshotSet {
            snapshots: self
                .snapshots
                .iter()
                .map(|s| Snapshot {
                    ux: scale(&s.ux),
                    uy: scale(&s.uy),
                    p: scale(&s.p),
                })
                .collect(),
            ..self.clone()
        }
    }
}

/// Gradients of the barycentric coordinates of triangle `t` (constant over the triangle).
pub fn barycentric_gradients(mesh: &TriMesh, t: usize) -> [[f64; 2]; 3] {
    let [a, b, c] = mesh.triangle_points(t);
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    [
        [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
        [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
        [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
    ]
}

/// Shape-function values at barycentric point `lam` and the DOF index of each.
///
/// P1 returns three entries; P2 returns six (vertices, then edges `k → k+1`).
pub fn shape_functions(
    mesh: &TriMesh,
    t: usize,
    lam: [f64; 3],
    order: VelocityOrder,
) -> Vec<(usize, f64)> {
    let tri = mesh.triangle(t);
    match order {
        VelocityOrder::P1 => (0..3).map(|k| (tri[k], lam[k])).collect(),
        VelocityOrder::P2 => {
            let nv = mesh.n_vertices();
            let edges = mesh.triangle_edges(t);
            let mut out: Vec<(usize, f64)> = (0..3)
                .map(|k| (tri[k], lam[k] * (2.0 * lam[k] - 1.0)))
                .collect();
            out.extend((0..3).map(|k| (nv + edges[k], 4.0 * lam[k] * lam[(k + 1) % 3])));
            out
        }
    }
}

/// Gradients of the shape functions at barycentric point `lam`.
pub fn shape_gradients(
    mesh: &TriMesh,
    t: usize,
    lam: [f64; 3],
    order: VelocityOrder,
) -> Vec<(usize, [f64; 2])> {
    let tri = mesh.triangle(t);
    let g = barycentric_gradients(mesh, t);
    match order {
        VelocityOrder::P1 => (0..3).map(|k| (tri[k], g[k])).collect(),
        VelocityOrder::P2 => {
            let nv = mesh.n_vertices();
            let edges = mesh.triangle_edges(t);
            let mut out: Vec<(usize, [f64; 2])> = (0..3)
                .map(|k| {
                    let s = 4.0 * lam[k] - 1.0;
                    (tri[k], [s * g[k][0], s * g[k][1]])
                })
                .collect();
            out.extend((0..3).map(|k| {
                let j = (k + 1) % 3;
                let d = [
                    4.0 * (lam[k] * g[j][0] + lam[j] * g[k][0]),
                    4.0 * (lam[k] * g[j][1] + lam[j] * g[k][1]),
                ];
                (nv + edges[k], d)
            }));
            out
        }
    }
}

fn field_values<'a>(snaps: &'a SnapshotSet, k: usize, c: Component) -> (&'a [f64], VelocityOrder) {
    let s = &snaps.snapshots[k];
    match c {
        Component::Ux => (&s.ux, snaps.order),
        Component::Uy => (&s.uy, snaps.order),
        Component::P => (&s.p, VelocityOrder::P1),
    }
}

/// Value of one snapshot component at an arbitrary point of the mesh.
pub fn evaluate(
    mesh: &TriMesh,
    snaps: &SnapshotSet,
    snapshot: usize,
    component: Component,
    point: Point,
) -> Result<f64, InterpError> {
    snaps.check_mesh(mesh)?;
    let loc = locate(mesh, point)?;
    let (vals, order) = field_values(snaps, snapshot, component);
    Ok(shape_functions(mesh, loc.triangle, loc.barycentric, order)
        .into_iter()
        .map(|(i, w)| w * vals[i])
        .sum())
}

/// Evaluates the snapshots of `src` (living on `src_mesh`) at every DOF of `dst_mesh`.
///
/// Any DOF point outside `src_mesh` is a broken interpolation.
pub fn interpolate(
    src: &SnapshotSet,
    src_mesh: &TriMesh,
    dst_mesh: &TriMesh,
) -> Result<SnapshotSet, InterpError> {
    src.check_mesh(src_mesh)?;
    let order = src.order;
    let mut locator = Locator::new(src_mesh);
    let vlocs = velocity_dof_points(dst_mesh, order)
        .into_iter()
        .map(|q| {
            locator
                .locate(q)
                .map(|l| shape_functions(src_mesh, l.triangle, l.barycentric, order))
        })
        .collect::<Result<Vec<_>, _>>()?;
    // Pressure DOFs are the vertices, which lead the velocity DOF list.
    let plocs: Vec<Vec<(usize, f64)>> = (0..dst_mesh.n_vertices())
        .map(|v| {
            let l = locator.locate(dst_mesh.vertex(v))?;
            Ok(shape_functions(
                src_mesh,
                l.triangle,
                l.barycentric,
                VelocityOrder::P1,
            ))
        })
        .collect::<Result<_, Outside>>()?;
    let apply = |w: &[(usize, f64)], vals: &[f64]| w.iter().map(|&(i, c)| c * vals[i]).sum::<f64>();
    let snapshots = src
        .snapshots
        .iter()
        .map(|s| Snapshot {
            ux: vlocs.iter().map(|w| apply(w, &s.ux)).collect(),
            uy: vlocs.iter().map(|w| apply(w, &s.uy)).collect(),
            p: plocs.iter().map(|w| apply(w, &s.p)).collect(),
        })
        .collect();
    SnapshotSet::new(dst_mesh, order, snapshots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::gen_channel_mesh;

    fn linear(x: Point) -> f64 {
        2.0 * x[0] + 3.0 * x[1] - 1.0
    }

    fn quadratic(x: Point) -> f64 {
        x[0] * x[0] + x[1]
    }

    #[test]
    fn shape_functions_partition_unity() {
        let m = gen_channel_mesh(4, 3, 1.0, 1.0).unwrap();
        for order in [VelocityOrder::P1, VelocityOrder::P2] {
            for lam in [[0.2, 0.3, 0.5], [1.0, 0.0, 0.0], [0.0, 0.5, 0.5]] {
                let s: f64 = shape_functions(&m, 3, lam, order).iter().map(|x| x.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
                let g = shape_gradients(&m, 3, lam, order);
                let gx: f64 = g.iter().map(|x| x.1[0]).sum();
                let gy: f64 = g.iter().map(|x| x.1[1]).sum();
                assert!(gx.abs() < 1e-10 && gy.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn nodal_values_are_reproduced() {
        let m = gen_channel_mesh(4, 3, 1.0, 1.0).unwrap();
        let s = SnapshotSet::from_fn(&m, VelocityOrder::P2, 1, |_, x| {
            (quadratic(x), 0.0, linear(x))
        })
        .unwrap();
        for (i, q) in velocity_dof_points(&m, VelocityOrder::P2)
            .into_iter()
            .enumerate()
        {
            let v = evaluate(&m, &s, 0, Component::Ux, q).unwrap();
            assert!((v - s.snapshot(0).ux[i]).abs() < 1e-12);
        }
        for v in 0..m.n_vertices() {
            let p = evaluate(&m, &s, 0, Component::P, m.vertex(v)).unwrap();
            assert!((p - s.snapshot(0).p[v]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_field_everywhere() {
        let m = gen_channel_mesh(5, 3, 2.0, 1.0).unwrap();
        let s = SnapshotSet::from_fn(&m, VelocityOrder::P2, 1, |_, _| (4.5, -1.0, 2.0)).unwrap();
        for q in [[0.13, 0.77], [1.9, 0.01], [1.0, 0.5]] {
            assert!((evaluate(&m, &s, 0, Component::Ux, q).unwrap() - 4.5).abs() < 1e-12);
            assert!((evaluate(&m, &s, 0, Component::P, q).unwrap() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_onto_same_mesh_is_projection() {
        let m = gen_channel_mesh(5, 4, 2.0, 1.0).unwrap();
        let s = SnapshotSet::from_fn(&m, VelocityOrder::P2, 2, |k, x| {
            (
                (x[0] * 7.0).sin() + k as f64,
                (x[1] * 3.0).cos(),
                x[0] * x[1],
            )
        })
        .unwrap();
        let again = interpolate(&s, &m, &m).unwrap();
        for (a, b) in s.snapshots().iter().zip(again.snapshots()) {
            for (x, y) in a.ux.iter().zip(&b.ux).chain(a.p.iter().zip(&b.p)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn p1_linear_and_p2_quadratic_exact_across_meshes() {
        let fine = gen_channel_mesh(9, 7, 2.0, 1.0).unwrap();
        let coarse = fine
            .remove_vertex(fine.interior_vertices().nth(13).unwrap())
            .unwrap()
            .smooth(50)
            .unwrap();
        for (order, f) in [
            (VelocityOrder::P1, linear as fn(Point) -> f64),
            (VelocityOrder::P2, quadratic),
        ] {
            let s = SnapshotSet::from_fn(&fine, order, 1, |_, x| (f(x), f(x), linear(x))).unwrap();
            let d = interpolate(&s, &fine, &coarse).unwrap();
            for (q, v) in velocity_dof_points(&coarse, order)
                .iter()
                .zip(&d.snapshot(0).ux)
            {
                assert!((f(*q) - v).abs() < 1e-10);
            }
            for (q, v) in coarse.vertices().iter().zip(&d.snapshot(0).p) {
                assert!((linear(*q) - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mismatched_mesh_rejected() {
        let m = gen_channel_mesh(4, 3, 1.0, 1.0).unwrap();
        let other = gen_channel_mesh(4, 3, 1.0, 2.0).unwrap();
        let s = SnapshotSet::from_fn(&m, VelocityOrder::P1, 1, |_, _| (0.0, 0.0, 0.0)).unwrap();
        assert!(matches!(
            interpolate(&s, &other, &m),
            Err(InterpError::MeshMismatch)
        ));
    }

    #[test]
    fn dof_count_checked() {
        let m = gen_channel_mesh(4, 3, 1.0, 1.0).unwrap();
        let snap = Snapshot {
            ux: vec![0.0; 3],
            uy: vec![0.0; 3],
            p: vec![0.0; 3],
        };
        assert!(SnapshotSet::new(&m, VelocityOrder::P1, vec![snap]).is_err());
        assert!(SnapshotSet::new(&m, VelocityOrder::P1, vec![]).is_err());
    }

    #[test]
    fn interpolation_outside_is_broken() {
        let small = gen_channel_mesh(3, 3, 1.0, 1.0).unwrap();
        let big = gen_channel_mesh(3, 3, 2.0, 1.0).unwrap();
        let s = SnapshotSet::from_fn(&small, VelocityOrder::P1, 1, |_, _| (1.0, 0.0, 0.0)).unwrap();
        assert!(matches!(
            interpolate(&s, &small, &big),
            Err(InterpError::Outside(_))
        ));
    }
}
