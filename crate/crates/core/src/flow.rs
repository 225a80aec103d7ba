//! Drag and lift by boundary integration of the Cauchy stress, plus closed-form
//! flow fields used as ground truth.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::{shape_functions, shape_gradients, InterpError, SnapshotSet, VelocityOrder};
use crate::mesh::{BoundaryFacet, BoundaryTag, TriMesh};

pub type Tensor2 = [[f64; 2]; 2];

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("boundary facet ({0}, {1}) has no adjacent triangle")]
    DanglingFacet(usize, usize),
    #[error("direction ({0}, {1}) is not a unit vector")]
    NonUnitDirection(f64, f64),
    #[error("fluid constants must be positive (density {density}, viscosity {viscosity})")]
    InvalidFluid { density: f64, viscosity: f64 },
    #[error("unknown analytic flow kind {0:?}")]
    UnknownKind(String),
    #[error(transparent)]
    Interp(#[from] InterpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FluidConstants {
    pub density: f64,
    pub viscosity: f64,
}

impl FluidConstants {
    pub fn new(density: f64, viscosity: f64) -> Result<Self, FlowError> {
        if density > 0.0 && viscosity > 0.0 {
            Ok(FluidConstants { density, viscosity })
        } else {
            Err(FlowError::InvalidFluid { density, viscosity })
        }
    }
}

impl Default for FluidConstants {
    fn default() -> Self {
        FluidConstants {
            density: 1.0,
            viscosity: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyKind {
    Drag,
    Lift,
}

impl PropertyKind {
    pub fn direction(self) -> [f64; 2] {
        match self {
            PropertyKind::Drag => [1.0, 0.0],
            PropertyKind::Lift => [0.0, 1.0],
        }
    }
}

impl FromStr for PropertyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drag" => Ok(PropertyKind::Drag),
            "lift" => Ok(PropertyKind::Lift),
            other => Err(format!(
                "unknown property {other:?} (expected drag or lift)"
            )),
        }
    }
}

/// One property value per snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyVector {
    pub kind: PropertyKind,
    pub values: Vec<f64>,
}

impl PropertyVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// σ = −p·I + μ(∇u + ∇uᵀ), with `grad_u[i][j] = ∂u_i/∂x_j`.
pub fn stress_tensor(grad_u: Tensor2, p: f64, fluid: FluidConstants) -> Tensor2 {
    let mu = fluid.viscosity;
    let mut s = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            s[i][j] = mu * (grad_u[i][j] + grad_u[j][i]);
        }
        s[i][i] -= p;
    }
    s
}

/// Unit normal of a facet pointing from the body into the fluid, i.e. toward
/// the adjacent triangle's centroid, together with the facet length.
fn facet_normal(mesh: &TriMesh, t: usize, f: &BoundaryFacet) -> ([f64; 2], f64) {
    let (a, b) = (mesh.vertex(f.vertices[0]), mesh.vertex(f.vertices[1]));
    let len = crate::mesh::distance(a, b);
    let mut n = [(b[1] - a[1]) / len, -(b[0] - a[0]) / len];
    let c = mesh.centroid(t);
    let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
    if n[0] * (c[0] - mid[0]) + n[1] * (c[1] - mid[1]) < 0.0 {
        n = [-n[0], -n[1]];
    }
    (n, len)
}

fn barycentric_of_vertex(mesh: &TriMesh, t: usize, v: usize) -> [f64; 3] {
    let mut lam = [0.0; 3];
    let k = mesh
        .triangle(t)
        .iter()
        .position(|&u| u == v)
        .expect("facet vertex in adjacent triangle");
    lam[k] = 1.0;
    lam
}

/// Force component along `direction` on the facets selected by `select`, one value per snapshot.
pub fn boundary_force(
    snaps: &SnapshotSet,
    mesh: &TriMesh,
    select: impl Fn(&BoundaryFacet) -> bool,
    direction: [f64; 2],
    fluid: FluidConstants,
) -> Result<Vec<f64>, FlowError> {
    snaps.check_mesh(mesh)?;
    let norm = direction[0].hypot(direction[1]);
    if !((norm - 1.0).abs() <= 1e-12) {
        return Err(FlowError::NonUnitDirection(direction[0], direction[1]));
    }
    let order = snaps.order();
    // Gauss points on [0, 1] with weights summing to one.
    let gauss: &[(f64, f64)] = match order {
        VelocityOrder::P1 => &[(0.5, 1.0)],
        VelocityOrder::P2 => {
            let h = 0.5 / 3f64.sqrt();
            &[(0.5 - h, 0.5), (0.5 + h, 0.5)]
        }
    };
    let mut out = vec![0.0; snaps.len()];
    for f in mesh.facets().iter().filter(|f| select(f)) {
        let [a, b] = f.vertices;
        let t = mesh
            .edge_index(a, b)
            .and_then(|e| mesh.edge_triangles(e).into_iter().flatten().next())
            .ok_or(FlowError::DanglingFacet(a, b))?;
        let (n, len) = facet_normal(mesh, t, f);
        let (la, lb) = (
            barycentric_of_vertex(mesh, t, a),
            barycentric_of_vertex(mesh, t, b),
        );
        for &(s, w) in gauss {
            let lam = [0, 1, 2].map(|k| (1.0 - s) * la[k] + s * lb[k]);
            let dv = shape_gradients(mesh, t, lam, order);
            let pv = shape_functions(mesh, t, lam, VelocityOrder::P1);
            for (k, snap) in snaps.snapshots().iter().enumerate() {
                let mut g = [[0.0; 2]; 2];
                for &(i, d) in &dv {
                    for j in 0..2 {
                        g[0][j] += snap.ux[i] * d[j];
                        g[1][j] += snap.uy[i] * d[j];
                    }
                }
                let p: f64 = pv.iter().map(|&(i, c)| c * snap.p[i]).sum();
                let sigma = stress_tensor(g, p, fluid);
                let traction = [
                    sigma[0][0] * n[0] + sigma[0][1] * n[1],
                    sigma[1][0] * n[0] + sigma[1][1] * n[1],
                ];
                out[k] += w * len * (traction[0] * direction[0] + traction[1] * direction[1]);
            }
        }
    }
    Ok(out)
}

/// Drag or lift on all facets carrying `tag`.
pub fn compute_property(
    snaps: &SnapshotSet,
    mesh: &TriMesh,
    tag: BoundaryTag,
    kind: PropertyKind,
    fluid: FluidConstants,
) -> Result<PropertyVector, FlowError> {
    let values = boundary_force(snaps, mesh, |f| f.tag == tag, kind.direction(), fluid)?;
    Ok(PropertyVector { kind, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalyticKind {
    Poiseuille,
    Uniform,
    LinearShear,
}

impl FromStr for AnalyticKind {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "poiseuille" => Ok(AnalyticKind::Poiseuille),
            "uniform" => Ok(AnalyticKind::Uniform),
            "linear-shear" => Ok(AnalyticKind::LinearShear),
            other => Err(FlowError::UnknownKind(other.to_string())),
        }
    }
}

/// Parameters of the closed-form fields. Snapshot `k` of `n` is the base
/// field scaled by `(k + 1) / n`, so the last snapshot carries `u_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticParams {
    pub u_max: f64,
    pub length: f64,
    pub height: f64,
    pub n_snapshots: usize,
    pub order: VelocityOrder,
    pub fluid: FluidConstants,
}

/// Poiseuille: `u_x = 4 U y (H − y) / H²`, `p = 8 μ U (L − x) / H²`.
/// Uniform: `u = (U, 0)`, `p = 0`. Linear shear: `u = (U y / H, 0)`, `p = 0`.
pub fn analytic_snapshots(
    kind: AnalyticKind,
    mesh: &TriMesh,
    params: &AnalyticParams,
) -> Result<SnapshotSet, FlowError> {
    let AnalyticParams {
        u_max,
        length,
        height,
        n_snapshots,
        order,
        fluid,
    } = *params;
    let mu = fluid.viscosity;
    let set = SnapshotSet::from_fn(mesh, order, n_snapshots, |k, [x, y]| {
        let c = (k + 1) as f64 / n_snapshots as f64;
        let u = c * u_max;
        match kind {
            AnalyticKind::Poiseuille => (
                4.0 * u * y * (height - y) / (height * height),
                0.0,
                8.0 * mu * u * (length - x) / (height * height),
            ),
            AnalyticKind::Uniform => (u, 0.0, 0.0),
            AnalyticKind::LinearShear => (u * y / height, 0.0, 0.0),
        }
    })?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::Snapshot;
    use crate::mesh::{gen_channel_mesh, gen_obstacle_channel_mesh, ObstacleCells};

    fn params(order: VelocityOrder) -> AnalyticParams {
        AnalyticParams {
            u_max: 1.5,
            length: 2.0,
            height: 1.0,
            n_snapshots: 3,
            order,
            fluid: FluidConstants::default(),
        }
    }

    #[test]
    fn pure_pressure_and_simple_shear() {
        let f = FluidConstants::default();
        assert_eq!(
            stress_tensor([[0.0; 2]; 2], 1.0, f),
            [[-1.0, 0.0], [0.0, -1.0]]
        );
        let g = 3.0;
        let s = stress_tensor([[0.0, g], [0.0, 0.0]], 0.0, f);
        assert!((s[0][1] - 0.001 * g).abs() < 1e-15 && (s[1][0] - 0.001 * g).abs() < 1e-15);
        assert_eq!(s[0][0], 0.0);
        let s = stress_tensor([[0.3, -1.2], [2.5, 0.7]], 0.4, f);
        assert_eq!(s[0][1], s[1][0]);
    }

    #[test]
    fn linear_pressure_on_unit_square_body() {
        // Body occupies [1, 2] x [1, 2].
        let m = gen_obstacle_channel_mesh(
            5,
            4,
            4.0,
            3.0,
            ObstacleCells {
                i0: 1,
                i1: 2,
                j0: 1,
                j1: 2,
            },
        )
        .unwrap();
        for order in [VelocityOrder::P1, VelocityOrder::P2] {
            let s = SnapshotSet::from_fn(&m, order, 1, |_, [x, _]| (0.0, 0.0, x)).unwrap();
            let fluid = FluidConstants::default();
            let drag =
                compute_property(&s, &m, BoundaryTag::Airfoil, PropertyKind::Drag, fluid).unwrap();
            let lift =
                compute_property(&s, &m, BoundaryTag::Airfoil, PropertyKind::Lift, fluid).unwrap();
            assert!((drag.values[0] + 1.0).abs() < 1e-12, "{:?}", drag.values);
            assert!(lift.values[0].abs() < 1e-12);
        }
    }

    #[test]
    fn non_unit_direction_rejected() {
        let m = gen_channel_mesh(3, 3, 1.0, 1.0).unwrap();
        let s = analytic_snapshots(AnalyticKind::Uniform, &m, &params(VelocityOrder::P1)).unwrap();
        let r = boundary_force(&s, &m, |_| true, [1.0, 1.0], FluidConstants::default());
        assert!(matches!(r, Err(FlowError::NonUnitDirection(..))));
    }

    #[test]
    fn foreign_snapshots_rejected() {
        let m = gen_channel_mesh(3, 3, 1.0, 1.0).unwrap();
        let other = gen_channel_mesh(4, 3, 1.0, 1.0).unwrap();
        let s =
            analytic_snapshots(AnalyticKind::Uniform, &other, &params(VelocityOrder::P1)).unwrap();
        assert!(compute_property(
            &s,
            &m,
            BoundaryTag::Wall,
            PropertyKind::Drag,
            FluidConstants::default()
        )
        .is_err());
    }

    #[test]
    fn analytic_kinds() {
        let m = gen_channel_mesh(5, 4, 2.0, 1.0).unwrap();
        let s = analytic_snapshots(AnalyticKind::Uniform, &m, &params(VelocityOrder::P2)).unwrap();
        let last: &Snapshot = s.snapshot(2);
        assert!(last.ux.iter().all(|&u| u == 1.5) && last.uy.iter().all(|&u| u == 0.0));
        assert!(last.p.iter().all(|&p| p == 0.0));
        assert_eq!(s.snapshot(0).ux[0], 0.5);
        let s =
            analytic_snapshots(AnalyticKind::Poiseuille, &m, &params(VelocityOrder::P1)).unwrap();
        for (v, p) in m.vertices().iter().enumerate() {
            if p[1] == 0.0 || p[1] == 1.0 {
                assert_eq!(s.snapshot(2).ux[v], 0.0);
            }
            if p[0] == 2.0 {
                assert_eq!(s.snapshot(2).p[v], 0.0);
            }
        }
        assert!("vortex".parse::<AnalyticKind>().is_err());
        assert_eq!(
            "linear-shear".parse::<AnalyticKind>().unwrap(),
            AnalyticKind::LinearShear
        );
    }
}
