use super::{MeshError, Point, TriMesh};

impl TriMesh {
    /// Jacobi local averaging: every interior vertex moves to the mean of its
    /// 1-ring, all vertices updated simultaneously, `iterations` times.
    ///
    /// Boundary vertices are copied untouched. Fails with a broken-mesh error
    /// if any triangle ends up with area at or below [`TriMesh::area_epsilon`].
    pub fn smooth(&self, iterations: usize) -> Result<TriMesh, MeshError> {
        let interior: Vec<usize> = self.interior_vertices().collect();
        let mut cur = self.vertices.clone();
        let mut next = cur.clone();
        for _ in 0..iterations {
            for &v in &interior {
                let nb = self.neighbors(v);
                let mut acc = [0.0, 0.0];
                for &u in nb {
                    acc[0] += cur[u][0];
                    acc[1] += cur[u][1];
                }
                let k = nb.len() as f64;
                next[v] = [acc[0] / k, acc[1] / k];
            }
            std::mem::swap(&mut cur, &mut next);
        }
        let smoothed = self.with_vertices(cur);
        let eps = smoothed.area_epsilon();
        if let Some(t) = (0..smoothed.n_triangles()).find(|&t| smoothed.signed_area(t) <= eps) {
            return Err(MeshError::broken(format!(
                "triangle {t} inverted by smoothing"
            )));
        }
        Ok(smoothed)
    }
}

/// Largest vertex displacement between two meshes with identical connectivity.
pub fn max_displacement(a: &[Point], b: &[Point]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| super::distance(*p, *q))
        .fold(0.0, f64::max)
}
