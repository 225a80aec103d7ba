//! Snapshot files.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic "MDQS" | version u32 | n_snapshots u32 | velocity_order u32
//! | n_velocity_dofs u64 | n_pressure_dofs u64
//! then per snapshot: ux[n_velocity_dofs] uy[n_velocity_dofs] p[n_pressure_dofs] as f64
//! ```
//!
//! The CSV import takes blocks of `vertex_id,ux,uy,p` rows separated by blank
//! lines, one block per snapshot, producing P1 velocity. `vertex_id` is the
//! zero-based stable vertex id (MSH node id minus one). Non-numeric lines
//! (headers) are ignored.

use std::collections::HashMap;
use std::path::Path;

use super::{InterpError, Snapshot, SnapshotSet, VelocityOrder};
use crate::mesh::TriMesh;

pub const MAGIC: &[u8; 4] = b"MDQS";
pub const VERSION: u32 = 1;

pub fn encode_snapshots(set: &SnapshotSet) -> Vec<u8> {
    let nv = set.snapshot(0).ux.len();
    let np = set.snapshot(0).p.len();
    let mut out = Vec::with_capacity(32 + set.len() * (2 * nv + np) * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&set.order().as_u32().to_le_bytes());
    out.extend_from_slice(&(nv as u64).to_le_bytes());
    out.extend_from_slice(&(np as u64).to_le_bytes());
    for s in set.snapshots() {
        for v in s.ux.iter().chain(&s.uy).chain(&s.p) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], InterpError> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| InterpError::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice of length N"))
    }

    fn u32(&mut self) -> Result<u32, InterpError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, InterpError> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, InterpError> {
        (0..n)
            .map(|_| Ok(f64::from_le_bytes(self.take()?)))
            .collect()
    }
}

pub fn decode_snapshots(bytes: &[u8], mesh: &TriMesh) -> Result<SnapshotSet, InterpError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if &r.take::<4>()? != MAGIC {
        return Err(InterpError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(InterpError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let n = r.u32()? as usize;
    let order = VelocityOrder::try_from(r.u32()?).map_err(InterpError::Format)?;
    let nv = usize::try_from(r.u64()?).map_err(|e| InterpError::Format(e.to_string()))?;
    let np = usize::try_from(r.u64()?).map_err(|e| InterpError::Format(e.to_string()))?;
    let expected = (8 * (2 * nv + np)).checked_mul(n);
    if expected != Some(bytes.len() - r.pos) {
        return Err(InterpError::Format(format!(
            "payload is {} bytes, header implies {n} snapshots of {nv}/{np} DOFs",
            bytes.len() - r.pos
        )));
    }
    let snapshots = (0..n)
        .map(|_| {
            Ok(Snapshot {
                ux: r.f64s(nv)?,
                uy: r.f64s(nv)?,
                p: r.f64s(np)?,
            })
        })
        .collect::<Result<Vec<_>, InterpError>>()?;
    SnapshotSet::new(mesh, order, snapshots)
}

pub fn write_snapshots(set: &SnapshotSet, path: impl AsRef<Path>) -> Result<(), InterpError> {
    std::fs::write(path, encode_snapshots(set))?;
    Ok(())
}

pub fn read_snapshots(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<SnapshotSet, InterpError> {
    decode_snapshots(&std::fs::read(path)?, mesh)
}

/// Reads a snapshot file, dispatching on the `.csv` extension.
pub fn read_snapshot_file(
    path: impl AsRef<Path>,
    mesh: &TriMesh,
) -> Result<SnapshotSet, InterpError> {
    let path = path.as_ref();
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        parse_csv(&std::fs::read_to_string(path)?, mesh)
    } else {
        read_snapshots(path, mesh)
    }
}

pub fn parse_csv(text: &str, mesh: &TriMesh) -> Result<SnapshotSet, InterpError> {
    let index_of: HashMap<usize, usize> = mesh
        .ids()
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let n = mesh.n_vertices();
    let mut blocks: Vec<Vec<(usize, [f64; 3])>> = vec![Vec::new()];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            if !blocks.last().expect("non-empty").is_empty() {
                blocks.push(Vec::new());
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Ok(id) = fields[0].parse::<usize>() else {
            continue;
        };
        if fields.len() != 4 {
            return Err(InterpError::Format(format!(
                "line {}: expected 4 columns",
                lineno + 1
            )));
        }
        let mut vals = [0.0; 3];
        for (k, f) in fields[1..].iter().enumerate() {
            vals[k] = f.parse().map_err(|_| {
                InterpError::Format(format!("line {}: invalid number {f:?}", lineno + 1))
            })?;
        }
        let v = *index_of.get(&id).ok_or_else(|| {
            InterpError::Format(format!("line {}: unknown vertex id {id}", lineno + 1))
        })?;
        blocks.last_mut().expect("non-empty").push((v, vals));
    }
    blocks.retain(|b| !b.is_empty());
    let snapshots = blocks
        .into_iter()
        .enumerate()
        .map(|(k, rows)| {
            let mut s = Snapshot {
                ux: vec![f64::NAN; n],
                uy: vec![f64::NAN; n],
                p: vec![f64::NAN; n],
            };
            let mut seen = vec![false; n];
            for (v, [ux, uy, p]) in rows {
                if std::mem::replace(&mut seen[v], true) {
                    return Err(InterpError::Format(format!(
                        "snapshot {k}: vertex {v} listed twice"
                    )));
                }
                s.ux[v] = ux;
                s.uy[v] = uy;
                s.p[v] = p;
            }
            if let Some(v) = seen.iter().position(|s| !s) {
                return Err(InterpError::Format(format!(
                    "snapshot {k}: vertex {v} missing"
                )));
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>, _>>()?;
    SnapshotSet::new(mesh, VelocityOrder::P1, snapshots)
}
