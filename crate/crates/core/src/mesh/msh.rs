//! ASCII MSH 2.2 subset: `$MeshFormat`, `$Nodes`, `$Elements` with line
//! (type 1) and triangle (type 2) elements. Line elements carry a physical
//! tag that selects the [`BoundaryTag`] of the facet. Other sections are
//! skipped; other element types are rejected.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BoundaryFacet, BoundaryTag, MeshError, TriMesh};

/// Mapping between MSH physical tag integers and boundary kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicalTags {
    pub airfoil: i64,
    pub inlet: i64,
    pub outlet: i64,
    pub wall: i64,
    /// Written on triangle elements; ignored when reading.
    pub domain: i64,
}

impl Default for PhysicalTags {
    fn default() -> Self {
        PhysicalTags {
            airfoil: 1,
            inlet: 2,
            outlet: 3,
            wall: 4,
            domain: 10,
        }
    }
}

impl PhysicalTags {
    pub fn tag_of(&self, physical: i64) -> Option<BoundaryTag> {
        match physical {
            p if p == self.airfoil => Some(BoundaryTag::Airfoil),
            p if p == self.inlet => Some(BoundaryTag::Inlet),
            p if p == self.outlet => Some(BoundaryTag::Outlet),
            p if p == self.wall => Some(BoundaryTag::Wall),
            _ => None,
        }
    }

    pub fn physical_of(&self, tag: BoundaryTag) -> i64 {
        match tag {
            BoundaryTag::Airfoil => self.airfoil,
            BoundaryTag::Inlet => self.inlet,
            BoundaryTag::Outlet => self.outlet,
            BoundaryTag::Wall => self.wall,
            BoundaryTag::Interior => self.domain,
        }
    }
}

pub fn read_msh(path: impl AsRef<Path>, tags: &PhysicalTags) -> Result<TriMesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    parse_msh(&text, tags)
}

pub fn write_msh(
    mesh: &TriMesh,
    path: impl AsRef<Path>,
    tags: &PhysicalTags,
) -> Result<(), MeshError> {
    std::fs::write(path, format_msh(mesh, tags))?;
    Ok(())
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<&'a str, MeshError> {
        for (i, l) in self.inner.by_ref() {
            self.line = i + 1;
            let l = l.trim();
            if !l.is_empty() {
                return Ok(l);
            }
        }
        Err(MeshError::Parse {
            line: self.line + 1,
            message: "unexpected end of file".into(),
        })
    }

    fn err(&self, message: impl Into<String>) -> MeshError {
        MeshError::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn expect(&mut self, marker: &str) -> Result<(), MeshError> {
        let l = self.next_line()?;
        if l == marker {
            Ok(())
        } else {
            Err(self.err(format!("expected {marker}, found {l:?}")))
        }
    }

    fn count(&mut self) -> Result<usize, MeshError> {
        let l = self.next_line()?;
        l.parse()
            .map_err(|_| self.err(format!("expected a count, found {l:?}")))
    }
}

fn parse_fields<T: std::str::FromStr>(lines: &Lines<'_>, l: &str) -> Result<Vec<T>, MeshError> {
    l.split_whitespace()
        .map(|f| {
            f.parse::<T>()
                .map_err(|_| lines.err(format!("invalid field {f:?}")))
        })
        .collect()
}

pub fn parse_msh(text: &str, tags: &PhysicalTags) -> Result<TriMesh, MeshError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let mut vertices = Vec::new();
    let mut ids = Vec::new();
    let mut index_of: HashMap<usize, usize> = HashMap::new();
    let mut triangles = Vec::new();
    let mut facets = Vec::new();
    let (mut seen_format, mut seen_nodes, mut seen_elements) = (false, false, false);

    loop {
        let header = match lines.next_line() {
            Ok(l) => l,
            Err(_) if seen_format => break,
            Err(e) => return Err(e),
        };
        match header {
            "$MeshFormat" => {
                let l = lines.next_line()?;
                let f: Vec<&str> = l.split_whitespace().collect();
                if f.len() != 3 || f[0] != "2.2" || f[1] != "0" {
                    return Err(lines.err(format!("only ASCII MSH 2.2 is supported, found {l:?}")));
                }
                lines.expect("$EndMeshFormat")?;
                seen_format = true;
            }
            "$Nodes" => {
                if !seen_format {
                    return Err(lines.err("$Nodes before $MeshFormat"));
                }
                let n = lines.count()?;
                for _ in 0..n {
                    let l = lines.next_line()?;
                    let f: Vec<&str> = l.split_whitespace().collect();
                    if f.len() != 4 {
                        return Err(lines.err("node line needs id x y z"));
                    }
                    let id: usize = f[0].parse().map_err(|_| lines.err("invalid node id"))?;
                    let xyz: Vec<f64> = parse_fields(&lines, &f[1..].join(" "))?;
                    if id == 0 || index_of.insert(id, vertices.len()).is_some() {
                        return Err(lines.err(format!("invalid or duplicate node id {id}")));
                    }
                    ids.push(id - 1);
                    vertices.push([xyz[0], xyz[1]]);
                }
                lines.expect("$EndNodes")?;
                seen_nodes = true;
            }
            "$Elements" => {
                if !seen_nodes {
                    return Err(lines.err("$Elements before $Nodes"));
                }
                let n = lines.count()?;
                for _ in 0..n {
                    let l = lines.next_line()?;
                    let f: Vec<i64> = parse_fields(&lines, l)?;
                    if f.len() < 3 {
                        return Err(lines.err("truncated element line"));
                    }
                    let ty = f[1];
                    let ntags =
                        usize::try_from(f[2]).map_err(|_| lines.err("negative tag count"))?;
                    let node_start = 3 + ntags;
                    let nodes = f.get(node_start..).unwrap_or(&[]);
                    let lookup = |id: i64| {
                        usize::try_from(id)
                            .ok()
                            .and_then(|id| index_of.get(&id).copied())
                            .ok_or_else(|| lines.err(format!("unknown node id {id}")))
                    };
                    match ty {
                        1 => {
                            if nodes.len() != 2 {
                                return Err(lines.err("line element needs 2 nodes"));
                            }
                            let physical = *f
                                .get(3)
                                .filter(|_| ntags > 0)
                                .ok_or_else(|| lines.err("line element without physical tag"))?;
                            let tag =
                                tags.tag_of(physical).ok_or(MeshError::UnknownPhysicalTag {
                                    line: lines.line,
                                    tag: physical,
                                })?;
                            facets.push(BoundaryFacet {
                                vertices: [lookup(nodes[0])?, lookup(nodes[1])?],
                                tag,
                            });
                        }
                        2 => {
                            if nodes.len() != 3 {
                                return Err(lines.err("triangle element needs 3 nodes"));
                            }
                            triangles.push([
                                lookup(nodes[0])?,
                                lookup(nodes[1])?,
                                lookup(nodes[2])?,
                            ]);
                        }
                        other => {
                            return Err(MeshError::UnknownElementType {
                                line: lines.line,
                                element_type: u32::try_from(other).unwrap_or(u32::MAX),
                            })
                        }
                    }
                }
                lines.expect("$EndElements")?;
                seen_elements = true;
            }
            other if other.starts_with('$') && !other.starts_with("$End") => {
                // Skip unsupported sections such as $PhysicalNames.
                let end = format!("$End{}", &other[1..]);
                while lines.next_line()? != end {}
            }
            other => return Err(lines.err(format!("unexpected line {other:?}"))),
        }
    }
    if !seen_elements {
        return Err(lines.err("missing $Elements section"));
    }
    TriMesh::with_ids(vertices, ids, triangles, facets)
}

/// Deterministic MSH text: nodes in index order (id = stable id + 1), then
/// boundary lines, then triangles, coordinates with 17 significant digits.
pub fn format_msh(mesh: &TriMesh, tags: &PhysicalTags) -> String {
    let mut s = String::with_capacity(64 * (mesh.n_vertices() + mesh.n_triangles()));
    s.push_str("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n");
    let _ = writeln!(s, "{}", mesh.n_vertices());
    for (v, p) in mesh.vertices().iter().enumerate() {
        let _ = writeln!(s, "{} {:.16e} {:.16e} 0", mesh.ids()[v] + 1, p[0], p[1]);
    }
    s.push_str("$EndNodes\n$Elements\n");
    let _ = writeln!(s, "{}", mesh.facets().len() + mesh.n_triangles());
    let node = |v: usize| mesh.ids()[v] + 1;
    let mut id = 1;
    for f in mesh.facets() {
        let p = tags.physical_of(f.tag);
        let _ = writeln!(
            s,
            "{id} 1 2 {p} {p} {} {}",
            node(f.vertices[0]),
            node(f.vertices[1])
        );
        id += 1;
    }
    let d = tags.domain;
    for t in mesh.triangles() {
        let _ = writeln!(
            s,
            "{id} 2 2 {d} {d} {} {} {}",
            node(t[0]),
            node(t[1]),
            node(t[2])
        );
        id += 1;
    }
    s.push_str("$EndElements\n");
    s
}
