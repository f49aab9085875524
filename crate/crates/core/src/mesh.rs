//! Polygon meshes and their on-disk form.
//!
//! Meshes are written as a Wavefront-style text file: one `v x y z` record per
//! vertex and one `f i j k ...` record per polygon with 1-based indices.
//! Coordinates are printed with Rust's shortest round-trip float formatting,
//! so `import(export(m))` reproduces every coordinate bit for bit.
//!
//! Face adjacency and lattice parameters cannot be expressed in that format
//! and travel in a JSON sidecar next to the mesh (see [`MeshSidecar`]).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Point, Vector};

#[derive(Debug, Error)]
pub enum MeshIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed mesh at line {line}: {message}")]
    MalformedMesh { line: usize, message: String },
    #[error("malformed sidecar {path}: {message}")]
    MalformedSidecar { path: PathBuf, message: String },
    #[error("vertex {vertex} has a non-finite coordinate")]
    NonFinite { vertex: usize },
}

/// Unordered edge key with the smaller vertex index first.
pub fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Indexed polygon mesh. Faces list vertex indices in cyclic order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<Vec<usize>>,
}

impl PolyMesh {
    pub fn new(vertices: Vec<Point>, faces: Vec<Vec<usize>>) -> Self {
        PolyMesh { vertices, faces }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn face_points(&self, face: usize) -> Vec<Point> {
        self.faces[face].iter().map(|&i| self.vertices[i]).collect()
    }

    /// Cyclic edges of one face, as `(from, to)` in face order.
    pub fn face_edges(&self, face: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let f = &self.faces[face];
        (0..f.len()).map(move |k| (f[k], f[(k + 1) % f.len()]))
    }

    /// Faces incident to each unordered edge, in ascending face order.
    pub fn edge_faces(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for f in 0..self.faces.len() {
            for (a, b) in self.face_edges(f) {
                let entry = map.entry(edge_key(a, b)).or_default();
                if !entry.contains(&f) {
                    entry.push(f);
                }
            }
        }
        map
    }

    /// Faces incident to each vertex, in ascending face order.
    pub fn vertex_faces(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for (f, face) in self.faces.iter().enumerate() {
            for &v in face {
                if !out[v].contains(&f) {
                    out[v].push(f);
                }
            }
        }
        out
    }

    /// Edge-connected neighbours of each vertex, sorted ascending.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edge_faces().into_keys() {
            out[a].push(b);
            out[b].push(a);
        }
        for n in &mut out {
            n.sort_unstable();
        }
        out
    }

    /// Face pairs that share at least one edge, each pair once with `f < g`.
    pub fn shared_edge_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = std::collections::BTreeSet::new();
        for faces in self.edge_faces().values() {
            for (x, &f) in faces.iter().enumerate() {
                for &g in &faces[x + 1..] {
                    pairs.insert(edge_key(f, g));
                }
            }
        }
        pairs.into_iter().collect()
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        let mut lo = Vector::repeat(f64::INFINITY);
        let mut hi = Vector::repeat(f64::NEG_INFINITY);
        for p in &self.vertices {
            lo = lo.inf(&p.coords);
            hi = hi.sup(&p.coords);
        }
        if self.vertices.is_empty() {
            0.0
        } else {
            (hi - lo).norm()
        }
    }

    /// Serializes to the text mesh format.
    pub fn to_obj_string(&self) -> Result<String, MeshIoError> {
        let mut out = String::with_capacity(self.vertices.len() * 40 + self.faces.len() * 32);
        for (i, p) in self.vertices.iter().enumerate() {
            if !p.coords.iter().all(|c| c.is_finite()) {
                return Err(MeshIoError::NonFinite { vertex: i });
            }
            let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
        }
        for face in &self.faces {
            out.push('f');
            for &i in face {
                let _ = write!(out, " {}", i + 1);
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses the text mesh format. Blank lines, `#` comments and record types
    /// other than `v`/`f` are ignored; `f` entries may carry `/vt/vn` suffixes.
    pub fn parse_obj(text: &str) -> Result<PolyMesh, MeshIoError> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut face_lines = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let coords: Vec<&str> = parts.collect();
                    if coords.len() < 3 {
                        return Err(malformed(line_no, "vertex record needs 3 coordinates"));
                    }
                    let mut xyz = [0.0; 3];
                    for (slot, tok) in xyz.iter_mut().zip(&coords[..3]) {
                        *slot = tok
                            .parse::<f64>()
                            .map_err(|_| malformed(line_no, &format!("bad coordinate {tok:?}")))?;
                        if !slot.is_finite() {
                            return Err(malformed(line_no, "non-finite coordinate"));
                        }
                    }
                    vertices.push(Point::new(xyz[0], xyz[1], xyz[2]));
                }
                Some("f") => {
                    let mut face = Vec::new();
                    for tok in parts {
                        let head = tok.split('/').next().unwrap_or("");
                        let idx: i64 = head
                            .parse()
                            .map_err(|_| malformed(line_no, &format!("bad face index {tok:?}")))?;
                        if idx < 1 {
                            return Err(malformed(
                                line_no,
                                &format!("face index {idx} is not a positive 1-based index"),
                            ));
                        }
                        face.push((idx - 1) as usize);
                    }
                    if face.len() < 3 {
                        return Err(malformed(line_no, "face needs at least 3 vertices"));
                    }
                    faces.push(face);
                    face_lines.push(line_no);
                }
                _ => {}
            }
        }
        for (face, &line_no) in faces.iter().zip(&face_lines) {
            if let Some(&bad) = face.iter().find(|&&i| i >= vertices.len()) {
                return Err(malformed(
                    line_no,
                    &format!("face index {} exceeds vertex count {}", bad + 1, vertices.len()),
                ));
            }
        }
        Ok(PolyMesh { vertices, faces })
    }
}

fn malformed(line: usize, message: &str) -> MeshIoError {
    MeshIoError::MalformedMesh {
        line,
        message: message.to_string(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MeshIoError + '_ {
    move |source| MeshIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn export_mesh(mesh: &PolyMesh, path: &Path) -> Result<(), MeshIoError> {
    let text = mesh.to_obj_string()?;
    fs::write(path, text).map_err(io_err(path))
}

pub fn import_mesh(path: &Path) -> Result<PolyMesh, MeshIoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    PolyMesh::parse_obj(&text)
}

/// Lattice parameters of a mesh built on a subdivided triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeInfo {
    pub subdivision: usize,
    pub corners: [[f64; 3]; 3],
    /// `(u, v)` of every mesh vertex, indexed like the mesh vertices.
    pub uv: Vec<[i64; 2]>,
}

/// JSON companion of a mesh file: face adjacency plus optional lattice data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSidecar {
    pub nodes: Vec<usize>,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeInfo>,
}

/// `mesh.obj` → `mesh.graph.json`.
pub fn sidecar_path(mesh_path: &Path) -> PathBuf {
    mesh_path.with_extension("graph.json")
}

pub fn write_sidecar(sidecar: &MeshSidecar, path: &Path) -> Result<(), MeshIoError> {
    let mut text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_sidecar(path: &Path) -> Result<MeshSidecar, MeshIoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| MeshIoError::MalformedSidecar {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
