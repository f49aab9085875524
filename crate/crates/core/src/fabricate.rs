//! Fabrication geometry for a planar polygon mesh.
//!
//! Every face becomes a panel box: the face itself plus one wall per edge,
//! hanging from the face along the per-vertex averaged normal scaled by the
//! wall height. Vertices where exactly three edges meet get a joint pyramid
//! whose base points lie on the incident edges. Fastener holes are emitted
//! as markers (center, axis, diameter).
//!
//! The per-vertex average is used for wall corners so adjacent walls meet;
//! the per-edge (two-face) average only feeds the deviation diagnostic
//! `e_dev(v) = max_e h·|n_edge(e) − n_vertex(v)|`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::Serialize;
use thiserror::Error;

use crate::mesh::{edge_key, MeshIoError, PolyMesh};
use crate::planarize::fit_plane;
use crate::{Point, Vector};

/// Averages shorter than this are treated as cancelling normals.
const MIN_AVERAGE_NORM: f64 = 1e-9;
/// Smallest joint pyramid volume, m³.
const MIN_PYRAMID_VOLUME: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FabricateError {
    #[error("face {face} is degenerate")]
    DegenerateFace { face: usize },
    #[error("face {face} cannot be oriented consistently with its neighbours")]
    OrientationConflict { face: usize },
    #[error("edge ({a}, {b}) is shared by more than two faces")]
    NonManifoldEdge { a: usize, b: usize },
    #[error("normals cancel when averaging at {location}")]
    OppositeNormals { location: String },
    #[error("wall on edge ({a}, {b}) of face {face} folds over; wall height too large for the local curvature")]
    SelfIntersectingWall { face: usize, a: usize, b: usize },
    #[error("joint at vertex {vertex} is degenerate (volume {volume:e} m^3)")]
    DegeneratePyramid { vertex: usize, volume: f64 },
    #[error("vertex {vertex} has {valence} edges; joints need exactly 3")]
    UnsupportedValence { vertex: usize, valence: usize },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error(transparent)]
    Io(#[from] MeshIoError),
}

/// Consistently oriented face normals.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceOrientation {
    /// Unit normal of each face's fitted plane, signed by the oriented winding.
    pub normals: Vec<Vector>,
    /// Faces as given, with windings reversed where needed.
    pub faces: Vec<Vec<usize>>,
    /// Faces whose winding was reversed.
    pub flipped: Vec<usize>,
}

/// Area-weighted polygon normal of a vertex loop.
fn newell_normal(points: &[Point]) -> Vector {
    let mut n = Vector::zeros();
    for k in 0..points.len() {
        let a = points[k];
        let b = points[(k + 1) % points.len()];
        n.x += (a.y - b.y) * (a.z + b.z);
        n.y += (a.z - b.z) * (a.x + b.x);
        n.z += (a.x - b.x) * (a.y + b.y);
    }
    n
}

fn has_directed_edge(face: &[usize], a: usize, b: usize) -> bool {
    (0..face.len()).any(|k| face[k] == a && face[(k + 1) % face.len()] == b)
}

/// Orients faces by propagation over shared edges.
///
/// The lowest-index face of each connected component keeps its winding;
/// neighbours are flipped as needed so every interior edge is traversed in
/// opposite directions by its two faces.
pub fn face_normals(mesh: &PolyMesh) -> Result<FaceOrientation, FabricateError> {
    let nf = mesh.faces.len();
    let edge_faces = mesh.edge_faces();
    if let Some((&(a, b), _)) = edge_faces.iter().find(|(_, fs)| fs.len() > 2) {
        return Err(FabricateError::NonManifoldEdge { a, b });
    }
    // keep[f]: Some(true) keep winding, Some(false) reverse
    let mut keep: Vec<Option<bool>> = vec![None; nf];
    for seed in 0..nf {
        if keep[seed].is_some() {
            continue;
        }
        keep[seed] = Some(true);
        let mut queue = VecDeque::from([seed]);
        while let Some(f) = queue.pop_front() {
            let kf = keep[f].unwrap();
            let face = &mesh.faces[f];
            for k in 0..face.len() {
                let (mut a, mut b) = (face[k], face[(k + 1) % face.len()]);
                if !kf {
                    std::mem::swap(&mut a, &mut b);
                }
                for &g in &edge_faces[&edge_key(a, b)] {
                    if g == f {
                        continue;
                    }
                    // g must traverse b -> a once oriented
                    let need = !has_directed_edge(&mesh.faces[g], a, b);
                    match keep[g] {
                        None => {
                            keep[g] = Some(need);
                            queue.push_back(g);
                        }
                        Some(have) if have != need => {
                            return Err(FabricateError::OrientationConflict { face: g });
                        }
                        _ => {}
                    }
                }
            }
        }
    }

    let mut faces = Vec::with_capacity(nf);
    let mut normals = Vec::with_capacity(nf);
    let mut flipped = Vec::new();
    for (f, face) in mesh.faces.iter().enumerate() {
        let mut oriented = face.clone();
        if keep[f] == Some(false) {
            oriented.reverse();
            flipped.push(f);
        }
        let pts: Vec<Point> = oriented.iter().map(|&i| mesh.vertices[i]).collect();
        let plane = fit_plane(&pts).map_err(|_| FabricateError::DegenerateFace { face: f })?;
        let winding = newell_normal(&pts);
        let n = if plane.normal.dot(&winding) < 0.0 {
            -plane.normal
        } else {
            plane.normal
        };
        normals.push(n);
        faces.push(oriented);
    }
    Ok(FaceOrientation {
        normals,
        faces,
        flipped,
    })
}

fn unit_average(normals: &[Vector], location: impl FnOnce() -> String) -> Result<Vector, FabricateError> {
    let sum: Vector = normals.iter().sum();
    let avg = sum / normals.len() as f64;
    if avg.norm() < MIN_AVERAGE_NORM {
        return Err(FabricateError::OppositeNormals { location: location() });
    }
    Ok(avg.normalize())
}

/// Averaged normals along edges and at vertices, plus the wall height.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    pub face_normals: Vec<Vector>,
    /// Unit average of the 1 or 2 faces on each edge.
    pub edge_normals: BTreeMap<(usize, usize), Vector>,
    /// Unit average of the faces at each vertex; `None` for unused vertices.
    pub vertex_normals: Vec<Option<Vector>>,
    /// Edges incident to each vertex, as keys of `edge_normals`.
    pub vertex_edges: Vec<Vec<(usize, usize)>>,
    pub wall_height: f64,
}

impl OffsetField {
    /// `e_dev(v)`; zero for vertices without edges.
    pub fn deviation_error(&self, v: usize) -> f64 {
        let Some(nv) = self.vertex_normals[v] else {
            return 0.0;
        };
        self.vertex_edges[v]
            .iter()
            .map(|e| self.wall_height * (self.edge_normals[e] - nv).norm())
            .fold(0.0, f64::max)
    }

    /// Wall corner below `v`: `v + h·n_vertex(v)`.
    pub fn offset_point(&self, v: usize, position: &Point) -> Option<Point> {
        self.vertex_normals[v].map(|n| position + n * self.wall_height)
    }
}

/// Builds the averaged normal field from oriented faces.
pub fn averaged_offsets(
    mesh: &PolyMesh,
    orientation: &FaceOrientation,
    wall_height: f64,
) -> Result<OffsetField, FabricateError> {
    if !(wall_height > 0.0 && wall_height.is_finite()) {
        return Err(FabricateError::InvalidParameters("wall height must be > 0".into()));
    }
    let normals = &orientation.normals;
    let mut edge_normals = BTreeMap::new();
    let mut vertex_edges = vec![Vec::new(); mesh.vertices.len()];
    for ((a, b), fs) in mesh.edge_faces() {
        let ns: Vec<Vector> = fs.iter().map(|&f| normals[f]).collect();
        edge_normals.insert((a, b), unit_average(&ns, || format!("edge ({a}, {b})"))?);
        vertex_edges[a].push((a, b));
        vertex_edges[b].push((a, b));
    }
    let mut vertex_normals = Vec::with_capacity(mesh.vertices.len());
    for (v, fs) in mesh.vertex_faces().iter().enumerate() {
        if fs.is_empty() {
            vertex_normals.push(None);
            continue;
        }
        let ns: Vec<Vector> = fs.iter().map(|&f| normals[f]).collect();
        vertex_normals.push(Some(unit_average(&ns, || format!("vertex {v}"))?));
    }
    Ok(OffsetField {
        face_normals: normals.clone(),
        edge_normals,
        vertex_normals,
        vertex_edges,
        wall_height,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    pub per_vertex: Vec<f64>,
    pub max: f64,
}

impl DeviationReport {
    /// `vertexIndex,x,y,z,e_dev_m` rows, one per vertex.
    pub fn to_csv(&self, positions: &[Point]) -> String {
        let mut out = String::from("vertexIndex,x,y,z,e_dev_m\n");
        for (i, (p, e)) in positions.iter().zip(&self.per_vertex).enumerate() {
            let _ = writeln!(out, "{i},{},{},{},{e}", p.x, p.y, p.z);
        }
        out
    }
}

pub fn deviation_report(offsets: &OffsetField) -> DeviationReport {
    let per_vertex: Vec<f64> = (0..offsets.vertex_normals.len())
        .map(|v| offsets.deviation_error(v))
        .collect();
    let max = per_vertex.iter().copied().fold(0.0, f64::max);
    DeviationReport { per_vertex, max }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastenerMarker {
    pub center: Point,
    pub axis: Vector,
    pub diameter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoleSpec {
    pub diameter: f64,
}

/// Marker for the joint side along edge `v -> w` and its mating wall.
///
/// The wall plane at `v` is spanned by the edge and `n_vertex(v)`; the axis is
/// its unit normal.
fn edge_marker(v: &Point, w: &Point, normal: &Vector, offsets: &OffsetField, t: f64, hole: HoleSpec) -> FastenerMarker {
    let edge = w - v;
    FastenerMarker {
        center: v + edge * (t / 2.0) + normal * (offsets.wall_height / 2.0),
        axis: edge.cross(normal).normalize(),
        diameter: hole.diameter,
    }
}

/// One face extruded with perimeter walls.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelBox {
    pub face_index: usize,
    /// Mesh vertex indices of the top polygon, in oriented winding order.
    pub vertex_indices: Vec<usize>,
    pub top: Vec<Point>,
    /// `[a, b, b + h·n(b), a + h·n(a)]` per edge `a -> b` of `top`.
    pub walls: Vec<[Point; 4]>,
    pub thickness: f64,
    pub markers: Vec<FastenerMarker>,
}

impl PanelBox {
    /// Top polygon followed by the wall quads, sharing corner vertices.
    pub fn to_poly_mesh(&self) -> PolyMesh {
        let n = self.top.len();
        let mut vertices = self.top.clone();
        vertices.extend(self.walls.iter().map(|w| w[3]));
        let mut faces = vec![(0..n).collect::<Vec<_>>()];
        for k in 0..n {
            let k1 = (k + 1) % n;
            faces.push(vec![k, k1, n + k1, n + k]);
        }
        PolyMesh::new(vertices, faces)
    }
}

fn triangle_normal(a: &Point, b: &Point, c: &Point) -> Vector {
    (b - a).cross(&(c - a))
}

/// Panels with walls. Markers are placed where a wall meets a joint, that is
/// at wall ends on vertices with exactly three edges.
pub fn build_panel_boxes(
    mesh: &PolyMesh,
    orientation: &FaceOrientation,
    offsets: &OffsetField,
    thickness: f64,
    joint_proportion: f64,
    hole: HoleSpec,
) -> Result<Vec<PanelBox>, FabricateError> {
    if !(thickness > 0.0) {
        return Err(FabricateError::InvalidParameters("thickness must be > 0".into()));
    }
    let mut panels = Vec::with_capacity(orientation.faces.len());
    for (f, face) in orientation.faces.iter().enumerate() {
        let n_face = orientation.normals[f];
        let top: Vec<Point> = face.iter().map(|&i| mesh.vertices[i]).collect();
        let low: Vec<Point> = face
            .iter()
            .zip(&top)
            .map(|(&i, p)| offsets.offset_point(i, p).expect("face vertex has a normal"))
            .collect();
        let n = face.len();
        let mut walls = Vec::with_capacity(n);
        let mut markers = Vec::new();
        for k in 0..n {
            let k1 = (k + 1) % n;
            let quad = [top[k], top[k1], low[k1], low[k]];
            let outward = (quad[1] - quad[0]).cross(&n_face);
            let t1 = triangle_normal(&quad[0], &quad[1], &quad[2]);
            let t2 = triangle_normal(&quad[0], &quad[2], &quad[3]);
            if !(t1.dot(&outward) > 0.0 && t2.dot(&outward) > 0.0) {
                return Err(FabricateError::SelfIntersectingWall {
                    face: f,
                    a: face[k],
                    b: face[k1],
                });
            }
            walls.push(quad);
            for (v, w) in [(face[k], face[k1]), (face[k1], face[k])] {
                if offsets.vertex_edges[v].len() == 3 {
                    let nv = offsets.vertex_normals[v].expect("face vertex has a normal");
                    markers.push(edge_marker(
                        &mesh.vertices[v],
                        &mesh.vertices[w],
                        &nv,
                        offsets,
                        joint_proportion,
                        hole,
                    ));
                }
            }
        }
        panels.push(PanelBox {
            face_index: f,
            vertex_indices: face.clone(),
            top,
            walls,
            thickness,
            markers,
        });
    }
    Ok(panels)
}

/// Connector pyramid at a vertex where three edges meet.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub vertex: usize,
    pub apex: Point,
    /// Neighbouring vertices, ascending; `base[k]` lies on the edge to `neighbors[k]`.
    pub neighbors: [usize; 3],
    pub base: [Point; 3],
    pub volume: f64,
    pub thickness: f64,
    pub markers: Vec<FastenerMarker>,
}

impl Joint {
    /// Tetrahedron `base[0..3], apex` as a closed triangle mesh.
    pub fn to_poly_mesh(&self) -> PolyMesh {
        let vertices = vec![self.base[0], self.base[1], self.base[2], self.apex];
        // orient the base away from the apex
        let n = triangle_normal(&self.base[0], &self.base[1], &self.base[2]);
        let faces = if n.dot(&(self.apex - self.base[0])) < 0.0 {
            vec![vec![0, 1, 2], vec![0, 3, 1], vec![1, 3, 2], vec![2, 3, 0]]
        } else {
            vec![vec![0, 2, 1], vec![0, 1, 3], vec![1, 2, 3], vec![2, 0, 3]]
        };
        PolyMesh::new(vertices, faces)
    }
}

fn check_proportion(t: f64) -> Result<(), FabricateError> {
    if !(t > 0.0 && t <= 0.5) {
        return Err(FabricateError::InvalidParameters(format!(
            "joint proportion must lie in (0, 0.5], got {t}"
        )));
    }
    Ok(())
}

/// Joint at `vertex`: base points `v + t·(w_k − v)` on the three edges.
pub fn build_joint(
    mesh: &PolyMesh,
    offsets: &OffsetField,
    vertex: usize,
    t: f64,
    thickness: f64,
    hole: HoleSpec,
) -> Result<Joint, FabricateError> {
    check_proportion(t)?;
    let edges = &offsets.vertex_edges[vertex];
    if edges.len() != 3 {
        return Err(FabricateError::UnsupportedValence {
            vertex,
            valence: edges.len(),
        });
    }
    let mut neighbors = [0usize; 3];
    for (slot, &(a, b)) in neighbors.iter_mut().zip(edges) {
        *slot = if a == vertex { b } else { a };
    }
    neighbors.sort_unstable();
    let apex = mesh.vertices[vertex];
    let base = neighbors.map(|w| apex + (mesh.vertices[w] - apex) * t);
    let volume = Matrix3::from_columns(&[base[0] - apex, base[1] - apex, base[2] - apex])
        .determinant()
        .abs()
        / 6.0;
    if !(volume >= MIN_PYRAMID_VOLUME) {
        return Err(FabricateError::DegeneratePyramid { vertex, volume });
    }
    let nv = offsets.vertex_normals[vertex].expect("vertex with edges has a normal");
    let markers = neighbors
        .iter()
        .map(|&w| edge_marker(&apex, &mesh.vertices[w], &nv, offsets, t, hole))
        .collect();
    Ok(Joint {
        vertex,
        apex,
        neighbors,
        base,
        volume,
        thickness,
        markers,
    })
}

/// Why a vertex got no joint.
#[derive(Debug, Clone, PartialEq)]
pub enum JointSkip {
    Degenerate { volume: f64 },
    Valence(usize),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointSet {
    pub joints: Vec<Joint>,
    pub skipped: Vec<(usize, JointSkip)>,
}

/// Joints at every vertex; degenerate corners and vertices without exactly
/// three edges are recorded in `skipped` instead of failing.
pub fn build_joints(
    mesh: &PolyMesh,
    offsets: &OffsetField,
    t: f64,
    thickness: f64,
    hole: HoleSpec,
) -> Result<JointSet, FabricateError> {
    check_proportion(t)?;
    let mut set = JointSet::default();
    for v in 0..mesh.vertices.len() {
        match build_joint(mesh, offsets, v, t, thickness, hole) {
            Ok(j) => set.joints.push(j),
            Err(FabricateError::DegeneratePyramid { volume, .. }) => {
                set.skipped.push((v, JointSkip::Degenerate { volume }))
            }
            Err(FabricateError::UnsupportedValence { valence, .. }) => {
                set.skipped.push((v, JointSkip::Valence(valence)))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FabricationParams {
    pub wall_height: f64,
    pub thickness: f64,
    pub joint_proportion: f64,
    pub hole_diameter: f64,
}

impl Default for FabricationParams {
    fn default() -> Self {
        FabricationParams {
            wall_height: 0.1,
            thickness: 0.012,
            joint_proportion: 0.25,
            hole_diameter: 0.006,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FabricationModel {
    pub orientation: FaceOrientation,
    pub offsets: OffsetField,
    pub deviation: DeviationReport,
    pub panels: Vec<PanelBox>,
    pub joints: JointSet,
    pub positions: Vec<Point>,
}

pub fn fabricate(mesh: &PolyMesh, params: &FabricationParams) -> Result<FabricationModel, FabricateError> {
    if !(params.hole_diameter > 0.0) {
        return Err(FabricateError::InvalidParameters("hole diameter must be > 0".into()));
    }
    check_proportion(params.joint_proportion)?;
    let hole = HoleSpec {
        diameter: params.hole_diameter,
    };
    let orientation = face_normals(mesh)?;
    let offsets = averaged_offsets(mesh, &orientation, params.wall_height)?;
    let deviation = deviation_report(&offsets);
    let panels = build_panel_boxes(
        mesh,
        &orientation,
        &offsets,
        params.thickness,
        params.joint_proportion,
        hole,
    )?;
    let joints = build_joints(mesh, &offsets, params.joint_proportion, params.thickness, hole)?;
    Ok(FabricationModel {
        orientation,
        offsets,
        deviation,
        panels,
        joints,
        positions: mesh.vertices.clone(),
    })
}

#[derive(Serialize)]
struct FastenerRecord {
    kind: &'static str,
    id: usize,
    center: [f64; 3],
    axis: [f64; 3],
    diameter: f64,
}

impl FabricationModel {
    pub fn fasteners_json(&self) -> String {
        let record = |kind, id, m: &FastenerMarker| FastenerRecord {
            kind,
            id,
            center: [m.center.x, m.center.y, m.center.z],
            axis: [m.axis.x, m.axis.y, m.axis.z],
            diameter: m.diameter,
        };
        let mut records = Vec::new();
        for p in &self.panels {
            records.extend(p.markers.iter().map(|m| record("panel", p.face_index, m)));
        }
        for j in &self.joints.joints {
            records.extend(j.markers.iter().map(|m| record("joint", j.vertex, m)));
        }
        let mut text = serde_json::to_string_pretty(&records).expect("markers serialize");
        text.push('\n');
        text
    }

    /// Writes panel and joint meshes, `deviation_report.csv` and
    /// `fasteners.json` into `dir`; returns the written paths in order.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, FabricateError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| MeshIoError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = Vec::new();
        for p in &self.panels {
            let path = dir.join(format!("panel_{:04}.obj", p.face_index));
            crate::mesh::export_mesh(&p.to_poly_mesh(), &path)?;
            written.push(path);
        }
        for j in &self.joints.joints {
            let path = dir.join(format!("joint_v{:04}.obj", j.vertex));
            crate::mesh::export_mesh(&j.to_poly_mesh(), &path)?;
            written.push(path);
        }
        let csv = dir.join("deviation_report.csv");
        fs::write(&csv, self.deviation.to_csv(&self.positions)).map_err(io(&csv))?;
        written.push(csv);
        let json = dir.join("fasteners.json");
        fs::write(&json, self.fasteners_json()).map_err(io(&json))?;
        written.push(json);
        Ok(written)
    }
}
