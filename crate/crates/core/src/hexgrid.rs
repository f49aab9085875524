//! Triangular lattice and hexagonal face extraction.
//!
//! A base triangle `ABC` is subdivided into `n` segments per edge. Lattice node
//! `(u, v)` with `u, v >= 0` and `u + v <= n` sits at
//! `A + (u/n)(B - A) + (v/n)(C - A)`.
//!
//! A hexagon is the ring of the six lattice neighbours around a centre node.
//! Centres are visited row by row with a stride of 3. Rows with `u % 3 == 0`
//! carry no centres, and every other row starts at `v = u % 3`, so accepted
//! centres satisfy `u ≡ v ≡ n - u - v ≢ 0 (mod 3)`. The resulting cells form a
//! honeycomb. Each cell shares an edge with at most three others, and the
//! lattice positions skipped on rows `u % 3 == 0` become hexagonal openings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::mesh::{edge_key, LatticeInfo, MeshSidecar, PolyMesh};
use crate::{Point, Vector};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("NOT a factor of 3: rows={rows}, cols={cols}")]
    NotFactorOfThree { rows: usize, cols: usize },
    #[error("degenerate base triangle (area {area:e} m²)")]
    DegenerateTriangle { area: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Barycentric lattice index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticeCoord {
    pub u: i64,
    pub v: i64,
}

impl LatticeCoord {
    pub const fn new(u: i64, v: i64) -> Self {
        LatticeCoord { u, v }
    }

    /// Hop distance on the triangular lattice.
    pub fn lattice_distance(self, other: LatticeCoord) -> i64 {
        let du = other.u - self.u;
        let dv = other.v - self.v;
        du.abs().max(dv.abs()).max((du + dv).abs())
    }
}

impl fmt::Display for LatticeCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.u, self.v)
    }
}

/// Unit steps of the triangular lattice, in the cyclic order used by
/// [`hex_neighbors`].
pub const LATTICE_DIRECTIONS: [(i64, i64); 6] = [(0, -1), (1, -1), (1, 0), (0, 1), (-1, 1), (-1, 0)];

/// The six lattice nodes around `(u, v)`, in cyclic order.
pub fn hex_neighbors(u: i64, v: i64) -> [(i64, i64); 6] {
    LATTICE_DIRECTIONS.map(|(du, dv)| (u + du, v + dv))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeNode {
    pub coord: LatticeCoord,
    pub position: Point,
}

/// Subdivided equilateral triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct TriGrid {
    corners: [Point; 3],
    rows: usize,
    cols: usize,
    nodes: Vec<LatticeNode>,
}

pub fn subdivide_triangle(a: Point, b: Point, c: Point, n: usize) -> Result<TriGrid, GridError> {
    TriGrid::new([a, b, c], n, n)
}

impl TriGrid {
    /// Builds the lattice. `rows` and `cols` must both be multiples of 3; only
    /// `rows == cols` is supported for construction of the hexagon mesh.
    pub fn new(corners: [Point; 3], rows: usize, cols: usize) -> Result<Self, GridError> {
        if !rows.is_multiple_of(3) || !cols.is_multiple_of(3) || rows == 0 || cols == 0 {
            return Err(GridError::NotFactorOfThree { rows, cols });
        }
        if rows != cols {
            return Err(GridError::InvalidGrid(format!(
                "only equilateral subdivisions are supported (rows={rows}, cols={cols})"
            )));
        }
        let [a, b, c] = corners;
        let area = 0.5 * (b - a).cross(&(c - a)).norm();
        if !(area >= 1e-12) {
            return Err(GridError::DegenerateTriangle { area });
        }
        let n = rows;
        let nf = n as f64;
        let mut nodes = Vec::with_capacity((n + 1) * (n + 2) / 2);
        for u in 0..=n {
            for v in 0..=(n - u) {
                let position = a + (b - a) * (u as f64 / nf) + (c - a) * (v as f64 / nf);
                nodes.push(LatticeNode {
                    coord: LatticeCoord::new(u as i64, v as i64),
                    position,
                });
            }
        }
        Ok(TriGrid {
            corners,
            rows,
            cols,
            nodes,
        })
    }

    /// Equilateral triangle with `A` at the origin, `B` on +x, in the z = 0 plane.
    pub fn equilateral(side: f64, n: usize) -> Result<Self, GridError> {
        let a = Point::origin();
        let b = Point::new(side, 0.0, 0.0);
        let c = Point::new(0.5 * side, 0.5 * 3f64.sqrt() * side, 0.0);
        subdivide_triangle(a, b, c, n)
    }

    pub fn subdivision(&self) -> usize {
        self.rows
    }

    pub fn corners(&self) -> [Point; 3] {
        self.corners
    }

    pub fn nodes(&self) -> &[LatticeNode] {
        &self.nodes
    }

    pub fn contains(&self, c: LatticeCoord) -> bool {
        c.u >= 0 && c.v >= 0 && c.u + c.v <= self.rows as i64
    }

    /// Row-major linear index of `(u, v)`.
    pub fn node_index(&self, c: LatticeCoord) -> Option<usize> {
        if !self.contains(c) {
            return None;
        }
        let n = self.rows as i64;
        let (u, v) = (c.u, c.v);
        // rows 0..u hold (n+1) + n + ... + (n-u+2) nodes
        let before = u * (n + 1) - u * (u - 1) / 2;
        Some((before + v) as usize)
    }

    pub fn position(&self, c: LatticeCoord) -> Option<Point> {
        self.node_index(c).map(|i| self.nodes[i].position)
    }

    pub fn is_boundary(&self, c: LatticeCoord) -> bool {
        c.u == 0 || c.v == 0 || c.u + c.v == self.rows as i64
    }

    pub fn edge_length(&self) -> f64 {
        (self.corners[1] - self.corners[0]).norm() / self.rows as f64
    }

    /// Checks the lattice invariants: node set, planarity, uniform spacing.
    pub fn check(&self) -> Result<(), GridError> {
        let n = self.rows;
        if !n.is_multiple_of(3) || !self.cols.is_multiple_of(3) {
            return Err(GridError::NotFactorOfThree {
                rows: self.rows,
                cols: self.cols,
            });
        }
        if self.nodes.len() != (n + 1) * (n + 2) / 2 {
            return Err(GridError::InvalidGrid(format!(
                "expected {} nodes, found {}",
                (n + 1) * (n + 2) / 2,
                self.nodes.len()
            )));
        }
        let [a, b, c] = self.corners;
        let normal = (b - a).cross(&(c - a));
        if normal.norm() < 2e-12 {
            return Err(GridError::DegenerateTriangle {
                area: 0.5 * normal.norm(),
            });
        }
        let normal = normal.normalize();
        let side = (b - a).norm();
        let spacing = self.edge_length();
        for (i, node) in self.nodes.iter().enumerate() {
            if self.node_index(node.coord) != Some(i) {
                return Err(GridError::InvalidGrid(format!(
                    "node {i} at {} is out of order",
                    node.coord
                )));
            }
            if (node.position - a).dot(&normal).abs() > 1e-12 * side {
                return Err(GridError::InvalidGrid(format!(
                    "node {} leaves the base plane",
                    node.coord
                )));
            }
            for &(du, dv) in &LATTICE_DIRECTIONS[..3] {
                let nb = LatticeCoord::new(node.coord.u + du, node.coord.v + dv);
                if let Some(p) = self.position(nb) {
                    let len = (p - node.position).norm();
                    if (len - spacing).abs() > 1e-9 * spacing {
                        return Err(GridError::InvalidGrid(format!(
                            "edge {}–{} has length {len}, expected {spacing}",
                            node.coord, nb
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Stride rule for cell centres: `u % 3 != 0` and `v ≡ u (mod 3)`.
pub fn is_cell_center(u: i64, v: i64) -> bool {
    u.rem_euclid(3) != 0 && (v - u).rem_euclid(3) == 0
}

/// Undirected face-adjacency graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaceGraph {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl FaceGraph {
    pub fn new(node_count: usize) -> Self {
        FaceGraph {
            node_count,
            edges: BTreeSet::new(),
        }
    }

    pub fn add_edge(&mut self, f: usize, g: usize) {
        if f != g {
            self.edges.insert(edge_key(f, g));
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn contains_edge(&self, f: usize, g: usize) -> bool {
        self.edges.contains(&edge_key(f, g))
    }

    pub fn neighbors(&self, f: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == f {
                    Some(b)
                } else if b == f {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(a, b) in &self.edges {
            if a < deg.len() {
                deg[a] += 1;
            }
            if b < deg.len() {
                deg[b] += 1;
            }
        }
        deg
    }
}

/// Hexagonal faces over a triangular lattice plus their adjacency graph.
#[derive(Debug, Clone, PartialEq)]
pub struct HexMesh {
    pub face_map: BTreeMap<usize, Vec<usize>>,
    pub adjacency: FaceGraph,
    pub vertex_positions: Vec<Point>,
    /// `(u, v)` per vertex when the mesh came from a lattice.
    pub lattice: Option<Vec<LatticeCoord>>,
    pub subdivision: Option<usize>,
    pub corners: Option<[Point; 3]>,
}

/// Loop counters recorded while building the mesh.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub outer_iterations: usize,
    pub loop_body_executions: usize,
}

pub fn build_hex_mesh(grid: &TriGrid) -> Result<HexMesh, GridError> {
    build_hex_mesh_counted(grid).map(|(m, _)| m)
}

/// Same as [`build_hex_mesh`], also returning loop counters.
pub fn build_hex_mesh_counted(grid: &TriGrid) -> Result<(HexMesh, BuildStats), GridError> {
    grid.check()?;
    let rows = grid.rows as i64;
    let mut cols = grid.cols as i64;
    let mut stats = BuildStats::default();

    let mut rings: Vec<[LatticeCoord; 6]> = Vec::new();
    let mut edge_owner: HashMap<(LatticeCoord, LatticeCoord), usize> = HashMap::new();
    let mut graph_edges: Vec<(usize, usize)> = Vec::new();

    for u in 1..rows {
        stats.outer_iterations += 1;
        // each upper row has one cell less
        cols -= 1;
        if u % 3 == 0 {
            continue;
        }
        let v_start = u % 3;
        let mut v = v_start;
        while v < cols {
            stats.loop_body_executions += 1;
            let face = rings.len();
            let ring = hex_neighbors(u, v).map(|(a, b)| LatticeCoord::new(a, b));
            for k in 0..6 {
                let (p, q) = (ring[k], ring[(k + 1) % 6]);
                let key = if p < q { (p, q) } else { (q, p) };
                if let Some(&other) = edge_owner.get(&key) {
                    graph_edges.push((other, face));
                } else {
                    edge_owner.insert(key, face);
                }
            }
            rings.push(ring);
            v += 3;
        }
    }

    // compact vertex numbering: row-major over referenced lattice nodes
    let used: BTreeSet<LatticeCoord> = rings.iter().flatten().copied().collect();
    let index: HashMap<LatticeCoord, usize> = used.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut vertex_positions = Vec::with_capacity(used.len());
    for &c in &used {
        let p = grid
            .position(c)
            .ok_or_else(|| GridError::InvalidGrid(format!("ring node {c} outside the lattice")))?;
        vertex_positions.push(p);
    }
    let face_map = rings
        .iter()
        .enumerate()
        .map(|(f, ring)| (f, ring.iter().map(|c| index[c]).collect()))
        .collect();
    let mut adjacency = FaceGraph::new(rings.len());
    for (f, g) in graph_edges {
        adjacency.add_edge(f, g);
    }
    let mesh = HexMesh {
        face_map,
        adjacency,
        vertex_positions,
        lattice: Some(used.into_iter().collect()),
        subdivision: Some(grid.subdivision()),
        corners: Some(grid.corners()),
    };
    Ok((mesh, stats))
}

impl HexMesh {
    pub fn face_count(&self) -> usize {
        self.face_map.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_positions.len()
    }

    pub fn to_poly_mesh(&self) -> PolyMesh {
        PolyMesh::new(self.vertex_positions.clone(), self.face_map.values().cloned().collect())
    }

    /// Same topology and lattice data with new vertex positions.
    pub fn with_positions(&self, positions: Vec<Point>) -> HexMesh {
        assert_eq!(positions.len(), self.vertex_positions.len());
        HexMesh {
            vertex_positions: positions,
            ..self.clone()
        }
    }

    /// Rebuilds a mesh from its text form and optional sidecar. Without a
    /// sidecar the adjacency is recomputed from shared edges.
    pub fn from_parts(poly: PolyMesh, sidecar: Option<&MeshSidecar>) -> Result<HexMesh, GridError> {
        let face_count = poly.faces.len();
        let face_map: BTreeMap<usize, Vec<usize>> = poly.faces.iter().cloned().enumerate().collect();
        let mut adjacency = FaceGraph::new(face_count);
        let (mut lattice, mut subdivision, mut corners) = (None, None, None);
        match sidecar {
            Some(sc) => {
                if sc.nodes.len() != face_count {
                    return Err(GridError::InvalidGrid(format!(
                        "sidecar lists {} nodes for {face_count} faces",
                        sc.nodes.len()
                    )));
                }
                for &[f, g] in &sc.edges {
                    if f >= face_count || g >= face_count {
                        return Err(GridError::InvalidGrid(format!("sidecar edge ({f}, {g}) out of range")));
                    }
                    adjacency.add_edge(f, g);
                }
                if let Some(info) = &sc.lattice {
                    if info.uv.len() != poly.vertices.len() {
                        return Err(GridError::InvalidGrid(format!(
                            "sidecar has {} lattice coordinates for {} vertices",
                            info.uv.len(),
                            poly.vertices.len()
                        )));
                    }
                    lattice = Some(info.uv.iter().map(|&[u, v]| LatticeCoord::new(u, v)).collect());
                    subdivision = Some(info.subdivision);
                    corners = Some(info.corners.map(|c| Point::new(c[0], c[1], c[2])));
                }
            }
            None => {
                for (f, g) in poly.shared_edge_pairs() {
                    adjacency.add_edge(f, g);
                }
            }
        }
        Ok(HexMesh {
            face_map,
            adjacency,
            vertex_positions: poly.vertices,
            lattice,
            subdivision,
            corners,
        })
    }

    pub fn sidecar(&self) -> MeshSidecar {
        let lattice = match (&self.lattice, self.subdivision, self.corners) {
            (Some(uv), Some(subdivision), Some(corners)) => Some(LatticeInfo {
                subdivision,
                corners: corners.map(|c| [c.x, c.y, c.z]),
                uv: uv.iter().map(|c| [c.u, c.v]).collect(),
            }),
            _ => None,
        };
        MeshSidecar {
            nodes: self.face_map.keys().copied().collect(),
            edges: self.adjacency.edges().map(|(f, g)| [f, g]).collect(),
            lattice,
        }
    }

    /// True when a face touches the triangle boundary (needs lattice data).
    pub fn face_on_boundary(&self, face: usize) -> Option<bool> {
        let uv = self.lattice.as_ref()?;
        let n = self.subdivision? as i64;
        let verts = self.face_map.get(&face)?;
        Some(verts.iter().any(|&i| {
            uv.get(i)
                .map(|c| c.u == 0 || c.v == 0 || c.u + c.v == n)
                .unwrap_or(false)
        }))
    }

    /// Vertices lying on the edges of the base triangle.
    pub fn boundary_vertices(&self) -> Option<Vec<usize>> {
        let uv = self.lattice.as_ref()?;
        let n = self.subdivision? as i64;
        Some(
            uv.iter()
                .enumerate()
                .filter(|(_, c)| c.u == 0 || c.v == 0 || c.u + c.v == n)
                .map(|(i, _)| i)
                .collect(),
        )
    }

    /// For each triangle corner, every vertex at minimum lattice distance from
    /// it. Ties are all kept so mirror-symmetric meshes get symmetric sets.
    pub fn corner_vertices(&self) -> Option<Vec<usize>> {
        let uv = self.lattice.as_ref()?;
        let n = self.subdivision? as i64;
        let corners = [
            LatticeCoord::new(0, 0),
            LatticeCoord::new(n, 0),
            LatticeCoord::new(0, n),
        ];
        let mut out = BTreeSet::new();
        for corner in corners {
            let best = uv.iter().map(|c| c.lattice_distance(corner)).min()?;
            out.extend(
                uv.iter()
                    .enumerate()
                    .filter(|(_, c)| c.lattice_distance(corner) == best)
                    .map(|(i, _)| i),
            );
        }
        Some(out.into_iter().collect())
    }

    /// Plane normal of the base triangle, when known.
    pub fn base_normal(&self) -> Option<Vector> {
        let [a, b, c] = self.corners?;
        let n = (b - a).cross(&(c - a));
        (n.norm() > 0.0).then(|| n.normalize())
    }
}

/// What a validation violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subject {
    Mesh,
    Face(usize),
    Vertex(usize),
    FacePair(usize, usize),
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Mesh => write!(f, "mesh"),
            Subject::Face(i) => write!(f, "face {i}"),
            Subject::Vertex(i) => write!(f, "vertex {i}"),
            Subject::FacePair(a, b) => write!(f, "faces ({a}, {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub subject: Subject,
    pub invariant: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} ({})", self.subject, self.invariant, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, subject: Subject, invariant: &'static str, detail: String) {
        self.violations.push(Violation {
            subject,
            invariant,
            detail,
        });
    }
}

pub const NON_CONTIGUOUS: &str = "non-contiguous face indices";
pub const FACE_ARITY: &str = "face must have exactly 6 vertices";
pub const FACE_INDEX_RANGE: &str = "vertex index out of range";
pub const FACE_DISTINCT: &str = "face vertices must be distinct";
pub const FACE_LATTICE_EDGE: &str = "consecutive face vertices must be lattice neighbours";
pub const ADJ_MISSING: &str = "faces share an edge but are not adjacent";
pub const ADJ_SPURIOUS: &str = "adjacent faces share no edge";
pub const ADJ_DEGREE: &str = "face degree exceeds 3";
pub const ADJ_INTERIOR_DEGREE: &str = "interior face must have degree 3";
pub const LATTICE_LENGTH: &str = "lattice coordinates must match vertex count";

/// Checks every [`HexMesh`] invariant and lists the violations.
///
/// Faces with the wrong vertex count are reported once and left out of the
/// remaining checks.
pub fn validate_hex_mesh(mesh: &HexMesh) -> ValidationReport {
    let mut report = ValidationReport::default();
    let nv = mesh.vertex_positions.len();

    for (pos, &key) in mesh.face_map.keys().enumerate() {
        if pos != key {
            report.push(
                Subject::Face(key),
                NON_CONTIGUOUS,
                format!("face key {key} found at position {pos}"),
            );
            break;
        }
    }
    let lattice = mesh.lattice.as_ref().filter(|uv| uv.len() == nv);
    if mesh.lattice.is_some() && lattice.is_none() {
        report.push(Subject::Mesh, LATTICE_LENGTH, format!("{nv} vertices"));
    }

    let mut well_formed: BTreeMap<usize, &Vec<usize>> = BTreeMap::new();
    for (&f, verts) in &mesh.face_map {
        if verts.len() != 6 {
            report.push(Subject::Face(f), FACE_ARITY, format!("{} vertices", verts.len()));
            continue;
        }
        if let Some(&bad) = verts.iter().find(|&&i| i >= nv) {
            report.push(Subject::Face(f), FACE_INDEX_RANGE, format!("index {bad} >= {nv}"));
            continue;
        }
        let distinct: BTreeSet<_> = verts.iter().collect();
        if distinct.len() != 6 {
            report.push(Subject::Face(f), FACE_DISTINCT, format!("{verts:?}"));
            continue;
        }
        if let Some(uv) = lattice {
            for k in 0..6 {
                let (a, b) = (verts[k], verts[(k + 1) % 6]);
                if uv[a].lattice_distance(uv[b]) != 1 {
                    report.push(
                        Subject::Face(f),
                        FACE_LATTICE_EDGE,
                        format!("{} and {} are not neighbours", uv[a], uv[b]),
                    );
                }
            }
        }
        well_formed.insert(f, verts);
    }

    // shared-edge scan over well-formed faces
    let mut owners: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (&f, verts) in &well_formed {
        for k in 0..6 {
            owners
                .entry(edge_key(verts[k], verts[(k + 1) % 6]))
                .or_default()
                .push(f);
        }
    }
    let mut expected = BTreeSet::new();
    for faces in owners.values() {
        for (x, &f) in faces.iter().enumerate() {
            for &g in &faces[x + 1..] {
                expected.insert(edge_key(f, g));
            }
        }
    }
    for &(f, g) in &expected {
        if !mesh.adjacency.contains_edge(f, g) {
            report.push(Subject::FacePair(f, g), ADJ_MISSING, "missing graph edge".into());
        }
    }
    for (f, g) in mesh.adjacency.edges() {
        if !expected.contains(&(f, g)) && well_formed.contains_key(&f) && well_formed.contains_key(&g) {
            report.push(Subject::FacePair(f, g), ADJ_SPURIOUS, "spurious graph edge".into());
        }
    }

    let mut degree: BTreeMap<usize, usize> = mesh.face_map.keys().map(|&f| (f, 0)).collect();
    for (f, g) in mesh.adjacency.edges() {
        *degree.entry(f).or_default() += 1;
        *degree.entry(g).or_default() += 1;
    }
    for (&f, &d) in &degree {
        if !well_formed.contains_key(&f) {
            continue;
        }
        if d > 3 {
            report.push(Subject::Face(f), ADJ_DEGREE, format!("degree {d}"));
        } else if d != 3 && mesh.face_on_boundary(f) == Some(false) {
            report.push(Subject::Face(f), ADJ_INTERIOR_DEGREE, format!("degree {d}"));
        }
    }
    report
}
