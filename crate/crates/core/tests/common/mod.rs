//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use hexpanel::hexgrid::HexMesh;
use hexpanel::{Point, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub type Coord = (i64, i64);
/// Face as its sorted lattice coordinates.
pub type FaceKey = Vec<Coord>;

const RING: [Coord; 6] = [(0, -1), (1, -1), (1, 0), (0, 1), (-1, 1), (-1, 0)];

/// Hexagons of the honeycomb on a triangle of subdivision `n`, by scanning
/// every lattice node: a node is a cell center when its three barycentric
/// indices share one non-zero residue mod 3 and its whole ring is inside.
pub fn oracle_faces(n: i64) -> BTreeSet<FaceKey> {
    let inside = |(u, v): Coord| u >= 0 && v >= 0 && u + v <= n;
    let mut faces = BTreeSet::new();
    for u in 0..=n {
        for v in 0..=n - u {
            let w = n - u - v;
            let r = u.rem_euclid(3);
            if r == 0 || v.rem_euclid(3) != r || w.rem_euclid(3) != r {
                continue;
            }
            let ring: Vec<Coord> = RING.iter().map(|(du, dv)| (u + du, v + dv)).collect();
            if ring.iter().all(|&c| inside(c)) {
                let mut key = ring;
                key.sort_unstable();
                faces.insert(key);
            }
        }
    }
    faces
}

fn lattice_adjacent(a: Coord, b: Coord) -> bool {
    let (du, dv) = (a.0 - b.0, a.1 - b.1);
    RING.contains(&(du, dv))
}

/// Face pairs sharing at least one lattice edge, by pairwise scan.
pub fn oracle_adjacency(faces: &BTreeSet<FaceKey>) -> BTreeSet<(FaceKey, FaceKey)> {
    let list: Vec<&FaceKey> = faces.iter().collect();
    let mut out = BTreeSet::new();
    for i in 0..list.len() {
        for j in i + 1..list.len() {
            let shared: Vec<Coord> = list[i].iter().filter(|c| list[j].contains(c)).copied().collect();
            let has_edge = shared
                .iter()
                .enumerate()
                .any(|(k, &a)| shared[k + 1..].iter().any(|&b| lattice_adjacent(a, b)));
            if has_edge {
                out.insert((list[i].clone(), list[j].clone()));
            }
        }
    }
    out
}

/// Faces and adjacency of a built mesh, in oracle form.
pub fn mesh_as_keys(mesh: &HexMesh) -> (BTreeSet<FaceKey>, BTreeSet<(FaceKey, FaceKey)>) {
    let uv = mesh.lattice.as_ref().expect("lattice coordinates");
    let key = |f: usize| {
        let mut k: FaceKey = mesh.face_map[&f].iter().map(|&i| (uv[i].u, uv[i].v)).collect();
        k.sort_unstable();
        k
    };
    let faces = mesh.face_map.keys().map(|&f| key(f)).collect();
    let adjacency = mesh
        .adjacency
        .edges()
        .map(|(f, g)| {
            let (a, b) = (key(f), key(g));
            if a < b {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect();
    (faces, adjacency)
}

pub fn unit_from_angles(theta: f64, phi: f64) -> Vector {
    Vector::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Hooke-Jeeves pattern search: coordinate exploration plus pattern moves
/// along the last successful displacement, with a shrinking step.
pub fn pattern_search(x: Vec<f64>, mut step: f64, min_step: f64, f: impl Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    let explore = |base: &[f64], fbase: f64, step: f64| {
        let mut y = base.to_vec();
        let mut fy = fbase;
        for k in 0..y.len() {
            for sign in [1.0, -1.0] {
                let mut z = y.clone();
                z[k] += sign * step;
                let fz = f(&z);
                if fz < fy {
                    y = z;
                    fy = fz;
                    break;
                }
            }
        }
        (y, fy)
    };
    let mut base = x;
    let mut fbase = f(&base);
    while step > min_step {
        let (mut y, mut fy) = explore(&base, fbase, step);
        if fy >= fbase {
            step *= 0.5;
            continue;
        }
        // pattern moves while they keep paying off
        loop {
            let pattern: Vec<f64> = y.iter().zip(&base).map(|(a, b)| 2.0 * a - b).collect();
            base = y;
            fbase = fy;
            let fp = f(&pattern);
            let (z, fz) = explore(&pattern, fp, step);
            if fz < fbase {
                y = z;
                fy = fz;
            } else {
                break;
            }
        }
    }
    (base, fbase)
}

fn centroid(points: &[Point]) -> Vector {
    points.iter().map(|p| p.coords).sum::<Vector>() / points.len() as f64
}

/// Least-squares plane by brute-force search over normal directions.
/// Returns (unit normal, offset, sum of squared distances).
pub fn ls_plane_oracle(points: &[Point]) -> (Vector, f64, f64) {
    let c = centroid(points);
    let sse = |n: Vector| points.iter().map(|p| n.dot(&(p.coords - c)).powi(2)).sum::<f64>();
    let (mut best, mut arg) = (f64::INFINITY, (0.0, 0.0));
    let steps = 180;
    for i in 0..=steps {
        let theta = std::f64::consts::PI * i as f64 / steps as f64;
        for j in 0..2 * steps {
            let phi = std::f64::consts::PI * j as f64 / steps as f64;
            let s = sse(unit_from_angles(theta, phi));
            if s < best {
                best = s;
                arg = (theta, phi);
            }
        }
    }
    let (x, s) = pattern_search(vec![arg.0, arg.1], 0.02, 1e-13, |x| sse(unit_from_angles(x[0], x[1])));
    let n = unit_from_angles(x[0], x[1]);
    (n, -n.dot(&c), s)
}

/// Max distance of `points` to their least-squares plane, via the oracle.
pub fn planarity_oracle(points: &[Point]) -> f64 {
    let (n, d, _) = ls_plane_oracle(points);
    points.iter().map(|p| (n.dot(&p.coords) + d).abs()).fold(0.0, f64::max)
}

/// Orthonormal pair spanning the plane orthogonal to `d`.
fn complement(d: &Vector) -> (Vector, Vector) {
    let e1 = d
        .cross(&Vector::x())
        .try_normalize(1e-3)
        .unwrap_or_else(|| d.cross(&Vector::y()).normalize());
    (e1, d.cross(&e1))
}

/// Constrained minimum for two faces hinged on a shared edge, charted as
/// the hinge line (point and direction) plus each face's rotation about it.
/// Shared vertices project onto the line, the rest onto their own plane, so
/// the chart stays well conditioned when the faces are nearly coplanar.
pub fn hinged_pair_oracle(points: &[Point], faces: [&[usize]; 2]) -> f64 {
    let shared: Vec<usize> = faces[0].iter().copied().filter(|i| faces[1].contains(i)).collect();
    assert_eq!(shared.len(), 2, "faces must share one edge");
    let (a, b) = (points[shared[0]], points[shared[1]]);
    let d0 = (b - a).normalize();
    let (e1, e2) = complement(&d0);
    let mid = nalgebra::center(&a, &b);
    let start_angle = |face: &[usize]| {
        let pts: Vec<Point> = face.iter().map(|&i| points[i]).collect();
        let (n, _, _) = ls_plane_oracle(&pts);
        n.dot(&e2).atan2(n.dot(&e1))
    };
    let x0 = vec![0.0, 0.0, 0.0, 0.0, start_angle(faces[0]), start_angle(faces[1])];
    let objective = |x: &[f64]| {
        let origin = mid + e1 * x[0] + e2 * x[1];
        let dir = (d0 + e1 * x[2] + e2 * x[3]).normalize();
        let (m1, m2) = complement(&dir);
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let on: Vec<usize> = (0..2).filter(|&k| faces[k].contains(&i)).collect();
            let r = p - origin;
            total += match on.as_slice() {
                [] => 0.0,
                [k] => {
                    let n = m1 * x[4 + k].cos() + m2 * x[4 + k].sin();
                    n.dot(&r).powi(2)
                }
                _ => (r - dir * dir.dot(&r)).norm_squared(),
            };
        }
        total
    };
    let dim = x0.len();
    let mut r = rng(0x41);
    let (mut x, mut best) = pattern_search(x0, 0.01, 1e-14, objective);
    let mut idle = 0;
    while idle < 6 {
        let m = nalgebra::DMatrix::from_fn(dim, dim, |_, _| r.random_range(-1.0..1.0));
        let frame = m.qr().q();
        let origin = nalgebra::DVector::from_column_slice(&x);
        let at = |y: &[f64]| origin.clone() + &frame * nalgebra::DVector::from_column_slice(y);
        let (y, fy) = pattern_search(vec![0.0; dim], 0.01, 1e-14, |y| objective(at(y).as_slice()));
        if fy < best * (1.0 - 1e-14) {
            x = at(&y).as_slice().to_vec();
            best = fy;
            idle = 0;
        } else {
            idle += 1;
        }
    }
    best
}

/// Regular hexagon in the z = 0 plane, counter-clockwise.
pub fn regular_hexagon(center: Point, radius: f64) -> Vec<Point> {
    (0..6)
        .map(|k| {
            let a = k as f64 * std::f64::consts::FRAC_PI_3;
            center + Vector::new(radius * a.cos(), radius * a.sin(), 0.0)
        })
        .collect()
}

/// Rotation matrix from axis-angle.
pub fn rotation(axis: Vector, angle: f64) -> nalgebra::Rotation3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
}

pub fn default_config_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("config/default.json")
}

/// Planarized form-found mesh from the shipped configuration.
pub fn default_pavilion() -> hexpanel::mesh::PolyMesh {
    use hexpanel::pipeline::{grid_stage, planarize_stage, simulate_stage};
    let cfg = hexpanel::config::load_config(&default_config_path()).expect("shipped config");
    let grid = grid_stage(&cfg.grid).expect("grid");
    let sim = simulate_stage(&grid, &cfg.physics).expect("simulate");
    let plan = planarize_stage(&sim.mesh, &cfg.planarize).expect("planarize");
    plan.mesh.to_poly_mesh()
}
