//! Minimal-displacement planarization of polygon faces.
//!
//! Given control points `P` and faces, find `Q` close to `P` such that every
//! face of `Q` lies on a plane `n_j · q + d_j = 0`. The hard constraints are
//! approached with a penalty
//!
//! ```text
//! E(Q, planes) = w_plan Σ_{(i,j) ∈ C} (n_j · q_i + d_j)² + w_close Σ_i |q_i − p_i|²
//! ```
//!
//! minimized by alternating two exact block solves:
//!
//! * local: each face plane is the principal-component fit of its vertices;
//! * global: with planes fixed, each vertex solves a 3×3 SPD system.
//!
//! `w_plan` grows by a constant factor whenever the alternation stalls. Once
//! the penalty iterate is within tolerance, vertices are projected onto the
//! intersection of their face planes (the `w_plan → ∞` global step), which
//! satisfies the constraints to machine precision. A final Levenberg-Marquardt
//! pass over the plane parameters alone then minimizes the displacement under
//! the exact constraints.

use nalgebra::{Matrix3, OMatrix, SymmetricEigen, U3};
use thiserror::Error;

use crate::{Point, Vector};

#[derive(Debug, Error, PartialEq)]
pub enum PlanarizeError {
    #[error("face {face} is degenerate (points are collinear or coincident)")]
    DegenerateFace { face: usize },
    #[error("planarization did not converge (max planarity error {max_planarity_error:e} m)")]
    NoConvergence {
        max_planarity_error: f64,
        iterations: usize,
    },
    #[error("point sets differ in length ({p} vs {q})")]
    LengthMismatch { p: usize, q: usize },
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("face {face} references vertex {vertex} outside the point set")]
    BadFace { face: usize, vertex: usize },
}

/// Plane `normal · x + offset = 0` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector,
    pub offset: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: &Point) -> f64 {
        self.normal.dot(&p.coords) + self.offset
    }
}

/// Below this principal spread (m) a direction counts as collapsed.
const SPREAD_EPS: f64 = 1e-12;
/// Relative gap under which the two smallest principal values count as tied.
const TIE_EPS: f64 = 1e-12;
const POLISH_ROUNDS: usize = 200;

fn canonical_sign(n: Vector) -> Vector {
    for k in 0..3 {
        if n[k].abs() > 1e-12 {
            return if n[k] < 0.0 { -n } else { n };
        }
    }
    n
}

/// Least-squares plane through `points` (orthogonal distances).
///
/// The normal is the smallest principal direction of the centred scatter; it
/// is signed so that its first non-zero component is positive.
pub fn fit_plane(points: &[Point]) -> Result<Plane, PlanarizeError> {
    fit_plane_inner(points).ok_or(PlanarizeError::DegenerateFace { face: 0 })
}

fn fit_plane_inner(points: &[Point]) -> Option<Plane> {
    if points.len() < 3 {
        return None;
    }
    let inv = 1.0 / points.len() as f64;
    let centroid = points.iter().fold(Vector::zeros(), |acc, p| acc + p.coords) * inv;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let r = p.coords - centroid;
        scatter += r * r.transpose();
    }
    scatter *= inv;
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l0, l1, l2) = (
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    );
    if l1.sqrt() < SPREAD_EPS {
        return None;
    }
    let mut normal: Vector = eig.eigenvectors.column(order[0]).into_owned();
    if l1 - l0 <= TIE_EPS * l2.max(f64::MIN_POSITIVE) {
        // tied smallest values: pick the first coordinate axis with a
        // component inside the tied eigenspace
        let basis = [
            eig.eigenvectors.column(order[0]).into_owned(),
            eig.eigenvectors.column(order[1]).into_owned(),
        ];
        for axis in [Vector::x(), Vector::y(), Vector::z()] {
            let proj: Vector = basis.iter().map(|b| b * b.dot(&axis)).sum();
            if proj.norm() > 1e-6 {
                normal = proj;
                break;
            }
        }
    }
    let normal = canonical_sign(normal.normalize());
    Some(Plane {
        normal,
        offset: -normal.dot(&centroid),
    })
}

fn face_points(face: &[usize], positions: &[Point]) -> Vec<Point> {
    face.iter().map(|&i| positions[i]).collect()
}

/// Largest distance from a face vertex to the face's best-fit plane.
pub fn planarity_error(face: &[usize], positions: &[Point]) -> Result<f64, PlanarizeError> {
    let pts = face_points(face, positions);
    let plane = fit_plane(&pts)?;
    Ok(max_distance(&pts, &plane))
}

fn max_distance(pts: &[Point], plane: &Plane) -> f64 {
    pts.iter().map(|p| plane.signed_distance(p).abs()).fold(0.0, f64::max)
}

/// `Σ |p_i − q_i|²`.
pub fn displacement_objective(p: &[Point], q: &[Point]) -> Result<f64, PlanarizeError> {
    if p.len() != q.len() {
        return Err(PlanarizeError::LengthMismatch { p: p.len(), q: q.len() });
    }
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).norm_squared()).sum())
}

/// Penalized objective `E(Q, planes)`.
pub fn penalized_objective(
    p: &[Point],
    q: &[Point],
    faces: &[Vec<usize>],
    planes: &[Plane],
    w_plan: f64,
    w_close: f64,
) -> f64 {
    let constraint: f64 = faces
        .iter()
        .zip(planes)
        .map(|(f, pl)| f.iter().map(|&i| pl.signed_distance(&q[i]).powi(2)).sum::<f64>())
        .sum();
    let close: f64 = p.iter().zip(q).map(|(a, b)| (a - b).norm_squared()).sum();
    w_plan * constraint + w_close * close
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarizeSettings {
    /// Absolute tolerance on the per-face planarity error, meters.
    pub planarity_tolerance: f64,
    pub max_iterations: usize,
    pub closeness_weight: f64,
    /// Initial planarity weight.
    pub planarity_weight: f64,
    pub weight_growth: f64,
    pub max_planarity_weight: f64,
    /// Relative objective change that counts as a stall.
    pub stall_tolerance: f64,
    /// Vertices held at their control position.
    pub pinned: Vec<usize>,
}

impl Default for PlanarizeSettings {
    fn default() -> Self {
        PlanarizeSettings {
            planarity_tolerance: 1e-6,
            max_iterations: 500,
            closeness_weight: 1.0,
            planarity_weight: 10.0,
            weight_growth: 10.0,
            max_planarity_weight: 1e6,
            stall_tolerance: 1e-4,
            pinned: Vec::new(),
        }
    }
}

impl PlanarizeSettings {
    /// Defaults with the tolerance set to `relative` × bounding-box diagonal.
    pub fn relative_to(points: &[Point], relative: f64) -> Self {
        PlanarizeSettings {
            planarity_tolerance: relative * bbox_diagonal(points),
            ..Default::default()
        }
    }

    fn check(&self) -> Result<(), PlanarizeError> {
        let bad = |m: &str| Err(PlanarizeError::InvalidSettings(m.to_string()));
        if !(self.planarity_tolerance > 0.0) {
            return bad("planarity tolerance must be > 0");
        }
        if self.max_iterations < 1 {
            return bad("maxIterations must be >= 1");
        }
        if !(self.closeness_weight > 0.0 && self.planarity_weight > 0.0) {
            return bad("weights must be > 0");
        }
        if !(self.weight_growth > 1.0) {
            return bad("weight growth must be > 1");
        }
        if !(self.max_planarity_weight >= self.planarity_weight) {
            return bad("max planarity weight must be >= the initial weight");
        }
        if !(self.stall_tolerance >= 0.0) {
            return bad("stall tolerance must be >= 0");
        }
        Ok(())
    }
}

pub fn bbox_diagonal(points: &[Point]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = points[0].coords;
    let mut hi = points[0].coords;
    for p in points {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    (hi - lo).norm()
}

/// One alternation of the penalty scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// `E` after the global (vertex) step.
    pub objective_after_global: f64,
    /// `E` after the following local (plane) step.
    pub objective_after_local: f64,
    /// Largest face planarity error of the iterate.
    pub max_planarity_error: f64,
    pub w_plan: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarizeOutcome {
    pub q: Vec<Point>,
    pub planes: Vec<Plane>,
    pub iterations: usize,
    pub max_planarity_error: f64,
    /// `E` before the first global step at the initial weight.
    pub initial_objective: f64,
    pub trace: Vec<TraceEntry>,
}

impl PlanarizeOutcome {
    /// Number of decreases violated within constant-weight phases, allowing
    /// `rel_slack` relative round-off.
    pub fn monotonicity_violations(&self, rel_slack: f64) -> usize {
        let mut violations = 0;
        let mut prev: Option<(f64, f64)> = None;
        for (k, t) in self.trace.iter().enumerate() {
            let slack = |e: f64| rel_slack * e.abs().max(f64::MIN_POSITIVE);
            let before = match prev {
                Some((w, e)) if w == t.w_plan => Some(e),
                None if k == 0 => Some(self.initial_objective),
                _ => None,
            };
            if let Some(e) = before {
                if t.objective_after_global > e + slack(e) {
                    violations += 1;
                }
            }
            if t.objective_after_local > t.objective_after_global + slack(t.objective_after_global) {
                violations += 1;
            }
            prev = Some((t.w_plan, t.objective_after_local));
        }
        violations
    }
}

fn fit_all(faces: &[Vec<usize>], q: &[Point]) -> Result<(Vec<Plane>, f64), PlanarizeError> {
    let mut planes = Vec::with_capacity(faces.len());
    let mut worst: f64 = 0.0;
    for (j, f) in faces.iter().enumerate() {
        let pts = face_points(f, q);
        let plane = fit_plane_inner(&pts).ok_or(PlanarizeError::DegenerateFace { face: j })?;
        worst = worst.max(max_distance(&pts, &plane));
        planes.push(plane);
    }
    Ok((planes, worst))
}

/// Planes incident to each vertex.
fn vertex_face_lists(faces: &[Vec<usize>], nv: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); nv];
    for (j, f) in faces.iter().enumerate() {
        for &i in f {
            out[i].push(j);
        }
    }
    out
}

/// Deforms `p` minimally so every face becomes planar.
pub fn planarize(
    p: &[Point],
    faces: &[Vec<usize>],
    settings: &PlanarizeSettings,
) -> Result<PlanarizeOutcome, PlanarizeError> {
    settings.check()?;
    let nv = p.len();
    for (j, f) in faces.iter().enumerate() {
        if f.len() < 3 {
            return Err(PlanarizeError::DegenerateFace { face: j });
        }
        if let Some(&bad) = f.iter().find(|&&i| i >= nv) {
            return Err(PlanarizeError::BadFace { face: j, vertex: bad });
        }
    }
    let mut pinned = vec![false; nv];
    for &i in &settings.pinned {
        if i < nv {
            pinned[i] = true;
        }
    }
    let incident = vertex_face_lists(faces, nv);
    let w_close = settings.closeness_weight;
    let tol = settings.planarity_tolerance;

    let mut q = p.to_vec();
    let (mut planes, mut err) = fit_all(faces, &q)?;
    let mut w_plan = settings.planarity_weight;
    let initial_objective = penalized_objective(p, &q, faces, &planes, w_plan, w_close);
    if err <= tol {
        return Ok(PlanarizeOutcome {
            q,
            planes,
            iterations: 1,
            max_planarity_error: err,
            initial_objective,
            trace: Vec::new(),
        });
    }

    let mut trace = Vec::new();
    let mut phase_prev: Option<f64> = None;
    let mut converged = false;
    let mut stalled_at_cap = false;
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        iterations += 1;
        global_step(p, &mut q, &planes, &incident, &pinned, w_plan, w_close);
        let e_global = penalized_objective(p, &q, faces, &planes, w_plan, w_close);
        let (new_planes, new_err) = fit_all(faces, &q)?;
        planes = new_planes;
        err = new_err;
        let e_local = penalized_objective(p, &q, faces, &planes, w_plan, w_close);
        trace.push(TraceEntry {
            iteration: iterations,
            objective_after_global: e_global,
            objective_after_local: e_local,
            max_planarity_error: err,
            w_plan,
        });
        if err <= tol {
            converged = true;
            break;
        }
        let stalled = phase_prev
            .map(|prev| (prev - e_local).abs() <= settings.stall_tolerance * prev.abs())
            .unwrap_or(false);
        if stalled {
            if w_plan >= settings.max_planarity_weight {
                stalled_at_cap = true;
                break;
            }
            w_plan = (w_plan * settings.weight_growth).min(settings.max_planarity_weight);
            phase_prev = None;
        } else {
            phase_prev = Some(e_local);
        }
    }
    if converged || stalled_at_cap {
        // hard-constraint projection; repeated because pinned vertices keep
        // pulling the refitted planes
        for _ in 0..POLISH_ROUNDS {
            let mut projected = q.clone();
            project_onto_planes(p, &mut projected, &planes, &incident, &pinned);
            let (proj_planes, proj_err) = fit_all(faces, &projected)?;
            if proj_err > err {
                break;
            }
            q = projected;
            planes = proj_planes;
            err = proj_err;
            if err <= tol * 1e-3 {
                break;
            }
        }
        // exact constrained optimum; pinned vertices are not representable
        // in the reduced problem
        if err <= tol && settings.pinned.is_empty() && faces.len() <= REFINE_MAX_FACES {
            let refined = refine_hard_constraints(p, faces, &incident, &planes, bbox_diagonal(p));
            let mut candidate = p.to_vec();
            project_onto_planes(p, &mut candidate, &refined, &incident, &pinned);
            if let Ok((cand_planes, cand_err)) = fit_all(faces, &candidate) {
                let before = displacement_objective(p, &q)?;
                let after = displacement_objective(p, &candidate)?;
                if cand_err <= tol && after < before {
                    q = candidate;
                    planes = cand_planes;
                    err = cand_err;
                }
            }
        }
    }
    if err > tol {
        return Err(PlanarizeError::NoConvergence {
            max_planarity_error: err,
            iterations,
        });
    }
    Ok(PlanarizeOutcome {
        q,
        planes,
        iterations,
        max_planarity_error: err,
        initial_objective,
        trace,
    })
}

fn global_step(
    p: &[Point],
    q: &mut [Point],
    planes: &[Plane],
    incident: &[Vec<usize>],
    pinned: &[bool],
    w_plan: f64,
    w_close: f64,
) {
    for (i, faces) in incident.iter().enumerate() {
        if pinned[i] {
            q[i] = p[i];
            continue;
        }
        let mut a = Matrix3::identity() * w_close;
        let mut b = p[i].coords * w_close;
        for &j in faces {
            let n = planes[j].normal;
            a += n * n.transpose() * w_plan;
            b -= n * (w_plan * planes[j].offset);
        }
        // SPD: w_close I + PSD
        let x = a.cholesky().expect("w_close > 0 keeps the system SPD").solve(&b);
        q[i] = Point::from(x);
    }
}

/// Closest point to `p` on the intersection of `planes` (least squares when
/// they share no point).
fn project_point(p: &Point, planes: &[&Plane]) -> Point {
    match planes {
        [] => *p,
        [a] => p - a.normal * a.signed_distance(p),
        [a, b] => {
            // onto plane a, then along plane a's direction towards b that is
            // orthogonal to a; both residuals vanish to rounding even for
            // nearly coplanar pairs
            let on_a = p - a.normal * a.signed_distance(p);
            let along = b.normal - a.normal * a.normal.dot(&b.normal);
            let sin2 = along.norm_squared();
            if sin2 <= 1e-24 {
                return on_a;
            }
            on_a - along * (b.signed_distance(&on_a) / sin2)
        }
        _ => {
            let rows = planes.len();
            let mut n = OMatrix::<f64, nalgebra::Dyn, U3>::zeros(rows);
            let mut r = nalgebra::DVector::zeros(rows);
            for (k, pl) in planes.iter().enumerate() {
                n.set_row(k, &pl.normal.transpose());
                r[k] = pl.signed_distance(p);
            }
            // q = p − Nᵀ (N Nᵀ)⁺ r
            let nnt = &n * n.transpose();
            match nnt.pseudo_inverse(1e-12) {
                Ok(pinv) => p - n.transpose() * (pinv * r),
                Err(_) => *p,
            }
        }
    }
}

fn project_onto_planes(p: &[Point], q: &mut [Point], planes: &[Plane], incident: &[Vec<usize>], pinned: &[bool]) {
    for (i, faces) in incident.iter().enumerate() {
        if pinned[i] || faces.is_empty() {
            continue;
        }
        let local: Vec<&Plane> = faces.iter().map(|&j| &planes[j]).collect();
        q[i] = project_point(&p[i], &local);
    }
}

const REFINE_MAX_ITERATIONS: usize = 200;
/// Above this many faces the dense refinement is skipped.
const REFINE_MAX_FACES: usize = 400;
const REFINE_ANGLE_STEP: f64 = 1e-8;

/// Plane `normal · (x − anchor) + level = 0` with a fixed anchor point.
#[derive(Clone, Copy)]
struct AnchoredPlane {
    normal: Vector,
    anchor: Vector,
    level: f64,
}

impl AnchoredPlane {
    fn plane(&self) -> Plane {
        Plane {
            normal: self.normal,
            offset: self.level - self.normal.dot(&self.anchor),
        }
    }

    fn tangents(&self) -> (Vector, Vector) {
        let n = self.normal;
        let axis = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
            Vector::x()
        } else if n.y.abs() <= n.z.abs() {
            Vector::y()
        } else {
            Vector::z()
        };
        let t1 = n.cross(&axis).normalize();
        (t1, n.cross(&t1))
    }

    /// Moves along parameter `k` (two tilt angles, then level) by `h`.
    fn nudged(&self, k: usize, h: f64) -> AnchoredPlane {
        let mut out = *self;
        let (t1, t2) = self.tangents();
        match k {
            0 => out.normal = (self.normal + t1 * h).normalize(),
            1 => out.normal = (self.normal + t2 * h).normalize(),
            _ => out.level += h,
        }
        out
    }

    fn stepped(&self, delta: &[f64]) -> AnchoredPlane {
        let (t1, t2) = self.tangents();
        AnchoredPlane {
            normal: (self.normal + t1 * delta[0] + t2 * delta[1]).normalize(),
            anchor: self.anchor,
            level: self.level + delta[2],
        }
    }
}

/// Minimizes `Σ_i |p_i − proj_i(planes)|²` over plane parameters, where
/// `proj_i` is the nearest point on the intersection of vertex `i`'s face
/// planes. This is the hard-constrained problem with `Q` eliminated.
/// Levenberg-Marquardt with central-difference Jacobian columns; each column
/// touches only the vertices of its face.
fn refine_hard_constraints(
    p: &[Point],
    faces: &[Vec<usize>],
    incident: &[Vec<usize>],
    planes: &[Plane],
    length_scale: f64,
) -> Vec<Plane> {
    use nalgebra::{DMatrix, DVector};

    let mut params: Vec<AnchoredPlane> = faces
        .iter()
        .zip(planes)
        .map(|(f, pl)| {
            let anchor = f.iter().map(|&i| p[i].coords).sum::<Vector>() / f.len() as f64;
            AnchoredPlane {
                normal: pl.normal,
                anchor,
                level: pl.normal.dot(&anchor) + pl.offset,
            }
        })
        .collect();
    let residual = |i: usize, current: &[Plane]| -> Vector {
        let local: Vec<&Plane> = incident[i].iter().map(|&j| &current[j]).collect();
        p[i] - project_point(&p[i], &local)
    };
    let total = |ps: &[AnchoredPlane]| -> f64 {
        let current: Vec<Plane> = ps.iter().map(AnchoredPlane::plane).collect();
        (0..p.len()).map(|i| residual(i, &current).norm_squared()).sum()
    };

    let steps = [REFINE_ANGLE_STEP, REFINE_ANGLE_STEP, REFINE_ANGLE_STEP * length_scale];
    let (nv, np) = (p.len(), 3 * faces.len());
    let mut value = total(&params);
    let mut lambda = 1e-3;
    for _ in 0..REFINE_MAX_ITERATIONS {
        let current: Vec<Plane> = params.iter().map(AnchoredPlane::plane).collect();
        let mut r = DVector::zeros(3 * nv);
        for i in 0..nv {
            r.fixed_rows_mut::<3>(3 * i).copy_from(&residual(i, &current));
        }
        let mut jac = DMatrix::zeros(3 * nv, np);
        for (j, face) in faces.iter().enumerate() {
            for (k, &h) in steps.iter().enumerate() {
                let mut plus = current.clone();
                let mut minus = current.clone();
                plus[j] = params[j].nudged(k, h).plane();
                minus[j] = params[j].nudged(k, -h).plane();
                for &i in face {
                    let d = (residual(i, &plus) - residual(i, &minus)) / (2.0 * h);
                    jac.fixed_view_mut::<3, 1>(3 * i, 3 * j + k).copy_from(&d);
                }
            }
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let mut accepted = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for d in 0..np {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = -chol.solve(&grad);
            let candidate: Vec<AnchoredPlane> = params
                .iter()
                .enumerate()
                .map(|(j, pl)| pl.stepped(&delta.as_slice()[3 * j..3 * j + 3]))
                .collect();
            let cand_value = total(&candidate);
            if cand_value < value {
                params = candidate;
                value = cand_value;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = delta.amax() > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    params.iter().map(AnchoredPlane::plane).collect()
}
