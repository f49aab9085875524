//! Particle-spring form-finding.
//!
//! Every mesh vertex becomes a particle. Springs come in three kinds:
//!
//! * stretch: along every mesh edge;
//! * shear: between vertices two steps apart on a face ring (`k`, `k + 2`);
//! * bend: between vertices whose lattice offset is twice a unit lattice step,
//!   i.e. second neighbours on a straight lattice line (opposite corners of a
//!   cell or of an opening, and pairs across boundary gaps).
//!
//! Rest lengths are the initial distances. The system is integrated with
//! fixed-step RK4 under gravity and linear drag until the largest net force
//! on a free particle drops below the tolerance.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::hexgrid::{HexMesh, LatticeCoord, LATTICE_DIRECTIONS};
use crate::mesh::edge_key;
use crate::{Point, Vector};

/// Standard gravitational acceleration, m/s².
pub const STANDARD_GRAVITY: f64 = 9.81;

const MIN_SPRING_LENGTH: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PhysicsError {
    #[error("spring ({i}, {j}) has coincident endpoints (distance {distance:e} m)")]
    CoincidentEndpoints { i: usize, j: usize, distance: f64 },
    #[error("gravity is non-zero but no particle is anchored")]
    EmptyAnchorSet,
    #[error("state became non-finite at step {step}; reduce dt")]
    NonFiniteState { step: usize },
    #[error("no equilibrium after {steps} steps (max residual force {max_residual_force:e} N)")]
    NoConvergence { steps: usize, max_residual_force: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("mesh carries no lattice coordinates; bend springs and named anchor sets need them")]
    MissingLattice,
    #[error("anchor index {0} is out of range")]
    InvalidAnchor(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub mass: f64,
    pub position: Point,
    pub velocity: Vector,
    pub anchored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpringKind {
    Stretch,
    Shear,
    Bend,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spring {
    pub i: usize,
    pub j: usize,
    /// N/m
    pub stiffness: f64,
    /// m
    pub rest_length: f64,
    /// Axial damping on the relative velocity, N·s/m.
    pub damping: f64,
    pub kind: SpringKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationParams {
    /// Gravitational acceleration along −z, m/s².
    pub gravity: f64,
    pub dt: f64,
    /// Linear drag coefficient, N·s/m.
    pub global_damping: f64,
    pub force_tolerance: f64,
    pub max_steps: usize,
    /// Mirror z about the anchor plane after solving (hanging model → shell).
    pub invert_after_solve: bool,
}

impl Default for SimulationParams {
    fn default() -> Self {
        SimulationParams {
            gravity: STANDARD_GRAVITY,
            dt: 0.005,
            global_damping: 5.0,
            force_tolerance: 1e-4,
            max_steps: 200_000,
            invert_after_solve: true,
        }
    }
}

impl SimulationParams {
    pub fn check(&self) -> Result<(), PhysicsError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(PhysicsError::InvalidParameters(format!(
                "dt must be > 0, got {}",
                self.dt
            )));
        }
        if !(self.force_tolerance > 0.0) {
            return Err(PhysicsError::InvalidParameters(format!(
                "forceTolerance must be > 0, got {}",
                self.force_tolerance
            )));
        }
        if self.max_steps < 1 {
            return Err(PhysicsError::InvalidParameters("maxSteps must be >= 1".into()));
        }
        if !(self.global_damping >= 0.0) {
            return Err(PhysicsError::InvalidParameters(format!(
                "damping must be >= 0, got {}",
                self.global_damping
            )));
        }
        if !self.gravity.is_finite() {
            return Err(PhysicsError::InvalidParameters("g must be finite".into()));
        }
        Ok(())
    }
}

/// Per-particle and per-spring defaults used when building a system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpringDefaults {
    pub mass: f64,
    pub k_stretch: f64,
    pub k_shear: f64,
    pub k_bend: f64,
    pub spring_damping: f64,
}

impl Default for SpringDefaults {
    fn default() -> Self {
        SpringDefaults {
            mass: 1.0,
            k_stretch: 500.0,
            k_shear: 50.0,
            k_bend: 50.0,
            spring_damping: 0.0,
        }
    }
}

/// Which vertices are held fixed.
#[derive(Debug, Clone, PartialEq)]
pub enum AnchorSpec {
    /// Vertices nearest each corner of the base triangle.
    Corners,
    /// Every vertex on the base triangle's edges.
    Boundary,
    Indices(Vec<usize>),
}

impl AnchorSpec {
    pub fn resolve(&self, mesh: &HexMesh) -> Result<Vec<usize>, PhysicsError> {
        let anchors = match self {
            AnchorSpec::Corners => mesh.corner_vertices().ok_or(PhysicsError::MissingLattice)?,
            AnchorSpec::Boundary => mesh.boundary_vertices().ok_or(PhysicsError::MissingLattice)?,
            AnchorSpec::Indices(ix) => ix.iter().copied().collect::<BTreeSet<_>>().into_iter().collect(),
        };
        if let Some(&bad) = anchors.iter().find(|&&i| i >= mesh.vertex_count()) {
            return Err(PhysicsError::InvalidAnchor(bad));
        }
        Ok(anchors)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpringSystem {
    pub particles: Vec<Particle>,
    pub springs: Vec<Spring>,
    pub params: SimulationParams,
}

pub fn build_spring_system(
    mesh: &HexMesh,
    defaults: &SpringDefaults,
    anchors: &[usize],
    params: SimulationParams,
) -> Result<SpringSystem, PhysicsError> {
    params.check()?;
    let d = defaults;
    if !(d.mass > 0.0 && d.k_stretch > 0.0 && d.k_shear > 0.0 && d.k_bend > 0.0 && d.spring_damping >= 0.0) {
        return Err(PhysicsError::InvalidParameters(format!(
            "mass and stiffnesses must be > 0, spring damping >= 0: {d:?}"
        )));
    }
    if params.gravity != 0.0 && anchors.is_empty() {
        return Err(PhysicsError::EmptyAnchorSet);
    }
    let positions = &mesh.vertex_positions;
    if let Some(&bad) = anchors.iter().find(|&&i| i >= positions.len()) {
        return Err(PhysicsError::InvalidAnchor(bad));
    }
    let uv = mesh.lattice.as_ref().ok_or(PhysicsError::MissingLattice)?;

    let anchored: BTreeSet<usize> = anchors.iter().copied().collect();
    let particles = positions
        .iter()
        .enumerate()
        .map(|(i, &position)| Particle {
            mass: d.mass,
            position,
            velocity: Vector::zeros(),
            anchored: anchored.contains(&i),
        })
        .collect();

    let mut stretch = BTreeSet::new();
    let mut shear = BTreeSet::new();
    for ring in mesh.face_map.values() {
        let len = ring.len();
        for k in 0..len {
            stretch.insert(edge_key(ring[k], ring[(k + 1) % len]));
            if len > 4 {
                shear.insert(edge_key(ring[k], ring[(k + 2) % len]));
            }
        }
    }
    let index: HashMap<LatticeCoord, usize> = uv.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut bend = BTreeSet::new();
    for (a, c) in uv.iter().enumerate() {
        for (du, dv) in LATTICE_DIRECTIONS {
            let far = LatticeCoord::new(c.u + 2 * du, c.v + 2 * dv);
            if let Some(&b) = index.get(&far) {
                bend.insert(edge_key(a, b));
            }
        }
    }

    let mut springs = Vec::with_capacity(stretch.len() + shear.len() + bend.len());
    for (pairs, kind, k) in [
        (&stretch, SpringKind::Stretch, d.k_stretch),
        (&shear, SpringKind::Shear, d.k_shear),
        (&bend, SpringKind::Bend, d.k_bend),
    ] {
        for &(i, j) in pairs {
            let rest_length = (positions[i] - positions[j]).norm();
            if rest_length <= MIN_SPRING_LENGTH {
                return Err(PhysicsError::CoincidentEndpoints {
                    i,
                    j,
                    distance: rest_length,
                });
            }
            springs.push(Spring {
                i,
                j,
                stiffness: k,
                rest_length,
                damping: d.spring_damping,
                kind,
            });
        }
    }
    Ok(SpringSystem {
        particles,
        springs,
        params,
    })
}

/// Hooke force on the particle at `x1`; the particle at `x2` receives the negation.
pub fn spring_force(s: &Spring, x1: &Point, x2: &Point) -> Result<Vector, PhysicsError> {
    let delta = x1 - x2;
    let len = delta.norm();
    if len <= MIN_SPRING_LENGTH {
        return Err(PhysicsError::CoincidentEndpoints {
            i: s.i,
            j: s.j,
            distance: len,
        });
    }
    Ok(delta * (s.stiffness * (s.rest_length - len) / len))
}

/// Axial damping on the particle at `x1`, opposing the rate of length change.
pub fn spring_damping_force(s: &Spring, x1: &Point, x2: &Point, v1: &Vector, v2: &Vector) -> Vector {
    if s.damping == 0.0 {
        return Vector::zeros();
    }
    let delta = x1 - x2;
    let len = delta.norm();
    if len <= MIN_SPRING_LENGTH {
        return Vector::zeros();
    }
    let dir = delta / len;
    dir * (-s.damping * (v1 - v2).dot(&dir))
}

pub fn gravity_force(p: &Particle, g: f64) -> Vector {
    Vector::new(0.0, 0.0, -p.mass * g)
}

pub fn damping_force(p: &Particle, c_global: f64) -> Vector {
    -p.velocity * c_global
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub kinetic_energy: f64,
    pub max_residual_force: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub final_positions: Vec<Point>,
    pub steps: usize,
    pub max_residual_force: f64,
}

impl SpringSystem {
    pub fn positions(&self) -> Vec<Point> {
        self.particles.iter().map(|p| p.position).collect()
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.particles
            .iter()
            .map(|p| 0.5 * p.mass * p.velocity.norm_squared())
            .sum()
    }

    pub fn momentum(&self) -> Vector {
        self.particles.iter().map(|p| p.velocity * p.mass).sum()
    }

    /// Net force per particle at the given state.
    fn forces_at(&self, x: &[Point], v: &[Vector], out: &mut [Vector]) -> Result<(), PhysicsError> {
        out.iter_mut().for_each(|f| *f = Vector::zeros());
        for s in &self.springs {
            let f = spring_force(s, &x[s.i], &x[s.j])? + spring_damping_force(s, &x[s.i], &x[s.j], &v[s.i], &v[s.j]);
            out[s.i] += f;
            out[s.j] -= f;
        }
        let g = self.params.gravity;
        let c = self.params.global_damping;
        for (k, p) in self.particles.iter().enumerate() {
            out[k] += Vector::new(0.0, 0.0, -p.mass * g) - v[k] * c;
        }
        Ok(())
    }

    fn accelerations_at(&self, x: &[Point], v: &[Vector], out: &mut [Vector]) -> Result<(), PhysicsError> {
        self.forces_at(x, v, out)?;
        for (a, p) in out.iter_mut().zip(&self.particles) {
            if p.anchored {
                *a = Vector::zeros();
            } else {
                *a /= p.mass;
            }
        }
        Ok(())
    }

    /// Largest net-force magnitude over free particles.
    pub fn max_residual_force(&self) -> Result<f64, PhysicsError> {
        let forces = accumulate_forces(self)?;
        Ok(self
            .particles
            .iter()
            .zip(&forces)
            .filter(|(p, _)| !p.anchored)
            .map(|(_, f)| f.norm())
            .fold(0.0, f64::max))
    }

    fn check_finite(&self, step: usize) -> Result<(), PhysicsError> {
        let ok = self
            .particles
            .iter()
            .all(|p| p.position.coords.iter().chain(p.velocity.iter()).all(|c| c.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(PhysicsError::NonFiniteState { step })
        }
    }
}

/// Spring, gravity and drag forces per particle. Anchored particles report
/// their force as well (support reaction) even though it is never applied.
pub fn accumulate_forces(sys: &SpringSystem) -> Result<Vec<Vector>, PhysicsError> {
    let x: Vec<Point> = sys.particles.iter().map(|p| p.position).collect();
    let v: Vec<Vector> = sys.particles.iter().map(|p| p.velocity).collect();
    let mut out = vec![Vector::zeros(); x.len()];
    sys.forces_at(&x, &v, &mut out)?;
    Ok(out)
}

/// One classical RK4 step of length `params.dt`.
pub fn step_rk4(sys: &mut SpringSystem) -> Result<(), PhysicsError> {
    let dt = sys.params.dt;
    step_rk4_with_dt(sys, dt)
}

/// One classical RK4 step of arbitrary length.
pub fn step_rk4_with_dt(sys: &mut SpringSystem, dt: f64) -> Result<(), PhysicsError> {
    if !(dt > 0.0) {
        return Err(PhysicsError::InvalidParameters(format!("dt must be > 0, got {dt}")));
    }
    let n = sys.particles.len();
    let x0: Vec<Point> = sys.particles.iter().map(|p| p.position).collect();
    let v0: Vec<Vector> = sys.particles.iter().map(|p| p.velocity).collect();
    let anchored: Vec<bool> = sys.particles.iter().map(|p| p.anchored).collect();

    let mut k1 = vec![Vector::zeros(); n];
    let mut k2 = vec![Vector::zeros(); n];
    let mut k3 = vec![Vector::zeros(); n];
    let mut k4 = vec![Vector::zeros(); n];
    let mut xs = x0.clone();
    let mut vs = v0.clone();

    // velocity stages equal the v-arguments of the previous stage
    sys.accelerations_at(&x0, &v0, &mut k1)?;
    let stage = |h: f64, ka: &[Vector], va: &[Vector], xs: &mut [Point], vs: &mut [Vector]| {
        for k in 0..n {
            if anchored[k] {
                continue;
            }
            xs[k] = x0[k] + va[k] * h;
            vs[k] = v0[k] + ka[k] * h;
        }
    };
    let v1 = v0.clone();
    stage(0.5 * dt, &k1, &v1, &mut xs, &mut vs);
    let v2 = vs.clone();
    sys.accelerations_at(&xs, &v2, &mut k2)?;
    stage(0.5 * dt, &k2, &v2, &mut xs, &mut vs);
    let v3 = vs.clone();
    sys.accelerations_at(&xs, &v3, &mut k3)?;
    stage(dt, &k3, &v3, &mut xs, &mut vs);
    let v4 = vs.clone();
    sys.accelerations_at(&xs, &v4, &mut k4)?;

    let w = dt / 6.0;
    for (k, p) in sys.particles.iter_mut().enumerate() {
        if p.anchored {
            p.velocity = Vector::zeros();
            continue;
        }
        p.position += (v1[k] + v2[k] * 2.0 + v3[k] * 2.0 + v4[k]) * w;
        p.velocity += (k1[k] + k2[k] * 2.0 + k3[k] * 2.0 + k4[k]) * w;
    }
    sys.check_finite(0)
}

/// Steps until the largest free-particle net force is within tolerance.
///
/// The system keeps its final (uninverted) state; the returned positions are
/// mirrored about the mean anchor height when `invert_after_solve` is set.
pub fn simulate_to_equilibrium(
    sys: &mut SpringSystem,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<Equilibrium, PhysicsError> {
    sys.params.check()?;
    if sys.params.gravity != 0.0 && !sys.particles.iter().any(|p| p.anchored) {
        return Err(PhysicsError::EmptyAnchorSet);
    }
    let tol = sys.params.force_tolerance;
    let mut residual = sys.max_residual_force()?;
    if let Some(t) = trace.as_deref_mut() {
        t.push(TraceRow {
            step: 0,
            kinetic_energy: sys.kinetic_energy(),
            max_residual_force: residual,
        });
    }
    let mut steps = 0;
    while residual > tol {
        if steps == sys.params.max_steps {
            return Err(PhysicsError::NoConvergence {
                steps,
                max_residual_force: residual,
            });
        }
        steps += 1;
        step_rk4(sys).map_err(|e| match e {
            PhysicsError::NonFiniteState { .. } => PhysicsError::NonFiniteState { step: steps },
            other => other,
        })?;
        residual = sys.max_residual_force()?;
        if !residual.is_finite() {
            return Err(PhysicsError::NonFiniteState { step: steps });
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceRow {
                step: steps,
                kinetic_energy: sys.kinetic_energy(),
                max_residual_force: residual,
            });
        }
    }
    let mut final_positions = sys.positions();
    if sys.params.invert_after_solve {
        let anchors: Vec<f64> = sys
            .particles
            .iter()
            .filter(|p| p.anchored)
            .map(|p| p.position.z)
            .collect();
        let plane = if anchors.is_empty() {
            0.0
        } else {
            anchors.iter().sum::<f64>() / anchors.len() as f64
        };
        for p in &mut final_positions {
            p.z = 2.0 * plane - p.z;
        }
    }
    Ok(Equilibrium {
        final_positions,
        steps,
        max_residual_force: residual,
    })
}
