mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use common::*;
use hexpanel::config::load_config;
use hexpanel::hexgrid::{build_hex_mesh, HexMesh, TriGrid};
use hexpanel::physics::{
    accumulate_forces, build_spring_system, simulate_to_equilibrium, spring_force, step_rk4, step_rk4_with_dt,
    AnchorSpec, Particle, PhysicsError, SimulationParams, Spring, SpringDefaults, SpringKind, SpringSystem,
};
use hexpanel::{Point, Vector};
use proptest::prelude::*;
use rand::Rng;

fn spring(k: f64, l: f64) -> Spring {
    Spring {
        i: 0,
        j: 1,
        stiffness: k,
        rest_length: l,
        damping: 0.0,
        kind: SpringKind::Stretch,
    }
}

fn particle(position: Point, anchored: bool) -> Particle {
    Particle {
        mass: 1.0,
        position,
        velocity: Vector::zeros(),
        anchored,
    }
}

fn free_params(dt: f64) -> SimulationParams {
    SimulationParams {
        gravity: 0.0,
        dt,
        global_damping: 0.0,
        invert_after_solve: false,
        ..SimulationParams::default()
    }
}

#[test]
fn spring_force_examples() {
    let f = spring_force(&spring(1.0, 1.0), &Point::origin(), &Point::new(2.0, 0.0, 0.0)).unwrap();
    assert!((f - Vector::new(1.0, 0.0, 0.0)).norm() <= 1e-12);
    let at_rest = spring_force(
        &spring(3.0, 2.0),
        &Point::new(1.0, 1.0, 1.0),
        &Point::new(1.0, 3.0, 1.0),
    )
    .unwrap();
    assert!(at_rest.norm() <= 1e-12);
    let f = spring_force(&spring(2.0, 1.0), &Point::origin(), &Point::new(0.5, 0.0, 0.0)).unwrap();
    assert!((f - Vector::new(-1.0, 0.0, 0.0)).norm() <= 1e-12);
    let p = Point::new(0.1, 0.2, 0.3);
    assert!(matches!(
        spring_force(&spring(1.0, 1.0), &p, &p),
        Err(PhysicsError::CoincidentEndpoints { .. })
    ));
}

#[test]
fn spring_forces_are_antisymmetric() {
    let mut r = rng(17);
    for _ in 0..1000 {
        let s = spring(r.random_range(0.1..1000.0), r.random_range(0.01..5.0));
        let a = Point::new(
            r.random_range(-3.0..3.0),
            r.random_range(-3.0..3.0),
            r.random_range(-3.0..3.0),
        );
        let b = Point::new(
            r.random_range(-3.0..3.0),
            r.random_range(-3.0..3.0),
            r.random_range(-3.0..3.0),
        );
        let fa = spring_force(&s, &a, &b).unwrap();
        let fb = spring_force(&s, &b, &a).unwrap();
        assert!((fa + fb).norm() <= 1e-12, "{fa} {fb}");
    }
}

/// Anchored particle at the origin, free one at `rest + amplitude` on x;
/// exact motion x(t) = rest + amplitude cos(√K t).
fn oscillator(k: f64, rest: f64, amplitude: f64, dt: f64) -> SpringSystem {
    SpringSystem {
        particles: vec![
            particle(Point::origin(), true),
            particle(Point::new(rest + amplitude, 0.0, 0.0), false),
        ],
        springs: vec![spring(k, rest)],
        params: free_params(dt),
    }
}

fn oscillator_error(dt: f64) -> f64 {
    let (k, rest, amplitude, horizon) = (4.0, 1.0, 0.5, 10.0);
    let mut sys = oscillator(k, rest, amplitude, dt);
    let steps = (horizon / dt).round() as usize;
    for _ in 0..steps {
        step_rk4(&mut sys).unwrap();
    }
    let exact = rest + amplitude * (k.sqrt() * horizon).cos();
    (sys.particles[1].position.x - exact).abs()
}

#[test]
fn rk4_converges_at_fourth_order() {
    let dts = [0.02, 0.01, 0.005, 0.0025];
    let errors: Vec<f64> = dts.iter().map(|&dt| oscillator_error(dt)).collect();
    // least-squares slope of log(error) against log(dt)
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((3.8..=4.2).contains(&slope), "slope {slope}, errors {errors:?}");
    let ratio = errors[1] / errors[2];
    assert!((14.0..=18.0).contains(&ratio), "halving ratio {ratio}");
}

#[test]
fn oscillator_returns_after_one_period() {
    let mut sys = oscillator(1.0, 1.0, 0.3, 0.01);
    let period = 2.0 * std::f64::consts::PI;
    let whole = (period / 0.01).floor() as usize;
    for _ in 0..whole {
        step_rk4(&mut sys).unwrap();
    }
    step_rk4_with_dt(&mut sys, period - whole as f64 * 0.01).unwrap();
    assert!((sys.particles[1].position.x - 1.3).abs() <= 1e-5);
    assert!(sys.particles[1].velocity.norm() <= 1e-5);
}

#[test]
fn hanging_mass_extends_by_weight_over_stiffness() {
    let (k, rest, g) = (250.0, 1.0, 9.81);
    let mut sys = SpringSystem {
        particles: vec![
            particle(Point::origin(), true),
            particle(Point::new(0.0, 0.0, -rest), false),
        ],
        springs: vec![spring(k, rest)],
        params: SimulationParams {
            gravity: g,
            dt: 0.005,
            global_damping: 5.0,
            force_tolerance: 1e-11,
            max_steps: 1_000_000,
            invert_after_solve: false,
        },
    };
    let eq = simulate_to_equilibrium(&mut sys, None).unwrap();
    let extension = -eq.final_positions[1].z - rest;
    assert!((extension - g / k).abs() <= 1e-9, "{extension} vs {}", g / k);
}

#[test]
fn anchored_only_system_does_not_move() {
    let mut sys = oscillator(5.0, 1.0, 0.2, 0.01);
    sys.particles[1].anchored = true;
    let before = sys.clone();
    step_rk4(&mut sys).unwrap();
    assert_eq!(sys, before);
}

#[test]
fn single_hexagon_spring_classes() {
    let m = build_hex_mesh(&TriGrid::equilateral(1.0, 3).unwrap()).unwrap();
    let sys = build_spring_system(&m, &SpringDefaults::default(), &[], free_params(0.01)).unwrap();
    let count = |k: SpringKind| sys.springs.iter().filter(|s| s.kind == k).count();

    // oracle: classify pairs of ring nodes by ring distance and lattice offset
    let uv = m.lattice.as_ref().unwrap();
    let ring = &m.face_map[&0];
    let collinear_two = |a: usize, b: usize| {
        let (du, dv) = (uv[b].u - uv[a].u, uv[b].v - uv[a].v);
        [(0, 1), (1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1)]
            .iter()
            .any(|&(x, y)| (du, dv) == (2 * x, 2 * y))
    };
    let (mut shear, mut bend) = (0, 0);
    for a in 0..6 {
        for b in a + 1..6 {
            let ring_distance = (b - a).min(6 - (b - a));
            if collinear_two(ring[a], ring[b]) {
                bend += 1;
            } else if ring_distance == 2 {
                shear += 1;
            }
        }
    }
    assert_eq!(count(SpringKind::Stretch), 6);
    assert_eq!(count(SpringKind::Shear), shear);
    assert_eq!(count(SpringKind::Bend), bend);
    assert_eq!((shear, bend), (6, 3));
    let pairs: BTreeSet<(usize, usize)> = sys.springs.iter().map(|s| (s.i.min(s.j), s.i.max(s.j))).collect();
    assert_eq!(pairs.len(), sys.springs.len());
}

#[test]
fn rest_mesh_without_gravity_is_in_equilibrium() {
    let m = build_hex_mesh(&TriGrid::equilateral(6.0, 9).unwrap()).unwrap();
    let mut sys = build_spring_system(&m, &SpringDefaults::default(), &[], free_params(0.005)).unwrap();
    assert!(accumulate_forces(&sys).unwrap().iter().all(|f| f.norm() == 0.0));
    let eq = simulate_to_equilibrium(&mut sys, None).unwrap();
    assert!(eq.steps <= 1);
    assert_eq!(eq.max_residual_force, 0.0);
}

#[test]
fn gravity_without_anchors_is_rejected() {
    let m = build_hex_mesh(&TriGrid::equilateral(6.0, 6).unwrap()).unwrap();
    let err = build_spring_system(&m, &SpringDefaults::default(), &[], SimulationParams::default()).unwrap_err();
    assert_eq!(err, PhysicsError::EmptyAnchorSet);
}

fn perturbed_free_system(seed: u64) -> SpringSystem {
    let m = build_hex_mesh(&TriGrid::equilateral(3.0, 9).unwrap()).unwrap();
    let mut sys = build_spring_system(&m, &SpringDefaults::default(), &[], free_params(0.002)).unwrap();
    let mut r = rng(seed);
    for p in &mut sys.particles {
        p.position += Vector::new(
            r.random_range(-0.03..0.03),
            r.random_range(-0.03..0.03),
            r.random_range(-0.03..0.03),
        );
        p.velocity = Vector::new(
            r.random_range(-0.1..0.1),
            r.random_range(-0.1..0.1),
            r.random_range(-0.1..0.1),
        );
    }
    sys
}

#[test]
fn internal_forces_conserve_momentum() {
    let mut sys = perturbed_free_system(3);
    let net: Vector = accumulate_forces(&sys).unwrap().iter().sum();
    assert!(net.norm() <= 1e-12, "{net}");
    let mut momentum = sys.momentum();
    for _ in 0..200 {
        step_rk4(&mut sys).unwrap();
        let next = sys.momentum();
        assert!((next - momentum).norm() <= 1e-10);
        momentum = next;
    }
}

/// Total potential energy (springs + gravity) and its gradient, written out
/// independently of the library's force routines.
fn energy_and_gradient(sys: &SpringSystem, x: &[Point]) -> (f64, Vec<Vector>) {
    let g = sys.params.gravity;
    let mut energy = 0.0;
    let mut grad = vec![Vector::zeros(); x.len()];
    for s in &sys.springs {
        let d = x[s.i] - x[s.j];
        let len = d.norm();
        let stretch = len - s.rest_length;
        energy += 0.5 * s.stiffness * stretch * stretch;
        let dir = d / len;
        grad[s.i] += dir * (s.stiffness * stretch);
        grad[s.j] -= dir * (s.stiffness * stretch);
    }
    for (k, p) in sys.particles.iter().enumerate() {
        energy += p.mass * g * x[k].z;
        grad[k].z += p.mass * g;
        if p.anchored {
            grad[k] = Vector::zeros();
        }
    }
    (energy, grad)
}

/// Static equilibrium by gradient descent with backtracking (Armijo).
fn minimize_energy(sys: &SpringSystem) -> Vec<Point> {
    let mut x: Vec<Point> = sys.particles.iter().map(|p| p.position).collect();
    let mut step = 1e-3;
    for _ in 0..200_000 {
        let (e, grad) = energy_and_gradient(sys, &x);
        let gnorm2: f64 = grad.iter().map(|v| v.norm_squared()).sum();
        if gnorm2.sqrt() < 1e-7 {
            break;
        }
        loop {
            let trial: Vec<Point> = x.iter().zip(&grad).map(|(p, gr)| p - gr * step).collect();
            if energy_and_gradient(sys, &trial).0 <= e - 0.5 * step * gnorm2 {
                x = trial;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
    }
    x
}

fn default_system(n: usize) -> (HexMesh, SpringSystem) {
    let cfg = load_config(&default_config_path()).unwrap();
    let m = build_hex_mesh(&TriGrid::equilateral(cfg.grid.side_meters, n).unwrap()).unwrap();
    let anchors = cfg.physics.anchors.to_spec().unwrap().resolve(&m).unwrap();
    let sys = build_spring_system(
        &m,
        &cfg.physics.spring_defaults(),
        &anchors,
        cfg.physics.simulation_params(),
    )
    .unwrap();
    (m, sys)
}

#[test]
fn default_pavilion_converges_and_matches_energy_minimum() {
    let (m, mut sys) = default_system(9);
    assert_eq!(AnchorSpec::Corners.resolve(&m).unwrap().len(), 6);
    let start = Instant::now();
    let eq = simulate_to_equilibrium(&mut sys, None).unwrap();
    assert!(start.elapsed() < Duration::from_secs(60));
    assert!(eq.max_residual_force <= sys.params.force_tolerance);
    assert!(eq.steps <= sys.params.max_steps);

    // before inversion the free vertices sag
    let hanging = sys.positions();
    for p in sys
        .particles
        .iter()
        .zip(&hanging)
        .filter(|(p, _)| !p.anchored)
        .map(|(_, x)| x)
    {
        assert!(p.z < 0.0);
    }
    // inversion mirrors about the anchor plane (z = 0 here)
    for (a, b) in hanging.iter().zip(&eq.final_positions) {
        assert_eq!(a.z, -b.z);
    }

    // same springs, restarted from the flat mesh
    let statics = SpringSystem {
        particles: m
            .vertex_positions
            .iter()
            .zip(&sys.particles)
            .map(|(&position, p)| Particle {
                position,
                velocity: Vector::zeros(),
                ..*p
            })
            .collect(),
        springs: sys.springs.clone(),
        params: sys.params,
    };
    let oracle = minimize_energy(&statics);
    let worst = hanging
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    let sag = hanging.iter().map(|p| -p.z).fold(0.0, f64::max);
    assert!(worst <= 1e-3 * sag, "worst {worst} m, sag {sag} m");
}

#[test]
fn symmetric_pavilion_stays_mirror_symmetric() {
    let (m, mut sys) = default_system(9);
    let eq = simulate_to_equilibrium(&mut sys, None).unwrap();
    let n = 9;
    let side = 6.0;
    let uv = m.lattice.as_ref().unwrap();
    for (i, c) in uv.iter().enumerate() {
        let j = uv
            .iter()
            .position(|d| d.u == n - c.u - c.v && d.v == c.v)
            .expect("mirror vertex");
        let (a, b) = (eq.final_positions[i], eq.final_positions[j]);
        let mirrored = Point::new(side - a.x, a.y, a.z);
        assert!((mirrored - b).norm() <= 1e-9, "{i} vs {j}: {}", (mirrored - b).norm());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn third_law_and_rest_length(
        k in 0.1f64..1000.0, l in 0.01f64..5.0,
        ax in -3.0f64..3.0, ay in -3.0f64..3.0, az in -3.0f64..3.0,
        dx in -1.0f64..1.0, dy in -1.0f64..1.0, dz in -1.0f64..1.0,
    ) {
        let d = Vector::new(dx, dy, dz);
        prop_assume!(d.norm() > 1e-3);
        let a = Point::new(ax, ay, az);
        let s = spring(k, l);
        let b = a + d;
        let fa = spring_force(&s, &a, &b).unwrap();
        let fb = spring_force(&s, &b, &a).unwrap();
        prop_assert!((fa + fb).norm() <= 1e-12 * k.max(1.0));
        let at_rest = a + d.normalize() * l;
        prop_assert!(spring_force(&s, &a, &at_rest).unwrap().norm() <= 1e-12 * k.max(1.0));
    }

    #[test]
    fn net_internal_force_vanishes(seed in 0u64..500) {
        let sys = perturbed_free_system(seed);
        let net: Vector = accumulate_forces(&sys).unwrap().iter().sum();
        prop_assert!(net.norm() <= 1e-12);
    }
}
