//! Planar hexagonal panel structures.
//!
//! The crate chains four stages:
//!
//! 1. [`hexgrid`] subdivides an equilateral triangle into a lattice and
//!    extracts hexagonal faces together with the face-adjacency graph.
//! 2. [`physics`] turns the mesh into a particle-spring network and relaxes it
//!    under gravity to a hanging equilibrium (optionally inverted into a
//!    compression form).
//! 3. [`planarize`] moves vertices as little as possible so that every face
//!    becomes planar.
//! 4. [`fabricate`] derives walls, joints, fastener markers and the wall
//!    deviation report from the planar mesh.
//!
//! [`pipeline`] wires the stages together and handles artifacts; the
//! `hexpanel` binary exposes each stage as a subcommand.
//!
//! All lengths are in meters.

// NaN-rejecting checks are written as negated comparisons on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod fabricate;
pub mod hexgrid;
pub mod mesh;
pub mod physics;
pub mod pipeline;
pub mod planarize;

pub use nalgebra::{Point3, Vector3};

/// 3D point in meters.
pub type Point = Point3<f64>;
/// 3D vector.
pub type Vector = Vector3<f64>;
