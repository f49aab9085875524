//! Stage runners, artifact files and the end-to-end run.
//!
//! Every stage has one function used both by [`run_pipeline`] and by the
//! per-stage CLI subcommands, so chaining the subcommands through files gives
//! the same bytes as a single pipeline run.
//!
//! Output directory layout:
//!
//! ```text
//! grid.obj, grid.graph.json
//! formfound.obj, formfound.graph.json, physics_trace.csv
//! planarized.obj, planarized.graph.json, planarize_trace.csv
//! fabrication/panel_NNNN.obj, joint_vNNNN.obj, deviation_report.csv, fasteners.json
//! run_report.json
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, FabricateConfig, GridConfig, PhysicsConfig, PipelineConfig, PlanarizeConfig};
use crate::fabricate::{fabricate, FabricateError, FabricationModel};
use crate::hexgrid::{build_hex_mesh, validate_hex_mesh, GridError, HexMesh, TriGrid};
use crate::mesh::{export_mesh, import_mesh, read_sidecar, sidecar_path, write_sidecar, MeshIoError};
use crate::physics::{build_spring_system, simulate_to_equilibrium, Equilibrium, PhysicsError, TraceRow};
use crate::planarize::{planarize, PlanarizeError, PlanarizeOutcome};

pub const GRID_MESH: &str = "grid.obj";
pub const FORMFOUND_MESH: &str = "formfound.obj";
pub const PLANARIZED_MESH: &str = "planarized.obj";
pub const PHYSICS_TRACE: &str = "physics_trace.csv";
pub const PLANARIZE_TRACE: &str = "planarize_trace.csv";
pub const FABRICATION_DIR: &str = "fabrication";
pub const RUN_REPORT: &str = "run_report.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("grid: {0}")]
    Grid(#[from] GridError),
    #[error("simulate: {0}")]
    Physics(#[from] PhysicsError),
    #[error("planarize: {0}")]
    Planarize(#[from] PlanarizeError),
    #[error("fabricate: {0}")]
    Fabricate(#[from] FabricateError),
    #[error("io: {0}")]
    Io(#[from] MeshIoError),
    #[error("grid: mesh fails validation: {0}")]
    InvalidMesh(String),
    #[error("report: {0}")]
    Report(String),
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> MeshIoError + '_ {
    move |source| MeshIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `path` and its adjacency sidecar.
pub fn write_hex_mesh(mesh: &HexMesh, path: &Path) -> Result<(), MeshIoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    export_mesh(&mesh.to_poly_mesh(), path)?;
    write_sidecar(&mesh.sidecar(), &sidecar_path(path))
}

/// Reads a mesh and, when present, its sidecar.
pub fn read_hex_mesh(path: &Path) -> Result<HexMesh, PipelineError> {
    let poly = import_mesh(path)?;
    let sc_path = sidecar_path(path);
    let sidecar = if sc_path.exists() {
        Some(read_sidecar(&sc_path)?)
    } else {
        None
    };
    Ok(HexMesh::from_parts(poly, sidecar.as_ref())?)
}

pub fn grid_stage(cfg: &GridConfig) -> Result<HexMesh, PipelineError> {
    let grid = TriGrid::equilateral(cfg.side_meters, cfg.subdivision)?;
    let mesh = build_hex_mesh(&grid)?;
    let report = validate_hex_mesh(&mesh);
    if !report.is_valid() {
        return Err(PipelineError::InvalidMesh(format!("{:?}", report.violations)));
    }
    Ok(mesh)
}

pub struct SimulateOutput {
    pub mesh: HexMesh,
    pub equilibrium: Equilibrium,
    pub spring_count: usize,
    pub trace: Vec<TraceRow>,
}

pub fn simulate_stage(mesh: &HexMesh, cfg: &PhysicsConfig) -> Result<SimulateOutput, PipelineError> {
    let anchors = cfg.anchors.to_spec()?.resolve(mesh)?;
    let mut sys = build_spring_system(mesh, &cfg.spring_defaults(), &anchors, cfg.simulation_params())?;
    let mut trace = Vec::new();
    let equilibrium = simulate_to_equilibrium(&mut sys, Some(&mut trace))?;
    Ok(SimulateOutput {
        mesh: mesh.with_positions(equilibrium.final_positions.clone()),
        spring_count: sys.springs.len(),
        equilibrium,
        trace,
    })
}

pub fn physics_trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,kineticEnergy,maxResidualForce\n");
    for r in trace {
        let _ = writeln!(out, "{},{},{}", r.step, r.kinetic_energy, r.max_residual_force);
    }
    out
}

pub struct PlanarizeOutput {
    pub mesh: HexMesh,
    pub outcome: PlanarizeOutcome,
    pub tolerance: f64,
}

pub fn planarize_stage(mesh: &HexMesh, cfg: &PlanarizeConfig) -> Result<PlanarizeOutput, PipelineError> {
    let settings = cfg.settings_for(&mesh.vertex_positions);
    let faces: Vec<Vec<usize>> = mesh.face_map.values().cloned().collect();
    let outcome = planarize(&mesh.vertex_positions, &faces, &settings)?;
    Ok(PlanarizeOutput {
        mesh: mesh.with_positions(outcome.q.clone()),
        outcome,
        tolerance: settings.planarity_tolerance,
    })
}

pub fn planarize_trace_csv(outcome: &PlanarizeOutcome) -> String {
    let mut out = String::from("iteration,objective,maxPlanarityError,wPlan,objectiveAfterGlobal\n");
    for t in &outcome.trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            t.iteration, t.objective_after_local, t.max_planarity_error, t.w_plan, t.objective_after_global
        );
    }
    out
}

pub fn fabricate_stage(mesh: &HexMesh, cfg: &FabricateConfig) -> Result<FabricationModel, PipelineError> {
    Ok(fabricate(&mesh.to_poly_mesh(), &cfg.params())?)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), MeshIoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    fs::write(path, text).map_err(io_error(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GridSummary {
    pub seconds: f64,
    pub faces: usize,
    pub vertices: usize,
    pub adjacency_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimulateSummary {
    pub seconds: f64,
    pub springs: usize,
    pub steps: usize,
    pub max_residual_force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlanarizeSummary {
    pub seconds: f64,
    pub iterations: usize,
    pub max_planarity_error: f64,
    pub tolerance: f64,
    pub displacement_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FabricateSummary {
    pub seconds: f64,
    pub panels: usize,
    pub joints: usize,
    pub skipped_joints: usize,
    pub flipped_faces: Vec<usize>,
    pub max_deviation_m: f64,
    pub max_deviation_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArtifactHash {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub config: PipelineConfig,
    pub grid: GridSummary,
    pub simulate: SimulateSummary,
    pub planarize: PlanarizeSummary,
    pub fabricate: FabricateSummary,
    pub artifacts: Vec<ArtifactHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect_files(dir: &Path, prefix: &str, out: &mut Vec<(String, PathBuf)>) -> Result<(), MeshIoError> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(io_error(dir))?
        .collect::<Result<_, _>>()
        .map_err(io_error(dir))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = e.file_name().to_string_lossy().into_owned();
        let rel = if prefix.is_empty() {
            name
        } else {
            format!("{prefix}/{name}")
        };
        let path = e.path();
        if path.is_dir() {
            collect_files(&path, &rel, out)?;
        } else if rel != RUN_REPORT {
            out.push((rel, path));
        }
    }
    Ok(())
}

/// SHA-256 of every file under `dir` except the run report, sorted by path.
pub fn hash_artifacts(dir: &Path) -> Result<Vec<ArtifactHash>, MeshIoError> {
    let mut files = Vec::new();
    collect_files(dir, "", &mut files)?;
    files
        .into_iter()
        .map(|(rel, path)| {
            let bytes = fs::read(&path).map_err(io_error(&path))?;
            Ok(ArtifactHash {
                path: rel,
                sha256: sha256_hex(&bytes),
            })
        })
        .collect()
}

/// Runs all four stages, writing artifacts and `run_report.json` into `out_dir`.
///
/// Stale files from earlier runs are not removed; use a fresh directory when
/// comparing hashes.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(io_error(out_dir))?;

    let t = Instant::now();
    let grid = grid_stage(&cfg.grid)?;
    write_hex_mesh(&grid, &out_dir.join(GRID_MESH))?;
    let grid_summary = GridSummary {
        seconds: t.elapsed().as_secs_f64(),
        faces: grid.face_count(),
        vertices: grid.vertex_count(),
        adjacency_edges: grid.adjacency.edge_count(),
    };

    let t = Instant::now();
    let sim = simulate_stage(&grid, &cfg.physics)?;
    write_hex_mesh(&sim.mesh, &out_dir.join(FORMFOUND_MESH))?;
    write_text(&out_dir.join(PHYSICS_TRACE), &physics_trace_csv(&sim.trace))?;
    let simulate_summary = SimulateSummary {
        seconds: t.elapsed().as_secs_f64(),
        springs: sim.spring_count,
        steps: sim.equilibrium.steps,
        max_residual_force: sim.equilibrium.max_residual_force,
    };

    let t = Instant::now();
    let plan = planarize_stage(&sim.mesh, &cfg.planarize)?;
    write_hex_mesh(&plan.mesh, &out_dir.join(PLANARIZED_MESH))?;
    write_text(&out_dir.join(PLANARIZE_TRACE), &planarize_trace_csv(&plan.outcome))?;
    let planarize_summary = PlanarizeSummary {
        seconds: t.elapsed().as_secs_f64(),
        iterations: plan.outcome.iterations,
        max_planarity_error: plan.outcome.max_planarity_error,
        tolerance: plan.tolerance,
        displacement_objective: crate::planarize::displacement_objective(&sim.mesh.vertex_positions, &plan.outcome.q)?,
    };

    let t = Instant::now();
    let model = fabricate_stage(&plan.mesh, &cfg.fabricate)?;
    model.write(&out_dir.join(FABRICATION_DIR))?;
    let fabricate_summary = FabricateSummary {
        seconds: t.elapsed().as_secs_f64(),
        panels: model.panels.len(),
        joints: model.joints.joints.len(),
        skipped_joints: model.joints.skipped.len(),
        flipped_faces: model.orientation.flipped.clone(),
        max_deviation_m: model.deviation.max,
        max_deviation_mm: model.deviation.max * 1e3,
    };

    let report = RunReport {
        config: cfg.clone(),
        grid: grid_summary,
        simulate: simulate_summary,
        planarize: planarize_summary,
        fabricate: fabricate_summary,
        artifacts: hash_artifacts(out_dir)?,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_text(&out_dir.join(RUN_REPORT), &text)?;
    Ok(report)
}

pub fn read_report(out_dir: &Path) -> Result<RunReport, PipelineError> {
    let path = out_dir.join(RUN_REPORT);
    let text = fs::read_to_string(&path).map_err(io_error(&path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Report(format!("{}: {e}", path.display())))
}

/// Paths whose current hash differs from the report (or that are missing).
pub fn verify_report(out_dir: &Path, report: &RunReport) -> Vec<String> {
    report
        .artifacts
        .iter()
        .filter(|a| match fs::read(out_dir.join(&a.path)) {
            Ok(bytes) => sha256_hex(&bytes) != a.sha256,
            Err(_) => true,
        })
        .map(|a| a.path.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn mesh_artifact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = grid_stage(&GridConfig {
            side_meters: 2.0,
            subdivision: 6,
        })
        .unwrap();
        let path = dir.path().join("m.obj");
        write_hex_mesh(&mesh, &path).unwrap();
        assert!(dir.path().join("m.graph.json").exists());
        let back = read_hex_mesh(&path).unwrap();
        assert_eq!(back, mesh);
    }

    #[test]
    fn grid_stage_rejects_bad_subdivision() {
        let err = grid_stage(&GridConfig {
            side_meters: 1.0,
            subdivision: 7,
        })
        .unwrap_err();
        assert!(err.to_string().starts_with("grid: NOT a factor of 3"));
    }
}
