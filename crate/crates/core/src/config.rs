//! Pipeline configuration (JSON, camelCase keys, every field optional).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabricate::FabricationParams;
use crate::physics::{AnchorSpec, SimulationParams, SpringDefaults};
use crate::planarize::PlanarizeSettings;
use crate::Point;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct GridConfig {
    pub side_meters: f64,
    pub subdivision: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            side_meters: 6.0,
            subdivision: 9,
        }
    }
}

/// `"corners"`, `"boundary"`, or an explicit list of vertex indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnchorsConfig {
    Named(String),
    Indices(Vec<usize>),
}

impl AnchorsConfig {
    pub fn to_spec(&self) -> Result<AnchorSpec, ConfigError> {
        match self {
            AnchorsConfig::Named(s) if s == "corners" => Ok(AnchorSpec::Corners),
            AnchorsConfig::Named(s) if s == "boundary" => Ok(AnchorSpec::Boundary),
            AnchorsConfig::Named(s) => Err(ConfigError::InvalidConfig(format!(
                "anchors must be \"corners\", \"boundary\" or a list of vertex indices, got {s:?}"
            ))),
            AnchorsConfig::Indices(ix) => Ok(AnchorSpec::Indices(ix.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub mass: f64,
    pub k_stretch: f64,
    pub k_shear: f64,
    pub k_bend: f64,
    /// Velocity drag on every particle.
    pub damping: f64,
    /// Axial damping inside each spring.
    pub spring_damping: f64,
    pub dt: f64,
    pub g: f64,
    pub anchors: AnchorsConfig,
    pub invert_after_solve: bool,
    pub force_tolerance: f64,
    pub max_steps: usize,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        let s = SimulationParams::default();
        let d = SpringDefaults::default();
        PhysicsConfig {
            mass: d.mass,
            k_stretch: d.k_stretch,
            k_shear: d.k_shear,
            k_bend: d.k_bend,
            damping: s.global_damping,
            spring_damping: d.spring_damping,
            dt: s.dt,
            g: s.gravity,
            anchors: AnchorsConfig::Named("corners".into()),
            invert_after_solve: s.invert_after_solve,
            force_tolerance: s.force_tolerance,
            max_steps: s.max_steps,
        }
    }
}

impl PhysicsConfig {
    pub fn simulation_params(&self) -> SimulationParams {
        SimulationParams {
            gravity: self.g,
            dt: self.dt,
            global_damping: self.damping,
            force_tolerance: self.force_tolerance,
            max_steps: self.max_steps,
            invert_after_solve: self.invert_after_solve,
        }
    }

    pub fn spring_defaults(&self) -> SpringDefaults {
        SpringDefaults {
            mass: self.mass,
            k_stretch: self.k_stretch,
            k_shear: self.k_shear,
            k_bend: self.k_bend,
            spring_damping: self.spring_damping,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct PlanarizeConfig {
    /// Planarity tolerance as a fraction of the mesh bounding-box diagonal.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub closeness_weight: f64,
    pub planarity_weight: f64,
    pub weight_growth: f64,
    pub max_planarity_weight: f64,
    pub stall_tolerance: f64,
    pub pinned: Vec<usize>,
}

impl Default for PlanarizeConfig {
    fn default() -> Self {
        let s = PlanarizeSettings::default();
        PlanarizeConfig {
            tolerance: 1e-6,
            max_iterations: s.max_iterations,
            closeness_weight: s.closeness_weight,
            planarity_weight: s.planarity_weight,
            weight_growth: s.weight_growth,
            max_planarity_weight: s.max_planarity_weight,
            stall_tolerance: s.stall_tolerance,
            pinned: s.pinned,
        }
    }
}

impl PlanarizeConfig {
    /// Settings with the absolute tolerance derived from `points`.
    pub fn settings_for(&self, points: &[Point]) -> PlanarizeSettings {
        PlanarizeSettings {
            planarity_tolerance: self.tolerance * crate::planarize::bbox_diagonal(points),
            max_iterations: self.max_iterations,
            closeness_weight: self.closeness_weight,
            planarity_weight: self.planarity_weight,
            weight_growth: self.weight_growth,
            max_planarity_weight: self.max_planarity_weight,
            stall_tolerance: self.stall_tolerance,
            pinned: self.pinned.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct FabricateConfig {
    pub wall_height: f64,
    pub thickness: f64,
    pub joint_proportion: f64,
    pub hole_diameter: f64,
}

impl Default for FabricateConfig {
    fn default() -> Self {
        let p = FabricationParams::default();
        FabricateConfig {
            wall_height: p.wall_height,
            thickness: p.thickness,
            joint_proportion: p.joint_proportion,
            hole_diameter: p.hole_diameter,
        }
    }
}

impl FabricateConfig {
    pub fn params(&self) -> FabricationParams {
        FabricationParams {
            wall_height: self.wall_height,
            thickness: self.thickness,
            joint_proportion: self.joint_proportion,
            hole_diameter: self.hole_diameter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("out"),
            formats: vec!["obj".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub planarize: PlanarizeConfig,
    pub fabricate: FabricateConfig,
    pub output: OutputConfig,
}

fn invalid(msg: impl Into<String>) -> Result<(), ConfigError> {
    Err(ConfigError::InvalidConfig(msg.into()))
}

fn positive(name: &str, x: f64) -> Result<(), ConfigError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        invalid(format!("{name} must be a positive number, got {x}"))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.grid;
        positive("grid.sideMeters", g.side_meters)?;
        if g.subdivision == 0 || !g.subdivision.is_multiple_of(3) {
            return invalid("subdivision must be a multiple of 3");
        }

        let p = &self.physics;
        positive("physics.mass", p.mass)?;
        positive("physics.kStretch", p.k_stretch)?;
        positive("physics.kShear", p.k_shear)?;
        positive("physics.kBend", p.k_bend)?;
        positive("physics.dt", p.dt)?;
        positive("physics.forceTolerance", p.force_tolerance)?;
        if !(p.damping >= 0.0 && p.spring_damping >= 0.0) {
            return invalid("physics.damping and physics.springDamping must be >= 0");
        }
        if !p.g.is_finite() {
            return invalid("physics.g must be finite");
        }
        if p.max_steps == 0 {
            return invalid("physics.maxSteps must be >= 1");
        }
        p.anchors.to_spec()?;

        let q = &self.planarize;
        positive("planarize.tolerance", q.tolerance)?;
        positive("planarize.closenessWeight", q.closeness_weight)?;
        positive("planarize.planarityWeight", q.planarity_weight)?;
        if q.max_iterations == 0 {
            return invalid("planarize.maxIterations must be >= 1");
        }
        if !(q.weight_growth > 1.0) {
            return invalid("planarize.weightGrowth must be > 1");
        }
        if !(q.max_planarity_weight >= q.planarity_weight) {
            return invalid("planarize.maxPlanarityWeight must be >= planarize.planarityWeight");
        }
        if !(q.stall_tolerance >= 0.0) {
            return invalid("planarize.stallTolerance must be >= 0");
        }

        let f = &self.fabricate;
        positive("fabricate.wallHeight", f.wall_height)?;
        positive("fabricate.thickness", f.thickness)?;
        positive("fabricate.holeDiameter", f.hole_diameter)?;
        if !(f.joint_proportion > 0.0 && f.joint_proportion <= 0.5) {
            return invalid("fabricate.jointProportion must lie in (0, 0.5]");
        }

        if let Some(bad) = self.output.formats.iter().find(|f| f.as_str() != "obj") {
            return invalid(format!("unsupported output format {bad:?}; only \"obj\" is available"));
        }
        Ok(())
    }
}

fn parse_error(e: serde_json::Error) -> ConfigError {
    ConfigError::ParseError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let cfg: PipelineConfig = serde_json::from_str(text).map_err(parse_error)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Accepts either a full pipeline config or a bare physics section.
pub fn load_physics_config(path: &Path) -> Result<PhysicsConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(parse_error)?;
    let is_full = value.as_object().is_some_and(|o| {
        ["grid", "physics", "planarize", "fabricate", "output"]
            .iter()
            .any(|k| o.contains_key(*k))
    });
    if is_full {
        return Ok(parse_config(&text)?.physics);
    }
    let physics: PhysicsConfig = serde_json::from_str(&text).map_err(parse_error)?;
    let cfg = PipelineConfig {
        physics,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg.physics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.grid.subdivision, 9);
        assert_eq!(cfg.physics.anchors, AnchorsConfig::Named("corners".into()));
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        assert!(matches!(parse_config(""), Err(ConfigError::ParseError { .. })));
    }

    #[test]
    fn parse_error_has_position() {
        match parse_config("{\n  \"grid\": {\n    \"subdivision\": ,\n  }\n}") {
            Err(ConfigError::ParseError { line, column, .. }) => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn subdivision_seven_names_the_invariant() {
        match parse_config(r#"{"grid": {"subdivision": 7}}"#) {
            Err(ConfigError::InvalidConfig(m)) => assert_eq!(m, "subdivision must be a multiple of 3"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn anchor_forms() {
        let cfg = parse_config(r#"{"physics": {"anchors": [0, 5]}}"#).unwrap();
        assert_eq!(cfg.physics.anchors.to_spec().unwrap(), AnchorSpec::Indices(vec![0, 5]));
        assert!(parse_config(r#"{"physics": {"anchors": "middle"}}"#).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            parse_config(r#"{"grid": {"subdivisions": 9}}"#),
            Err(ConfigError::ParseError { .. })
        ));
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }
}
