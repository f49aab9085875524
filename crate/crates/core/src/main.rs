use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hexpanel::config::{load_config, load_physics_config, PhysicsConfig, PipelineConfig};
use hexpanel::pipeline::{
    fabricate_stage, grid_stage, physics_trace_csv, planarize_stage, planarize_trace_csv, read_hex_mesh, read_report,
    run_pipeline, simulate_stage, verify_report, write_hex_mesh, write_text, PipelineError,
};

#[derive(Parser)]
#[command(name = "hexpanel", version, about = "Planar hexagonal panel structures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the hexagonal mesh on a subdivided equilateral triangle.
    Grid {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Triangle side length, meters.
        #[arg(long)]
        side: Option<f64>,
        /// Subdivisions per side; must be a multiple of 3.
        #[arg(long)]
        subdivision: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relax the mesh under gravity as a particle-spring network.
    Simulate {
        /// Full pipeline config or a bare physics section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write per-step kinetic energy and residual force as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Move vertices minimally so every face is planar.
    Planarize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mesh: PathBuf,
        /// Tolerance relative to the bounding-box diagonal.
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Write the objective trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Emit panels, joints, fastener markers and the deviation report.
    Fabricate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        wall_height: Option<f64>,
        #[arg(long)]
        thickness: Option<f64>,
        #[arg(long)]
        joint_proportion: Option<f64>,
        #[arg(long)]
        hole_diameter: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run all stages and write a hashed run report.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides output.directory from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print a run report and check every artifact against its hash.
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; defaults to output.directory from the config.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn config_or_default(path: Option<&Path>) -> Result<PipelineConfig, PipelineError> {
    Ok(match path {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    })
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Grid {
            config,
            side,
            subdivision,
            out,
        } => {
            let mut cfg = config_or_default(config.as_deref())?.grid;
            cfg.side_meters = side.unwrap_or(cfg.side_meters);
            cfg.subdivision = subdivision.unwrap_or(cfg.subdivision);
            let mesh = grid_stage(&cfg)?;
            write_hex_mesh(&mesh, &out)?;
            println!(
                "grid: {} faces, {} vertices, {} adjacency edges -> {}",
                mesh.face_count(),
                mesh.vertex_count(),
                mesh.adjacency.edge_count(),
                out.display()
            );
        }
        Command::Simulate {
            config,
            mesh,
            out,
            trace,
        } => {
            let cfg = match config {
                Some(p) => load_physics_config(&p)?,
                None => PhysicsConfig::default(),
            };
            let input = read_hex_mesh(&mesh)?;
            let sim = simulate_stage(&input, &cfg)?;
            write_hex_mesh(&sim.mesh, &out)?;
            if let Some(t) = trace {
                write_text(&t, &physics_trace_csv(&sim.trace))?;
            }
            println!(
                "simulate: {} springs, {} steps, max residual force {:e} N -> {}",
                sim.spring_count,
                sim.equilibrium.steps,
                sim.equilibrium.max_residual_force,
                out.display()
            );
        }
        Command::Planarize {
            config,
            mesh,
            tolerance,
            max_iters,
            out,
            trace,
        } => {
            let mut cfg = config_or_default(config.as_deref())?.planarize;
            cfg.tolerance = tolerance.unwrap_or(cfg.tolerance);
            cfg.max_iterations = max_iters.unwrap_or(cfg.max_iterations);
            let input = read_hex_mesh(&mesh)?;
            let plan = planarize_stage(&input, &cfg)?;
            write_hex_mesh(&plan.mesh, &out)?;
            if let Some(t) = trace {
                write_text(&t, &planarize_trace_csv(&plan.outcome))?;
            }
            println!(
                "planarize: {} iterations, max planarity error {:e} m (tolerance {:e} m) -> {}",
                plan.outcome.iterations,
                plan.outcome.max_planarity_error,
                plan.tolerance,
                out.display()
            );
        }
        Command::Fabricate {
            config,
            mesh,
            wall_height,
            thickness,
            joint_proportion,
            hole_diameter,
            out_dir,
        } => {
            let mut cfg = config_or_default(config.as_deref())?.fabricate;
            cfg.wall_height = wall_height.unwrap_or(cfg.wall_height);
            cfg.thickness = thickness.unwrap_or(cfg.thickness);
            cfg.joint_proportion = joint_proportion.unwrap_or(cfg.joint_proportion);
            cfg.hole_diameter = hole_diameter.unwrap_or(cfg.hole_diameter);
            let input = read_hex_mesh(&mesh)?;
            let model = fabricate_stage(&input, &cfg)?;
            model.write(&out_dir)?;
            for f in &model.orientation.flipped {
                eprintln!("fabricate: face {f} winding reversed for consistent orientation");
            }
            println!(
                "fabricate: {} panels, {} joints, max e_dev {:.3} mm -> {}",
                model.panels.len(),
                model.joints.joints.len(),
                model.deviation.max * 1e3,
                out_dir.display()
            );
        }
        Command::Pipeline { config, out_dir } => {
            let cfg = config_or_default(config.as_deref())?;
            let dir = out_dir.unwrap_or_else(|| cfg.output.directory.clone());
            let r = run_pipeline(&cfg, &dir)?;
            println!(
                "pipeline: {} faces, {} springs, {} physics steps, {} planarize iterations, max e_dev {:.3} mm, {} artifacts -> {}",
                r.grid.faces,
                r.simulate.springs,
                r.simulate.steps,
                r.planarize.iterations,
                r.fabricate.max_deviation_mm,
                r.artifacts.len(),
                dir.display()
            );
        }
        Command::Report { config, dir } => {
            let dir = match dir {
                Some(d) => d,
                None => config_or_default(config.as_deref())?.output.directory,
            };
            let r = read_report(&dir)?;
            println!(
                "grid      {:>8.3} s  {} faces, {} vertices",
                r.grid.seconds, r.grid.faces, r.grid.vertices
            );
            println!(
                "simulate  {:>8.3} s  {} springs, {} steps, residual {:e} N",
                r.simulate.seconds, r.simulate.springs, r.simulate.steps, r.simulate.max_residual_force
            );
            println!(
                "planarize {:>8.3} s  {} iterations, max planarity error {:e} m",
                r.planarize.seconds, r.planarize.iterations, r.planarize.max_planarity_error
            );
            println!(
                "fabricate {:>8.3} s  {} panels, {} joints, max e_dev {:.3} mm",
                r.fabricate.seconds, r.fabricate.panels, r.fabricate.joints, r.fabricate.max_deviation_mm
            );
            let bad = verify_report(&dir, &r);
            if !bad.is_empty() {
                return Err(PipelineError::Report(format!("hash mismatch: {}", bad.join(", "))));
            }
            println!("{} artifacts verified", r.artifacts.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
