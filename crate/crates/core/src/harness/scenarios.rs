//! Built-in scenarios and their default configs.

use std::f64::consts::PI;

use crate::constitutive::{ActuationSignal, FiberMode, Material};
use crate::dynamics::SolverConfig;
use crate::error::{Error, Result};
use crate::mesh::ElementKind;

use super::config::{
    CalibrationMode, CalibrationSpec, ExperimentConfig, FiberSpec, ForceConfig, LossName, MeshSpec, PointSpec, Region,
    SweepSpec,
};

/// Subcommand a scenario is meant for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    DampingSweep,
    Calibrate,
    MuscleDemo,
}

impl Command {
    /// Subcommand name on the command line.
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::DampingSweep => "damping-sweep",
            Command::Calibrate => "calibrate",
            Command::MuscleDemo => "muscle-demo",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScenarioInfo {
    pub id: &'static str,
    pub command: Command,
    pub description: &'static str,
}

const fn info(id: &'static str, command: Command, description: &'static str) -> ScenarioInfo {
    ScenarioInfo {
        id,
        command,
        description,
    }
}

pub const SCENARIOS: &[ScenarioInfo] = &[
    info(
        "beam-a1-hex",
        Command::Simulate,
        "clamped beam released under gravity, hex mesh",
    ),
    info(
        "beam-a1-tet",
        Command::Simulate,
        "clamped beam released under gravity, tet mesh",
    ),
    info(
        "beam-a2-hex",
        Command::Simulate,
        "gravity release, hex reference for the fine tet run",
    ),
    info(
        "beam-a2-tet",
        Command::Simulate,
        "gravity release on a much finer tet mesh",
    ),
    info(
        "beam-b-hex",
        Command::Simulate,
        "gravity plus 0.510 N tip edge load, hex mesh",
    ),
    info(
        "beam-b-tet",
        Command::Simulate,
        "gravity plus 0.510 N tip edge load, tet mesh",
    ),
    info(
        "beam-c-hex",
        Command::Simulate,
        "0.510 N edge load on the refined hex mesh",
    ),
    info(
        "beam-c-tet",
        Command::Simulate,
        "0.510 N edge load on a refined tet mesh",
    ),
    info(
        "beam-d-hex",
        Command::Simulate,
        "gravity plus 0.991 N tip edge load, hex mesh",
    ),
    info(
        "beam-d-tet",
        Command::Simulate,
        "gravity plus 0.991 N tip edge load, tet mesh",
    ),
    info(
        "beam-e-hex",
        Command::Simulate,
        "0.991 N edge load on the refined hex mesh",
    ),
    info(
        "beam-e-tet",
        Command::Simulate,
        "0.991 N edge load on a refined tet mesh",
    ),
    info(
        "beam-sweep",
        Command::DampingSweep,
        "numerical damping of the beam tip over time steps",
    ),
    info(
        "beam-boundary",
        Command::DampingSweep,
        "constant-amplitude damping gain per time step on a coarse beam",
    ),
    info(
        "beam-calibrate-e",
        Command::Calibrate,
        "Young's modulus from a synthetic loaded-beam final pose",
    ),
    info(
        "beam-envelope",
        Command::Calibrate,
        "damping gain from a synthetic oscillation envelope",
    ),
    info("muscle-ac1", Command::MuscleDemo, "bar with one extending fiber"),
    info(
        "muscle-ac2",
        Command::MuscleDemo,
        "bar with an extending and an antagonistic contracting fiber",
    ),
    info(
        "arm-map-ac1",
        Command::Calibrate,
        "pressure-to-actuation map, single fiber",
    ),
    info(
        "arm-map-ac2",
        Command::Calibrate,
        "pressure-to-actuation map, antagonistic pair",
    ),
    info(
        "fish",
        Command::Calibrate,
        "5 Hz actuation sequences of a two-fiber tail proxy",
    ),
];

pub fn scenario(id: &str) -> Result<&'static ScenarioInfo> {
    SCENARIOS
        .iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::Config(format!("unknown scenario `{id}`")))
}

/// Loading cases of the clamped-beam study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamCase {
    A1,
    A2,
    B,
    C,
    D,
    E,
}

pub const BEAM_DIMS: [f64; 3] = [0.1, 0.035, 0.035];

impl BeamCase {
    pub const ALL: [BeamCase; 6] = [
        BeamCase::A1,
        BeamCase::A2,
        BeamCase::B,
        BeamCase::C,
        BeamCase::D,
        BeamCase::E,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BeamCase::A1 => "a1",
            BeamCase::A2 => "a2",
            BeamCase::B => "b",
            BeamCase::C => "c",
            BeamCase::D => "d",
            BeamCase::E => "e",
        }
    }

    /// Total edge force in newtons.
    pub fn edge_force(self) -> f64 {
        match self {
            BeamCase::A1 | BeamCase::A2 => 0.0,
            BeamCase::B | BeamCase::C => 0.510,
            BeamCase::D | BeamCase::E => 0.991,
        }
    }

    /// Full-scale grid. Hex grids give 4608 and 9900 DOFs; tet grids come
    /// within 0.4% of 3834, 71688 and 183516 DOFs.
    pub fn full_resolution(self, kind: ElementKind) -> [usize; 3] {
        match (kind, self) {
            (ElementKind::Hex8, BeamCase::C | BeamCase::E) => [32, 9, 9],
            (ElementKind::Hex8, _) => [23, 7, 7],
            (ElementKind::Tet4, BeamCase::A2) => [72, 28, 28],
            (ElementKind::Tet4, BeamCase::C | BeamCase::E) => [53, 20, 20],
            (ElementKind::Tet4, _) => [19, 7, 7],
        }
    }

    /// Desk-scale grid with the same refinement pattern.
    pub fn desk_resolution(self, kind: ElementKind) -> [usize; 3] {
        match (kind, self) {
            (ElementKind::Hex8, BeamCase::C | BeamCase::E) => [16, 5, 5],
            (_, BeamCase::C | BeamCase::E) => [18, 6, 6],
            (ElementKind::Tet4, BeamCase::A2) => [24, 8, 8],
            _ => [12, 4, 4],
        }
    }
}

fn kind_tag(kind: ElementKind) -> &'static str {
    match kind {
        ElementKind::Hex8 => "hex",
        ElementKind::Tet4 => "tet",
    }
}

fn tip_points() -> Vec<PointSpec> {
    vec![
        PointSpec::Selector("tip-left".into()),
        PointSpec::Selector("tip-right".into()),
    ]
}

pub fn beam_case(case: BeamCase, kind: ElementKind) -> ExperimentConfig {
    ExperimentConfig {
        scenario: format!("beam-{}-{}", case.name(), kind_tag(kind)),
        mesh: MeshSpec {
            kind,
            dims: BEAM_DIMS,
            resolution: case.desk_resolution(kind),
            full_resolution: Some(case.full_resolution(kind)),
            file: None,
            clamp: super::config::FaceSpec::x_min(),
        },
        material: Material::silicone(),
        forces: ForceConfig {
            edge_force: case.edge_force(),
            ..ForceConfig::default()
        },
        fibers: Vec::new(),
        solver: SolverConfig::default(),
        tracked: tip_points(),
        duration: 1.0,
        calibration: None,
        sweep: None,
        output: "out".into(),
    }
}

fn beam(resolution: [usize; 3], scenario: &str) -> ExperimentConfig {
    let mut c = beam_case(BeamCase::A1, ElementKind::Hex8);
    c.scenario = scenario.into();
    c.mesh.resolution = resolution;
    c.mesh.full_resolution = None;
    c
}

/// Clamped bar used for the muscle designs and the arm proxy.
/// Fiber stiffness of the muscle bar. Much stiffer fibers buckle the bar
/// at 10% actuation.
const MUSCLE_STIFFNESS: f64 = 2e4;

fn muscle_bar(scenario: &str, antagonist: bool, level: f64) -> ExperimentConfig {
    let extend = FiberSpec {
        region: Region::Named("upper".into()),
        direction: [1.0, 0.0, 0.0],
        stiffness: MUSCLE_STIFFNESS,
        mode: FiberMode::Extend,
        actuation: ActuationSignal::constant(level),
    };
    let mut fibers = vec![extend];
    if antagonist {
        fibers.push(FiberSpec {
            region: Region::Named("lower".into()),
            direction: [1.0, 0.0, 0.0],
            stiffness: MUSCLE_STIFFNESS,
            mode: FiberMode::Contract,
            actuation: ActuationSignal::constant(2.0 - level),
        });
    }
    ExperimentConfig {
        scenario: scenario.into(),
        mesh: MeshSpec {
            kind: ElementKind::Hex8,
            dims: [0.1, 0.02, 0.02],
            resolution: [10, 2, 2],
            full_resolution: Some([20, 4, 4]),
            file: None,
            clamp: super::config::FaceSpec::x_min(),
        },
        material: Material::silicone(),
        forces: ForceConfig {
            gravity: [0.0; 3],
            ..ForceConfig::default()
        },
        fibers,
        solver: SolverConfig::default(),
        tracked: vec![PointSpec::Selector("tip-top".into())],
        duration: 0.5,
        calibration: None,
        sweep: None,
        output: "out".into(),
    }
}

/// Default config for a registered scenario.
pub fn preset(id: &str) -> Result<ExperimentConfig> {
    scenario(id)?;
    if let Some(rest) = id.strip_prefix("beam-") {
        if let Some((case, kind)) = rest.split_once('-') {
            let case = BeamCase::ALL.into_iter().find(|c| c.name() == case);
            let kind = match kind {
                "hex" => Some(ElementKind::Hex8),
                "tet" => Some(ElementKind::Tet4),
                _ => None,
            };
            if let (Some(case), Some(kind)) = (case, kind) {
                return Ok(beam_case(case, kind));
            }
        }
    }
    let config = match id {
        "beam-sweep" => {
            let mut c = beam([12, 4, 4], id);
            c.duration = 0.8;
            c.tracked.truncate(1);
            c.sweep = Some(SweepSpec {
                h: vec![0.005, 0.01, 0.02, 0.04],
                lambda: vec![0.0],
                omega: vec![PI, 2.0 * PI, 4.0 * PI],
                periods: 20.0,
                boundary: false,
            });
            c
        }
        "beam-boundary" => {
            let mut c = beam([6, 2, 2], id);
            c.duration = 0.8;
            c.tracked.truncate(1);
            c.sweep = Some(SweepSpec {
                h: vec![0.01, 0.02, 0.04],
                lambda: vec![0.0],
                omega: Vec::new(),
                periods: 20.0,
                boundary: true,
            });
            c
        }
        "beam-calibrate-e" => {
            let mut c = beam([8, 3, 3], id);
            c.forces.edge_force = BeamCase::E.edge_force();
            c.duration = 0.3;
            let mut cal = CalibrationSpec::new(CalibrationMode::Parameters, &["E"], LossName::FinalPose);
            cal.truth = vec![263_824.0];
            cal.initial = vec![1.5 * 263_824.0];
            cal.tolerance = Some(0.02);
            c.calibration = Some(cal);
            c
        }
        "beam-envelope" => {
            let mut c = beam([6, 2, 2], id);
            c.duration = 0.8;
            c.tracked.truncate(1);
            let mut cal = CalibrationSpec::new(CalibrationMode::Parameters, &["lambda"], LossName::Envelope);
            cal.truth = vec![0.01];
            cal.nominal = vec![0.01];
            cal.tolerance = Some(0.05);
            c.calibration = Some(cal);
            c
        }
        "muscle-ac1" => muscle_bar(id, false, 1.1),
        "muscle-ac2" => muscle_bar(id, true, 1.1),
        "arm-map-ac1" | "arm-map-ac2" => {
            let ac2 = id == "arm-map-ac2";
            let mut c = muscle_bar(id, ac2, 1.0);
            c.duration = 0.2;
            let parameter = if ac2 { "a0~1" } else { "a0" };
            let mut cal = CalibrationSpec::new(CalibrationMode::PressureMap, &[parameter], LossName::FinalPose);
            cal.pressures = vec![10.0, 20.0, 30.0, 40.0, 50.0];
            cal.held_out = vec![15.0, 35.0];
            cal.law = vec![1.0, 0.003];
            cal.initial = vec![1.0];
            cal.tolerance = Some(0.05);
            c.calibration = Some(cal);
            c
        }
        "fish" => {
            let fiber = |region: &str| FiberSpec {
                region: Region::Named(region.into()),
                direction: [1.0, 0.0, 0.0],
                stiffness: 5e4,
                mode: FiberMode::Contract,
                actuation: ActuationSignal::constant(1.0),
            };
            let mut cal = CalibrationSpec::new(CalibrationMode::Sequence, &[], LossName::Trajectory);
            cal.frequency = 5.0;
            cal.fibers = vec![0, 1];
            cal.truth = vec![0.85, 1.0, 0.85, 1.0, 0.9, 1.0, 0.85, 1.0, 0.85, 1.0];
            cal.tolerance = Some(0.05);
            ExperimentConfig {
                scenario: id.into(),
                mesh: MeshSpec {
                    kind: ElementKind::Hex8,
                    dims: [0.12, 0.03, 0.02],
                    resolution: [8, 2, 1],
                    full_resolution: Some([24, 6, 4]),
                    file: None,
                    clamp: super::config::FaceSpec::x_min(),
                },
                material: Material::silicone(),
                forces: ForceConfig {
                    gravity: [0.0; 3],
                    ..ForceConfig::default()
                },
                fibers: vec![fiber("left"), fiber("right")],
                solver: SolverConfig::default(),
                tracked: tip_points(),
                duration: 1.0,
                calibration: Some(cal),
                sweep: None,
                output: "out".into(),
            }
        }
        other => return Err(Error::Config(format!("scenario `{other}` has no preset"))),
    };
    Ok(config)
}
