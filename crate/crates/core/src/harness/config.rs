//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::constitutive::{ActuationSignal, FiberMode, Material, MuscleFiber};
use crate::dynamics::{EdgeLoad, ForceSpec, SolverConfig};
use crate::error::{Error, Result};
use crate::mesh::{build_hex_box, build_tet_box, Axis, ElementKind, FaceSide, Mesh};

use super::scenarios::SCENARIOS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub mesh: MeshSpec,
    pub material: Material,
    #[serde(default)]
    pub forces: ForceConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fibers: Vec<FiberSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub tracked: Vec<PointSpec>,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default = "default_output")]
    pub output: String,
}

fn default_output() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub kind: ElementKind,
    /// Box extents in meters.
    pub dims: [f64; 3],
    pub resolution: [usize; 3],
    /// Resolution used with `--full-scale`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_resolution: Option<[usize; 3]>,
    /// Mesh text file replacing the generated box; relative to the config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default = "default_clamp")]
    pub clamp: Vec<FaceSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceSpec {
    pub axis: Axis,
    pub side: FaceSide,
}

impl FaceSpec {
    pub fn x_min() -> Vec<FaceSpec> {
        vec![FaceSpec {
            axis: Axis::X,
            side: FaceSide::Min,
        }]
    }
}

fn default_clamp() -> Vec<FaceSpec> {
    FaceSpec::x_min()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceConfig {
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    /// Total downward force (N) spread over the top edge of the free end.
    #[serde(default)]
    pub edge_force: f64,
    /// Seconds over which the edge force rises linearly from zero.
    #[serde(default = "default_ramp")]
    pub edge_ramp: f64,
    #[serde(default)]
    pub damping_lambda: f64,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

pub const DEFAULT_EDGE_RAMP: f64 = 0.1;

fn default_ramp() -> f64 {
    DEFAULT_EDGE_RAMP
}

impl Default for ForceConfig {
    fn default() -> Self {
        ForceConfig {
            gravity: default_gravity(),
            edge_force: 0.0,
            edge_ramp: DEFAULT_EDGE_RAMP,
            damping_lambda: 0.0,
        }
    }
}

/// Elements a fiber runs through: a half of the body (`upper`, `lower`,
/// `left`, `right`, split at the bounding-box center) or explicit indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Region {
    Named(String),
    Elements(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSpec {
    pub region: Region,
    pub direction: [f64; 3],
    pub stiffness: f64,
    pub mode: FiberMode,
    pub actuation: ActuationSignal,
}

/// A tracked node: an index, or one of the selectors `tip-left`,
/// `tip-right`, `tip-center`, `tip-top`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointSpec {
    Node(usize),
    Selector(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    Parameters,
    Sequence,
    PressureMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossName {
    FinalPose,
    Trajectory,
    StaticResponse,
    Envelope,
    ConstantAmplitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    pub mode: CalibrationMode,
    /// `E`, `lambda`, `w<k>`, `a<k>` (constant level) or `a<k>~<j>`
    /// (antagonist pair). Ignored in sequence mode.
    #[serde(default)]
    pub parameters: Vec<String>,
    pub loss: LossName,
    /// Hidden values that generate a synthetic reference. In sequence mode
    /// the per-fiber sequences are concatenated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub truth: Vec<f64>,
    /// Reference trajectory CSV; relative to the config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    /// Initial guesses are drawn uniformly in `[0.5, 1.5]×` these values.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nominal: Vec<f64>,
    /// Explicit initial guess; overrides `nominal`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial: Vec<f64>,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    /// Largest accepted relative error against `truth`; exceeding it is a
    /// test failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub frequency: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fibers: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pressures: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub held_out: Vec<f64>,
    /// Polynomial coefficients (lowest order first) of the synthetic
    /// pressure-to-actuation law.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub law: Vec<f64>,
    #[serde(default = "default_degree")]
    pub degree: usize,
}

fn default_iterations() -> usize {
    100
}

fn default_degree() -> usize {
    2
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Time steps for the beam traces.
    pub h: Vec<f64>,
    #[serde(default = "default_lambdas")]
    pub lambda: Vec<f64>,
    /// Frequencies (rad/s) for the single-oscillator sweep.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub omega: Vec<f64>,
    #[serde(default = "default_periods")]
    pub periods: f64,
    /// Also search, per time step, for the gain that holds the beam's
    /// oscillation at constant amplitude.
    #[serde(default)]
    pub boundary: bool,
}

impl CalibrationSpec {
    /// A spec with empty value lists and default optimizer settings.
    pub fn new(mode: CalibrationMode, parameters: &[&str], loss: LossName) -> Self {
        CalibrationSpec {
            mode,
            parameters: parameters.iter().map(|s| s.to_string()).collect(),
            loss,
            truth: Vec::new(),
            reference: None,
            nominal: Vec::new(),
            initial: Vec::new(),
            max_iterations: default_iterations(),
            tolerance: None,
            frequency: 0.0,
            fibers: Vec::new(),
            pressures: Vec::new(),
            held_out: Vec::new(),
            law: Vec::new(),
            degree: default_degree(),
        }
    }
}

fn default_lambdas() -> Vec<f64> {
    vec![0.0]
}

fn default_periods() -> f64 {
    20.0
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            if line > 0 {
                Error::parse(line, e.message().to_string())
            } else {
                Error::Config(e.message().to_string())
            }
        })?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, parses and validates a config. Relative file references are
    /// resolved against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut String| {
            let candidate = PathBuf::from(&*p);
            if candidate.is_relative() {
                *p = dir.join(candidate).to_string_lossy().into_owned();
            }
        };
        if let Some(f) = config.mesh.file.as_mut() {
            resolve(f);
        }
        if let Some(r) = config.calibration.as_mut().and_then(|c| c.reference.as_mut()) {
            resolve(r);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let config_err = |msg: String| Err(Error::Config(msg));
        if !SCENARIOS.iter().any(|s| s.id == self.scenario) {
            let ids: Vec<&str> = SCENARIOS.iter().map(|s| s.id).collect();
            return config_err(format!(
                "scenario `{}` is not one of: {}",
                self.scenario,
                ids.join(", ")
            ));
        }
        self.solver
            .validate()
            .map_err(|e| Error::Config(format!("solver: {e}")))?;
        self.material
            .validate()
            .map_err(|e| Error::Config(format!("material: {e}")))?;
        self.solver
            .steps_for(self.duration)
            .map_err(|e| Error::Config(format!("duration: {e}")))?;
        if let Some(f) = &self.mesh.file {
            if !Path::new(f).is_file() {
                return config_err(format!("mesh.file: {f} does not exist"));
            }
        }
        if let Some(c) = &self.calibration {
            if let Some(r) = &c.reference {
                if !Path::new(r).is_file() {
                    return config_err(format!("calibration.reference: {r} does not exist"));
                }
            }
            if !c.initial.is_empty() && !c.nominal.is_empty() {
                return config_err("calibration: give either `initial` or `nominal`, not both".into());
            }
        }
        if let Some(s) = &self.sweep {
            for &h in &s.h {
                let solver = SolverConfig { h, ..self.solver };
                solver
                    .steps_for(self.duration)
                    .map_err(|e| Error::Config(format!("sweep.h = {h}: {e}")))?;
            }
        }
        for (i, f) in self.fibers.iter().enumerate() {
            f.actuation
                .validate()
                .map_err(|e| Error::Config(format!("fibers[{i}].actuation: {e}")))?;
        }
        Ok(())
    }

    pub fn resolution(&self, full_scale: bool) -> [usize; 3] {
        match (full_scale, self.mesh.full_resolution) {
            (true, Some(r)) => r,
            _ => self.mesh.resolution,
        }
    }

    pub fn build_mesh(&self, full_scale: bool) -> Result<Mesh> {
        let mut mesh = match &self.mesh.file {
            Some(f) => Mesh::from_text(&std::fs::read_to_string(f)?)?,
            None => {
                let res = self.resolution(full_scale);
                match self.mesh.kind {
                    ElementKind::Hex8 => build_hex_box(self.mesh.dims, res)?,
                    ElementKind::Tet4 => build_tet_box(self.mesh.dims, res)?,
                }
            }
        };
        for face in &self.mesh.clamp {
            mesh = mesh.clamp_face(face.axis, face.side)?;
        }
        Ok(mesh)
    }

    pub fn build_forces(&self, mesh: &Mesh) -> ForceSpec {
        let mut forces = ForceSpec {
            gravity: self.forces.gravity,
            edge_loads: Vec::new(),
            damping_lambda: self.forces.damping_lambda,
        };
        if self.forces.edge_force != 0.0 {
            forces.edge_loads.push(EdgeLoad {
                nodes: tip_edge(mesh),
                force: [0.0, 0.0, -self.forces.edge_force],
                ramp: self.forces.edge_ramp,
            });
        }
        forces
    }

    pub fn build_fibers(&self, mesh: &Mesh) -> Result<(Vec<MuscleFiber>, Vec<ActuationSignal>)> {
        let mut fibers = Vec::new();
        let mut signals = Vec::new();
        for (i, spec) in self.fibers.iter().enumerate() {
            let elements = match &spec.region {
                Region::Elements(list) => list.clone(),
                Region::Named(name) => {
                    half(mesh, name).map_err(|e| Error::Config(format!("fibers[{i}].region: {e}")))?
                }
            };
            let fiber = MuscleFiber::new(elements, Vector3::from(spec.direction), spec.stiffness, spec.mode)
                .and_then(|f| f.validate(Some(mesh)).map(|_| f))
                .map_err(|e| Error::Config(format!("fibers[{i}]: {e}")))?;
            fibers.push(fiber);
            signals.push(spec.actuation.clone());
        }
        Ok((fibers, signals))
    }

    pub fn resolve_tracked(&self, mesh: &Mesh) -> Result<Vec<usize>> {
        self.tracked.iter().map(|p| resolve_point(mesh, p)).collect()
    }
}

/// Nodes on the top edge of the free end: maximal x, then maximal z.
pub fn tip_edge(mesh: &Mesh) -> Vec<usize> {
    let (_, hi) = mesh.bounding_box();
    let tol = 1e-9 * hi.norm().max(1.0);
    mesh.face_nodes(Axis::X, FaceSide::Max)
        .into_iter()
        .filter(|&n| (mesh.nodes()[n].z - hi.z).abs() <= tol)
        .collect()
}

pub fn resolve_point(mesh: &Mesh, point: &PointSpec) -> Result<usize> {
    let (lo, hi) = mesh.bounding_box();
    let mid = (lo + hi) / 2.0;
    match point {
        PointSpec::Node(n) if *n < mesh.node_count() => Ok(*n),
        PointSpec::Node(n) => Err(Error::Config(format!("tracked node {n} is out of range"))),
        PointSpec::Selector(s) => {
            let target = match s.as_str() {
                "tip-left" => Vector3::new(hi.x, lo.y, hi.z),
                "tip-right" => Vector3::new(hi.x, hi.y, hi.z),
                "tip-center" => Vector3::new(hi.x, mid.y, mid.z),
                "tip-top" => Vector3::new(hi.x, mid.y, hi.z),
                other => return Err(Error::Config(format!("unknown point selector `{other}`"))),
            };
            Ok(mesh.nearest_node(&target))
        }
    }
}

fn half(mesh: &Mesh, name: &str) -> Result<Vec<usize>> {
    let (lo, hi) = mesh.bounding_box();
    let mid = (lo + hi) / 2.0;
    let (axis, upper) = match name {
        "upper" => (2, true),
        "lower" => (2, false),
        "left" => (1, false),
        "right" => (1, true),
        other => return Err(Error::invalid(format!("unknown region `{other}`"))),
    };
    let elements: Vec<usize> = (0..mesh.element_count())
        .filter(|&e| {
            let nodes = mesh.element(e);
            let c = nodes.iter().map(|&n| mesh.nodes()[n][axis]).sum::<f64>() / nodes.len() as f64;
            if upper {
                c > mid[axis]
            } else {
                c < mid[axis]
            }
        })
        .collect();
    if elements.is_empty() {
        return Err(Error::invalid(format!("region `{name}` holds no elements")));
    }
    Ok(elements)
}
