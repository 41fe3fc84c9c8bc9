//! Subcommand runners. Each writes its files into the output directory and
//! returns a JSON-like summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::adjoint::{configured, Parameter, ParameterSet};
use crate::calibrate::{
    held_out_error, optimize, optimize_actuation_sequence, polyval, pressure_map, seeded_initial, LbfgsConfig,
    LossKind, LossSpec, PressureMapOptions, PressureSample,
};
use crate::constitutive::{write_fibers, ActuationSignal, SoftBody};
use crate::damplab::{
    damping_ratio, dominant_omega, extract_peaks_with, lambda_crit, log_decrement, oscillator_sweep, sweep_csv,
    zeta_analytic, PeakOptions, PeakSeries,
};
use crate::dynamics::{Simulator, SolverConfig, Trajectory};
use crate::error::{Error, Result};
use crate::mesh::Axis;

use super::config::{CalibrationMode, CalibrationSpec, ExperimentConfig, LossName};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out: PathBuf,
    pub seed: u64,
    pub full_scale: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            out: PathBuf::from("out"),
            seed: 0,
            full_scale: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub summary: String,
    pub files: Vec<PathBuf>,
    /// Checks that did not hold (recovery tolerances and the like).
    pub failures: Vec<String>,
}

impl RunReport {
    /// Numeric summary entry, or the first element of a list entry.
    pub fn value(&self, key: &str) -> Option<f64> {
        let prefix = format!("{key:?}: ");
        let line = self
            .summary
            .lines()
            .find_map(|l| l.trim().strip_prefix(prefix.as_str()))?;
        let v = line.trim_end_matches(',').trim_start_matches('[');
        v.split([',', ']']).next()?.trim().parse().ok()
    }
}

/// Process exit code for an error: 2 for configuration and input problems,
/// 3 for a diverged simulation, 4 for anything else.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) | Error::Parse { .. } | Error::InvalidArgument(_) | Error::Io(_) => 2,
        e if e.is_divergence() => 3,
        _ => 4,
    }
}

/// Simulator and tracked nodes described by a config.
pub struct Built {
    pub sim: Simulator,
    pub tracked: Vec<usize>,
}

pub fn build(config: &ExperimentConfig, full_scale: bool) -> Result<Built> {
    let mesh = config.build_mesh(full_scale)?;
    let tracked = config.resolve_tracked(&mesh)?;
    let forces = config.build_forces(&mesh);
    let (fibers, signals) = config.build_fibers(&mesh)?;
    let body = SoftBody::new(mesh, config.material, fibers)?;
    let sim = Simulator::new(body, forces, config.solver, signals)?;
    Ok(Built { sim, tracked })
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }
}

/// Ordered key/value pairs rendered as a flat JSON object.
#[derive(Default)]
struct Summary(Vec<(String, String)>);

impl Summary {
    fn text(&mut self, key: &str, value: &str) {
        self.0.push((key.into(), format!("{value:?}")));
    }

    fn num(&mut self, key: &str, value: f64) {
        self.0.push((key.into(), json_number(value)));
    }

    fn opt(&mut self, key: &str, value: Option<f64>) {
        self.0.push((key.into(), value.map_or("null".into(), json_number)));
    }

    fn list(&mut self, key: &str, values: &[f64]) {
        let items: Vec<String> = values.iter().map(|v| json_number(*v)).collect();
        self.0.push((key.into(), format!("[{}]", items.join(", "))));
    }

    fn raw(&mut self, key: &str, value: String) {
        self.0.push((key.into(), value));
    }

    fn render(&self) -> String {
        let mut out = String::from("{\n");
        for (i, (k, v)) in self.0.iter().enumerate() {
            let comma = if i + 1 < self.0.len() { "," } else { "" };
            let _ = writeln!(out, "  {k:?}: {v}{comma}");
        }
        out.push_str("}\n");
        out
    }
}

fn json_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        "null".into()
    }
}

fn points(traj: &Trajectory, step: usize) -> String {
    let rows: Vec<String> = (0..traj.point_count())
        .map(|p| {
            let x = traj.point(step, p);
            format!("[{}, {}, {}]", json_number(x.x), json_number(x.y), json_number(x.z))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

/// Vertical tip trace relative to `baseline`, signed so that the first
/// swing away from the start is positive.
pub fn oscillation_signal(z: &[f64], baseline: f64) -> Vec<f64> {
    let sign = if z.first().is_some_and(|z0| *z0 > baseline) {
        -1.0
    } else {
        1.0
    };
    z.iter().map(|v| sign * (v - baseline)).collect()
}

pub const PEAK_OPTIONS: PeakOptions = PeakOptions {
    baseline: Some(0.0),
    include_start: true,
    min_relative: 1e-3,
};

/// Damping measured from one tip trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDamping {
    pub peaks: Option<PeakSeries>,
    pub zeta: Option<f64>,
    pub omega: Option<f64>,
}

pub fn trace_damping(signal: &[f64], h: f64) -> TraceDamping {
    let peaks = extract_peaks_with(signal, &PEAK_OPTIONS).ok();
    let zeta = peaks.as_ref().and_then(|p| log_decrement(p, 1).ok()).map(damping_ratio);
    TraceDamping {
        peaks,
        zeta,
        omega: dominant_omega(signal, 0.0, h).ok(),
    }
}

pub fn simulate(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let Built { sim, tracked } = build(config, opts.full_scale)?;
    let traj = sim.simulate(&sim.initial_state(), config.duration, &tracked)?;
    let mut w = Writer::new(&opts.out)?;
    w.write("trajectory.csv", &traj.to_csv())?;
    let eq = sim.static_equilibrium(&sim.actuation_at(config.duration))?;
    let rest = sim.initial_state();
    let mut s = Summary::default();
    s.text("scenario", &config.scenario);
    s.num("dofs", sim.body().mesh().dof_count() as f64);
    s.num("steps", (traj.len() - 1) as f64);
    s.num("final_time", *traj.times.last().unwrap_or(&0.0));
    s.raw("tracked", format!("{tracked:?}"));
    s.raw("final_positions", points(&traj, traj.len() - 1));
    let steady: Vec<f64> = tracked.iter().map(|&n| eq.q[3 * n + 2] - rest.q[3 * n + 2]).collect();
    s.list("steady_deflection_z", &steady);
    if let Some(&n) = tracked.first() {
        let signal = oscillation_signal(&traj.axis_series(0, Axis::Z), eq.q[3 * n + 2]);
        let d = trace_damping(&signal, config.solver.h);
        s.list("peaks", &d.peaks.map(|p| p.amplitudes()).unwrap_or_default());
        s.opt("zeta_measured", d.zeta);
        s.opt("omega_dominant", d.omega);
        s.opt("zeta_analytic", d.omega.map(|o| zeta_analytic(o, config.solver.h)));
    }
    let summary = s.render();
    w.write("summary.json", &summary)?;
    Ok(RunReport {
        summary,
        files: w.files,
        failures: Vec::new(),
    })
}

/// Peaks counted by the constant-amplitude check and the boundary search.
const AMPLITUDE_PEAKS: usize = 4;
/// Log-amplitude variance below which an oscillation counts as constant.
pub const CONSTANT_AMPLITUDE_LIMIT: f64 = 1e-3;

fn log_variance(peaks: &PeakSeries) -> Option<f64> {
    let k = peaks.len().min(AMPLITUDE_PEAKS);
    if k < 2 {
        return None;
    }
    let logs: Vec<f64> = peaks.amplitudes()[..k].iter().map(|a| a.ln()).collect();
    let mean = logs.iter().sum::<f64>() / k as f64;
    Some(logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamSweepRow {
    pub h: f64,
    pub lambda: f64,
    pub omega: Option<f64>,
    pub zeta_measured: Option<f64>,
    pub log_variance: Option<f64>,
    pub status: String,
    pub source: &'static str,
}

impl BeamSweepRow {
    pub fn zeta_analytic(&self) -> Option<f64> {
        self.omega.map(|o| zeta_analytic(o, self.h))
    }

    pub fn constant_amplitude(&self) -> bool {
        self.log_variance.is_some_and(|v| v < CONSTANT_AMPLITUDE_LIMIT)
    }
}

pub const BEAM_SWEEP_HEADER: &str =
    "source,h,lambda,omega_dominant,zeta_measured,zeta_analytic,lambda_crit_unit_mass,log_amplitude_variance,constant_amplitude,status";

fn beam_row(
    base: &Simulator,
    node_index: usize,
    baseline: f64,
    h: f64,
    lambda: f64,
    duration: f64,
) -> Result<BeamSweepRow> {
    let mut sim = base.clone();
    sim.set_damping(lambda)?;
    let traj = match sim.simulate(&sim.initial_state(), duration, &[node_index]) {
        Ok(t) => t,
        Err(e) if e.is_divergence() => {
            return Ok(BeamSweepRow {
                h,
                lambda,
                omega: None,
                zeta_measured: None,
                log_variance: None,
                status: "diverged".into(),
                source: "grid",
            })
        }
        Err(e) => return Err(e),
    };
    let signal = oscillation_signal(&traj.axis_series(0, Axis::Z), baseline);
    let d = trace_damping(&signal, h);
    let status = if d.zeta.is_some() { "ok" } else { "insufficient-peaks" };
    Ok(BeamSweepRow {
        h,
        lambda,
        omega: d.omega,
        zeta_measured: d.zeta,
        log_variance: d.peaks.as_ref().and_then(log_variance),
        status: status.into(),
        source: "grid",
    })
}

fn opt_csv(v: Option<f64>) -> String {
    v.map_or("nan".into(), |v| format!("{v:.16e}"))
}

pub fn beam_sweep_csv(rows: &[BeamSweepRow]) -> String {
    let mut out = format!("{BEAM_SWEEP_HEADER}\n");
    for r in rows {
        let crit = r.omega.and_then(|o| lambda_crit(o, r.h).ok());
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{},{},{},{},{},{},{}",
            r.source,
            r.h,
            r.lambda,
            opt_csv(r.omega),
            opt_csv(r.zeta_measured),
            opt_csv(r.zeta_analytic()),
            opt_csv(crit),
            opt_csv(r.log_variance),
            r.constant_amplitude(),
            r.status
        );
    }
    out
}

/// Gain that holds the tip oscillation at constant amplitude, found by
/// minimizing the log-amplitude variance from an estimate scaled from the
/// single-oscillator boundary.
pub fn amplitude_boundary(base: &Simulator, node: usize, baseline: f64, omega: f64, duration: f64) -> Result<f64> {
    let h = base.config().h;
    let node_mass = base.body().mass()[node];
    let guess = 0.5 * node_mass * h * omega * omega;
    let tracked = vec![node];
    let kind = LossKind::ConstantAmplitude {
        point: 0,
        axis: Axis::Z,
        baseline,
        peaks: AMPLITUDE_PEAKS,
    };
    let loss = LossSpec::new(kind, tracked, Trajectory::new(vec![node]));
    let params = ParameterSet::new().with(Parameter::Damping);
    let config = LbfgsConfig {
        max_iterations: 40,
        ..LbfgsConfig::default()
    };
    Ok(optimize(base, &params, &[guess], duration, &loss, &config)?.values[0])
}

/// Beam-tip damping rows for every `(h, Λ)` of the sweep table, plus one
/// constant-amplitude row per step size when the boundary search is on.
pub fn beam_sweep_rows(config: &ExperimentConfig, full_scale: bool) -> Result<Vec<BeamSweepRow>> {
    let spec = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("damping-sweep needs a [sweep] table".into()))?;
    let Built { sim, tracked } = build(config, full_scale)?;
    let node = *tracked
        .first()
        .ok_or_else(|| Error::Config("damping-sweep needs a tracked point".into()))?;
    let eq = sim.static_equilibrium(&sim.actuation_at(0.0))?;
    let baseline = eq.q[3 * node + 2];
    let sims = spec
        .h
        .iter()
        .map(|&h| {
            let mut s = sim.clone();
            s.set_solver(SolverConfig { h, ..*sim.config() })?;
            Ok((h, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let grid: Vec<(usize, f64)> = (0..sims.len())
        .flat_map(|i| spec.lambda.iter().map(move |&l| (i, l)))
        .collect();
    let mut rows = grid
        .par_iter()
        .map(|&(i, lambda)| beam_row(&sims[i].1, node, baseline, sims[i].0, lambda, config.duration))
        .collect::<Result<Vec<_>>>()?;
    if spec.boundary {
        let found = sims
            .par_iter()
            .map(|(h, s)| {
                let omega = rows
                    .iter()
                    .find(|r| r.h == *h && r.lambda == 0.0)
                    .and_then(|r| r.omega)
                    .ok_or_else(|| {
                        Error::InsufficientData(format!("no undamped trace at h = {h} to size the search"))
                    })?;
                let lambda = amplitude_boundary(s, node, baseline, omega, config.duration)?;
                let mut row = beam_row(s, node, baseline, *h, lambda, config.duration)?;
                row.source = "boundary";
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(found);
    }
    Ok(rows)
}

pub fn damping_sweep(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let rows = beam_sweep_rows(config, opts.full_scale)?;
    let spec = config.sweep.as_ref().expect("checked by beam_sweep_rows");
    let mut w = Writer::new(&opts.out)?;
    w.write("sweep.csv", &beam_sweep_csv(&rows))?;
    let mut s = Summary::default();
    s.text("scenario", &config.scenario);
    s.num("rows", rows.len() as f64);
    let flagged = rows.iter().filter(|r| r.status != "ok").count();
    s.num("flagged_rows", flagged as f64);
    if !spec.omega.is_empty() {
        let osc = oscillator_sweep(&spec.omega, &spec.h, &spec.lambda, spec.periods)?;
        w.write("oscillator_sweep.csv", &sweep_csv(&osc))?;
        s.num("oscillator_rows", osc.len() as f64);
    }
    for r in rows.iter().filter(|r| r.source == "boundary") {
        let factor = r.omega.map(|o| r.lambda / (r.h * o * o));
        s.opt(&format!("boundary_lambda_h{}", r.h), Some(r.lambda));
        s.opt(&format!("boundary_factor_h{}", r.h), factor);
    }
    let summary = s.render();
    w.write("summary.json", &summary)?;
    Ok(RunReport {
        summary,
        files: w.files,
        failures: Vec::new(),
    })
}

/// Parses `E`, `lambda`, `w<k>`, `a<k>` and `a<k>~<j>`.
pub fn parse_parameter(name: &str) -> Result<Parameter> {
    let bad = || Error::Config(format!("unknown parameter `{name}`"));
    let index = |s: &str| s.parse::<usize>().map_err(|_| bad());
    match name {
        "E" => Ok(Parameter::YoungsModulus),
        "lambda" => Ok(Parameter::Damping),
        _ => {
            if let Some(k) = name.strip_prefix('w') {
                return Ok(Parameter::FiberStiffness(index(k)?));
            }
            let rest = name.strip_prefix('a').ok_or_else(bad)?;
            match rest.split_once('~') {
                Some((f, p)) => Ok(Parameter::Antagonist {
                    fiber: index(f)?,
                    partner: index(p)?,
                }),
                None => Ok(Parameter::Actuation {
                    fiber: index(rest)?,
                    interval: 0,
                }),
            }
        }
    }
}

fn synthetic_reference(
    sim: &Simulator,
    params: &ParameterSet,
    values: &[f64],
    duration: f64,
    tracked: &[usize],
) -> Result<Trajectory> {
    let truth = configured(sim, params, values)?;
    truth.simulate(&truth.initial_state(), duration, tracked)
}

fn loss_for(name: LossName, tracked: &[usize], reference: Trajectory, baseline: f64) -> LossSpec {
    let kind = match name {
        LossName::FinalPose => LossKind::FinalPose,
        LossName::Trajectory => LossKind::Trajectory,
        LossName::StaticResponse => LossKind::StaticResponse,
        LossName::Envelope => LossKind::Envelope {
            point: 0,
            axis: Axis::Z,
            baseline,
        },
        LossName::ConstantAmplitude => LossKind::ConstantAmplitude {
            point: 0,
            axis: Axis::Z,
            baseline,
            peaks: AMPLITUDE_PEAKS,
        },
    };
    LossSpec::new(kind, tracked.to_vec(), reference)
}

fn lbfgs_for(spec: &CalibrationSpec) -> LbfgsConfig {
    LbfgsConfig {
        max_iterations: spec.max_iterations,
        ..LbfgsConfig::default()
    }
}

fn relative_error(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

pub fn calibrate(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let spec = config
        .calibration
        .as_ref()
        .ok_or_else(|| Error::Config("calibrate needs a [calibration] table".into()))?;
    let built = build(config, opts.full_scale)?;
    if built.tracked.is_empty() {
        return Err(Error::Config("calibrate needs tracked points".into()));
    }
    match spec.mode {
        CalibrationMode::Parameters => calibrate_parameters(config, spec, built, opts),
        CalibrationMode::Sequence => calibrate_sequence(config, spec, built, opts),
        CalibrationMode::PressureMap => calibrate_map(config, spec, built, opts),
    }
}

fn load_reference(path: &str, tracked: &[usize]) -> Result<Trajectory> {
    let reference = Trajectory::from_csv(&std::fs::read_to_string(path)?)?;
    if reference.point_ids != tracked {
        return Err(Error::Config(format!(
            "reference tracks nodes {:?}, config tracks {tracked:?}",
            reference.point_ids
        )));
    }
    Ok(reference)
}

fn calibrate_parameters(
    config: &ExperimentConfig,
    spec: &CalibrationSpec,
    built: Built,
    opts: &RunOptions,
) -> Result<RunReport> {
    let Built { sim, tracked } = built;
    let mut params = ParameterSet::new();
    for name in &spec.parameters {
        params = params.with(parse_parameter(name)?);
    }
    if params.is_empty() {
        return Err(Error::Config("calibration.parameters is empty".into()));
    }
    let count_ok = |v: &Vec<f64>| v.is_empty() || v.len() == params.len();
    if !(count_ok(&spec.truth) && count_ok(&spec.nominal) && count_ok(&spec.initial)) {
        return Err(Error::Config(
            "calibration value lists must match the parameter count".into(),
        ));
    }
    let reference = match (&spec.reference, spec.truth.is_empty()) {
        (Some(path), _) => load_reference(path, &tracked)?,
        (None, false) => synthetic_reference(&sim, &params, &spec.truth, config.duration, &tracked)?,
        (None, true) => return Err(Error::Config("calibration needs `truth` or a `reference` file".into())),
    };
    let eq = sim.static_equilibrium(&sim.actuation_at(0.0))?;
    let baseline = eq.q[3 * tracked[0] + 2];
    let loss = loss_for(spec.loss, &tracked, reference.clone(), baseline);
    let initial = if !spec.initial.is_empty() {
        spec.initial.clone()
    } else if !spec.nominal.is_empty() {
        seeded_initial(&spec.nominal, opts.seed)
    } else {
        params.values(&sim)?
    };
    let result = optimize(&sim, &params, &initial, config.duration, &loss, &lbfgs_for(spec))?;
    let mut w = Writer::new(&opts.out)?;
    w.write("history.csv", &result.history.to_csv())?;
    let mut text = String::new();
    for (i, name) in result.names.iter().enumerate() {
        let _ = write!(text, "{name} = {:.16e}", result.values[i]);
        if let Some(t) = spec.truth.get(i) {
            let _ = write!(
                text,
                "  # truth {t:.16e}, relative error {:.3e}",
                relative_error(result.values[i], *t)
            );
        }
        text.push('\n');
    }
    w.write("parameters.txt", &text)?;

    let mut s = Summary::default();
    let mut failures = Vec::new();
    s.text("scenario", &config.scenario);
    s.raw("parameters", format!("{:?}", result.names));
    s.list("initial", &initial);
    s.list("optimized", &result.values);
    s.num("loss", result.loss);
    s.text("termination", &format!("{:?}", result.termination));
    s.num("iterations", (result.history.records.len() - 1) as f64);
    s.num("evaluations", result.evaluations as f64);
    if !spec.truth.is_empty() {
        let errors: Vec<f64> = result
            .values
            .iter()
            .zip(&spec.truth)
            .map(|(g, t)| relative_error(*g, *t))
            .collect();
        s.list("relative_errors", &errors);
        let checked = if spec.loss == LossName::Envelope {
            let decay = |traj: &Trajectory| {
                let signal = oscillation_signal(&traj.axis_series(0, Axis::Z), baseline);
                extract_peaks_with(&signal, &PEAK_OPTIONS).and_then(|p| log_decrement(&p, 1))
            };
            let fitted = synthetic_reference(&sim, &params, &result.values, config.duration, &tracked)?;
            let (want, got) = (decay(&reference)?, decay(&fitted)?);
            s.num("decay_reference", want);
            s.num("decay_fitted", got);
            vec![("decay rate".to_string(), relative_error(got, want))]
        } else {
            result.names.iter().cloned().zip(errors).collect()
        };
        if let Some(tol) = spec.tolerance {
            for (name, err) in checked {
                if err > tol {
                    failures.push(format!("{name}: relative error {err:.3e} exceeds {tol}"));
                }
            }
        }
    }
    finish(s, w, failures)
}

fn finish(mut s: Summary, mut w: Writer, failures: Vec<String>) -> Result<RunReport> {
    let listed: Vec<String> = failures.iter().map(|f| format!("{f:?}")).collect();
    s.raw("failures", format!("[{}]", listed.join(", ")));
    let summary = s.render();
    w.write("summary.json", &summary)?;
    Ok(RunReport {
        summary,
        files: w.files,
        failures,
    })
}

fn calibrate_sequence(
    config: &ExperimentConfig,
    spec: &CalibrationSpec,
    built: Built,
    opts: &RunOptions,
) -> Result<RunReport> {
    let Built { sim, tracked } = built;
    if spec.fibers.is_empty() {
        return Err(Error::Config("sequence calibration needs `fibers`".into()));
    }
    let n = ActuationSignal::interval_count(config.duration, spec.frequency);
    let reference = match &spec.reference {
        Some(path) => load_reference(path, &tracked)?,
        None => {
            if spec.truth.len() != n * spec.fibers.len() {
                return Err(Error::Config(format!(
                    "truth needs {n} values per fiber ({} in total), got {}",
                    n * spec.fibers.len(),
                    spec.truth.len()
                )));
            }
            let mut truth = sim.clone();
            let mut signals = truth.actuation().to_vec();
            for (i, &f) in spec.fibers.iter().enumerate() {
                let slot = signals
                    .get_mut(f)
                    .ok_or_else(|| Error::Config(format!("no fiber {f}")))?;
                *slot = ActuationSignal::piecewise(spec.frequency, spec.truth[i * n..(i + 1) * n].to_vec())?;
            }
            truth.set_actuation(signals)?;
            truth.set_tolerance(crate::adjoint::GRADIENT_TOLERANCE)?;
            truth.simulate(&truth.initial_state(), config.duration, &tracked)?
        }
    };
    let loss = loss_for(spec.loss, &tracked, reference, 0.0);
    let (signals, result) = optimize_actuation_sequence(
        &sim,
        &spec.fibers,
        spec.frequency,
        config.duration,
        &loss,
        &lbfgs_for(spec),
    )?;
    let mut w = Writer::new(&opts.out)?;
    w.write("history.csv", &result.history.to_csv())?;
    let mut csv = String::from("fiber,interval,value,truth\n");
    let mut worst: f64 = 0.0;
    for (i, (&f, signal)) in spec.fibers.iter().zip(&signals).enumerate() {
        for (k, v) in signal.values.iter().enumerate() {
            let truth = spec.truth.get(i * n + k).copied();
            if let Some(t) = truth {
                worst = worst.max(relative_error(*v, t));
            }
            let _ = writeln!(csv, "{f},{k},{v:.16e},{}", opt_csv(truth));
        }
    }
    w.write("sequences.csv", &csv)?;
    let mut s = Summary::default();
    s.text("scenario", &config.scenario);
    s.num("intervals_per_fiber", n as f64);
    s.num("decision_variables", result.values.len() as f64);
    s.num("loss", result.loss);
    s.text("termination", &format!("{:?}", result.termination));
    s.num("iterations", (result.history.records.len() - 1) as f64);
    let mut failures = Vec::new();
    if !spec.truth.is_empty() {
        s.num("max_relative_error", worst);
        if let Some(tol) = spec.tolerance.filter(|t| worst > *t) {
            failures.push(format!("sequence: relative error {worst:.3e} exceeds {tol}"));
        }
    }
    finish(s, w, failures)
}

fn calibrate_map(
    config: &ExperimentConfig,
    spec: &CalibrationSpec,
    built: Built,
    opts: &RunOptions,
) -> Result<RunReport> {
    let Built { sim, tracked } = built;
    let [name] = spec.parameters.as_slice() else {
        return Err(Error::Config("a pressure map optimizes exactly one parameter".into()));
    };
    let parameter = parse_parameter(name)?;
    if spec.law.is_empty() {
        return Err(Error::Config("pressure maps need a synthetic `law`".into()));
    }
    let params = ParameterSet::new().with(parameter);
    let reference_at = |p: f64| synthetic_reference(&sim, &params, &[polyval(&spec.law, p)], config.duration, &tracked);
    let samples = spec
        .pressures
        .par_iter()
        .map(|&p| {
            Ok(PressureSample {
                pressure: p,
                loss: loss_for(spec.loss, &tracked, reference_at(p)?, 0.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let options = PressureMapOptions {
        parameter,
        degree: spec.degree,
        initial: spec.initial.first().copied().unwrap_or(1.0),
        duration: config.duration,
        lbfgs: lbfgs_for(spec),
    };
    let map = pressure_map(&sim, &samples, &options)?;
    let mut w = Writer::new(&opts.out)?;
    w.write("map.csv", &map.to_csv())?;
    w.write("map_coefficients.txt", &(map.coefficient_record() + "\n"))?;
    let mut s = Summary::default();
    s.text("scenario", &config.scenario);
    s.list("pressures", &map.pressures);
    s.list("optimized", &map.optimized);
    s.list("coefficients", &map.coefficients);
    s.list("law", &spec.law);
    s.num("fit_residual", map.residual);
    let law_error = map
        .pressures
        .iter()
        .map(|&p| (map.predict(p) - polyval(&spec.law, p)).abs())
        .fold(0.0, f64::max);
    s.num("law_error", law_error);
    s.raw("warnings", format!("{:?}", map.warnings));
    let mut failures = Vec::new();
    if !spec.held_out.is_empty() {
        let held = spec
            .held_out
            .par_iter()
            .map(|&p| Ok((p, reference_at(p)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut csv = String::from("pressure,a_predicted,a_law,relative_error\n");
        for (p, r) in &held {
            let e = held_out_error(
                &sim,
                parameter,
                &map,
                std::slice::from_ref(&(*p, r.clone())),
                config.duration,
            )?;
            let _ = writeln!(
                csv,
                "{p:.16e},{:.16e},{:.16e},{e:.16e}",
                map.predict(*p),
                polyval(&spec.law, *p)
            );
        }
        w.write("held_out.csv", &csv)?;
        let mean = held_out_error(&sim, parameter, &map, &held, config.duration)?;
        s.num("held_out_error", mean);
        if let Some(tol) = spec.tolerance.filter(|t| mean > *t) {
            failures.push(format!("held-out error {mean:.3e} exceeds {tol}"));
        }
    }
    for (i, h) in map.histories.iter().enumerate() {
        w.write(&format!("history_p{i}.csv"), &h.to_csv())?;
    }
    finish(s, w, failures)
}

/// Runs a muscle design, optionally overriding the extending fiber's level
/// (an antagonist partner gets `2 − level`).
pub fn muscle_demo(config: &ExperimentConfig, opts: &RunOptions, level: Option<f64>) -> Result<RunReport> {
    let mut config = config.clone();
    if config.fibers.is_empty() {
        return Err(Error::Config("muscle-demo needs at least one fiber".into()));
    }
    if let Some(a) = level {
        config.fibers[0].actuation = ActuationSignal::constant(a);
        if let Some(partner) = config.fibers.get_mut(1) {
            partner.actuation = ActuationSignal::constant(2.0 - a);
        }
    }
    let Built { sim, tracked } = build(&config, opts.full_scale)?;
    let traj = sim.simulate(&sim.initial_state(), config.duration, &tracked)?;
    let mut w = Writer::new(&opts.out)?;
    w.write("trajectory.csv", &traj.to_csv())?;
    w.write("fibers.txt", &write_fibers(sim.body().fibers()))?;
    let mut membership = String::from("element,fiber\n");
    for (k, f) in sim.body().fibers().iter().enumerate() {
        for e in &f.elements {
            let _ = writeln!(membership, "{e},{k}");
        }
    }
    w.write("membership.csv", &membership)?;
    let mut actuation = String::from("t");
    for k in 0..sim.actuation().len() {
        let _ = write!(actuation, ",a{k}");
    }
    actuation.push('\n');
    for &t in &traj.times {
        let _ = write!(actuation, "{t:.16e}");
        for a in sim.actuation_at(t) {
            let _ = write!(actuation, ",{a:.16e}");
        }
        actuation.push('\n');
    }
    w.write("actuation.csv", &actuation)?;
    let rest = sim.initial_state().q;
    let rest = &rest;
    let last = traj.len() - 1;
    let displacement: Vec<f64> = tracked
        .iter()
        .enumerate()
        .flat_map(|(p, &n)| {
            let x = traj.point(last, p);
            (0..3).map(move |d| x[d] - rest[3 * n + d]).collect::<Vec<_>>()
        })
        .collect();
    let mut s = Summary::default();
    s.text("scenario", &config.scenario);
    s.num("fibers", sim.body().fibers().len() as f64);
    s.list("levels", &sim.actuation_at(0.0));
    s.raw("tracked", format!("{tracked:?}"));
    s.list("final_displacement", &displacement);
    finish(s, w, Vec::new())
}

pub fn mesh_info(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let mesh = config.build_mesh(opts.full_scale)?;
    let tracked = config.resolve_tracked(&mesh)?;
    let (lo, hi) = mesh.bounding_box();
    let mass: f64 = mesh.lumped_mass(config.material.density)?.iter().sum();
    let volume = mesh.rest_shapes()?.total_volume();
    let mut w = Writer::new(&opts.out)?;
    w.write("mesh.txt", &mesh.to_text())?;
    let mut s = Summary::default();
    s.text("scenario", &config.scenario);
    s.text("kind", mesh.kind().name());
    s.raw("resolution", format!("{:?}", config.resolution(opts.full_scale)));
    s.num("nodes", mesh.node_count() as f64);
    s.num("elements", mesh.element_count() as f64);
    s.num("dofs", mesh.dof_count() as f64);
    s.num("fixed_nodes", mesh.dirichlet().len() as f64);
    s.num("volume", volume);
    s.num("mass", mass);
    s.list("bbox_min", &[lo.x, lo.y, lo.z]);
    s.list("bbox_max", &[hi.x, hi.y, hi.z]);
    s.raw("tracked", format!("{tracked:?}"));
    finish(s, w, Vec::new())
}
