//! Parameter calibration: bounded L-BFGS over adjoint gradients, actuation
//! sequence optimization and pressure-to-actuation maps.

pub mod lbfgs;
pub mod loss;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adjoint::{loss_and_gradient, Parameter, ParameterSet, StateLoss};
use crate::constitutive::ActuationSignal;
use crate::dynamics::{Simulator, Trajectory};
use crate::error::{Error, Result};

pub use lbfgs::{LbfgsConfig, Termination};
pub use loss::{LossKind, LossSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub loss: f64,
    /// Projected gradient infinity norm in the optimizer's normalized
    /// variables.
    pub gradient_norm: f64,
    pub parameters: Vec<f64>,
}

/// Accepted iterates of one optimization run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub names: Vec<String>,
    pub records: Vec<HistoryRecord>,
}

impl History {
    /// CSV with header `iter,loss,grad_norm,<parameter names>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,loss,grad_norm");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{:.16e},{:.16e}", r.iteration, r.loss, r.gradient_norm);
            for p in &r.parameters {
                let _ = write!(out, ",{p:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub loss: f64,
    pub termination: Termination,
    pub history: History,
    pub evaluations: usize,
    /// Evaluations whose simulation failed and forced a shorter step.
    pub rejected: usize,
}

/// Uniform draws in `[0.5, 1.5]×` each nominal value.
pub fn random_initial<R: Rng>(nominal: &[f64], rng: &mut R) -> Vec<f64> {
    nominal.iter().map(|v| v * rng.random_range(0.5..1.5)).collect()
}

pub fn seeded_initial(nominal: &[f64], seed: u64) -> Vec<f64> {
    random_initial(nominal, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn recoverable(e: &Error) -> bool {
    match e {
        Error::NonConvergence { .. } | Error::Divergence { .. } | Error::InsufficientData(_) => true,
        Error::Step { source, .. } => recoverable(source),
        _ => false,
    }
}

/// Minimizes `loss` over `params` starting from `initial`, simulating
/// `duration` seconds from rest for every evaluation.
///
/// The optimizer works on `θ/|θ₀|` (unit scale for zero entries) and on the
/// loss divided by its initial value, so the default tolerances and step
/// bound are meaningful for parameters of any magnitude. Reported losses and
/// parameters are in physical units.
pub fn optimize(
    base: &Simulator,
    params: &ParameterSet,
    initial: &[f64],
    duration: f64,
    loss: &dyn StateLoss,
    config: &LbfgsConfig,
) -> Result<Calibration> {
    params.check_bounds(initial)?;
    let scale: Vec<f64> = initial.iter().map(|v| if *v == 0.0 { 1.0 } else { v.abs() }).collect();
    let names = params.names();
    let failed = |reason: String, history: History| Error::Optimization {
        reason,
        history: Box::new(history),
    };
    let f0 = match loss_and_gradient(base, params, initial, duration, loss) {
        Ok((f, _)) => f,
        Err(e) if recoverable(&e) => {
            let history = History {
                names,
                records: Vec::new(),
            };
            return Err(failed(format!("initial simulation failed: {e}"), history));
        }
        Err(e) => return Err(e),
    };
    let norm = if f0 > 0.0 && f0.is_finite() { f0 } else { 1.0 };
    let to_theta = |x: &[f64]| -> Vec<f64> { x.iter().zip(&scale).map(|(x, s)| x * s).collect() };
    let objective = |x: &[f64]| -> Result<Option<(f64, Vec<f64>)>> {
        match loss_and_gradient(base, params, &to_theta(x), duration, loss) {
            Ok((f, g)) => {
                let g = g.iter().zip(&scale).map(|(g, s)| g * s / norm).collect();
                Ok(Some((f / norm, g)))
            }
            Err(e) if recoverable(&e) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let x0: Vec<f64> = initial.iter().zip(&scale).map(|(v, s)| v / s).collect();
    let lower: Vec<f64> = params.lower().iter().zip(&scale).map(|(v, s)| v / s).collect();
    let upper: Vec<f64> = params.upper().iter().zip(&scale).map(|(v, s)| v / s).collect();
    let result = lbfgs::minimize(&objective, &x0, &lower, &upper, config)?;
    let history = History {
        names: names.clone(),
        records: result
            .iterates
            .iter()
            .enumerate()
            .map(|(i, it)| HistoryRecord {
                iteration: i,
                loss: it.f * norm,
                gradient_norm: it.gradient_norm,
                parameters: to_theta(&it.x),
            })
            .collect(),
    };
    if result.termination == Termination::LineSearch && history.records.len() <= 1 && result.rejected > 0 {
        return Err(failed(
            format!("no step could be taken; {} simulations failed", result.rejected),
            history,
        ));
    }
    Ok(Calibration {
        names,
        values: to_theta(&result.x),
        loss: result.f * norm,
        termination: result.termination,
        history,
        evaluations: result.evaluations,
        rejected: result.rejected,
    })
}

/// Optimizes a piecewise-constant signal at `frequency` for each fiber in
/// `fibers`, starting from the rest level a = 1 everywhere.
pub fn optimize_actuation_sequence(
    base: &Simulator,
    fibers: &[usize],
    frequency: f64,
    duration: f64,
    loss: &dyn StateLoss,
    config: &LbfgsConfig,
) -> Result<(Vec<ActuationSignal>, Calibration)> {
    if !(frequency > 0.0) {
        return Err(Error::invalid("sequence frequency must be positive"));
    }
    let per_interval = 1.0 / (frequency * base.config().h);
    if (per_interval - per_interval.round()).abs() > 1e-6 || per_interval.round() < 1.0 {
        return Err(Error::invalid(format!(
            "interval 1/{frequency} s is not a whole number of {} s steps",
            base.config().h
        )));
    }
    let n = ActuationSignal::interval_count(duration, frequency);
    if n == 0 {
        return Err(Error::invalid("duration is shorter than one actuation interval"));
    }
    let mut sim = base.clone();
    let mut signals = sim.actuation().to_vec();
    let mut params = ParameterSet::new();
    for &f in fibers {
        let slot = signals
            .get_mut(f)
            .ok_or_else(|| Error::invalid(format!("no fiber {f}")))?;
        *slot = ActuationSignal::piecewise(frequency, vec![1.0; n])?;
        params = params.with_sequence(f, n);
    }
    sim.set_actuation(signals)?;
    let calibration = optimize(&sim, &params, &vec![1.0; params.len()], duration, loss, config)?;
    let out = fibers
        .iter()
        .enumerate()
        .map(|(i, _)| ActuationSignal::piecewise(frequency, calibration.values[i * n..(i + 1) * n].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, calibration))
}

/// Least-squares polynomial coefficients, lowest order first.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::invalid("polyfit needs as many ordinates as abscissae"));
    }
    if x.len() <= degree {
        return Err(Error::InsufficientData(format!(
            "degree {degree} fit needs at least {} points",
            degree + 1
        )));
    }
    let mut v = DMatrix::from_fn(x.len(), degree + 1, |i, j| x[i].powi(j as i32));
    let col_scale: Vec<f64> = (0..=degree)
        .map(|j| v.column(j).amax().max(f64::MIN_POSITIVE))
        .collect();
    for (j, s) in col_scale.iter().enumerate() {
        v.column_mut(j).unscale_mut(*s);
    }
    let c = v
        .svd(true, true)
        .solve(&DVector::from_column_slice(y), 1e-14)
        .map_err(|e| Error::invalid(format!("polyfit: {e}")))?;
    Ok(c.iter().zip(&col_scale).map(|(c, s)| c / s).collect())
}

pub fn polyval(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Reference for one pressure level.
#[derive(Debug, Clone)]
pub struct PressureSample {
    pub pressure: f64,
    pub loss: LossSpec,
}

#[derive(Debug, Clone)]
pub struct PressureMapOptions {
    /// The single actuation parameter optimized per pressure: a constant
    /// `Actuation { interval: 0, .. }` or an `Antagonist` pair.
    pub parameter: Parameter,
    pub degree: usize,
    pub initial: f64,
    pub duration: f64,
    pub lbfgs: LbfgsConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressureMap {
    pub pressures: Vec<f64>,
    pub optimized: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// Largest |a_optimized − a_fitted| over the samples.
    pub residual: f64,
    pub warnings: Vec<String>,
    pub histories: Vec<History>,
}

impl PressureMap {
    pub fn predict(&self, pressure: f64) -> f64 {
        polyval(&self.coefficients, pressure)
    }

    /// `pressure,a_optimized,a_fitted` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pressure,a_optimized,a_fitted\n");
        for (p, a) in self.pressures.iter().zip(&self.optimized) {
            let _ = writeln!(out, "{p:.16e},{a:.16e},{:.16e}", self.predict(*p));
        }
        out
    }

    pub fn coefficient_record(&self) -> String {
        let c: Vec<String> = self.coefficients.iter().map(|c| format!("{c:.16e}")).collect();
        format!("coefficients = [{}], residual = {:.6e}", c.join(", "), self.residual)
    }
}

/// One single-parameter optimization per pressure (run concurrently), then a
/// polynomial fit of the optimized levels against pressure.
pub fn pressure_map(base: &Simulator, samples: &[PressureSample], options: &PressureMapOptions) -> Result<PressureMap> {
    if samples.len() < 3 {
        return Err(Error::InsufficientData(
            "a pressure map needs at least 3 pressures".into(),
        ));
    }
    if samples.windows(2).any(|w| !(w[1].pressure > w[0].pressure)) {
        return Err(Error::invalid("pressures must be strictly increasing"));
    }
    let params = ParameterSet::new().with(options.parameter);
    let runs = samples
        .par_iter()
        .map(|s| {
            optimize(
                base,
                &params,
                &[options.initial],
                options.duration,
                &s.loss,
                &options.lbfgs,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let pressures: Vec<f64> = samples.iter().map(|s| s.pressure).collect();
    let optimized: Vec<f64> = runs.iter().map(|c| c.values[0]).collect();
    let coefficients = polyfit(&pressures, &optimized, options.degree)?;
    let residual = pressures
        .iter()
        .zip(&optimized)
        .map(|(p, a)| (a - polyval(&coefficients, *p)).abs())
        .fold(0.0, f64::max);
    let mut warnings = Vec::new();
    let rising = optimized.windows(2).all(|w| w[1] >= w[0]);
    let falling = optimized.windows(2).all(|w| w[1] <= w[0]);
    if !(rising || falling) {
        warnings.push("optimized actuation is not monotone in pressure".to_string());
    }
    Ok(PressureMap {
        pressures,
        optimized,
        coefficients,
        residual,
        warnings,
        histories: runs.into_iter().map(|c| c.history).collect(),
    })
}

/// Mean relative final-pose error of the tracked points when each held-out
/// pressure is simulated with the map's predicted actuation. Each point's
/// error is divided by its reference displacement from rest.
pub fn held_out_error(
    base: &Simulator,
    parameter: Parameter,
    map: &PressureMap,
    held_out: &[(f64, Trajectory)],
    duration: f64,
) -> Result<f64> {
    if held_out.is_empty() {
        return Err(Error::InsufficientData("no held-out pressures".into()));
    }
    let params = ParameterSet::new().with(parameter);
    let errors = held_out
        .par_iter()
        .map(|(p, reference)| {
            let mut sim = base.clone();
            params.apply(&mut sim, &[map.predict(*p)])?;
            let rest = sim.initial_state();
            let traj = sim.simulate(&rest, duration, &reference.point_ids)?;
            let mut total = 0.0;
            for (i, &n) in reference.point_ids.iter().enumerate() {
                let r = reference.last(i);
                let x0 = nalgebra::Vector3::new(rest.q[3 * n], rest.q[3 * n + 1], rest.q[3 * n + 2]);
                let disp = (r - x0).norm();
                if disp == 0.0 {
                    return Err(Error::invalid(format!(
                        "reference point {n} does not move at pressure {p}"
                    )));
                }
                total += (traj.last(i) - r).norm() / disp;
            }
            Ok(total / reference.point_count() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}
