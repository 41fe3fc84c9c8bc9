//! Reverse-mode gradients of trajectory losses through converged implicit
//! Euler steps, and a central-difference oracle.
//!
//! Each step solves `G(q⁺) = M(q⁺ − y)/h² + ∇E(q⁺) = 0` on the free DOFs with
//! `y = q + hv + h²M⁻¹(f_ext + Λv)`. Differentiating that stationarity
//! condition gives, for an adjoint `ḡ` on `q⁺`, one solve `H z = ḡ` with the
//! exact step Hessian `H = M/h² + ∇²E(q⁺)` and the updates
//! `q̄ += M z/h²`, `v̄ += (M/h + Λ) z`, `θ̄ −= (∂G/∂θ)ᵀ z`.

use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::constitutive::ActuationSignal;
use crate::dynamics::{Simulator, State};
use crate::error::{Error, Result};

/// Forward solves for gradient work are tightened to this relative
/// tolerance.
pub const GRADIENT_TOLERANCE: f64 = 1e-9;

/// A scalar the loss can be differentiated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameter {
    /// Young's modulus at fixed Poisson ratio.
    YoungsModulus,
    /// Gain of the velocity-proportional compensation force.
    Damping,
    FiberStiffness(usize),
    /// Value of one hold interval of a fiber's actuation signal. Interval 0
    /// of a constant signal is the constant itself.
    Actuation {
        fiber: usize,
        interval: usize,
    },
    /// Antagonistic pair of constant signals: `a` on `fiber` and `2 − a` on
    /// `partner`.
    Antagonist {
        fiber: usize,
        partner: usize,
    },
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Parameter::YoungsModulus => write!(f, "E"),
            Parameter::Damping => write!(f, "lambda"),
            Parameter::FiberStiffness(k) => write!(f, "w{k}"),
            Parameter::Actuation { fiber, interval } => write!(f, "a{fiber}_{interval}"),
            Parameter::Antagonist { fiber, partner } => write!(f, "a{fiber}~{partner}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterEntry {
    pub parameter: Parameter,
    pub lower: f64,
    pub upper: f64,
}

/// Ordered parameters with box bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    pub entries: Vec<ParameterEntry>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter with default bounds: positive for E, w and a,
    /// inside (0, 2) for an antagonist level, unbounded for Λ.
    pub fn with(self, parameter: Parameter) -> Self {
        let (lower, upper) = match parameter {
            Parameter::Damping => (f64::NEG_INFINITY, f64::INFINITY),
            Parameter::Antagonist { .. } => (1e-6, 2.0 - 1e-6),
            _ => (f64::MIN_POSITIVE, f64::INFINITY),
        };
        self.with_bounds(parameter, lower, upper)
    }

    pub fn with_bounds(mut self, parameter: Parameter, lower: f64, upper: f64) -> Self {
        self.entries.push(ParameterEntry {
            parameter,
            lower,
            upper,
        });
        self
    }

    /// Every interval of a fiber's signal, in order.
    pub fn with_sequence(mut self, fiber: usize, intervals: usize) -> Self {
        for interval in 0..intervals {
            self = self.with(Parameter::Actuation { fiber, interval });
        }
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.parameter.to_string()).collect()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.lower).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.upper).collect()
    }

    /// Current values read from a simulator.
    pub fn values(&self, sim: &Simulator) -> Result<Vec<f64>> {
        self.entries
            .iter()
            .map(|e| match e.parameter {
                Parameter::YoungsModulus => Ok(sim.body().material().youngs_modulus),
                Parameter::Damping => Ok(sim.forces().damping_lambda),
                Parameter::FiberStiffness(k) => sim
                    .body()
                    .fibers()
                    .get(k)
                    .map(|f| f.stiffness)
                    .ok_or_else(|| Error::invalid(format!("no fiber {k}"))),
                Parameter::Actuation { fiber, interval } => sim
                    .actuation()
                    .get(fiber)
                    .and_then(|s| s.values.get(interval))
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("no actuation interval {interval} on fiber {fiber}"))),
                Parameter::Antagonist { fiber, .. } => sim
                    .actuation()
                    .get(fiber)
                    .map(|s| s.values[0])
                    .ok_or_else(|| Error::invalid(format!("no fiber {fiber}"))),
            })
            .collect()
    }

    pub fn check_bounds(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::invalid(format!(
                "{} values for {} parameters",
                values.len(),
                self.len()
            )));
        }
        for (e, &v) in self.entries.iter().zip(values) {
            if !(v >= e.lower && v <= e.upper) {
                return Err(Error::invalid(format!(
                    "{} = {v} outside [{}, {}]",
                    e.parameter, e.lower, e.upper
                )));
            }
        }
        Ok(())
    }

    /// Writes `values` into the simulator, refactoring its matrix as needed.
    pub fn apply(&self, sim: &mut Simulator, values: &[f64]) -> Result<()> {
        self.check_bounds(values)?;
        let mut actuation = sim.actuation().to_vec();
        let mut touched_actuation = false;
        for (e, &v) in self.entries.iter().zip(values) {
            match e.parameter {
                Parameter::YoungsModulus => {
                    let m = sim.body().material().with_youngs_modulus(v);
                    sim.set_material(m)?;
                }
                Parameter::Damping => sim.set_damping(v)?,
                Parameter::FiberStiffness(k) => sim.set_fiber_stiffness(k, v)?,
                Parameter::Actuation { fiber, interval } => {
                    let slot = actuation
                        .get_mut(fiber)
                        .and_then(|s| s.values.get_mut(interval))
                        .ok_or_else(|| Error::invalid(format!("no actuation interval {interval} on fiber {fiber}")))?;
                    *slot = v;
                    touched_actuation = true;
                }
                Parameter::Antagonist { fiber, partner } => {
                    if 2.0 - v <= 0.0 {
                        return Err(Error::invalid(format!(
                            "antagonist actuation {v} leaves the partner nonpositive"
                        )));
                    }
                    for (k, a) in [(fiber, v), (partner, 2.0 - v)] {
                        let signal = actuation
                            .get_mut(k)
                            .ok_or_else(|| Error::invalid(format!("no fiber {k}")))?;
                        *signal = ActuationSignal::constant(a);
                    }
                    touched_actuation = true;
                }
            }
        }
        if touched_actuation {
            sim.set_actuation(actuation)?;
        }
        Ok(())
    }
}

/// A loss over a simulated state sequence.
pub trait StateLoss: Sync {
    /// Loss value and its gradient with respect to the positions of every
    /// state. An empty vector stands for a zero gradient.
    fn evaluate(&self, states: &[State]) -> Result<(f64, Vec<Vec<f64>>)>;
}

impl<F> StateLoss for F
where
    F: Fn(&[State]) -> Result<(f64, Vec<Vec<f64>>)> + Sync,
{
    fn evaluate(&self, states: &[State]) -> Result<(f64, Vec<Vec<f64>>)> {
        self(states)
    }
}

/// Loss gradient with an optional finite-difference cross-check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub names: Vec<String>,
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub finite_difference: Option<Vec<f64>>,
    /// `‖g_adj − g_fd‖ / max(‖g_fd‖, ε)`.
    pub discrepancy: Option<f64>,
    /// Per-parameter relative discrepancy.
    pub discrepancies: Option<Vec<f64>>,
}

impl GradientReport {
    /// Flat `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "loss = {:.16e}", self.loss);
        for (i, name) in self.names.iter().enumerate() {
            let _ = writeln!(out, "grad.{name} = {:.16e}", self.gradient[i]);
            if let Some(fd) = &self.finite_difference {
                let _ = writeln!(out, "fd.{name} = {:.16e}", fd[i]);
            }
        }
        if let Some(d) = self.discrepancy {
            let _ = writeln!(out, "discrepancy = {d:.6e}");
        }
        out
    }
}

/// Simulator with `values` applied and its tolerance tightened for
/// gradient work.
pub fn configured(base: &Simulator, params: &ParameterSet, values: &[f64]) -> Result<Simulator> {
    let mut sim = base.clone();
    params.apply(&mut sim, values)?;
    if sim.config().tolerance > GRADIENT_TOLERANCE {
        sim.set_tolerance(GRADIENT_TOLERANCE)?;
    }
    Ok(sim)
}

/// Simulates from rest with `values` applied and evaluates the loss.
pub fn loss_value(
    base: &Simulator,
    params: &ParameterSet,
    values: &[f64],
    duration: f64,
    loss: &dyn StateLoss,
) -> Result<f64> {
    let sim = configured(base, params, values)?;
    let states = sim.rollout(&sim.initial_state(), duration)?;
    Ok(loss.evaluate(&states)?.0)
}

/// Loss and adjoint gradient at `values`.
pub fn loss_and_gradient(
    base: &Simulator,
    params: &ParameterSet,
    values: &[f64],
    duration: f64,
    loss: &dyn StateLoss,
) -> Result<(f64, Vec<f64>)> {
    let sim = configured(base, params, values)?;
    let states = sim.rollout(&sim.initial_state(), duration)?;
    backward(&sim, &states, loss, params)
}

/// Adjoint sweep over checkpointed `states` produced by `sim`.
pub fn backward(
    sim: &Simulator,
    states: &[State],
    loss: &dyn StateLoss,
    params: &ParameterSet,
) -> Result<(f64, Vec<f64>)> {
    check_checkpoints(sim, states)?;
    let (value, dq) = loss.evaluate(states)?;
    if dq.len() != states.len() {
        return Err(Error::invalid(format!(
            "loss returned {} state gradients for {} states",
            dq.len(),
            states.len()
        )));
    }
    let body = sim.body();
    let free = body.dofs().free();
    let h = sim.config().h;
    let lambda = sim.forces().damping_lambda;
    let mass: Vec<f64> = free.iter().map(|&d| body.dof_mass(d)).collect();
    let restrict = |full: &[f64]| -> Vec<f64> {
        if full.is_empty() {
            vec![0.0; free.len()]
        } else {
            free.iter().map(|&d| full[d]).collect()
        }
    };
    let young = body.material().youngs_modulus;

    let mut grad = vec![0.0; params.len()];
    let mut q_bar = restrict(&dq[states.len() - 1]);
    let mut v_bar = vec![0.0; free.len()];
    for i in (0..states.len() - 1).rev() {
        let (prev, next) = (&states[i], &states[i + 1]);
        let act = sim.actuation_at(prev.t);
        let g_bar: Vec<f64> = q_bar.iter().zip(&v_bar).map(|(q, v)| q + v / h).collect();
        let factor = body
            .pattern()
            .factorize(&sim.step_hessian(&next.q, &act))
            .map_err(|_| Error::SingularStep { step: next.step })?;
        let z = factor.solve(&g_bar);
        let intervals = sim.intervals_at(prev.t);
        for (slot, e) in grad.iter_mut().zip(&params.entries) {
            *slot -= match e.parameter {
                Parameter::YoungsModulus => dot_free(&body.elastic_gradient(&next.q), free, &z) / young,
                Parameter::Damping => -dot_free(&prev.v, free, &z),
                Parameter::FiberStiffness(k) => {
                    (1.0 - act[k]) * dot_free(&body.fiber_basis_gradient(&next.q, k), free, &z)
                }
                Parameter::Actuation { fiber, interval } => {
                    if intervals[fiber] == interval {
                        let w = body.fibers()[fiber].stiffness;
                        -w * dot_free(&body.fiber_basis_gradient(&next.q, fiber), free, &z)
                    } else {
                        0.0
                    }
                }
                Parameter::Antagonist { fiber, partner } => {
                    let basis = |k: usize| {
                        body.fibers()[k].stiffness * dot_free(&body.fiber_basis_gradient(&next.q, k), free, &z)
                    };
                    basis(partner) - basis(fiber)
                }
            };
        }
        let direct = restrict(&dq[i]);
        for k in 0..free.len() {
            q_bar[k] = direct[k] + mass[k] * z[k] / (h * h) - v_bar[k] / h;
            v_bar[k] = (mass[k] / h + lambda) * z[k];
        }
    }
    Ok((value, grad))
}

fn dot_free(full: &[f64], free: &[usize], z: &[f64]) -> f64 {
    free.iter().zip(z).map(|(&d, zi)| full[d] * zi).sum()
}

fn check_checkpoints(sim: &Simulator, states: &[State]) -> Result<()> {
    let n = sim.body().mesh().dof_count();
    let Some(first) = states.first() else {
        return Err(Error::Checkpoint("no states".into()));
    };
    if first.step != 0 || first.t != 0.0 {
        return Err(Error::Checkpoint("trajectory must start at step 0".into()));
    }
    let h = sim.config().h;
    for (i, s) in states.iter().enumerate() {
        if s.q.len() != n || s.v.len() != n {
            return Err(Error::Checkpoint(format!("state {i} has the wrong dimension")));
        }
        if s.step != i || (s.t - i as f64 * h).abs() > 1e-9 * h.max(s.t.abs()) {
            return Err(Error::Checkpoint(format!("state {i} is out of sequence")));
        }
    }
    for w in states.windows(2) {
        for &d in sim.body().dofs().free() {
            let lag = w[1].q[d] - w[0].q[d] - h * w[1].v[d];
            if lag.abs() > 1e-9 * (w[1].q[d].abs() + 1.0) {
                return Err(Error::Checkpoint(format!(
                    "state {} is not an implicit Euler successor of state {}",
                    w[1].step, w[0].step
                )));
            }
        }
    }
    Ok(())
}

/// Central differences with step `rel_step·max(|θ|, 1e-3)` per parameter.
/// Perturbations are evaluated in parallel.
pub fn fd_gradient(
    base: &Simulator,
    params: &ParameterSet,
    values: &[f64],
    duration: f64,
    loss: &dyn StateLoss,
    rel_step: f64,
) -> Result<Vec<f64>> {
    params.check_bounds(values)?;
    (0..params.len())
        .into_par_iter()
        .map(|i| {
            let step = rel_step * values[i].abs().max(1e-3);
            let mut plus = values.to_vec();
            let mut minus = values.to_vec();
            plus[i] += step;
            minus[i] -= step;
            let eval = |v: &[f64]| {
                loss_value(base, params, v, duration, loss)
                    .map_err(|e| Error::Oracle(format!("perturbing {}: {e}", params.entries[i].parameter)))
            };
            Ok((eval(&plus)? - eval(&minus)?) / (2.0 * step))
        })
        .collect()
}

/// Adjoint gradient, optionally compared with central differences at
/// relative step `fd_step`.
pub fn gradient_report(
    base: &Simulator,
    params: &ParameterSet,
    values: &[f64],
    duration: f64,
    loss: &dyn StateLoss,
    fd_step: Option<f64>,
) -> Result<GradientReport> {
    let (value, gradient) = loss_and_gradient(base, params, values, duration, loss)?;
    let mut report = GradientReport {
        names: params.names(),
        loss: value,
        gradient,
        finite_difference: None,
        discrepancy: None,
        discrepancies: None,
    };
    if let Some(step) = fd_step {
        let fd = fd_gradient(base, params, values, duration, loss, step)?;
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = report.gradient.iter().zip(&fd).map(|(a, b)| a - b).collect();
        report.discrepancy = Some(norm(&diff) / norm(&fd).max(f64::MIN_POSITIVE));
        report.discrepancies = Some(
            report
                .gradient
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE))
                .collect(),
        );
        report.finite_difference = Some(fd);
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
