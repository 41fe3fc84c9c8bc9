//! Implicit Euler time stepping solved as a projective-dynamics
//! minimization, with a Newton oracle and a static-equilibrium solver.

mod newton;
mod trajectory;

pub use newton::{newton_minimize, NewtonProblem, NewtonReport};
pub use trajectory::Trajectory;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::constitutive::{ActuationSignal, Material, SoftBody};
use crate::error::{Error, Result};
use crate::sparse::{CholeskyFactor, SymmetricPattern};
use newton::inf_norm;

/// Relative residual below which a stalled solve is accepted as converged.
const ROUNDOFF_ACCEPTANCE: f64 = 1e-6;

const LBFGS_MEMORY: usize = 30;

const NEWTON_FALLBACK_ITERATIONS: usize = 100;

/// Positions and velocities at step `step`, time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
    pub step: usize,
}

impl State {
    /// Undeformed configuration at rest.
    pub fn rest(body: &SoftBody) -> Self {
        let q: Vec<f64> = body.mesh().rest_positions().iter().copied().collect();
        State {
            v: vec![0.0; q.len()],
            q,
            t: 0.0,
            step: 0,
        }
    }
}

/// A total force spread equally over `nodes`, ramped linearly from zero over
/// `ramp` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeLoad {
    pub nodes: Vec<usize>,
    pub force: [f64; 3],
    #[serde(default)]
    pub ramp: f64,
}

impl EdgeLoad {
    pub fn scale_at(&self, t: f64) -> f64 {
        if self.ramp > 0.0 {
            (t / self.ramp).clamp(0.0, 1.0)
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceSpec {
    pub gravity: [f64; 3],
    #[serde(default)]
    pub edge_loads: Vec<EdgeLoad>,
    /// Gain of the per-node force `Λ v_i` added to the external forces.
    #[serde(default)]
    pub damping_lambda: f64,
}

impl Default for ForceSpec {
    fn default() -> Self {
        ForceSpec {
            gravity: [0.0, 0.0, -9.81],
            edge_loads: Vec::new(),
            damping_lambda: 0.0,
        }
    }
}

impl ForceSpec {
    pub fn none() -> Self {
        ForceSpec {
            gravity: [0.0; 3],
            ..ForceSpec::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub h: f64,
    pub max_iterations: usize,
    /// Convergence threshold on `‖∇g‖∞`, relative to the weight of an
    /// average node (mean node mass × 9.81 m/s²).
    pub tolerance: f64,
    pub acceleration: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            h: 0.01,
            max_iterations: 200,
            tolerance: 1e-6,
            acceleration: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {}", self.h)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        Ok(())
    }

    /// Number of steps covering `duration`, which must be a multiple of `h`.
    pub fn steps_for(&self, duration: f64) -> Result<usize> {
        let n = (duration / self.h).round();
        if duration < 0.0 || (n * self.h - duration).abs() > 1e-9 * duration.max(1.0) {
            return Err(Error::invalid(format!(
                "duration {duration} is not a multiple of h = {}",
                self.h
            )));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepStats {
    pub iterations: usize,
    pub residual: f64,
    /// Objective value at the start and after each accepted iteration.
    pub objectives: Vec<f64>,
    /// Newton iterations spent finishing a solve the PD iteration could not.
    pub newton_iterations: usize,
}

/// A configured simulation: body, loads, actuation and a prefactorized
/// global matrix.
#[derive(Debug, Clone)]
pub struct Simulator {
    body: SoftBody,
    forces: ForceSpec,
    config: SolverConfig,
    actuation: Vec<ActuationSignal>,
    global: CholeskyFactor,
    force_scale: f64,
    divergence_limit: f64,
    min_extent: f64,
}

impl Simulator {
    pub fn new(
        body: SoftBody,
        forces: ForceSpec,
        config: SolverConfig,
        actuation: Vec<ActuationSignal>,
    ) -> Result<Self> {
        config.validate()?;
        if actuation.len() != body.fibers().len() {
            return Err(Error::invalid(format!(
                "{} actuation signals for {} fibers",
                actuation.len(),
                body.fibers().len()
            )));
        }
        for s in &actuation {
            s.validate()?;
        }
        if !forces.damping_lambda.is_finite() {
            return Err(Error::invalid("damping gain must be finite"));
        }
        for load in &forces.edge_loads {
            if load.nodes.is_empty() || load.nodes.iter().any(|&n| n >= body.mesh().node_count()) {
                return Err(Error::invalid("edge load needs a valid, nonempty node set"));
            }
        }
        let global = body
            .pattern()
            .factorize(&body.pd_matrix_values(1.0 / (config.h * config.h)))?;
        let mean_mass = body.mass().iter().sum::<f64>() / body.mass().len() as f64;
        let (lo, hi) = body.mesh().bounding_box();
        Ok(Simulator {
            body,
            forces,
            config,
            actuation,
            global,
            force_scale: mean_mass * 9.81,
            divergence_limit: 100.0 * (hi - lo).norm(),
            min_extent: (hi - lo).min(),
        })
    }

    pub fn body(&self) -> &SoftBody {
        &self.body
    }

    pub fn forces(&self) -> &ForceSpec {
        &self.forces
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn actuation(&self) -> &[ActuationSignal] {
        &self.actuation
    }

    fn refactor(&mut self) -> Result<()> {
        let h = self.config.h;
        self.global = self
            .body
            .pattern()
            .factorize(&self.body.pd_matrix_values(1.0 / (h * h)))?;
        Ok(())
    }

    pub fn set_material(&mut self, material: Material) -> Result<()> {
        self.body.set_material(material)?;
        let mean_mass = self.body.mass().iter().sum::<f64>() / self.body.mass().len() as f64;
        self.force_scale = mean_mass * 9.81;
        self.refactor()
    }

    pub fn set_fiber_stiffness(&mut self, fiber: usize, stiffness: f64) -> Result<()> {
        self.body.set_fiber_stiffness(fiber, stiffness)?;
        self.refactor()
    }

    pub fn set_actuation(&mut self, actuation: Vec<ActuationSignal>) -> Result<()> {
        if actuation.len() != self.body.fibers().len() {
            return Err(Error::invalid("one actuation signal per fiber"));
        }
        for s in &actuation {
            s.validate()?;
        }
        self.actuation = actuation;
        Ok(())
    }

    pub fn set_damping(&mut self, lambda: f64) -> Result<()> {
        if !lambda.is_finite() {
            return Err(Error::invalid("damping gain must be finite"));
        }
        self.forces.damping_lambda = lambda;
        Ok(())
    }

    /// Replaces the solver settings, refactoring when the step size changes.
    pub fn set_solver(&mut self, config: SolverConfig) -> Result<()> {
        config.validate()?;
        let refactor = config.h != self.config.h;
        self.config = config;
        if refactor {
            self.refactor()?;
        }
        Ok(())
    }

    pub fn set_tolerance(&mut self, tolerance: f64) -> Result<()> {
        let mut c = self.config;
        c.tolerance = tolerance;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    /// Absolute threshold on the objective gradient.
    pub fn absolute_tolerance(&self) -> f64 {
        self.config.tolerance * self.force_scale
    }

    pub fn initial_state(&self) -> State {
        State::rest(&self.body)
    }

    /// Fiber actuation values active during the step that starts at `t`.
    pub fn actuation_at(&self, t: f64) -> Vec<f64> {
        self.actuation.iter().map(|s| s.value_at(t)).collect()
    }

    /// Interval index per fiber active during the step that starts at `t`.
    pub fn intervals_at(&self, t: f64) -> Vec<usize> {
        self.actuation.iter().map(|s| s.interval_at(t)).collect()
    }

    /// External force for the step leaving `state`: gravity, edge loads at
    /// the end of the step, and `Λ v_i` on every free node.
    pub fn external_force(&self, state: &State) -> Vec<f64> {
        let mut f = vec![0.0; state.q.len()];
        for (n, &m) in self.body.mass().iter().enumerate() {
            for d in 0..3 {
                f[3 * n + d] = m * self.forces.gravity[d];
            }
        }
        let t_next = state.t + self.config.h;
        for load in &self.forces.edge_loads {
            let s = load.scale_at(t_next) / load.nodes.len() as f64;
            for &n in &load.nodes {
                for d in 0..3 {
                    f[3 * n + d] += s * load.force[d];
                }
            }
        }
        let lambda = self.forces.damping_lambda;
        if lambda != 0.0 {
            for (fi, vi) in f.iter_mut().zip(&state.v) {
                *fi += lambda * vi;
            }
        }
        f
    }

    /// `y = q_i + h v_i + h² M⁻¹ f_ext` on the free DOFs; fixed DOFs keep `q_i`.
    pub fn inertial_target(&self, state: &State) -> Vec<f64> {
        let h = self.config.h;
        let f = self.external_force(state);
        let mut y = state.q.clone();
        for &d in self.body.dofs().free() {
            y[d] = state.q[d] + h * state.v[d] + h * h * f[d] / self.body.dof_mass(d);
        }
        y
    }

    /// `g(q) = (1/2h²)‖q − y‖²_M + E(q)`.
    pub fn objective(&self, q: &[f64], y: &[f64], actuation: &[f64]) -> f64 {
        let h2 = self.config.h * self.config.h;
        let inertia: f64 = self
            .body
            .dofs()
            .free()
            .iter()
            .map(|&d| self.body.dof_mass(d) * (q[d] - y[d]).powi(2))
            .sum();
        inertia / (2.0 * h2) + self.body.energy(q, actuation)
    }

    /// `∇g` on the free DOFs.
    pub fn objective_gradient(&self, q: &[f64], y: &[f64], actuation: &[f64]) -> Vec<f64> {
        self.objective_and_gradient(q, y, actuation).1
    }

    pub fn objective_and_gradient(&self, q: &[f64], y: &[f64], actuation: &[f64]) -> (f64, Vec<f64>) {
        let h2 = self.config.h * self.config.h;
        let (energy, g) = self.body.energy_and_gradient(q, actuation);
        let mut inertia = 0.0;
        let grad = self
            .body
            .dofs()
            .free()
            .iter()
            .map(|&d| {
                let m = self.body.dof_mass(d);
                inertia += m * (q[d] - y[d]).powi(2);
                m * (q[d] - y[d]) / h2 + g[d]
            })
            .collect();
        (inertia / (2.0 * h2) + energy, grad)
    }

    pub fn step(&self, state: &State) -> Result<State> {
        self.step_detailed(state).map(|(s, _)| s)
    }

    /// One implicit Euler step: local-global iterations with optional L-BFGS
    /// acceleration (the prefactorized global matrix as initial inverse
    /// Hessian) and a backtracking line search on the step objective.
    pub fn step_detailed(&self, state: &State) -> Result<(State, StepStats)> {
        let dofs = self.body.dofs();
        let act = self.actuation_at(state.t);
        let y = self.inertial_target(state);
        let tol = self.absolute_tolerance();
        let diverged = |reason: String| Error::Divergence {
            step: state.step + 1,
            reason,
        };

        // Start from the momentum prediction: it keeps the layer next to
        // constrained nodes nearly unstrained, unlike `y` itself.
        let mut q = state.q.clone();
        for &d in dofs.free() {
            q[d] += self.config.h * state.v[d];
        }
        let (mut f, mut g) = self.objective_and_gradient(&q, &y, &act);
        let mut stats = StepStats {
            objectives: vec![f],
            ..StepStats::default()
        };
        let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
        loop {
            let residual = inf_norm(&g);
            stats.residual = residual;
            if !residual.is_finite() || !f.is_finite() {
                return Err(diverged("non-finite objective".into()));
            }
            if residual < tol {
                break;
            }
            if stats.iterations == self.config.max_iterations {
                q = self.newton_finish(state, &y, &act, q, &mut stats)?;
                break;
            }
            let mut d = if self.config.acceleration {
                self.lbfgs_direction(&g, &memory)
            } else {
                self.pd_direction(&g)
            };
            let mut slope = dot(&d, &g);
            if !(slope < 0.0) {
                memory.clear();
                d = self.pd_direction(&g);
                slope = dot(&d, &g);
            }
            let mut accepted = None;
            for attempt in 0..2 {
                accepted = self.line_search(&q, &y, &act, f, &d, slope, residual);
                if accepted.is_some() || attempt == 1 || memory.is_empty() {
                    break;
                }
                memory.clear();
                d = self.pd_direction(&g);
                slope = dot(&d, &g);
            }
            let Some((trial, ft, alpha, g_new)) = accepted else {
                if residual < ROUNDOFF_ACCEPTANCE * self.force_scale {
                    // No representable progress is left: the tightened
                    // tolerance is below the rounding floor of the gradient.
                    break;
                }
                q = self.newton_finish(state, &y, &act, q, &mut stats)?;
                break;
            };
            let s: Vec<f64> = d.iter().map(|x| alpha * x).collect();
            let yk: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &yk);
            if self.config.acceleration && sy > 1e-14 * dot(&s, &s).sqrt() * dot(&yk, &yk).sqrt() {
                if memory.len() == LBFGS_MEMORY {
                    memory.pop_front();
                }
                memory.push_back((s, yk, 1.0 / sy));
            }
            q = trial;
            f = ft;
            g = g_new;
            stats.iterations += 1;
            stats.objectives.push(f);
        }

        let h = self.config.h;
        let mut v = vec![0.0; q.len()];
        let mut max_disp = 0.0f64;
        let rest = self.body.mesh().nodes();
        for &dof in dofs.free() {
            v[dof] = (q[dof] - state.q[dof]) / h;
            max_disp = max_disp.max((q[dof] - rest[dof / 3][dof % 3]).abs());
        }
        if !(max_disp < self.divergence_limit) {
            return Err(diverged(format!("displacement {max_disp:.3e} m exceeds limit")));
        }
        Ok((
            State {
                q,
                v,
                t: state.t + h,
                step: state.step + 1,
            },
            stats,
        ))
    }

    /// Backtracking along `d`. Armijo decrease is required unless the change
    /// in objective is below its rounding error, in which case either the
    /// directional derivative or the gradient norm must shrink instead.
    #[allow(clippy::too_many_arguments)]
    fn line_search(
        &self,
        q: &[f64],
        y: &[f64],
        act: &[f64],
        f: f64,
        d: &[f64],
        slope: f64,
        residual: f64,
    ) -> Option<(Vec<f64>, f64, f64, Vec<f64>)> {
        let free = self.body.dofs().free();
        let noise = 1e-12 * f.abs().max(f64::MIN_POSITIVE);
        let mut alpha = 1.0;
        for _ in 0..40 {
            let mut trial = q.to_vec();
            for (k, &dof) in free.iter().enumerate() {
                trial[dof] += alpha * d[k];
            }
            let (ft, gt) = self.objective_and_gradient(&trial, y, act);
            if ft.is_finite() {
                if ft < f && ft <= f + 1e-4 * alpha * slope {
                    return Some((trial, ft, alpha, gt));
                }
                if ft - f <= noise && (dot(&gt, d).abs() <= 0.9 * slope.abs() || inf_norm(&gt) < residual) {
                    return Some((trial, ft, alpha, gt));
                }
            }
            alpha *= 0.5;
        }
        None
    }

    /// Completes a stalled PD solve with damped Newton from its last iterate.
    /// Stiff local responses, such as an edge load on a few light nodes of a
    /// nearly incompressible body, slow the PD iteration far more than Newton.
    fn newton_finish(
        &self,
        state: &State,
        y: &[f64],
        act: &[f64],
        q: Vec<f64>,
        stats: &mut StepStats,
    ) -> Result<Vec<f64>> {
        let problem = StepProblem {
            sim: self,
            y,
            act,
            base: &q,
        };
        let x0 = self.body.dofs().restrict(&q);
        let tol = self.absolute_tolerance();
        match newton_minimize(
            &problem,
            x0,
            tol,
            ROUNDOFF_ACCEPTANCE * self.force_scale,
            NEWTON_FALLBACK_ITERATIONS,
        ) {
            Ok((x, report)) => {
                let mut out = q.clone();
                self.body.dofs().scatter(&x, &mut out);
                stats.newton_iterations = report.iterations;
                stats.residual = report.residuals.last().copied().unwrap_or(0.0);
                Ok(out)
            }
            Err(_) => Err(self.unconverged(state, y, stats.iterations, stats.residual)),
        }
    }

    /// Non-convergence of a step whose inertial target lies more than half
    /// the body's smallest extent away from rest is reported as divergence:
    /// the loads handled here never produce such motion in a stable run.
    fn unconverged(&self, state: &State, y: &[f64], iterations: usize, residual: f64) -> Error {
        let rest = self.body.mesh().nodes();
        let max_disp = y
            .iter()
            .enumerate()
            .fold(0.0f64, |m, (dof, x)| m.max((x - rest[dof / 3][dof % 3]).abs()));
        if !(max_disp < 0.5 * self.min_extent) {
            Error::Divergence {
                step: state.step + 1,
                reason: format!("solver failed with the target displaced by {max_disp:.3e} m"),
            }
        } else {
            Error::NonConvergence { iterations, residual }
        }
    }

    fn pd_direction(&self, g: &[f64]) -> Vec<f64> {
        let mut d: Vec<f64> = g.iter().map(|x| -x).collect();
        self.global.solve_in_place(&mut d);
        d
    }

    fn lbfgs_direction(&self, g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
        let mut r = g.to_vec();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * dot(s, &r);
            for (ri, yi) in r.iter_mut().zip(y) {
                *ri -= a * yi;
            }
            alphas.push(a);
        }
        self.global.solve_in_place(&mut r);
        for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &r);
            for (ri, si) in r.iter_mut().zip(s) {
                *ri += (a - b) * si;
            }
        }
        r.iter().map(|x| -x).collect()
    }

    /// Sparse values of the exact step Hessian `M/h² + ∇²E` at `q`.
    pub fn step_hessian(&self, q: &[f64], actuation: &[f64]) -> Vec<f64> {
        let h = self.config.h;
        self.body.hessian_values(q, actuation, 1.0 / (h * h))
    }

    /// The same implicit step solved by Newton's method with the exact
    /// Hessian. Intended as a reference for tests.
    pub fn newton_step_oracle(&self, state: &State) -> Result<(State, NewtonReport)> {
        let act = self.actuation_at(state.t);
        let y = self.inertial_target(state);
        let problem = StepProblem {
            sim: self,
            y: &y,
            act: &act,
            base: &state.q,
        };
        let x0 = self.body.dofs().restrict(&y);
        let tol = 1e-3 * self.absolute_tolerance();
        let (x, report) =
            newton_minimize(&problem, x0, tol, ROUNDOFF_ACCEPTANCE * self.force_scale, 100).map_err(|e| match e {
                Error::Oracle(_) => e,
                other => Error::Oracle(other.to_string()),
            })?;
        let mut q = y.clone();
        self.body.dofs().scatter(&x, &mut q);
        let h = self.config.h;
        let v = q.iter().zip(&state.q).map(|(a, b)| (a - b) / h).collect();
        Ok((
            State {
                q,
                v,
                t: state.t + h,
                step: state.step + 1,
            },
            report,
        ))
    }

    /// All states from `initial` over `duration` (including the initial one).
    pub fn rollout(&self, initial: &State, duration: f64) -> Result<Vec<State>> {
        let n = self.config.steps_for(duration)?;
        let mut states = Vec::with_capacity(n + 1);
        states.push(initial.clone());
        for _ in 0..n {
            let next = self.step(states.last().expect("nonempty")).map_err(|e| match e {
                Error::Divergence { .. } => e,
                other => Error::Step {
                    step: states.len(),
                    source: Box::new(other),
                },
            })?;
            states.push(next);
        }
        Ok(states)
    }

    /// Tracked-node trajectory over `duration`.
    pub fn simulate(&self, initial: &State, duration: f64, tracked: &[usize]) -> Result<Trajectory> {
        let states = self.rollout(initial, duration)?;
        Ok(track(&states, tracked))
    }

    /// Recomputes every step from its predecessor and returns the largest
    /// deviation from the stored states.
    pub fn replay(&self, states: &[State]) -> Result<f64> {
        let mut worst = 0.0f64;
        for w in states.windows(2) {
            if w[1].step != w[0].step + 1 || w[1].q.len() != w[0].q.len() {
                return Err(Error::Checkpoint(format!(
                    "states {} and {} are not consecutive",
                    w[0].step, w[1].step
                )));
            }
            let next = self.step(&w[0])?;
            worst = worst.max(inf_norm(&sub(&next.q, &w[1].q)));
        }
        Ok(worst)
    }

    /// Steady state under the full (unramped) loads: minimizes
    /// `E(q) − f·q` with Newton's method starting from rest. Damping and
    /// inertia play no role.
    pub fn static_equilibrium(&self, actuation: &[f64]) -> Result<State> {
        let rest = self.initial_state();
        let mut f = vec![0.0; rest.q.len()];
        for (n, &m) in self.body.mass().iter().enumerate() {
            for d in 0..3 {
                f[3 * n + d] = m * self.forces.gravity[d];
            }
        }
        for load in &self.forces.edge_loads {
            for &n in &load.nodes {
                for d in 0..3 {
                    f[3 * n + d] += load.force[d] / load.nodes.len() as f64;
                }
            }
        }
        let problem = StaticProblem {
            body: &self.body,
            f: &f,
            act: actuation,
            base: &rest.q,
        };
        let x0 = self.body.dofs().restrict(&rest.q);
        let tol = 1e-3 * self.absolute_tolerance();
        let (x, _) = newton_minimize(&problem, x0, tol, ROUNDOFF_ACCEPTANCE * self.force_scale, 200)?;
        let mut q = rest.q.clone();
        self.body.dofs().scatter(&x, &mut q);
        Ok(State { q, ..rest })
    }
}

/// Samples tracked nodes from a state sequence.
pub fn track(states: &[State], tracked: &[usize]) -> Trajectory {
    let mut traj = Trajectory::new(tracked.to_vec());
    for s in states {
        traj.push(s.t, &s.q);
    }
    traj
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn embed(base: &[f64], free: &[usize], x: &[f64]) -> Vec<f64> {
    let mut q = base.to_vec();
    for (&d, &v) in free.iter().zip(x) {
        q[d] = v;
    }
    q
}

struct StepProblem<'a> {
    sim: &'a Simulator,
    y: &'a [f64],
    act: &'a [f64],
    base: &'a [f64],
}

impl NewtonProblem for StepProblem<'_> {
    fn pattern(&self) -> &SymmetricPattern {
        self.sim.body.pattern()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let q = embed(self.base, self.sim.body.dofs().free(), x);
        self.sim.objective(&q, self.y, self.act)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let q = embed(self.base, self.sim.body.dofs().free(), x);
        self.sim.objective_gradient(&q, self.y, self.act)
    }
    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let q = embed(self.base, self.sim.body.dofs().free(), x);
        self.sim.step_hessian(&q, self.act)
    }
}

struct StaticProblem<'a> {
    body: &'a SoftBody,
    f: &'a [f64],
    act: &'a [f64],
    base: &'a [f64],
}

impl NewtonProblem for StaticProblem<'_> {
    fn pattern(&self) -> &SymmetricPattern {
        self.body.pattern()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let q = embed(self.base, self.body.dofs().free(), x);
        self.body.energy(&q, self.act) - dot(self.f, &q)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let q = embed(self.base, self.body.dofs().free(), x);
        let g = self.body.gradient(&q, self.act);
        self.body.dofs().free().iter().map(|&d| g[d] - self.f[d]).collect()
    }
    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let q = embed(self.base, self.body.dofs().free(), x);
        self.body.hessian_values(&q, self.act, 0.0)
    }
}
