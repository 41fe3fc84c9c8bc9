//! Box-constrained L-BFGS with a strong-Wolfe line search.
//!
//! Bounds are handled by projection: variables at a bound whose gradient
//! points outward are frozen for the iteration, and trial points are
//! projected back into the box. When the projection bends the search path
//! the curvature condition is dropped and only sufficient decrease is
//! required.

use std::cell::Cell;
use std::collections::VecDeque;

use crate::error::Result;

/// Objective evaluated on the optimizer's variables. `Ok(None)` signals a
/// failed evaluation (for example a diverged simulation); the step is then
/// shrunk.
pub trait Objective {
    fn evaluate(&self, x: &[f64]) -> Result<Option<(f64, Vec<f64>)>>;
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> Result<Option<(f64, Vec<f64>)>>,
{
    fn evaluate(&self, x: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the projected gradient infinity norm falls below this.
    pub gradient_tolerance: f64,
    /// Stop when `|Δf| ≤ tol·max(|f|, tiny)` over an accepted step.
    pub relative_tolerance: f64,
    /// Largest change of any variable in one iteration.
    pub max_step: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            relative_tolerance: 1e-10,
            max_step: 0.5,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    RelativeChange,
    IterationLimit,
    /// No acceptable step could be found, even with a steepest-descent
    /// restart and the step bound shrunk to nothing.
    LineSearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub x: Vec<f64>,
    pub f: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub termination: Termination,
    /// Every accepted iterate, starting with the initial point.
    pub iterates: Vec<Iterate>,
    pub evaluations: usize,
    /// Evaluations that failed; each one shrinks the step bound.
    pub rejected: usize,
}

/// Minimizes `objective` over `lower ≤ x ≤ upper` from `x0` (projected).
/// A run that cannot make progress ends with [`Termination::LineSearch`].
pub fn minimize(
    objective: &dyn Objective,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    config: &LbfgsConfig,
) -> Result<LbfgsResult> {
    let n = x0.len();
    assert!(lower.len() == n && upper.len() == n, "bounds must match the variables");
    let mut x = project(x0, lower, upper);
    let mut evaluations = 1;
    let mut rejected = 0;
    let Some((mut f, mut g)) = objective.evaluate(&x)? else {
        let failed = LbfgsResult {
            x,
            f: f64::NAN,
            termination: Termination::LineSearch,
            iterates: vec![],
            evaluations,
            rejected: 1,
        };
        return Ok(failed);
    };
    let mut iterates = vec![Iterate {
        x: x.clone(),
        f,
        gradient_norm: projected_norm(&x, &g, lower, upper),
    }];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut radius = config.max_step;
    let finish = |x, f, termination, iterates, evaluations, rejected| LbfgsResult {
        x,
        f,
        termination,
        iterates,
        evaluations,
        rejected,
    };

    for _ in 0..config.max_iterations {
        let pg = projected_norm(&x, &g, lower, upper);
        if pg < config.gradient_tolerance || f == 0.0 {
            return Ok(finish(x, f, Termination::Gradient, iterates, evaluations, rejected));
        }
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let mut d = two_loop(&g, &memory, &free);
        if !(dot(&d, &g) < 0.0) {
            memory.clear();
            d = steepest(&g, &free);
        }

        let mut step = None;
        let mut failed_here = false;
        for restart in 0..2 {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let alpha_max = radius / dmax;
            let alpha0 = if memory.is_empty() {
                alpha_max
            } else {
                alpha_max.min(1.0)
            };
            let (search, failures) =
                line_search(objective, &x, f, &g, &d, lower, upper, alpha0, config, &mut evaluations)?;
            if failures > 0 {
                rejected += failures;
                failed_here = true;
                radius *= 0.25;
            }
            if let Search::Accepted(s) = search {
                step = Some(s);
                break;
            }
            if restart == 0 {
                memory.clear();
                d = steepest(&g, &free);
            }
        }
        let Some((x_new, f_new, g_new, hit_bound)) = step else {
            return Ok(finish(x, f, Termination::LineSearch, iterates, evaluations, rejected));
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if memory.len() == config.memory {
                memory.pop_front();
            }
            memory.push_back((s, y));
        }
        if !hit_bound && !failed_here {
            radius = (2.0 * radius).min(config.max_step);
        }
        let change = (f - f_new).abs();
        x = x_new;
        g = g_new;
        let previous = f;
        f = f_new;
        iterates.push(Iterate {
            x: x.clone(),
            f,
            gradient_norm: projected_norm(&x, &g, lower, upper),
        });
        if change <= config.relative_tolerance * previous.abs().max(f64::MIN_POSITIVE) {
            return Ok(finish(
                x,
                f,
                Termination::RelativeChange,
                iterates,
                evaluations,
                rejected,
            ));
        }
    }
    Ok(finish(
        x,
        f,
        Termination::IterationLimit,
        iterates,
        evaluations,
        rejected,
    ))
}

enum Search {
    Accepted((Vec<f64>, f64, Vec<f64>, bool)),
    Failed,
}

/// Strong-Wolfe bracketing and zoom along `d`, with trial points projected
/// onto the box.
#[allow(clippy::too_many_arguments)]
fn line_search(
    objective: &dyn Objective,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    lower: &[f64],
    upper: &[f64],
    alpha0: f64,
    config: &LbfgsConfig,
    evaluations: &mut usize,
) -> Result<(Search, usize)> {
    let slope0 = dot(g0, d);
    let failures = Cell::new(0usize);
    let trial = |alpha: f64, evaluations: &mut usize| -> Result<Option<Trial>> {
        let raw: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
        let p = project(&raw, lower, upper);
        let bent = p != raw;
        *evaluations += 1;
        let out = objective.evaluate(&p)?.and_then(|(f, g)| {
            if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return None;
            }
            // Slope along the actual (projected) displacement.
            let disp: Vec<f64> = p.iter().zip(x).map(|(a, b)| a - b).collect();
            let slope = if alpha > 0.0 { dot(&g, d) } else { slope0 };
            Some(Trial {
                alpha,
                x: p,
                f,
                g,
                slope,
                decrease: dot(g0, &disp),
                bent,
            })
        });
        if out.is_none() {
            failures.set(failures.get() + 1);
        }
        Ok(out)
    };
    let armijo = |t: &Trial| t.f <= f0 + config.c1 * t.decrease.min(0.0) && t.f < f0;
    let curvature = |t: &Trial| t.bent || t.slope.abs() <= config.c2 * slope0.abs();

    let mut alpha = alpha0;
    let mut prev: Option<Trial> = None;
    for _ in 0..30 {
        let Some(t) = trial(alpha, evaluations)? else {
            alpha *= 0.25;
            if alpha < 1e-14 * alpha0.max(1.0) {
                break;
            }
            continue;
        };
        let worse_than_prev = prev.as_ref().is_some_and(|p| t.f >= p.f);
        if !armijo(&t) || worse_than_prev {
            let lo = prev.unwrap_or_else(|| Trial::origin(x, f0, g0, slope0));
            let found = zoom(lo, t, &trial, &armijo, &curvature, evaluations, f0)?;
            return Ok((conclude(found), failures.get()));
        }
        if curvature(&t) {
            return Ok((Search::Accepted((t.x, t.f, t.g, t.bent)), failures.get()));
        }
        if t.slope >= 0.0 {
            let lo = t;
            let hi = prev.unwrap_or_else(|| Trial::origin(x, f0, g0, slope0));
            let found = zoom(lo, hi, &trial, &armijo, &curvature, evaluations, f0)?;
            return Ok((conclude(found), failures.get()));
        }
        // Still descending at the step bound: take it.
        if alpha >= alpha0 {
            return Ok((Search::Accepted((t.x, t.f, t.g, t.bent)), failures.get()));
        }
        prev = Some(t);
        alpha = (2.0 * alpha).min(alpha0);
    }
    Ok((Search::Failed, failures.get()))
}

fn conclude(found: Option<Trial>) -> Search {
    match found {
        Some(t) => Search::Accepted((t.x, t.f, t.g, t.bent)),
        None => Search::Failed,
    }
}

#[derive(Debug, Clone)]
struct Trial {
    alpha: f64,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    slope: f64,
    decrease: f64,
    bent: bool,
}

impl Trial {
    fn origin(x: &[f64], f: f64, g: &[f64], slope: f64) -> Self {
        Trial {
            alpha: 0.0,
            x: x.to_vec(),
            f,
            g: g.to_vec(),
            slope,
            decrease: 0.0,
            bent: false,
        }
    }
}

/// Narrows `[lo, hi]` (by step length, either order) until a point
/// satisfies both Wolfe conditions. Falls back to the best sufficient
/// decrease point seen.
fn zoom(
    mut lo: Trial,
    mut hi: Trial,
    trial: &dyn Fn(f64, &mut usize) -> Result<Option<Trial>>,
    armijo: &dyn Fn(&Trial) -> bool,
    curvature: &dyn Fn(&Trial) -> bool,
    evaluations: &mut usize,
    f0: f64,
) -> Result<Option<Trial>> {
    let mut best: Option<Trial> = (lo.alpha > 0.0 && armijo(&lo)).then(|| lo.clone());
    for _ in 0..30 {
        let alpha = interpolate(&lo, &hi);
        if (hi.alpha - lo.alpha).abs() < 1e-14 * lo.alpha.abs().max(hi.alpha.abs()) {
            break;
        }
        let Some(t) = trial(alpha, evaluations)? else {
            hi = Trial {
                alpha,
                f: f64::INFINITY,
                ..hi
            };
            continue;
        };
        if armijo(&t) && best.as_ref().is_none_or(|b| t.f < b.f) {
            best = Some(t.clone());
        }
        if !armijo(&t) || t.f >= lo.f {
            hi = t;
        } else {
            if curvature(&t) {
                return Ok(Some(t));
            }
            if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    Ok(best.filter(|b| b.f < f0))
}

/// Minimizer of the cubic through both ends, safeguarded to the middle 80%
/// of the interval; bisection when the cubic is unusable.
fn interpolate(a: &Trial, b: &Trial) -> f64 {
    let (lo, hi) = (a.alpha.min(b.alpha), a.alpha.max(b.alpha));
    let mid = 0.5 * (lo + hi);
    if !b.f.is_finite() || !a.f.is_finite() {
        return mid;
    }
    let d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < 0.0 {
        return mid;
    }
    let d2 = disc.sqrt().copysign(b.alpha - a.alpha);
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}

fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>)>, free: &[bool]) -> Vec<f64> {
    let mut r: Vec<f64> = g.iter().zip(free).map(|(v, &f)| if f { *v } else { 0.0 }).collect();
    let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(x, &f)| if f { *x } else { 0.0 }).collect() };
    let pairs: Vec<(Vec<f64>, Vec<f64>, f64)> = memory
        .iter()
        .filter_map(|(s, y)| {
            let (s, y) = (mask(s), mask(y));
            let sy = dot(&s, &y);
            (sy > 0.0).then(|| (s, y, 1.0 / sy))
        })
        .collect();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &r);
        for (ri, yi) in r.iter_mut().zip(y) {
            *ri -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.last() {
        let gamma = dot(s, y) / dot(y, y);
        for ri in &mut r {
            *ri *= gamma;
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &r);
        for (ri, si) in r.iter_mut().zip(s) {
            *ri += (a - b) * si;
        }
    }
    r.iter().map(|v| -v).collect()
}

fn steepest(g: &[f64], free: &[bool]) -> Vec<f64> {
    g.iter().zip(free).map(|(v, &f)| if f { -v } else { 0.0 }).collect()
}

fn project(x: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(lower.iter().zip(upper))
        .map(|(v, (l, u))| v.max(*l).min(*u))
        .collect()
}

/// `‖P(x − g) − x‖∞`, zero exactly at a bound-constrained stationary point.
pub fn projected_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((xi, gi), (l, u))| ((xi - gi).max(*l).min(*u) - xi).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok(Some((f, g)))
    }

    fn unbounded(n: usize) -> (Vec<f64>, Vec<f64>) {
        (vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n])
    }

    fn assert_monotone(r: &LbfgsResult) {
        for w in r.iterates.windows(2) {
            assert!(w[1].f <= w[0].f);
        }
    }

    #[test]
    fn rosenbrock_minimum() {
        let (lo, hi) = unbounded(2);
        let cfg = LbfgsConfig {
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            relative_tolerance: 0.0,
            max_step: 10.0,
            ..LbfgsConfig::default()
        };
        let r = minimize(&rosenbrock, &[-1.2, 1.0], &lo, &hi, &cfg).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8, "{:?}", r.x);
        assert_eq!(r.termination, Termination::Gradient);
        assert_monotone(&r);
    }

    #[test]
    fn active_bound_is_respected() {
        // Minimum of the unconstrained problem is at (1, 1); the box cuts it.
        let cfg = LbfgsConfig {
            max_iterations: 200,
            relative_tolerance: 0.0,
            ..LbfgsConfig::default()
        };
        let r = minimize(&rosenbrock, &[0.0, 0.0], &[-2.0, -2.0], &[0.5, 2.0], &cfg).unwrap();
        assert!((r.x[0] - 0.5).abs() < 1e-12);
        assert!((r.x[1] - 0.25).abs() < 1e-6, "{:?}", r.x);
        assert_monotone(&r);
    }

    #[test]
    fn zero_loss_returns_immediately() {
        let (lo, hi) = unbounded(1);
        let calls = std::cell::Cell::new(0);
        let zero = |_: &[f64]| -> Result<Option<(f64, Vec<f64>)>> {
            calls.set(calls.get() + 1);
            Ok(Some((0.0, vec![1.0])))
        };
        let r = minimize(&zero, &[3.0], &lo, &hi, &LbfgsConfig::default()).unwrap();
        assert_eq!(r.x, vec![3.0]);
        assert_eq!(r.iterates.len(), 1);
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn failed_evaluations_shrink_the_step() {
        // Quadratic with a wall: evaluations beyond x = 2 fail.
        let walled = |x: &[f64]| -> Result<Option<(f64, Vec<f64>)>> {
            if x[0] > 2.0 {
                return Ok(None);
            }
            Ok(Some(((x[0] - 1.8).powi(2), vec![2.0 * (x[0] - 1.8)])))
        };
        let (lo, hi) = unbounded(1);
        let cfg = LbfgsConfig {
            max_step: 10.0,
            ..LbfgsConfig::default()
        };
        let r = minimize(&walled, &[-3.0], &lo, &hi, &cfg).unwrap();
        assert!((r.x[0] - 1.8).abs() < 1e-6);
        assert!(r.rejected > 0);
        assert_monotone(&r);
    }

    #[test]
    fn wolfe_steps_on_a_quadratic() {
        let diag = [1.0, 10.0, 100.0];
        let quad = |x: &[f64]| -> Result<Option<(f64, Vec<f64>)>> {
            let f = x.iter().zip(diag).map(|(v, d)| 0.5 * d * v * v).sum();
            Ok(Some((f, x.iter().zip(diag).map(|(v, d)| d * v).collect())))
        };
        let (lo, hi) = unbounded(3);
        let cfg = LbfgsConfig {
            max_step: 100.0,
            relative_tolerance: 0.0,
            ..LbfgsConfig::default()
        };
        let r = minimize(&quad, &[1.0, 1.0, 1.0], &lo, &hi, &cfg).unwrap();
        assert!(r.x.iter().all(|v| v.abs() < 1e-8));
        assert!(r.iterates.len() < 30);
    }
}
