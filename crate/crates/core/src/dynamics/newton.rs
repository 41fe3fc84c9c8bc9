use crate::error::{Error, Result};
use crate::sparse::SymmetricPattern;

#[derive(Debug, Clone, Default)]
pub struct NewtonReport {
    pub iterations: usize,
    /// Gradient infinity norm before each iteration and at the end.
    pub residuals: Vec<f64>,
}

/// A smooth objective over `n` unknowns with a sparse Hessian.
pub trait NewtonProblem {
    fn pattern(&self) -> &SymmetricPattern;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Lower-triangle Hessian values in pattern order.
    fn hessian(&self, x: &[f64]) -> Vec<f64>;
}

/// Damped Newton with Armijo backtracking. When the Hessian is not positive
/// definite a growing multiple of its diagonal scale is added until the
/// Cholesky factorization succeeds. A stalled line search is accepted as
/// convergence if the residual is already below `acceptable`.
pub fn newton_minimize<P: NewtonProblem>(
    problem: &P,
    mut x: Vec<f64>,
    tolerance: f64,
    acceptable: f64,
    max_iterations: usize,
) -> Result<(Vec<f64>, NewtonReport)> {
    let pattern = problem.pattern();
    let n = pattern.dim();
    let mut report = NewtonReport::default();
    let mut f = problem.value(&x);
    let mut g = problem.gradient(&x);
    loop {
        let residual = inf_norm(&g);
        report.residuals.push(residual);
        if !residual.is_finite() || !f.is_finite() {
            return Err(Error::Oracle("non-finite objective in Newton iteration".into()));
        }
        if residual < tolerance {
            return Ok((x, report));
        }
        if report.iterations == max_iterations {
            return Err(Error::NonConvergence {
                iterations: max_iterations,
                residual,
            });
        }
        let mut h = problem.hessian(&x);
        let diag_scale = h[..n].iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut shift = 0.0;
        let factor = loop {
            match pattern.factorize(&h) {
                Ok(llt) => break llt,
                Err(_) if shift < 1e3 * diag_scale => {
                    let next = if shift == 0.0 { 1e-8 * diag_scale } else { shift * 10.0 };
                    for v in &mut h[..n] {
                        *v += next - shift;
                    }
                    shift = next;
                }
                Err(e) => return Err(Error::Oracle(format!("Hessian regularization failed: {e}"))),
            }
        };
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        factor.solve_in_place(&mut d);
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            return Err(Error::Oracle("Newton direction is not a descent direction".into()));
        }
        // Armijo decrease, or within the objective's rounding error a
        // decrease of the gradient norm.
        let noise = 1e-12 * f.abs().max(f64::MIN_POSITIVE);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let ft = problem.value(&trial);
            if ft.is_finite() {
                if ft < f && ft <= f + 1e-4 * alpha * slope {
                    accepted = Some((trial, ft, None));
                    break;
                }
                if ft - f <= noise {
                    let gt = problem.gradient(&trial);
                    if inf_norm(&gt) < residual {
                        accepted = Some((trial, ft, Some(gt)));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, ft, gt)) = accepted else {
            if residual < acceptable {
                return Ok((x, report));
            }
            return Err(Error::Oracle("Newton line search failed".into()));
        };
        x = trial;
        f = ft;
        g = gt.unwrap_or_else(|| problem.gradient(&x));
        report.iterations += 1;
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter()
        .fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Chain of linear springs fixed at the left end with a load on each
    /// node: a quadratic objective.
    struct SpringChain {
        pattern: SymmetricPattern,
        k: f64,
        load: f64,
    }

    impl SpringChain {
        fn new(n: usize) -> Self {
            let mut pairs = vec![];
            for i in 0..n {
                pairs.push((i, i));
                if i > 0 {
                    pairs.push((i, i - 1));
                }
            }
            SpringChain {
                pattern: SymmetricPattern::new(n, &pairs).unwrap(),
                k: 3.0,
                load: 0.5,
            }
        }
    }

    impl NewtonProblem for SpringChain {
        fn pattern(&self) -> &SymmetricPattern {
            &self.pattern
        }
        fn value(&self, x: &[f64]) -> f64 {
            let mut e = 0.5 * self.k * x[0] * x[0];
            for i in 1..x.len() {
                e += 0.5 * self.k * (x[i] - x[i - 1]).powi(2);
            }
            e - self.load * x.iter().sum::<f64>()
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            let n = x.len();
            (0..n)
                .map(|i| {
                    let left = if i == 0 { x[0] } else { x[i] - x[i - 1] };
                    let right = if i + 1 < n { x[i + 1] - x[i] } else { 0.0 };
                    self.k * (left - right) - self.load
                })
                .collect()
        }
        fn hessian(&self, x: &[f64]) -> Vec<f64> {
            let n = x.len();
            let mut v = vec![];
            for i in 0..n {
                v.push(if i + 1 < n { 2.0 * self.k } else { self.k });
                if i > 0 {
                    v.push(-self.k);
                }
            }
            v
        }
    }

    #[test]
    fn quadratic_problem_solved_in_one_iteration() {
        let chain = SpringChain::new(6);
        let (x, report) = newton_minimize(&chain, vec![0.0; 6], 1e-12, 0.0, 5).unwrap();
        assert_eq!(report.iterations, 1);
        // Node i carries the load of every node to its right.
        let mut expected = 0.0;
        for (i, xi) in x.iter().enumerate() {
            expected += (6 - i) as f64 * chain.load / chain.k;
            assert!((xi - expected).abs() < 1e-12);
        }
    }

    struct Quartic {
        pattern: SymmetricPattern,
    }

    impl NewtonProblem for Quartic {
        fn pattern(&self) -> &SymmetricPattern {
            &self.pattern
        }
        fn value(&self, x: &[f64]) -> f64 {
            x.iter().map(|v| v.powi(4) / 4.0 + v * v / 2.0 - v).sum()
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            x.iter().map(|v| v.powi(3) + v - 1.0).collect()
        }
        fn hessian(&self, x: &[f64]) -> Vec<f64> {
            x.iter().map(|v| 3.0 * v * v + 1.0).collect()
        }
    }

    #[test]
    fn convergence_is_quadratic() {
        let p = Quartic {
            pattern: SymmetricPattern::new(2, &[(0, 0), (1, 1)]).unwrap(),
        };
        let (_, report) = newton_minimize(&p, vec![2.0, 1.5], 1e-14, 0.0, 30).unwrap();
        let r = &report.residuals;
        let tail: Vec<f64> = r.iter().copied().filter(|v| *v > 1e-12).collect();
        let n = tail.len();
        assert!(n >= 3);
        // e_{k+1} ≈ C e_k² near the solution.
        let c1 = tail[n - 1] / tail[n - 2].powi(2);
        let c2 = tail[n - 2] / tail[n - 3].powi(2);
        assert!(c1 < 10.0 && c2 < 10.0, "{r:?}");
    }
}
