//! Corotational linear elasticity, the fiber muscle energy, and their
//! per-mesh assembly into energies, internal forces, tangents and
//! projective-dynamics projections.

mod body;
mod fibers;

pub use body::{EnergyParts, Evaluation, LocalProjections, SoftBody};
pub use fibers::{read_fibers, write_fibers, ActuationSignal, FiberMode, MuscleFiber};

use nalgebra::{Matrix3, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Isotropic material. Lamé parameters are derived on demand so they always
/// follow the current `E` and `ν`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
}

impl Material {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64, density: f64) -> Result<Self> {
        let m = Material {
            youngs_modulus,
            poisson_ratio,
            density,
        };
        m.validate()?;
        Ok(m)
    }

    /// Silicone elastomer defaults: E = 263824 Pa, ν = 0.499, ρ = 1070 kg/m³.
    pub fn silicone() -> Self {
        Material {
            youngs_modulus: 263_824.0,
            poisson_ratio: 0.499,
            density: 1070.0,
        }
    }

    pub fn from_lame(mu: f64, lambda: f64, density: f64) -> Result<Self> {
        let youngs_modulus = mu * (3.0 * lambda + 2.0 * mu) / (lambda + mu);
        let poisson_ratio = lambda / (2.0 * (lambda + mu));
        Material::new(youngs_modulus, poisson_ratio, density)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0 && self.youngs_modulus.is_finite()) {
            return Err(Error::invalid(format!(
                "Young's modulus must be positive, got {}",
                self.youngs_modulus
            )));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(Error::invalid(format!(
                "Poisson ratio must lie in [0, 0.5), got {}",
                self.poisson_ratio
            )));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::invalid(format!(
                "density must be positive, got {}",
                self.density
            )));
        }
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }

    pub fn lambda(&self) -> f64 {
        let nu = self.poisson_ratio;
        self.youngs_modulus * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    }

    pub fn with_youngs_modulus(mut self, youngs_modulus: f64) -> Self {
        self.youngs_modulus = youngs_modulus;
        self
    }
}

/// `F = R S` with `R` a proper rotation and `S` symmetric.
#[derive(Debug, Clone, Copy)]
pub struct Polar {
    pub rotation: Matrix3<f64>,
    pub stretch: Matrix3<f64>,
    /// `det F <= 0`: the sign of the weakest singular direction was flipped.
    pub inverted: bool,
}

/// Closest proper rotation. For `det F > 0` the scaled Newton iteration
/// `X ← (ζX + X⁻ᵀ/ζ)/2` is used, which returns an orthogonal factor accurate
/// to rounding; otherwise an SVD with the weakest singular direction flipped
/// so that `det R = +1`.
pub fn polar_decomposition(f: &Matrix3<f64>) -> Polar {
    let det = f.determinant();
    let scale = f.norm();
    if det > 1e-6 * scale * scale * scale {
        if let Some(rotation) = newton_polar(f) {
            let s = rotation.transpose() * f;
            return Polar {
                rotation,
                stretch: (s + s.transpose()) * 0.5,
                inverted: false,
            };
        }
    }
    svd_polar(f, det <= 0.0)
}

fn newton_polar(f: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let mut x = *f;
    let mut scaled = true;
    for _ in 0..40 {
        let inv_t = x.try_inverse()?.transpose();
        let zeta = if scaled {
            x.determinant().abs().powf(-1.0 / 3.0)
        } else {
            1.0
        };
        let next = (x * zeta + inv_t / zeta) * 0.5;
        let change = (next - x).norm();
        x = next;
        if !scaled {
            return Some(x);
        }
        if change < 1e-9 {
            // One unscaled step squares the remaining error.
            scaled = false;
        }
    }
    None
}

fn svd_polar(f: &Matrix3<f64>, inverted: bool) -> Polar {
    let svd = SVD::new(*f, true, true);
    let mut u = svd.u.expect("SVD computed with U");
    let v_t = svd.v_t.expect("SVD computed with Vᵀ");
    let mut sigma = svd.singular_values;
    if (u * v_t).determinant() < 0.0 {
        let k = sigma.imin();
        sigma[k] = -sigma[k];
        let col = -u.column(k);
        u.set_column(k, &col);
    }
    let rotation = u * v_t;
    let v = v_t.transpose();
    let stretch = v * Matrix3::from_diagonal(&sigma) * v_t;
    Polar {
        rotation,
        stretch,
        inverted,
    }
}

fn axial(a: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(a[(2, 1)], a[(0, 2)], a[(1, 0)])
}

/// Directional derivative `dR` of the polar rotation along `dF`.
///
/// With `W = Rᵀ dR = [ω]×`, symmetry of `S` gives
/// `(tr(S) I - S) ω = axial(Rᵀ dF - dFᵀ R)`.
pub fn rotation_differential(polar: &Polar, df: &Matrix3<f64>) -> Matrix3<f64> {
    let r = &polar.rotation;
    let s = &polar.stretch;
    let x = r.transpose() * df;
    let rhs = axial(&(x - x.transpose()));
    let lhs = Matrix3::identity() * s.trace() - s;
    let omega = lhs.try_inverse().map(|inv| inv * rhs).unwrap_or_else(Vector3::zeros);
    r * omega.cross_matrix()
}

/// Shear part `μ‖F − R‖²`.
pub fn shear_energy(f: &Matrix3<f64>, polar: &Polar, mu: f64) -> f64 {
    mu * (f - polar.rotation).norm_squared()
}

pub fn shear_stress(f: &Matrix3<f64>, polar: &Polar, mu: f64) -> Matrix3<f64> {
    (f - polar.rotation) * (2.0 * mu)
}

pub fn shear_stress_differential(polar: &Polar, df: &Matrix3<f64>, mu: f64) -> Matrix3<f64> {
    (df - rotation_differential(polar, df)) * (2.0 * mu)
}

/// Volumetric part `(λ/2) tr²(RᵀF − I)`; note `tr(RᵀF) = tr(S)`.
pub fn volume_energy(polar: &Polar, lambda: f64) -> f64 {
    let t = polar.stretch.trace() - 3.0;
    0.5 * lambda * t * t
}

pub fn volume_stress(polar: &Polar, lambda: f64) -> Matrix3<f64> {
    polar.rotation * (lambda * (polar.stretch.trace() - 3.0))
}

pub fn volume_stress_differential(polar: &Polar, df: &Matrix3<f64>, lambda: f64) -> Matrix3<f64> {
    let r = &polar.rotation;
    let dr = rotation_differential(polar, df);
    r * (lambda * r.dot(df)) + dr * (lambda * (polar.stretch.trace() - 3.0))
}

/// Corotational energy density `Ψ(F) = μ‖F − R‖² + (λ/2) tr²(RᵀF − I)`.
pub fn corotational_energy(f: &Matrix3<f64>, mu: f64, lambda: f64) -> f64 {
    let polar = polar_decomposition(f);
    shear_energy(f, &polar, mu) + volume_energy(&polar, lambda)
}

/// First Piola-Kirchhoff stress `∂Ψ/∂F`.
pub fn corotational_stress(f: &Matrix3<f64>, mu: f64, lambda: f64) -> Matrix3<f64> {
    let polar = polar_decomposition(f);
    shear_stress(f, &polar, mu) + volume_stress(&polar, lambda)
}

/// Rotation targeted by the corotational projection step.
pub fn corotational_projection(f: &Matrix3<f64>) -> Matrix3<f64> {
    polar_decomposition(f).rotation
}

/// Muscle energy density along fiber direction `m` with actuation `a`.
///
/// The projection target of a muscle constraint is `a·Fm`, so the density
/// whose gradient the local-global iteration follows is
/// `(w/2)(1 − a)‖Fm‖²`: zero for `a = 1`, contracting for `a < 1` and
/// extending for `a > 1`.
pub fn muscle_energy(f: &Matrix3<f64>, m: &Vector3<f64>, a: f64, w: f64) -> f64 {
    0.5 * w * (1.0 - a) * (f * m).norm_squared()
}

pub fn muscle_stress(f: &Matrix3<f64>, m: &Vector3<f64>, a: f64, w: f64) -> Matrix3<f64> {
    (f * m) * m.transpose() * (w * (1.0 - a))
}
