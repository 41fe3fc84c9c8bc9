//! Numerical damping of implicit Euler on a single oscillator, and the
//! estimators used to measure damping from sampled traces.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Complex, Matrix2, Vector2};
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorConfig {
    pub omega: f64,
    pub h: f64,
    pub steps: usize,
    pub lambda: f64,
}

impl OscillatorConfig {
    pub fn new(omega: f64, h: f64, steps: usize) -> Self {
        OscillatorConfig {
            omega,
            h,
            steps,
            lambda: 0.0,
        }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        OscillatorConfig { lambda, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::invalid(format!("omega must be positive, got {}", self.omega)));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::invalid(format!("h must be positive, got {}", self.h)));
        }
        if !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be finite"));
        }
        Ok(())
    }
}

/// `x' = iωx` integrated with implicit Euler from `x₀ = 1`. Returns
/// `steps + 1` samples.
pub fn implicit_oscillator(config: &OscillatorConfig) -> Result<Vec<Complex<f64>>> {
    config.validate()?;
    if config.lambda != 0.0 {
        return Err(Error::invalid("the first-order oscillator takes no lambda"));
    }
    let factor = Complex::new(1.0, 0.0) / Complex::new(1.0, -config.h * config.omega);
    let mut x = Complex::new(1.0, 0.0);
    let mut out = Vec::with_capacity(config.steps + 1);
    out.push(x);
    for _ in 0..config.steps {
        x *= factor;
        out.push(x);
    }
    Ok(out)
}

/// Closed form of the `j`-th implicit Euler iterate.
pub fn implicit_oscillator_closed_form(omega: f64, h: f64, j: i32) -> Complex<f64> {
    let r = (1.0 + omega * omega * h * h).powf(-0.5 * j as f64);
    Complex::from_polar(r, j as f64 * (omega * h).atan())
}

/// Implicit Euler matrix for `x'' = -ω²x + Λx'` with the velocity force
/// treated implicitly.
pub fn second_order_matrix(omega: f64, h: f64, lambda: f64) -> Result<Matrix2<f64>> {
    let d = 1.0 - h * lambda + h * h * omega * omega;
    if d.abs() < 1e-14 {
        return Err(Error::invalid(format!(
            "singular oscillator update: 1 - hΛ + h²ω² = {d:e}"
        )));
    }
    Ok(Matrix2::new(1.0 - h * lambda, h, -h * omega * omega, 1.0) / d)
}

/// Same oscillator with the velocity force lagged by one step, as the
/// simulator applies it: `v⁺ = v + h(-ω²x⁺ + Λv)`, `x⁺ = x + hv⁺`.
pub fn lagged_matrix(omega: f64, h: f64, lambda: f64) -> Result<Matrix2<f64>> {
    let d = 1.0 + h * h * omega * omega;
    let v_row = [-h * omega * omega / d, (1.0 + h * lambda) / d];
    Ok(Matrix2::new(1.0 + h * v_row[0], h * v_row[1], v_row[0], v_row[1]))
}

/// Iterates [`second_order_matrix`] from `(x, v) = (1, 0)`.
pub fn second_order_oscillator(config: &OscillatorConfig) -> Result<Vec<(f64, f64)>> {
    config.validate()?;
    let a = second_order_matrix(config.omega, config.h, config.lambda)?;
    Ok(iterate(&a, config.steps))
}

pub fn lagged_oscillator(config: &OscillatorConfig) -> Result<Vec<(f64, f64)>> {
    config.validate()?;
    let a = lagged_matrix(config.omega, config.h, config.lambda)?;
    Ok(iterate(&a, config.steps))
}

fn iterate(a: &Matrix2<f64>, steps: usize) -> Vec<(f64, f64)> {
    let mut s = Vector2::new(1.0, 0.0);
    let mut out = Vec::with_capacity(steps + 1);
    out.push((s[0], s[1]));
    for _ in 0..steps {
        s = a * s;
        out.push((s[0], s[1]));
    }
    out
}

pub fn spectral_radius(a: &Matrix2<f64>) -> f64 {
    let tr = a.trace();
    let det = a.determinant();
    let disc = tr * tr - 4.0 * det;
    if disc < 0.0 {
        det.sqrt()
    } else {
        let s = disc.sqrt();
        (0.5 * (tr + s)).abs().max((0.5 * (tr - s)).abs())
    }
}

/// Largest `Λ ≥ 0` keeping [`second_order_matrix`] inside the unit circle,
/// by bisection on the spectral radius.
pub fn lambda_crit(omega: f64, h: f64) -> Result<f64> {
    OscillatorConfig::new(omega, h, 0).validate()?;
    let radius = |lambda: f64| second_order_matrix(omega, h, lambda).map(|a| spectral_radius(&a));
    // The update is singular at Λ = (1 + h²ω²)/h, and unstable just below it.
    let singular = (1.0 + h * h * omega * omega) / h;
    let mut lo = 0.0;
    let mut hi = singular * (1.0 - 1e-9);
    if radius(hi)? <= 1.0 {
        return Err(Error::Oracle("no stability boundary below the singular gain".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if radius(mid)? <= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Sample index of the local maximum.
    pub step: usize,
    /// Refined (fractional) position of the maximum.
    pub position: f64,
    /// Height above the baseline.
    pub amplitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeakSeries {
    pub peaks: Vec<Peak>,
}

impl PeakSeries {
    pub fn amplitudes(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.amplitude).collect()
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakOptions {
    /// Level amplitudes are measured from. Defaults to the series mean.
    pub baseline: Option<f64>,
    /// Count the first sample as a peak when it exceeds its neighbour, as for
    /// a release from rest.
    pub include_start: bool,
    /// Drop peaks smaller than this fraction of the largest one.
    pub min_relative: f64,
}

impl Default for PeakOptions {
    fn default() -> Self {
        PeakOptions {
            baseline: None,
            include_start: false,
            min_relative: 0.0,
        }
    }
}

/// Positive local maxima of `samples` with default options.
pub fn extract_peaks(samples: &[f64]) -> Result<PeakSeries> {
    extract_peaks_with(samples, &PeakOptions::default())
}

/// Local maxima above the baseline, refined from the sample and its two
/// neighbours.
pub fn extract_peaks_with(samples: &[f64], options: &PeakOptions) -> Result<PeakSeries> {
    let n = samples.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} samples, need at least 3")));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    let baseline = options
        .baseline
        .unwrap_or_else(|| samples.iter().sum::<f64>() / n as f64);
    let mut peaks = Vec::new();
    if options.include_start && samples[0] > samples[1] && samples[0] > baseline {
        peaks.push(Peak {
            step: 0,
            position: 0.0,
            amplitude: samples[0] - baseline,
        });
    }
    for i in 1..n - 1 {
        let (y0, y1, y2) = (samples[i - 1], samples[i], samples[i + 1]);
        // Ties on the left only, so a flat top counts once.
        if !(y1 >= y0 && y1 > y2) || y1 <= baseline {
            continue;
        }
        let (offset, top) = refine_peak(y0 - baseline, y1 - baseline, y2 - baseline);
        peaks.push(Peak {
            step: i,
            position: i as f64 + offset,
            amplitude: top,
        });
    }
    let largest = peaks.iter().fold(0.0f64, |m, p| m.max(p.amplitude));
    peaks.retain(|p| p.amplitude > options.min_relative * largest);
    if peaks.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "found {} peak(s), need at least 2",
            peaks.len()
        )));
    }
    Ok(PeakSeries { peaks })
}

/// Offset and height of a maximum from three equally spaced samples measured
/// from the baseline. A sinusoid through the samples is exact for undamped
/// oscillation about the baseline; a parabola is the fallback.
pub(crate) fn refine_peak(y0: f64, y1: f64, y2: f64) -> (f64, f64) {
    let cos_step = (y0 + y2) / (2.0 * y1);
    if cos_step.abs() < 1.0 {
        let step = cos_step.acos();
        let s = (y2 - y0) / (2.0 * step.sin());
        let offset = s.atan2(y1) / step;
        if offset.abs() <= 1.0 {
            return (offset, y1.hypot(s));
        }
    }
    let curvature = y0 - 2.0 * y1 + y2;
    if curvature < 0.0 {
        let p = 0.5 * (y0 - y2) / curvature;
        (p, y1 - 0.25 * (y0 - y2) * p)
    } else {
        (0.0, y1)
    }
}

/// `(1/m) ln(X_k / X_{k+m})` averaged over every admissible `k`.
pub fn log_decrement(peaks: &PeakSeries, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("m must be at least 1"));
    }
    let x = peaks.amplitudes();
    if x.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::invalid("peak amplitudes must be positive"));
    }
    if x.len() <= m {
        return Err(Error::InsufficientData(format!(
            "{} peaks cannot span m = {m}",
            x.len()
        )));
    }
    let count = x.len() - m;
    let sum: f64 = (0..count).map(|k| (x[k] / x[k + m]).ln()).sum();
    Ok(sum / (m as f64 * count as f64))
}

/// `ζ = δ / √(4π² + δ²)`.
pub fn damping_ratio(delta: f64) -> f64 {
    delta / (4.0 * PI * PI + delta * delta).sqrt()
}

/// Logarithmic decrement implicit Euler imposes on an undamped oscillator.
pub fn delta_analytic(omega: f64, h: f64) -> f64 {
    let wh = omega * h;
    PI / wh.atan() * (wh * wh).ln_1p()
}

pub fn zeta_analytic(omega: f64, h: f64) -> f64 {
    damping_ratio(delta_analytic(omega, h))
}

/// Measured damping ratio of a sampled decaying oscillation.
pub fn measure_zeta(samples: &[f64], options: &PeakOptions, m: usize) -> Result<f64> {
    let peaks = extract_peaks_with(samples, options)?;
    Ok(damping_ratio(log_decrement(&peaks, m)?))
}

/// Mean number of samples per oscillation period, from the spacing of
/// upward crossings of `baseline` (interpolated linearly).
pub fn crossing_period(samples: &[f64], baseline: f64) -> Result<f64> {
    let mut crossings = Vec::new();
    for (i, w) in samples.windows(2).enumerate() {
        let (a, b) = (w[0] - baseline, w[1] - baseline);
        if a < 0.0 && b >= 0.0 {
            crossings.push(i as f64 + a / (a - b));
        }
    }
    if crossings.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} upward crossing(s), need at least 2",
            crossings.len()
        )));
    }
    Ok((crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64)
}

/// Frequency of the undamped continuous oscillator whose implicit Euler
/// iterates rotate by the observed angle per step: `ω = tan(2π/P)/h`.
pub fn dominant_omega(samples: &[f64], baseline: f64, h: f64) -> Result<f64> {
    let period = crossing_period(samples, baseline)?;
    let angle = 2.0 * PI / period;
    if angle >= 0.5 * PI {
        return Err(Error::InsufficientData(format!(
            "period of {period:.2} samples is too short to resolve"
        )));
    }
    Ok(angle.tan() / h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub omega: f64,
    pub h: f64,
    pub lambda: f64,
    /// `None` when the trace had too few peaks.
    pub zeta_measured: Option<f64>,
    pub zeta_analytic: f64,
    pub lambda_crit: f64,
}

/// Damping measured on the single oscillator over a grid. Each trace runs
/// for `periods` undamped periods.
pub fn oscillator_sweep(omegas: &[f64], hs: &[f64], lambdas: &[f64], periods: f64) -> Result<Vec<SweepRow>> {
    let mut grid = Vec::new();
    for &omega in omegas {
        for &h in hs {
            for &lambda in lambdas {
                grid.push((omega, h, lambda));
            }
        }
    }
    grid.par_iter()
        .map(|&(omega, h, lambda)| {
            let steps = (periods * 2.0 * PI / (omega * h)).ceil() as usize;
            let config = OscillatorConfig::new(omega, h, steps).with_lambda(lambda);
            let xs: Vec<f64> = second_order_oscillator(&config)?.iter().map(|s| s.0).collect();
            let options = PeakOptions {
                baseline: Some(0.0),
                include_start: true,
                min_relative: 1e-12,
            };
            Ok(SweepRow {
                omega,
                h,
                lambda,
                zeta_measured: measure_zeta(&xs, &options, 1).ok(),
                zeta_analytic: zeta_analytic(omega, h),
                lambda_crit: lambda_crit(omega, h)?,
            })
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "omega,h,lambda,zeta_measured,zeta_analytic,lambda_crit";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let measured = r
            .zeta_measured
            .map(|z| format!("{z:.16e}"))
            .unwrap_or_else(|| "nan".into());
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{measured},{:.16e},{:.16e}",
            r.omega, r.h, r.lambda, r.zeta_analytic, r.lambda_crit
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_order_recurrence_matches_closed_form() {
        let cfg = OscillatorConfig::new(2.0 * PI, 0.01, 100);
        let xs = implicit_oscillator(&cfg).unwrap();
        assert_eq!(xs[0], Complex::new(1.0, 0.0));
        let ratio = (1.0 + (2.0 * PI * 0.01f64).powi(2)).powf(-0.5);
        for w in xs.windows(2) {
            assert!((w[1].norm() / w[0].norm() - ratio).abs() < 1e-14);
        }
        let expected = (1.0 + (2.0 * PI * 0.01f64).powi(2)).powi(-50);
        assert!((xs[100].norm() - expected).abs() < 1e-12);
        for j in [1, 17, 100] {
            assert!((xs[j] - implicit_oscillator_closed_form(2.0 * PI, 0.01, j as i32)).norm() < 1e-12);
        }
        assert!(implicit_oscillator(&cfg.with_lambda(0.1)).is_err());
    }

    #[test]
    fn peaks_of_a_cosine() {
        let period = 37.3;
        let xs: Vec<f64> = (0..400).map(|i| (2.0 * PI * i as f64 / period).cos()).collect();
        let peaks = extract_peaks_with(
            &xs,
            &PeakOptions {
                baseline: Some(0.0),
                ..PeakOptions::default()
            },
        )
        .unwrap();
        for (k, p) in peaks.peaks.iter().enumerate() {
            assert!((p.amplitude - 1.0).abs() < 1e-6);
            assert!((p.position - period * (k + 1) as f64).abs() < 0.05);
        }
        let decay: Vec<f64> = (0..50).map(|i| (-0.1 * i as f64).exp()).collect();
        assert!(matches!(extract_peaks(&decay), Err(Error::InsufficientData(_))));
        assert!(extract_peaks(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn peak_ratio_of_the_implicit_oscillator() {
        let (omega, h) = (2.0 * PI, 0.01);
        let xs: Vec<f64> = implicit_oscillator(&OscillatorConfig::new(omega, h, 600))
            .unwrap()
            .iter()
            .map(|x| x.re)
            .collect();
        let peaks = extract_peaks(&xs).unwrap().amplitudes();
        let wh: f64 = omega * h;
        let expected = (1.0 + wh * wh).powf(-PI / wh.atan());
        // Amplitudes are measured from the mean, so compare a ratio of
        // differences which the offset cancels out of.
        let r = (peaks[2] - peaks[3]) / (peaks[1] - peaks[2]);
        assert!((r / expected - 1.0).abs() < 0.01, "{r} vs {expected}");
    }

    #[test]
    fn log_decrement_cases() {
        let series = |x: &[f64]| PeakSeries {
            peaks: x
                .iter()
                .enumerate()
                .map(|(i, &a)| Peak {
                    step: i,
                    position: i as f64,
                    amplitude: a,
                })
                .collect(),
        };
        assert!((log_decrement(&series(&[1.0, 0.5]), 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_decrement(&series(&[0.3; 5]), 2).unwrap(), 0.0);
        let envelope: Vec<f64> = (0..8).map(|k| (-0.37 * k as f64).exp()).collect();
        for m in 1..=4 {
            assert!((log_decrement(&series(&envelope), m).unwrap() - 0.37).abs() < 1e-12);
        }
        assert!(log_decrement(&series(&[1.0, -0.5]), 1).is_err());
        assert!(log_decrement(&series(&[1.0, 0.5]), 2).is_err());
    }

    #[test]
    fn damping_ratio_values() {
        assert_eq!(damping_ratio(0.0), 0.0);
        assert!((damping_ratio(1e12) - 1.0).abs() < 1e-12);
        // 0.5 / sqrt(4π² + 0.25)
        assert!((damping_ratio(0.5) - 0.079_326_696_843_658_5).abs() < 1e-15);
    }

    #[test]
    fn analytic_zeta_limits_and_monotonicity() {
        let omega = 2.0 * PI;
        for h in [1e-4, 1e-5, 1e-6] {
            assert!((zeta_analytic(omega, h) / (0.5 * omega * h) - 1.0).abs() < 10.0 * omega * h);
        }
        let mut last = 0.0;
        for i in 0..=200 {
            let h = 1e-4 * (1e3f64).powf(i as f64 / 200.0);
            let z = zeta_analytic(omega, h);
            assert!(z > last);
            last = z;
        }
    }

    #[test]
    fn estimator_chain_matches_closed_form() {
        for omega in [PI, 2.0 * PI, 4.0 * PI] {
            for h in [0.005, 0.01, 0.02, 0.04] {
                let steps = (12.0 * 2.0 * PI / (omega * h)) as usize;
                let xs: Vec<f64> = implicit_oscillator(&OscillatorConfig::new(omega, h, steps))
                    .unwrap()
                    .iter()
                    .map(|x| x.re)
                    .collect();
                let options = PeakOptions {
                    baseline: Some(0.0),
                    include_start: true,
                    min_relative: 1e-12,
                };
                let z = measure_zeta(&xs, &options, 1).unwrap();
                let za = zeta_analytic(omega, h);
                assert!((z / za - 1.0).abs() < 0.01, "ω={omega} h={h}: {z} vs {za}");
                if omega == 2.0 * PI && h == 0.01 {
                    assert!((z - za).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn lambda_crit_matches_h_omega_squared() {
        for omega in [PI, 2.0 * PI, 4.0 * PI, 30.0] {
            for h in [0.005, 0.01, 0.02, 0.04] {
                let lc = lambda_crit(omega, h).unwrap();
                assert!((lc - h * omega * omega).abs() < 1e-9, "{lc}");
                let radius = |l| spectral_radius(&second_order_matrix(omega, h, l).unwrap());
                assert!(radius(0.0) < 1.0);
                assert!((radius(lc) - 1.0).abs() < 1e-9);
                // The lagged form shares the boundary.
                let lagged = |l| spectral_radius(&lagged_matrix(omega, h, l).unwrap());
                assert!(lagged(0.999 * lc) < 1.0 && lagged(1.001 * lc) > 1.0);
            }
        }
        assert!((lambda_crit(2.0 * PI, 0.01).unwrap() - 0.394_784_176_043_574_3).abs() < 1e-12);
    }

    #[test]
    fn amplitude_decays_below_and_grows_above_the_boundary() {
        for omega in [PI, 2.0 * PI, 4.0 * PI] {
            for h in [0.005, 0.01, 0.02, 0.04] {
                let lc = lambda_crit(omega, h).unwrap();
                let steps = (5.0 * 2.0 * PI / (omega * h)) as usize;
                let energy = |s: &(f64, f64)| (omega * s.0).hypot(s.1);
                for (scale, grows) in [(0.9, false), (1.1, true), (0.0, false)] {
                    let cfg = OscillatorConfig::new(omega, h, steps).with_lambda(scale * lc);
                    let xs = second_order_oscillator(&cfg).unwrap();
                    let head = xs[..20].iter().map(energy).fold(0.0, f64::max);
                    let tail = xs[steps - 20..].iter().map(energy).fold(0.0, f64::max);
                    assert_eq!(tail > head, grows, "ω={omega} h={h} scale={scale}");
                }
            }
        }
    }

    #[test]
    fn singular_update_is_rejected() {
        let (omega, h) = (2.0, 0.1);
        let lambda = (1.0 + h * h * omega * omega) / h;
        assert!(second_order_oscillator(&OscillatorConfig::new(omega, h, 3).with_lambda(lambda)).is_err());
        assert!(OscillatorConfig::new(-1.0, h, 3).validate().is_err());
    }

    #[test]
    fn lambda_crit_is_linear_in_h() {
        let omega = 2.0 * PI;
        let hs: Vec<f64> = (1..=20).map(|i| 0.0025 * i as f64).collect();
        let ls: Vec<f64> = hs.iter().map(|&h| lambda_crit(omega, h).unwrap()).collect();
        let slope = hs.iter().zip(&ls).map(|(h, l)| h * l).sum::<f64>() / hs.iter().map(|h| h * h).sum::<f64>();
        assert!((slope / (omega * omega) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dominant_frequency_inverts_the_discrete_rotation() {
        let (omega, h) = (9.0, 0.02);
        let xs: Vec<f64> = implicit_oscillator(&OscillatorConfig::new(omega, h, 500))
            .unwrap()
            .iter()
            .map(|x| x.re)
            .collect();
        let w = dominant_omega(&xs, 0.0, h).unwrap();
        assert!((w / omega - 1.0).abs() < 1e-3, "{w}");
    }

    #[test]
    fn sweep_rows_and_csv() {
        let rows = oscillator_sweep(&[2.0 * PI], &[0.01, 0.02], &[0.0], 10.0).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.zeta_measured.unwrap() > 0.0);
            assert!((r.zeta_measured.unwrap() / r.zeta_analytic - 1.0).abs() < 0.01);
        }
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with(SWEEP_HEADER));
        assert_eq!(csv.lines().count(), 3);
    }

    proptest! {
        #[test]
        fn estimators_are_amplitude_invariant(scale in 1e-6f64..1e6, omega in 2.0f64..20.0, h in 0.002f64..0.03) {
            let steps = (8.0 * 2.0 * PI / (omega * h)) as usize;
            let xs: Vec<f64> = implicit_oscillator(&OscillatorConfig::new(omega, h, steps))
                .unwrap()
                .iter()
                .map(|x| x.re)
                .collect();
            let scaled: Vec<f64> = xs.iter().map(|x| x * scale).collect();
            let opts = PeakOptions { baseline: Some(0.0), include_start: true, min_relative: 1e-9 };
            let a = measure_zeta(&xs, &opts, 1).unwrap();
            let b = measure_zeta(&scaled, &opts, 1).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1e-12));
            let pa = crossing_period(&xs, 0.0).unwrap();
            let pb = crossing_period(&scaled, 0.0).unwrap();
            prop_assert!((pa - pb).abs() < 1e-9 * pa);
        }
    }
}
