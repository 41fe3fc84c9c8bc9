use nalgebra::Vector3;

use crate::adjoint::StateLoss;
use crate::damplab::{extract_peaks_with, refine_peak, PeakOptions};
use crate::dynamics::{State, Trajectory};
use crate::error::{Error, Result};
use crate::mesh::Axis;

/// Peaks smaller than this fraction of the largest reference peak are
/// ignored by the envelope loss; they sit in the solver's noise.
pub const ENVELOPE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    /// `Σ_i ‖q_i(T) − r_i(end)‖²`.
    FinalPose,
    /// `(1/TM) Σ_{t=1..T} Σ_i ‖q_i(t) − r_i(t)‖²`.
    Trajectory,
    /// `(1/TM) Σ_{t=1..T} Σ_i ‖q_i(t) − r_i(end)‖²`: every simulated sample
    /// is pulled toward the reference's final pose.
    StaticResponse,
    /// Mean squared log-ratio of matching oscillation peaks of one tracked
    /// coordinate, measured from `baseline`.
    Envelope { point: usize, axis: Axis, baseline: f64 },
    /// Variance of the log amplitudes of the first `peaks` oscillation peaks.
    /// Needs no reference.
    ConstantAmplitude {
        point: usize,
        axis: Axis,
        baseline: f64,
        peaks: usize,
    },
}

/// A loss over the tracked nodes of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Node ids, in the order of the reference's points.
    pub tracked: Vec<usize>,
    pub reference: Trajectory,
    pub weight: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind, tracked: Vec<usize>, reference: Trajectory) -> Self {
        LossSpec {
            kind,
            tracked,
            reference,
            weight: 1.0,
        }
    }

    /// Value of the loss for a tracked trajectory (no gradient).
    pub fn value(&self, sim: &Trajectory) -> Result<f64> {
        if sim.point_count() != self.tracked.len() {
            return Err(Error::invalid(format!(
                "trajectory tracks {} points, loss expects {}",
                sim.point_count(),
                self.tracked.len()
            )));
        }
        let series = TrackedSeries::Trajectory(sim);
        self.compute(&series, None)
    }

    fn check_reference(&self, len: usize, times: &dyn Fn(usize) -> f64) -> Result<()> {
        let needs_reference = !matches!(self.kind, LossKind::ConstantAmplitude { .. });
        if needs_reference {
            if self.reference.is_empty() {
                return Err(Error::invalid("loss needs a nonempty reference"));
            }
            if self.reference.point_count() != self.tracked.len() {
                return Err(Error::invalid(format!(
                    "reference has {} points, {} are tracked",
                    self.reference.point_count(),
                    self.tracked.len()
                )));
            }
        }
        if matches!(self.kind, LossKind::Trajectory) {
            if self.reference.len() != len {
                return Err(Error::invalid(format!(
                    "reference has {} samples, simulation has {len}",
                    self.reference.len()
                )));
            }
            for (i, &t) in self.reference.times.iter().enumerate() {
                if (t - times(i)).abs() > 1e-9 * t.abs().max(1.0) {
                    return Err(Error::invalid(format!(
                        "sample {i}: reference time {t} vs simulated {}",
                        times(i)
                    )));
                }
            }
        }
        Ok(())
    }

    fn compute(&self, series: &TrackedSeries, mut grad: Option<&mut Vec<Vec<[f64; 3]>>>) -> Result<f64> {
        let len = series.len();
        if len == 0 {
            return Err(Error::invalid("empty simulation"));
        }
        self.check_reference(len, &|i| series.time(i))?;
        let m = self.tracked.len();
        let w = self.weight;
        let mut add = |t: usize, p: usize, v: Vector3<f64>| {
            if let Some(g) = grad.as_deref_mut() {
                for d in 0..3 {
                    g[t][p][d] += v[d];
                }
            }
        };
        let value = match &self.kind {
            LossKind::FinalPose => {
                let last = len - 1;
                let mut value = 0.0;
                for p in 0..m {
                    let e = series.point(last, p) - self.reference.last(p);
                    value += w * e.norm_squared();
                    add(last, p, 2.0 * w * e);
                }
                value
            }
            LossKind::Trajectory | LossKind::StaticResponse => {
                let samples = len - 1;
                if samples == 0 {
                    return Err(Error::invalid("trajectory losses need at least one step"));
                }
                let scale = w / (samples * m) as f64;
                let mut value = 0.0;
                for t in 1..len {
                    for p in 0..m {
                        let r = match self.kind {
                            LossKind::Trajectory => self.reference.point(t, p),
                            _ => self.reference.last(p),
                        };
                        let e = series.point(t, p) - r;
                        value += scale * e.norm_squared();
                        add(t, p, 2.0 * scale * e);
                    }
                }
                value
            }
            LossKind::Envelope { point, axis, baseline } => {
                let reference = self.reference.axis_series(*point, *axis);
                let ref_peaks = extract_peaks_with(&reference, &envelope_options(*baseline, ENVELOPE_FLOOR))?;
                let sim: Vec<f64> = (0..len).map(|t| series.point(t, *point)[axis.index()]).collect();
                let sim_peaks = extract_peaks_with(&sim, &envelope_options(*baseline, ENVELOPE_FLOOR * 1e-2))?;
                let k = ref_peaks.len().min(sim_peaks.len());
                let mut value = 0.0;
                for (r, s) in ref_peaks.peaks.iter().zip(&sim_peaks.peaks).take(k) {
                    let e = (s.amplitude / r.amplitude).ln();
                    value += w * e * e / k as f64;
                    let d_amp = 2.0 * w * e / (k as f64 * s.amplitude);
                    for (offset, da) in peak_sensitivity(&sim, s.step, *baseline).into_iter().enumerate() {
                        let mut v = Vector3::zeros();
                        v[axis.index()] = d_amp * da;
                        add(s.step + offset - 1, *point, v);
                    }
                }
                value
            }
            LossKind::ConstantAmplitude {
                point,
                axis,
                baseline,
                peaks,
            } => {
                let sim: Vec<f64> = (0..len).map(|t| series.point(t, *point)[axis.index()]).collect();
                let found = extract_peaks_with(&sim, &envelope_options(*baseline, 0.0))?;
                let k = found.len().min(*peaks);
                if k < 2 {
                    return Err(Error::InsufficientData(
                        "constant-amplitude loss needs two peaks".into(),
                    ));
                }
                let logs: Vec<f64> = found.peaks[..k].iter().map(|p| p.amplitude.ln()).collect();
                let mean = logs.iter().sum::<f64>() / k as f64;
                let mut value = 0.0;
                for (pk, l) in found.peaks[..k].iter().zip(&logs) {
                    let e = l - mean;
                    value += w * e * e / k as f64;
                    let d_amp = 2.0 * w * e / (k as f64 * pk.amplitude);
                    for (offset, da) in peak_sensitivity(&sim, pk.step, *baseline).into_iter().enumerate() {
                        let mut v = Vector3::zeros();
                        v[axis.index()] = d_amp * da;
                        add(pk.step + offset - 1, *point, v);
                    }
                }
                value
            }
        };
        Ok(value)
    }
}

fn envelope_options(baseline: f64, floor: f64) -> PeakOptions {
    PeakOptions {
        baseline: Some(baseline),
        include_start: false,
        min_relative: floor,
    }
}

/// Derivative of a refined peak amplitude with respect to the three samples
/// around `step`, by central differences of the closed-form refinement.
fn peak_sensitivity(samples: &[f64], step: usize, baseline: f64) -> [f64; 3] {
    let y = [
        samples[step - 1] - baseline,
        samples[step] - baseline,
        samples[step + 1] - baseline,
    ];
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h = 1e-6 * scale.max(f64::MIN_POSITIVE);
    let mut out = [0.0; 3];
    for (j, slot) in out.iter_mut().enumerate() {
        let (mut up, mut down) = (y, y);
        up[j] += h;
        down[j] -= h;
        *slot = (refine_peak(up[0], up[1], up[2]).1 - refine_peak(down[0], down[1], down[2]).1) / (2.0 * h);
    }
    out
}

enum TrackedSeries<'a> {
    States(&'a [State], &'a [usize]),
    Trajectory(&'a Trajectory),
}

impl TrackedSeries<'_> {
    fn len(&self) -> usize {
        match self {
            TrackedSeries::States(s, _) => s.len(),
            TrackedSeries::Trajectory(t) => t.len(),
        }
    }

    fn time(&self, i: usize) -> f64 {
        match self {
            TrackedSeries::States(s, _) => s[i].t,
            TrackedSeries::Trajectory(t) => t.times[i],
        }
    }

    fn point(&self, i: usize, p: usize) -> Vector3<f64> {
        match self {
            TrackedSeries::States(s, nodes) => {
                let n = nodes[p];
                Vector3::new(s[i].q[3 * n], s[i].q[3 * n + 1], s[i].q[3 * n + 2])
            }
            TrackedSeries::Trajectory(t) => t.point(i, p),
        }
    }
}

impl StateLoss for LossSpec {
    fn evaluate(&self, states: &[State]) -> Result<(f64, Vec<Vec<f64>>)> {
        if let Some(bad) = self
            .tracked
            .iter()
            .find(|&&n| states.first().is_some_and(|s| 3 * n + 2 >= s.q.len()))
        {
            return Err(Error::invalid(format!("tracked node {bad} is out of range")));
        }
        let mut tracked_grad = vec![vec![[0.0; 3]; self.tracked.len()]; states.len()];
        let value = self.compute(&TrackedSeries::States(states, &self.tracked), Some(&mut tracked_grad))?;
        let grads = states
            .iter()
            .zip(&tracked_grad)
            .map(|(s, g)| {
                if g.iter().all(|v| *v == [0.0; 3]) {
                    return Vec::new();
                }
                let mut full = vec![0.0; s.q.len()];
                for (&n, v) in self.tracked.iter().zip(g) {
                    for d in 0..3 {
                        full[3 * n + d] += v[d];
                    }
                }
                full
            })
            .collect();
        Ok((value, grads))
    }
}
