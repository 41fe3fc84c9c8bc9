use super::*;
use crate::constitutive::{ActuationSignal, FiberMode, Material, MuscleFiber, SoftBody};
use crate::dynamics::{ForceSpec, SolverConfig};
use crate::mesh::{build_hex_box, Axis, FaceSide, Mesh};
use nalgebra::Vector3;

/// `Σ_t Σ_p ‖q_p(t) − r_p‖²` over the given nodes, with `r` the rest
/// position shifted by `offset`.
fn tracking_loss(mesh: &Mesh, nodes: Vec<usize>, offset: [f64; 3]) -> impl StateLoss {
    let targets: Vec<Vector3<f64>> = nodes.iter().map(|&n| mesh.nodes()[n] + Vector3::from(offset)).collect();
    move |states: &[State]| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut value = 0.0;
        let mut grads = Vec::with_capacity(states.len());
        for s in states {
            let mut g = vec![0.0; s.q.len()];
            for (&n, r) in nodes.iter().zip(&targets) {
                for d in 0..3 {
                    let e = s.q[3 * n + d] - r[d];
                    value += e * e;
                    g[3 * n + d] = 2.0 * e;
                }
            }
            grads.push(g);
        }
        Ok((value, grads))
    }
}

fn beam() -> Simulator {
    let mesh = build_hex_box([0.06, 0.02, 0.02], [2, 1, 1])
        .unwrap()
        .clamp_face(Axis::X, FaceSide::Min)
        .unwrap();
    let body = SoftBody::new(mesh, Material::silicone(), vec![]).unwrap();
    Simulator::new(body, ForceSpec::default(), SolverConfig::default(), vec![]).unwrap()
}

/// Clamped bar with one fiber along x in the upper row of elements.
fn bar(signal: ActuationSignal) -> Simulator {
    let mesh = build_hex_box([0.08, 0.02, 0.02], [4, 1, 2])
        .unwrap()
        .clamp_face(Axis::X, FaceSide::Min)
        .unwrap();
    let upper: Vec<usize> = (0..mesh.element_count())
        .filter(|&e| {
            let z: f64 = mesh.element(e).iter().map(|&n| mesh.nodes()[n].z).sum::<f64>() / 8.0;
            z > 0.01
        })
        .collect();
    assert_eq!(upper.len(), 4);
    let fiber = MuscleFiber::new(upper, Vector3::x(), 2e4, FiberMode::Extend).unwrap();
    let body = SoftBody::new(mesh, Material::new(2e5, 0.45, 1070.0).unwrap(), vec![fiber]).unwrap();
    Simulator::new(body, ForceSpec::default(), SolverConfig::default(), vec![signal]).unwrap()
}

fn tip_nodes(sim: &Simulator) -> Vec<usize> {
    sim.body().mesh().face_nodes(Axis::X, FaceSide::Max)
}

fn assert_agrees(report: &GradientReport, tol: f64) {
    let fd = report.finite_difference.as_ref().unwrap();
    for (i, d) in report.discrepancies.as_ref().unwrap().iter().enumerate() {
        assert!(
            *d <= tol,
            "{}: adjoint {} vs fd {} ({d:e})",
            report.names[i],
            report.gradient[i],
            fd[i]
        );
    }
}

#[test]
fn parameter_independent_loss_has_zero_gradient() {
    let sim = beam();
    let params = ParameterSet::new()
        .with(Parameter::YoungsModulus)
        .with(Parameter::Damping);
    let values = params.values(&sim).unwrap();
    let constant = |states: &[State]| -> Result<(f64, Vec<Vec<f64>>)> { Ok((3.0, vec![Vec::new(); states.len()])) };
    let (value, grad) = loss_and_gradient(&sim, &params, &values, 0.05, &constant).unwrap();
    assert_eq!(value, 3.0);
    assert_eq!(grad, vec![0.0, 0.0]);
}

#[test]
fn youngs_modulus_and_damping_gradients_match_finite_differences() {
    let sim = beam();
    let loss = tracking_loss(sim.body().mesh(), tip_nodes(&sim), [0.0, 0.0, -2e-3]);
    let params = ParameterSet::new()
        .with(Parameter::YoungsModulus)
        .with(Parameter::Damping);
    // Λ is evaluated away from zero so its relative step is meaningful.
    let values = vec![263824.0, 0.02];
    let report = gradient_report(&sim, &params, &values, 0.1, &loss, Some(1e-5)).unwrap();
    assert_agrees(&report, 1e-4);
    assert!(report.gradient.iter().all(|g| *g != 0.0));
    assert!(report.to_text().contains("grad.E = "));
}

#[test]
fn fiber_gradients_match_finite_differences() {
    let sim = bar(ActuationSignal::constant(1.2));
    let loss = tracking_loss(sim.body().mesh(), tip_nodes(&sim), [1e-3, 0.0, 0.0]);
    let params = ParameterSet::new()
        .with(Parameter::FiberStiffness(0))
        .with(Parameter::Actuation { fiber: 0, interval: 0 });
    let values = params.values(&sim).unwrap();
    let report = gradient_report(&sim, &params, &values, 0.1, &loss, Some(1e-5)).unwrap();
    assert_agrees(&report, 1e-4);
}

#[test]
fn sequence_gradient_sums_to_the_constant_gradient() {
    let h = 0.01;
    let seq = ActuationSignal::piecewise(20.0, vec![1.15; 10]).unwrap();
    let sim = bar(seq);
    let loss = tracking_loss(sim.body().mesh(), tip_nodes(&sim), [1e-3, 0.0, 5e-4]);
    let params = ParameterSet::new().with_sequence(0, 10);
    let values = params.values(&sim).unwrap();
    let duration = 50.0 * h;
    let report = gradient_report(&sim, &params, &values, duration, &loss, Some(1e-5)).unwrap();
    assert_agrees(&report, 1e-4);

    let constant = bar(ActuationSignal::constant(1.15));
    let one = ParameterSet::new().with(Parameter::Actuation { fiber: 0, interval: 0 });
    let (_, g) = loss_and_gradient(&constant, &one, &[1.15], duration, &loss).unwrap();
    let sum: f64 = report.gradient.iter().sum();
    assert!((sum - g[0]).abs() < 1e-9 * g[0].abs(), "{sum} vs {}", g[0]);
}

#[test]
fn finite_differences_converge_toward_the_adjoint() {
    let sim = beam();
    let loss = tracking_loss(sim.body().mesh(), tip_nodes(&sim), [0.0, 0.0, -2e-3]);
    let params = ParameterSet::new().with(Parameter::YoungsModulus);
    let values = vec![263824.0];
    let (_, adj) = loss_and_gradient(&sim, &params, &values, 0.05, &loss).unwrap();
    let err = |step| (fd_gradient(&sim, &params, &values, 0.05, &loss, step).unwrap()[0] - adj[0]).abs();
    let coarse = err(4e-2);
    let fine = err(1e-2);
    assert!(fine < 0.2 * coarse, "{coarse:e} -> {fine:e}");
}

#[test]
fn checkpoint_mismatch_is_rejected() {
    let sim = beam();
    let loss = tracking_loss(sim.body().mesh(), tip_nodes(&sim), [0.0; 3]);
    let params = ParameterSet::new().with(Parameter::YoungsModulus);
    let mut states = sim.rollout(&sim.initial_state(), 0.03).unwrap();
    states[2].q[3 * tip_nodes(&sim)[0]] += 1e-4;
    assert!(matches!(
        backward(&sim, &states, &loss, &params),
        Err(Error::Checkpoint(_))
    ));
    states.remove(1);
    assert!(matches!(
        backward(&sim, &states, &loss, &params),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn bounds_are_enforced() {
    let mut sim = beam();
    let params = ParameterSet::new().with_bounds(Parameter::YoungsModulus, 1e5, 1e6);
    assert!(params.apply(&mut sim, &[5e4]).is_err());
    params.apply(&mut sim, &[5e5]).unwrap();
    assert_eq!(sim.body().material().youngs_modulus, 5e5);
    assert_eq!(params.names(), vec!["E"]);
}

#[test]
fn antagonist_gradient_matches_finite_differences() {
    let mesh = build_hex_box([0.08, 0.02, 0.02], [4, 1, 2])
        .unwrap()
        .clamp_face(Axis::X, FaceSide::Min)
        .unwrap();
    let rows = |upper: bool| -> Vec<usize> {
        (0..mesh.element_count())
            .filter(|&e| {
                let z: f64 = mesh.element(e).iter().map(|&n| mesh.nodes()[n].z).sum::<f64>() / 8.0;
                (z > 0.01) == upper
            })
            .collect()
    };
    let fibers = vec![
        MuscleFiber::new(rows(true), Vector3::x(), 2e4, FiberMode::Extend).unwrap(),
        MuscleFiber::new(rows(false), Vector3::x(), 2e4, FiberMode::Contract).unwrap(),
    ];
    let body = SoftBody::new(mesh, Material::new(2e5, 0.45, 1070.0).unwrap(), fibers).unwrap();
    let signals = vec![ActuationSignal::constant(1.1), ActuationSignal::constant(0.9)];
    let sim = Simulator::new(body, ForceSpec::default(), SolverConfig::default(), signals).unwrap();
    let loss = tracking_loss(sim.body().mesh(), tip_nodes(&sim), [0.0, 0.0, 1e-3]);
    let params = ParameterSet::new().with(Parameter::Antagonist { fiber: 0, partner: 1 });
    assert_eq!(params.values(&sim).unwrap(), vec![1.1]);
    let report = gradient_report(&sim, &params, &[1.05], 0.1, &loss, Some(1e-5)).unwrap();
    assert_agrees(&report, 1e-4);
    let mut applied = sim.clone();
    params.apply(&mut applied, &[1.05]).unwrap();
    assert_eq!(applied.actuation()[1].values, vec![0.95]);
}
