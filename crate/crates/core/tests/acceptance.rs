//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 3 7`.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use softsim::adjoint::{gradient_report, Parameter, ParameterSet, StateLoss};
use softsim::constitutive::{read_fibers, write_fibers};
use softsim::damplab::{lambda_crit, oscillator_sweep, second_order_oscillator, OscillatorConfig};
use softsim::harness::config::{resolve_point, CalibrationMode, CalibrationSpec, LossName, PointSpec};
use softsim::harness::run::{self, beam_sweep_rows, build, RunOptions, RunReport};
use softsim::harness::{preset, ExperimentConfig, SCENARIOS};
use softsim::{
    build_hex_box, build_tet_box, ActuationSignal, Axis, FaceSide, FiberMode, ForceSpec, Material, Mesh, MuscleFiber,
    Result, Simulator, SoftBody, SolverConfig, State, Trajectory,
};

/// Outcome of one criterion: whether it held and a short measurement line.
struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn tip_top(mesh: &Mesh) -> usize {
    resolve_point(mesh, &PointSpec::Selector("tip-top".into())).unwrap()
}

fn options(dir: &tempfile::TempDir, seed: u64) -> RunOptions {
    RunOptions {
        out: dir.path().to_path_buf(),
        seed,
        full_scale: false,
    }
}

fn metric(report: &RunReport, key: &str) -> f64 {
    report
        .value(key)
        .unwrap_or_else(|| panic!("summary lacks {key}:\n{}", report.summary))
}

fn pd_matches_newton() -> Verdict {
    let mesh = build_hex_box([0.1, 0.035, 0.035], [4, 2, 2])
        .unwrap()
        .clamp_face(Axis::X, FaceSide::Min)
        .unwrap();
    let body = SoftBody::new(mesh, Material::silicone(), vec![]).unwrap();
    let sim = Simulator::new(body, ForceSpec::default(), SolverConfig::default(), vec![]).unwrap();
    let mut pd = sim.initial_state();
    let mut newton = sim.initial_state();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        pd = sim.step(&pd).unwrap();
        newton = sim.newton_step_oracle(&newton).unwrap().0;
        let gap =
            pd.q.iter()
                .zip(&newton.q)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        worst = worst.max(gap);
    }
    verdict(
        worst < 1e-6,
        format!("max |q_pd - q_newton| over 20 steps = {worst:.3e} m"),
    )
}

/// `Σ_t Σ_p ‖q_p(t) − (x_p + offset)‖²` over the given nodes.
fn tracking_loss(mesh: &Mesh, nodes: Vec<usize>, offset: [f64; 3]) -> impl StateLoss {
    let targets: Vec<[f64; 3]> = nodes
        .iter()
        .map(|&n| {
            let x = mesh.nodes()[n];
            [x.x + offset[0], x.y + offset[1], x.z + offset[2]]
        })
        .collect();
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

fn fiber_bar(signal: ActuationSignal, lambda: f64) -> Simulator {
    let mesh = build_hex_box([0.08, 0.02, 0.02], [4, 1, 2])
        .unwrap()
        .clamp_face(Axis::X, FaceSide::Min)
        .unwrap();
    let upper: Vec<usize> = (0..mesh.element_count())
        .filter(|&e| mesh.element(e).iter().map(|&n| mesh.nodes()[n].z).sum::<f64>() / 8.0 > 0.01)
        .collect();
    let fiber = MuscleFiber::new(upper, [1.0, 0.0, 0.0].into(), 2e4, FiberMode::Extend).unwrap();
    let body = SoftBody::new(mesh, Material::new(2e5, 0.45, 1070.0).unwrap(), vec![fiber]).unwrap();
    let forces = ForceSpec {
        damping_lambda: lambda,
        ..ForceSpec::default()
    };
    Simulator::new(body, forces, SolverConfig::default(), vec![signal]).unwrap()
}

fn adjoint_matches_finite_differences() -> Verdict {
    let constant = fiber_bar(ActuationSignal::constant(1.05), 0.02);
    let levels: Vec<f64> = (0..10).map(|k| 1.0 + 0.01 * k as f64).collect();
    let sequence = fiber_bar(ActuationSignal::piecewise(100.0, levels.clone()).unwrap(), 0.02);
    let dofs = constant.body().mesh().dof_count();
    let tip = constant.body().mesh().face_nodes(Axis::X, FaceSide::Max);
    let loss = tracking_loss(constant.body().mesh(), tip, [0.0, 0.0, 1e-3]);
    let cases: Vec<(&str, &Simulator, ParameterSet, Vec<f64>)> = vec![
        (
            "E",
            &constant,
            ParameterSet::new().with(Parameter::YoungsModulus),
            vec![2e5],
        ),
        (
            "lambda",
            &constant,
            ParameterSet::new().with(Parameter::Damping),
            vec![0.02],
        ),
        (
            "w",
            &constant,
            ParameterSet::new().with(Parameter::FiberStiffness(0)),
            vec![2e4],
        ),
        (
            "a",
            &constant,
            ParameterSet::new().with(Parameter::Actuation { fiber: 0, interval: 0 }),
            vec![1.05],
        ),
        (
            "a-sequence",
            &sequence,
            ParameterSet::new().with_sequence(0, 10),
            levels,
        ),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, sim, params, values) in cases {
        let report = gradient_report(sim, &params, &values, 0.1, &loss, Some(1e-5)).unwrap();
        let d = report.discrepancy.unwrap();
        worst = worst.max(d);
        parts.push(format!("{name} {d:.1e}"));
    }
    verdict(
        worst <= 1e-4,
        format!("{dofs} DOFs, 10 steps; relative discrepancy {}", parts.join(", ")),
    )
}

fn damping_law() -> Verdict {
    let rows = beam_sweep_rows(&preset("beam-sweep").unwrap(), false).unwrap();
    let mut beam_worst = 0.0f64;
    let mut parts = Vec::new();
    let mut complete = rows.len() == 4;
    for r in &rows {
        match (r.zeta_measured, r.zeta_analytic()) {
            (Some(m), Some(a)) => {
                let e = (m / a - 1.0).abs();
                beam_worst = beam_worst.max(e);
                parts.push(format!("h={} {:.1}%", r.h, 100.0 * e));
            }
            _ => complete = false,
        }
    }
    let hs = [0.005, 0.01, 0.02, 0.04];
    let osc = oscillator_sweep(&[PI, 2.0 * PI, 4.0 * PI], &hs, &[0.0], 20.0).unwrap();
    let osc_worst = osc
        .iter()
        .map(|r| {
            r.zeta_measured
                .map_or(f64::INFINITY, |m| (m / r.zeta_analytic - 1.0).abs())
        })
        .fold(0.0, f64::max);
    verdict(
        complete && beam_worst < 0.10 && osc_worst < 0.01,
        format!(
            "beam tip zeta vs analytic: {}; 1-DOF worst {:.2}%",
            parts.join(", "),
            100.0 * osc_worst
        ),
    )
}

fn stability_boundary() -> Verdict {
    let hs = [0.005, 0.01, 0.02, 0.04];
    let mut worst_gap = 0.0f64;
    let mut behaviour = true;
    let mut min_r2 = f64::INFINITY;
    for omega in [PI, 2.0 * PI, 4.0 * PI] {
        let mut crits = Vec::new();
        for h in hs {
            let lc = lambda_crit(omega, h).unwrap();
            worst_gap = worst_gap.max((lc - h * omega * omega).abs());
            crits.push(lc);
            let steps = (5.0 * 2.0 * PI / (omega * h)) as usize;
            let amplitude = |s: &(f64, f64)| (omega * s.0).hypot(s.1);
            for (scale, grows) in [(0.9, false), (1.1, true)] {
                let xs =
                    second_order_oscillator(&OscillatorConfig::new(omega, h, steps).with_lambda(scale * lc)).unwrap();
                let head = xs[..20].iter().map(amplitude).fold(0.0, f64::max);
                let tail = xs[steps - 20..].iter().map(amplitude).fold(0.0, f64::max);
                behaviour &= (tail > head) == grows;
            }
        }
        min_r2 = min_r2.min(r_squared(&hs, &crits));
    }
    verdict(
        worst_gap < 1e-9 && behaviour && min_r2 > 0.9999,
        format!("max |crit - h w^2| = {worst_gap:.1e}, decay/growth as expected: {behaviour}, min R^2 = {min_r2:.12}"),
    )
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

/// Static tip deflection (m, signed) of a beam preset at a resolution.
fn static_deflection(id: &str, resolution: [usize; 3]) -> (usize, f64) {
    let mut config = preset(id).unwrap();
    config.mesh.resolution = resolution;
    let built = build(&config, false).unwrap();
    let mesh = built.sim.body().mesh();
    let node = tip_top(mesh);
    let eq = built.sim.static_equilibrium(&[]).unwrap();
    (mesh.dof_count(), eq.q[3 * node + 2] - mesh.nodes()[node].z)
}

fn volumetric_locking() -> Verdict {
    let (hex_dofs, hex) = static_deflection("beam-a1-hex", [12, 4, 4]);
    let (tet_dofs, tet) = static_deflection("beam-a1-tet", [12, 4, 4]);
    let (fine_dofs, fine) = static_deflection("beam-a1-tet", [50, 17, 17]);
    let ratio = tet.abs() / hex.abs();
    let change = (fine.abs() / tet.abs() - 1.0).abs();
    verdict(
        ratio <= 0.8 && change < 0.05,
        format!(
            "tet/hex at {tet_dofs}/{hex_dofs} DOFs = {ratio:.3} (need <= 0.8); tet {:.3} mm -> {:.3} mm at {fine_dofs} DOFs, change {:.1}% (need < 5%)",
            1e3 * tet.abs(),
            1e3 * fine.abs(),
            100.0 * change
        ),
    )
}

fn refinement_under_load() -> Verdict {
    let levels = [[6, 2, 2], [12, 4, 4], [18, 6, 6], [24, 8, 8]];
    let deflections: Vec<f64> = levels
        .iter()
        .map(|&r| static_deflection("beam-d-hex", r).1.abs())
        .collect();
    let monotone = deflections.windows(2).all(|w| w[1] > w[0]);
    let n = deflections.len();
    let last_change = deflections[n - 1] / deflections[n - 2] - 1.0;
    let mm: Vec<String> = deflections.iter().map(|d| format!("{:.2}", 1e3 * d)).collect();
    verdict(
        monotone && last_change < 0.02,
        format!(
            "hex tip deflection {} mm, monotone {monotone}, last change {:.2}%",
            mm.join(" -> "),
            100.0 * last_change
        ),
    )
}

fn actuation_recovery_config() -> ExperimentConfig {
    let mut config = preset("muscle-ac1").unwrap();
    config.scenario = "muscle-ac1".into();
    config.calibration = Some(CalibrationSpec {
        truth: vec![1.1],
        initial: vec![1.0],
        tolerance: Some(0.05),
        ..CalibrationSpec::new(CalibrationMode::Parameters, &["a0"], LossName::FinalPose)
    });
    config
}

fn parameter_recovery() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let e = run::calibrate(&preset("beam-calibrate-e").unwrap(), &options(&dir, 0)).unwrap();
    let a = run::calibrate(&actuation_recovery_config(), &options(&dir, 0)).unwrap();
    let decay = run::calibrate(&preset("beam-envelope").unwrap(), &options(&dir, 0)).unwrap();
    let e_err = metric(&e, "relative_errors");
    let a_err = metric(&a, "relative_errors");
    let d_err = (metric(&decay, "decay_fitted") / metric(&decay, "decay_reference") - 1.0).abs();
    verdict(
        e_err < 0.02 && a_err < 0.05 && d_err < 0.05,
        format!(
            "E {:.2e} from {:.3e} (error {:.1e}); a {:.4} (error {:.1e}); decay rate error {:.1e} with lambda {:.3e}",
            metric(&e, "optimized"),
            metric(&e, "initial"),
            e_err,
            metric(&a, "optimized"),
            a_err,
            d_err,
            metric(&decay, "optimized")
        ),
    )
}

fn pressure_map() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for id in ["arm-map-ac1", "arm-map-ac2"] {
        let report = run::calibrate(&preset(id).unwrap(), &options(&dir, 0)).unwrap();
        let (residual, law, held) = (
            metric(&report, "fit_residual"),
            metric(&report, "law_error"),
            metric(&report, "held_out_error"),
        );
        pass &= residual < 1e-3 && law < 1e-3 && held < 0.05;
        parts.push(format!(
            "{id}: residual {residual:.1e}, law error {law:.1e}, held-out {:.2e}%",
            100.0 * held
        ));
    }
    verdict(pass, parts.join("; "))
}

fn determinism_and_io() -> Verdict {
    let mut problems = Vec::new();
    let read = |dir: &tempfile::TempDir, name: &str| std::fs::read(dir.path().join(name)).unwrap();

    let mut sim_config = preset("beam-d-hex").unwrap();
    sim_config.mesh.resolution = [6, 2, 2];
    sim_config.duration = 0.3;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run::simulate(&sim_config, &options(&a, 3)).unwrap();
    run::simulate(&sim_config, &options(&b, 3)).unwrap();
    if read(&a, "trajectory.csv") != read(&b, "trajectory.csv") {
        problems.push("trajectory.csv differs between identical runs");
    }

    let envelope = preset("beam-envelope").unwrap();
    let (c, d) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run::calibrate(&envelope, &options(&c, 11)).unwrap();
    run::calibrate(&envelope, &options(&d, 11)).unwrap();
    if read(&c, "history.csv") != read(&d, "history.csv") {
        problems.push("history.csv differs for equal seeds");
    }
    let e = tempfile::tempdir().unwrap();
    run::calibrate(&envelope, &options(&e, 12)).unwrap();
    if read(&c, "history.csv") == read(&e, "history.csv") {
        problems.push("different seeds gave the same history");
    }

    for info in SCENARIOS {
        let config = preset(info.id).unwrap();
        let text = config.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        if back != config || back.to_toml().unwrap() != text {
            problems.push("config TOML round trip is not exact");
            break;
        }
    }

    for mesh in [
        build_hex_box([0.1, 0.035, 0.035], [5, 3, 2]).unwrap(),
        build_tet_box([0.1, 0.035, 0.035], [5, 3, 2]).unwrap(),
    ] {
        let mesh = mesh.clamp_face(Axis::X, FaceSide::Min).unwrap();
        let text = mesh.to_text();
        let back = Mesh::from_text(&text).unwrap();
        if back != mesh || back.to_text() != text {
            problems.push("mesh text round trip is not exact");
        }
    }

    let fibers = vec![MuscleFiber::new(vec![0, 3, 4], [0.6, 0.8, 0.0].into(), 2e4, FiberMode::Contract).unwrap()];
    if read_fibers(&write_fibers(&fibers)).unwrap() != fibers {
        problems.push("fiber text round trip is not exact");
    }
    let traj_text = read(&a, "trajectory.csv");
    let traj = Trajectory::from_csv(std::str::from_utf8(&traj_text).unwrap()).unwrap();
    if traj.to_csv().as_bytes() != traj_text.as_slice() {
        problems.push("trajectory CSV round trip is not exact");
    }

    let detail = if problems.is_empty() {
        "bit-identical outputs for equal seeds; config, mesh, fiber and trajectory formats round-trip".to_string()
    } else {
        problems.join("; ")
    };
    verdict(problems.is_empty(), detail)
}

type Check = fn() -> Verdict;

const CRITERIA: [(u32, &str, f64, Check); 9] = [
    (1, "PD matches Newton", 10.0, pd_matches_newton),
    (2, "adjoint gradients", 60.0, adjoint_matches_finite_differences),
    (3, "numerical damping law", 90.0, damping_law),
    (4, "stability boundary", 10.0, stability_boundary),
    (5, "volumetric locking", 120.0, volumetric_locking),
    (6, "refinement under load", 120.0, refinement_under_load),
    (7, "parameter recovery", 300.0, parameter_recovery),
    (8, "pressure map", 300.0, pressure_map),
    (9, "determinism and IO", f64::INFINITY, determinism_and_io),
];

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, limit, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check));
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(v) => {
                let fast = within(elapsed, limit);
                let note = if fast {
                    String::new()
                } else {
                    format!(" (over the {limit} s budget)")
                };
                (v.pass && fast, format!("{}{note}", v.detail))
            }
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failed += 1;
        }
        let status = if pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} [{status}] {name} ({:.1} s): {detail}",
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
